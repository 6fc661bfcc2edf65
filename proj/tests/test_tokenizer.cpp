#include <doctest.h>

#include <algorithm>
#include <sstream>

#include "test_util.hpp"
#include "xmatch/rng.hpp"
#include "xmatch/tokenizer.hpp"

using namespace xmatch;
using testutil::make_log;

TEST_CASE("url_token by depth") {
  const char* url = "https://News.example.com/sports/tennis/a?id=5";
  CHECK(url_token(url, 1) == "news.example.com");
  CHECK(url_token(url, 3) == "news.example.com/sports/tennis");
  CHECK(url_token("http://a.com", 4) == "a.com");
}

TEST_CASE("deeper tokens extend shallower ones") {
  auto corpus = testutil::small_corpus(5, 30);
  for (const auto& log : corpus.logs) {
    for (const auto& e : log.events) {
      for (int d = 1; d < 4; ++d) {
        const auto lo = url_token(e.url, d);
        const auto hi = url_token(e.url, d + 1);
        REQUIRE(hi.compare(0, lo.size(), lo) == 0);
        if (hi.size() > lo.size()) CHECK(hi[lo.size()] == '/');
      }
    }
  }
}

TEST_CASE("vocabulary count threshold") {
  std::vector<EventLog> logs{make_log("c1", {{1, "http://a.com"}, {2, "http://a.com"}, {3, "http://b.com"}}),
                             make_log("c2", {{1, "http://a.com"}})};
  auto v = build_vocab(logs, 1, 2);
  REQUIRE(v.size() == 3);
  CHECK(v.token(kPadId) == "<pad>");
  CHECK(v.lookup("a.com") == 2);
  CHECK(v.lookup("b.com") == kOovId);
}

TEST_CASE("vocabulary ties break by token") {
  std::vector<EventLog> logs{
      make_log("c1", {{1, "http://b.com"}, {2, "http://a.com"}, {3, "http://b.com"}, {4, "http://a.com"}})};
  auto v = build_vocab(logs, 1, 1);
  CHECK(v.lookup("a.com") == 2);
  CHECK(v.lookup("b.com") == 3);
}

TEST_CASE("encode_cookie pads and maps unknown tokens") {
  std::vector<EventLog> logs{make_log("c1", {{1, "http://a.com"}}), make_log("c2", {{1, "http://a.com"}})};
  auto v = build_vocab(logs, 1, 2);
  auto seq = encode_cookie(make_log("q", {{1, "http://a.com"}, {2, "http://zzz"}}), v, 1, 4);
  CHECK(seq.ids == std::vector<TokenId>{2, 1, 0, 0});
}

TEST_CASE("encode_cookie keeps the most recent tokens") {
  std::vector<EventLog> logs{make_log("c", {{1, "http://x.com"}, {2, "http://y.com"}})};
  auto v = build_vocab(logs, 1, 1);
  auto seq = encode_cookie(logs[0], v, 1, 1);
  CHECK(seq.ids == std::vector<TokenId>{v.lookup("y.com")});
}

TEST_CASE("encode_cookie with an empty vocabulary yields OOV") {
  Vocabulary empty(0, 1);
  auto seq = encode_cookie(make_log("c", {{1, "http://x.com"}, {2, "http://y.com"}}), empty, 1, 3);
  CHECK(seq.ids == std::vector<TokenId>{1, 1, 0});
}

TEST_CASE("encoded sequences have fixed length and valid ids") {
  auto corpus = testutil::small_corpus(9, 40);
  TokenizerConfig cfg;
  cfg.seq_len = 24;
  auto ps = ProfileSet::build(Corpus(corpus.logs), cfg);
  for (const auto& p : ps.profiles()) {
    for (std::size_t m = 0; m < p.sequences.size(); ++m) {
      REQUIRE(p.sequences[m].ids.size() == 24u);
      for (TokenId id : p.sequences[m].ids) {
        CHECK(id >= 0);
        CHECK(static_cast<std::size_t>(id) < ps.vocabs()[m].size());
      }
    }
  }
}

TEST_CASE("vocabulary and sequences ignore input line order") {
  auto corpus = testutil::small_corpus(4, 30);
  std::ostringstream out;
  write_events(corpus.logs, out);
  std::vector<std::string> lines;
  std::istringstream in(out.str());
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  Rng rng(8);
  rng.shuffle(std::span(lines));
  std::string shuffled;
  for (auto& l : lines) shuffled += l + "\n";
  auto relogs = testutil::parse(shuffled);
  TokenizerConfig cfg;
  cfg.seq_len = 20;
  auto a = ProfileSet::build(Corpus(corpus.logs), cfg);
  auto b = ProfileSet::build(Corpus(relogs), cfg, 2);
  REQUIRE(a.vocabs().size() == b.vocabs().size());
  for (std::size_t m = 0; m < a.vocabs().size(); ++m) CHECK(a.vocabs()[m] == b.vocabs()[m]);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].sequences == b[i].sequences);
}

TEST_CASE("vocabulary save and load round trip") {
  auto corpus = testutil::small_corpus(2, 20);
  auto v = build_vocab(corpus.logs, 3, 1, 2);
  std::stringstream s;
  v.save(s);
  CHECK(s.str().rfind("#modality=2 depth=3 size=", 0) == 0);
  auto back = Vocabulary::load(s);
  CHECK(back == v);
  CHECK(back.fingerprint() == v.fingerprint());
}
