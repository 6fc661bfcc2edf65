#include <doctest.h>

#include <sstream>

#include "test_util.hpp"
#include "xmatch/candidates.hpp"

using namespace xmatch;
using testutil::make_log;

namespace {

void check_equal(const std::vector<CandidatePair>& a, const std::vector<CandidatePair>& b) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].pair == b[i].pair);
    CHECK(std::abs(a[i].retrieval_score - b[i].retrieval_score) <= 1e-12);
  }
}

}  // namespace

TEST_CASE("index basics") {
  std::vector<EventLog> logs{make_log("a", {{1, "http://x.com/p"}, {2, "http://r.com/q"}}),
                             make_log("b", {{1, "http://x.com/p"}, {2, "http://s.com/q"}}),
                             make_log("c", {{1, "http://t.com/q"}})};
  auto ps = testutil::profiles_of(logs, 16, 2);
  auto index = InvertedIndex::build(ps);
  const auto m = ps.modality_for_depth(2);
  CHECK(index.postings(ps.vocabs()[m].lookup("x.com/p")).size() == 2);
  // Every token of c is rare, so c has no tf-idf mass.
  CHECK_FALSE(index.indexable(2));
  CHECK(topk_neighbors(index, 2, 5).empty());
}

TEST_CASE("single cookie has no neighbors") {
  auto ps = testutil::profiles_of({make_log("a", {{1, "http://x.com"}})});
  CHECK(generate_candidates(ps, 5).empty());
}

TEST_CASE("identical cookies") {
  std::vector<EventLog> logs{make_log("a", {{1, "http://x.com/p"}}), make_log("b", {{2, "http://x.com/p"}}),
                             make_log("c", {{1, "http://y.com/p"}, {2, "http://z.com/q"}}),
                             make_log("d", {{1, "http://y.com/p"}})};
  auto ps = testutil::profiles_of(logs);
  auto index = InvertedIndex::build(ps);
  auto nn = topk_neighbors(index, 0, 1);
  REQUIRE(nn.size() == 1);
  CHECK(nn[0].cookie == 1);
  CHECK(nn[0].score == doctest::Approx(1.0));
  auto c = generate_candidates(ps, 1);
  REQUIRE_FALSE(c.empty());
  CHECK(c[0].pair == CookiePair("a", "b"));
  CHECK(c[0].retrieval_score == doctest::Approx(1.0));
}

TEST_CASE("disjoint corpus has no candidates") {
  std::vector<EventLog> logs{make_log("a", {{1, "http://x.com/p"}}), make_log("b", {{1, "http://y.com/p"}}),
                             make_log("c", {{1, "http://z.com/p"}})};
  CHECK(generate_candidates(testutil::profiles_of(logs), 3).empty());
}

TEST_CASE("candidates match brute force on random corpora") {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    auto corpus = testutil::small_corpus(seed, 40 + 10 * seed, 0.4, 20);
    auto ps = testutil::profiles_of(corpus.logs);
    for (std::size_t k : {1u, 2u, 5u, 10u}) {
      auto fast = generate_candidates(ps, k, kDefaultRetrievalDepth, 2);
      check_equal(fast, brute_force_candidates(ps, k));
      CHECK(fast.size() <= k * ps.size());
    }
    auto index = InvertedIndex::build(ps);
    for (std::size_t i = 0; i < ps.size(); i += 7) CHECK(topk_neighbors(index, i, 5) == brute_force_neighbors(ps, i, 5));
  }
}

TEST_CASE("every directed neighbor appears as a candidate") {
  auto corpus = testutil::small_corpus(12, 50);
  auto ps = testutil::profiles_of(corpus.logs);
  auto cands = candidate_pairs(generate_candidates(ps, 3));
  auto index = InvertedIndex::build(ps);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    for (const auto& n : topk_neighbors(index, i, 3)) CHECK(cands.contains(CookiePair(ps[i].cookie_id, ps[n.cookie].cookie_id)));
  }
}

TEST_CASE("thread count does not change candidates") {
  auto corpus = testutil::small_corpus(13, 60);
  auto ps = testutil::profiles_of(corpus.logs);
  check_equal(generate_candidates(ps, 5, 2, 1), generate_candidates(ps, 5, 2, 3));
}

TEST_CASE("candidate file round trip") {
  auto corpus = testutil::small_corpus(14, 30);
  auto c = generate_candidates(testutil::profiles_of(corpus.logs), 4);
  std::stringstream s;
  write_candidates(c, s);
  auto back = parse_candidates(s);
  REQUIRE(back.size() == c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    CHECK(back[i].pair == c[i].pair);
    CHECK(std::abs(back[i].retrieval_score - c[i].retrieval_score) <= 5e-7);
  }
}
