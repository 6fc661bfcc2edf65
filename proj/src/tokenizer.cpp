#include "xmatch/tokenizer.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <istream>
#include <ostream>

namespace xmatch {

void TokenizerConfig::validate() const {
  if (depths.empty()) throw Error("tokenizer: at least one modality is required");
  for (int d : depths) {
    if (d < 1) throw Error("tokenizer: depths must be positive");
  }
  if (seq_len < kMaxFilterWidth) {
    throw Error("tokenizer: sequence length must be at least " + std::to_string(kMaxFilterWidth));
  }
  if (min_count < 1) throw Error("tokenizer: min_count must be positive");
}

std::string url_token(std::string_view url, int depth) {
  std::string lowered(url);
  std::transform(lowered.begin(), lowered.end(), lowered.begin(), [](unsigned char c) {
    return static_cast<char>(c >= 'A' && c <= 'Z' ? c - 'A' + 'a' : c);
  });
  std::string_view rest = lowered;
  for (std::string_view scheme : {std::string_view("http://"), std::string_view("https://")}) {
    if (rest.starts_with(scheme)) {
      rest.remove_prefix(scheme.size());
      break;
    }
  }
  rest = rest.substr(0, rest.find_first_of("?#"));

  std::string token;
  int taken = 0;
  std::size_t pos = 0;
  while (pos <= rest.size() && taken < depth) {
    std::size_t slash = rest.find('/', pos);
    std::string_view seg = rest.substr(pos, slash == std::string_view::npos ? rest.npos : slash - pos);
    if (!seg.empty()) {
      if (taken > 0) token += '/';
      token += seg;
      ++taken;
    }
    if (slash == std::string_view::npos) break;
    pos = slash + 1;
  }
  if (taken == 0) return lowered;
  return token;
}

Vocabulary::Vocabulary(int modality, int depth)
    : modality_(modality), depth_(depth), tokens_{"<pad>", "<oov>"}, counts_{0, 0} {}

void Vocabulary::add(std::string token, std::uint64_t count) {
  auto id = static_cast<TokenId>(tokens_.size());
  ids_.emplace(token, id);
  tokens_.push_back(std::move(token));
  counts_.push_back(count);
}

TokenId Vocabulary::lookup(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return kOovId;
  return it->second;
}

std::uint64_t Vocabulary::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::string_view bytes) {
    for (unsigned char c : bytes) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  };
  mix("depth=" + std::to_string(depth_) + '\n');
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    mix(tokens_[i] + '\t' + std::to_string(i) + '\t' + std::to_string(counts_[i]) + '\n');
  }
  return h;
}

void Vocabulary::save(std::ostream& out) const {
  out << "#modality=" << modality_ << " depth=" << depth_ << " size=" << tokens_.size() << '\n';
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    out << tokens_[i] << '\t' << i << '\t' << counts_[i] << '\n';
  }
  if (!out) throw Error("write failed");
}

Vocabulary Vocabulary::load(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw ParseError(1, "missing vocabulary header");
  int modality = 0, depth = 0;
  std::size_t size = 0;
  if (std::sscanf(header.c_str(), "#modality=%d depth=%d size=%zu", &modality, &depth, &size) != 3) {
    throw ParseError(1, "malformed vocabulary header");
  }
  Vocabulary vocab(modality, depth);
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() != 3) throw ParseError(line_no, "expected 3 tab-separated fields");
    std::size_t id = 0;
    std::uint64_t count = 0;
    auto r1 = std::from_chars(fields[1].data(), fields[1].data() + fields[1].size(), id);
    auto r2 = std::from_chars(fields[2].data(), fields[2].data() + fields[2].size(), count);
    if (r1.ec != std::errc{} || r2.ec != std::errc{}) throw ParseError(line_no, "bad id or count");
    if (id < 2) {
      if (id != line_no - 2) throw ParseError(line_no, "reserved ids out of order");
      vocab.counts_[id] = count;
      continue;
    }
    if (id != vocab.tokens_.size()) throw ParseError(line_no, "ids must be dense and ascending");
    vocab.add(std::string(fields[0]), count);
  }
  if (vocab.size() != size) throw Error("vocabulary size does not match its header");
  return vocab;
}

Vocabulary build_vocab(std::span<const EventLog> corpus, int depth, int min_count, int modality) {
  std::unordered_map<std::string, std::uint64_t> counts;
  for (const auto& log : corpus) {
    for (const auto& ev : log.events) ++counts[url_token(ev.url, depth)];
  }
  std::vector<std::pair<std::string, std::uint64_t>> kept;
  std::uint64_t rare = 0;
  for (auto& [token, n] : counts) {
    if (n >= static_cast<std::uint64_t>(min_count)) {
      kept.emplace_back(token, n);
    } else {
      rare += n;
    }
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary vocab(modality, depth);
  vocab.counts_[kOovId] = rare;
  for (auto& [token, n] : kept) vocab.add(std::move(token), n);
  return vocab;
}

std::vector<TokenId> encode_all(const EventLog& log, const Vocabulary& vocab, int depth) {
  std::vector<TokenId> ids;
  ids.reserve(log.events.size());
  for (const auto& ev : log.events) ids.push_back(vocab.lookup(url_token(ev.url, depth)));
  return ids;
}

TokenSequence encode_cookie(const EventLog& log, const Vocabulary& vocab, int depth, int seq_len) {
  if (seq_len < 1) throw Error("encode_cookie: sequence length must be positive");
  auto all = encode_all(log, vocab, depth);
  TokenSequence seq{vocab.modality(), std::vector<TokenId>(static_cast<std::size_t>(seq_len), kPadId)};
  std::size_t keep = std::min(all.size(), seq.ids.size());
  std::copy(all.end() - static_cast<std::ptrdiff_t>(keep), all.end(), seq.ids.begin());
  return seq;
}

}  // namespace xmatch
