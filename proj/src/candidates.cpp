#include "xmatch/candidates.hpp"

#include <algorithm>
#include <istream>
#include <map>
#include <ostream>

#include "xmatch/parallel.hpp"

namespace xmatch {

namespace {

bool ranks_before(const Neighbor& a, const Neighbor& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.cookie < b.cookie;
}

void keep_top(std::vector<Neighbor>& hits, std::size_t k) {
  if (hits.size() > k) {
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k), hits.end(), ranks_before);
    hits.resize(k);
  } else {
    std::sort(hits.begin(), hits.end(), ranks_before);
  }
}

std::vector<CandidatePair> merge_directed(const ProfileSet& profiles,
                                          const std::vector<std::vector<Neighbor>>& directed) {
  std::map<std::pair<std::size_t, std::size_t>, double> merged;
  for (std::size_t q = 0; q < directed.size(); ++q) {
    for (const auto& nb : directed[q]) {
      auto key = std::minmax(q, nb.cookie);
      auto [it, fresh] = merged.emplace(std::pair(key.first, key.second), nb.score);
      if (!fresh) it->second = std::max(it->second, nb.score);
    }
  }
  std::vector<CandidatePair> out;
  out.reserve(merged.size());
  for (const auto& [key, score] : merged) {
    out.push_back(CandidatePair{CookiePair(profiles[key.first].cookie_id, profiles[key.second].cookie_id), score});
  }
  return out;
}

}  // namespace

InvertedIndex InvertedIndex::build(const ProfileSet& profiles, int depth) {
  InvertedIndex index;
  index.modality_ = profiles.modality_for_depth(depth);
  const IdfTable& idf = profiles.idf()[index.modality_];
  index.postings_.resize(profiles.vocabs()[index.modality_].size());
  index.vectors_.reserve(profiles.size());
  index.norms_.reserve(profiles.size());
  for (std::size_t c = 0; c < profiles.size(); ++c) {
    auto v = tfidf(profiles[c].tf[index.modality_], idf);
    for (const auto& [id, w] : v.entries) {
      index.postings_[static_cast<std::size_t>(id)].push_back(Posting{static_cast<std::uint32_t>(c), w});
    }
    index.norms_.push_back(l2_norm(v));
    index.vectors_.push_back(std::move(v));
  }
  return index;
}

std::span<const InvertedIndex::Posting> InvertedIndex::postings(TokenId id) const {
  auto i = static_cast<std::size_t>(id);
  if (i >= postings_.size()) return {};
  return postings_[i];
}

std::vector<Neighbor> topk_neighbors(const InvertedIndex& index, std::size_t cookie, std::size_t k) {
  if (k == 0) throw Error("topk_neighbors: k must be positive");
  if (!index.indexable(cookie)) return {};
  std::vector<double> acc(index.n_cookies(), 0.0);
  std::vector<char> seen(index.n_cookies(), 0);
  std::vector<std::uint32_t> touched;
  for (const auto& [id, wq] : index.vector(cookie).entries) {
    for (const auto& post : index.postings(id)) {
      if (post.cookie == cookie) continue;
      if (!seen[post.cookie]) {
        seen[post.cookie] = 1;
        touched.push_back(post.cookie);
      }
      acc[post.cookie] += wq * post.weight;
    }
  }
  const double nq = index.norm(cookie);
  std::vector<Neighbor> hits;
  hits.reserve(touched.size());
  for (auto c : touched) {
    hits.push_back(Neighbor{c, std::clamp(acc[c] / (nq * index.norm(c)), 0.0, 1.0)});
  }
  keep_top(hits, k);
  return hits;
}

std::vector<Neighbor> brute_force_neighbors(const ProfileSet& profiles, std::size_t cookie, std::size_t k, int depth) {
  if (k == 0) throw Error("brute_force_neighbors: k must be positive");
  const std::size_t m = profiles.modality_for_depth(depth);
  const IdfTable& idf = profiles.idf()[m];
  const auto query = tfidf(profiles[cookie].tf[m], idf);
  if (query.empty()) return {};
  std::vector<Neighbor> hits;
  for (std::size_t c = 0; c < profiles.size(); ++c) {
    if (c == cookie) continue;
    const auto other = tfidf(profiles[c].tf[m], idf);
    if (term_match(support(query), support(other)).shared == 0) continue;
    hits.push_back(Neighbor{c, cosine(query, other)});
  }
  keep_top(hits, k);
  return hits;
}

std::vector<CandidatePair> generate_candidates(const ProfileSet& profiles, std::size_t k, int depth, int threads) {
  const auto index = InvertedIndex::build(profiles, depth);
  std::vector<std::vector<Neighbor>> directed(profiles.size());
  parallel_for(profiles.size(), threads, [&](std::size_t c) { directed[c] = topk_neighbors(index, c, k); });
  return merge_directed(profiles, directed);
}

std::vector<CandidatePair> brute_force_candidates(const ProfileSet& profiles, std::size_t k, int depth) {
  std::vector<std::vector<Neighbor>> directed(profiles.size());
  for (std::size_t c = 0; c < profiles.size(); ++c) directed[c] = brute_force_neighbors(profiles, c, k, depth);
  return merge_directed(profiles, directed);
}

std::size_t write_candidates(std::span<const CandidatePair> candidates, std::ostream& out) {
  std::size_t bytes = 0;
  for (const auto& c : candidates) {
    std::string line = c.pair.first() + '\t' + c.pair.second() + '\t' + format_fixed6(c.retrieval_score) + '\n';
    out.write(line.data(), static_cast<std::streamsize>(line.size()));
    if (!out) throw Error("write failed");
    bytes += line.size();
  }
  return bytes;
}

std::vector<CandidatePair> parse_candidates(std::istream& in) {
  std::vector<CandidatePair> out;
  for (auto& sp : parse_scored(in)) out.push_back(CandidatePair{std::move(sp.pair), sp.score});
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.pair < b.pair; });
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (out[i].pair == out[i - 1].pair) throw Error("candidates: duplicate pair");
  }
  return out;
}

PairSet candidate_pairs(std::span<const CandidatePair> candidates) {
  std::vector<CookiePair> pairs;
  pairs.reserve(candidates.size());
  for (const auto& c : candidates) pairs.push_back(c.pair);
  return PairSet(std::move(pairs));
}

}  // namespace xmatch
