#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

#include "xmatch/corpus.hpp"
#include "xmatch/features.hpp"

namespace xmatch {

inline constexpr int kDefaultRetrievalDepth = 2;
inline constexpr std::size_t kDefaultNeighbors = 10;

struct Neighbor {
  std::size_t cookie = 0;  // index into the ProfileSet
  double score = 0.0;

  bool operator==(const Neighbor&) const = default;
};

/// Inverted index over tf-idf vectors of one modality.
class InvertedIndex {
 public:
  struct Posting {
    std::uint32_t cookie;
    double weight;
  };

  static InvertedIndex build(const ProfileSet& profiles, int depth = kDefaultRetrievalDepth);

  std::size_t n_cookies() const noexcept { return vectors_.size(); }
  std::size_t modality() const noexcept { return modality_; }
  std::span<const Posting> postings(TokenId id) const;
  const SparseVector& vector(std::size_t cookie) const { return vectors_[cookie]; }
  double norm(std::size_t cookie) const { return norms_[cookie]; }
  /// False for cookies whose tf-idf vector is empty.
  bool indexable(std::size_t cookie) const { return norms_[cookie] > 0.0; }

 private:
  std::size_t modality_ = 0;
  std::vector<SparseVector> vectors_;
  std::vector<double> norms_;
  std::vector<std::vector<Posting>> postings_;
};

/// Exact top-k by cosine via posting-list accumulation. Ties go to the lower
/// cookie index; the query itself and cookies sharing no token are skipped.
std::vector<Neighbor> topk_neighbors(const InvertedIndex& index, std::size_t cookie, std::size_t k);

/// Same contract, scanning every cookie.
std::vector<Neighbor> brute_force_neighbors(const ProfileSet& profiles, std::size_t cookie, std::size_t k,
                                            int depth = kDefaultRetrievalDepth);

struct CandidatePair {
  CookiePair pair;
  double retrieval_score = 0.0;
};

/// Union of every cookie's directed top-k, canonicalized, sorted by pair.
/// The score of a pair is the larger of its directed cosines.
std::vector<CandidatePair> generate_candidates(const ProfileSet& profiles, std::size_t k = kDefaultNeighbors,
                                               int depth = kDefaultRetrievalDepth, int threads = 1);

/// Oracle for generate_candidates built from brute_force_neighbors.
std::vector<CandidatePair> brute_force_candidates(const ProfileSet& profiles, std::size_t k,
                                                  int depth = kDefaultRetrievalDepth);

/// `cookie_a<TAB>cookie_b<TAB>score` lines in pair order.
std::size_t write_candidates(std::span<const CandidatePair> candidates, std::ostream& out);
std::vector<CandidatePair> parse_candidates(std::istream& in);

PairSet candidate_pairs(std::span<const CandidatePair> candidates);

}  // namespace xmatch
