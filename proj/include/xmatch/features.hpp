#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xmatch/corpus.hpp"
#include "xmatch/tokenizer.hpp"

namespace xmatch {

/// Sparse term vector: ids strictly increasing, weights positive.
struct SparseVector {
  std::vector<std::pair<TokenId, double>> entries;

  bool empty() const noexcept { return entries.empty(); }
  std::size_t size() const noexcept { return entries.size(); }
  bool operator==(const SparseVector&) const = default;
};

/// Raw counts per id; PAD and OOV are dropped.
SparseVector tf_vector(std::span<const TokenId> ids);

/// Natural-log inverse document frequency over one modality's vocabulary.
class IdfTable {
 public:
  IdfTable() = default;
  IdfTable(std::vector<double> weights, std::size_t n_docs, std::uint64_t vocab_fingerprint)
      : weights_(std::move(weights)), n_docs_(n_docs), vocab_fingerprint_(vocab_fingerprint) {}

  /// 0 for ids that never occur.
  double operator[](TokenId id) const {
    auto i = static_cast<std::size_t>(id);
    return i < weights_.size() ? weights_[i] : 0.0;
  }
  std::size_t n_docs() const noexcept { return n_docs_; }
  std::size_t size() const noexcept { return weights_.size(); }
  std::uint64_t vocab_fingerprint() const noexcept { return vocab_fingerprint_; }

 private:
  std::vector<double> weights_;
  std::size_t n_docs_ = 0;
  std::uint64_t vocab_fingerprint_ = 0;
};

/// idf(id) = ln(n_docs / df(id)), df counted over the supports of `docs`.
IdfTable idf_weights(std::span<const SparseVector> docs, std::size_t n_docs, std::size_t vocab_size,
                     std::uint64_t vocab_fingerprint = 0);

/// Reweights a TF vector by idf; entries whose weight becomes 0 are dropped.
SparseVector tfidf(const SparseVector& tf, const IdfTable& idf);

double l2_norm(const SparseVector& v);

/// dot(a,b) / (|a| |b|), clamped to [0,1]; 0 when either norm is 0.
double cosine(const SparseVector& a, const SparseVector& b);

/// Same contract for dense non-negative vectors.
double dense_cosine(std::span<const double> a, std::span<const double> b);

struct TermMatch {
  double jaccard = 0.0;
  std::size_t shared = 0;
};

/// a and b are sorted id sets without PAD/OOV.
TermMatch term_match(std::span<const TokenId> a, std::span<const TokenId> b);

/// Sorted support of a sparse vector.
std::vector<TokenId> support(const SparseVector& v);

struct TimeProfile {
  std::array<double, 24> hour_hist{};
  std::array<double, 7> dow_hist{};
  std::int64_t t_min = 0;
  std::int64_t t_max = 0;
  std::size_t n_events = 0;

  bool operator==(const TimeProfile&) const = default;
};

/// Hour bin floor(ts/3600) mod 24, weekday bin floor(ts/86400) mod 7.
/// Throws Error on an empty log.
TimeProfile time_profile(const EventLog& log);

struct TimeFeatures {
  double hour_cos = 0.0;
  double dow_cos = 0.0;
  double span_overlap = 0.0;
};

TimeFeatures time_features(const TimeProfile& a, const TimeProfile& b);

/// Per-cookie derived state shared by retrieval, features and the ranker.
struct CookieProfile {
  std::string cookie_id;
  std::vector<TokenSequence> sequences;        // one per modality, fixed length
  std::vector<SparseVector> tf;                // one per modality, whole history
  TimeProfile time;
  std::vector<std::uint64_t> vocab_fingerprints;
};

CookieProfile build_profile(const EventLog& log, std::span<const Vocabulary> vocabs, const TokenizerConfig& cfg);

/// Vocabularies, profiles (sorted by cookie id) and idf tables for a corpus.
class ProfileSet {
 public:
  static ProfileSet build(const Corpus& corpus, const TokenizerConfig& cfg, int threads = 1);

  /// Profiles for a subset of cookies, tokenized with existing vocabularies.
  static ProfileSet with_vocabs(const Corpus& corpus, const TokenizerConfig& cfg,
                                std::vector<Vocabulary> vocabs, int threads = 1);

  /// The profiles of `cookie_ids` (sorted, unique) with this set's
  /// vocabularies and idf tables. Throws Error on an unknown id.
  ProfileSet subset(std::span<const std::string> cookie_ids) const;

  const TokenizerConfig& config() const noexcept { return cfg_; }
  std::span<const Vocabulary> vocabs() const noexcept { return vocabs_; }
  std::span<const CookieProfile> profiles() const noexcept { return profiles_; }
  std::span<const IdfTable> idf() const noexcept { return idf_; }
  std::size_t size() const noexcept { return profiles_.size(); }
  const CookieProfile& operator[](std::size_t i) const { return profiles_[i]; }

  /// Index by cookie id, or -1.
  std::ptrdiff_t find(const std::string& cookie_id) const;
  const CookieProfile& at(const std::string& cookie_id) const;

  /// Modality whose depth equals `depth`; throws when absent.
  std::size_t modality_for_depth(int depth) const;

 private:
  TokenizerConfig cfg_;
  std::vector<Vocabulary> vocabs_;
  std::vector<CookieProfile> profiles_;
  std::vector<IdfTable> idf_;
};

inline constexpr std::size_t kBaseFeatureCount = 11;

/// Column names of the fixed layout, in order.
std::vector<std::string> base_feature_names();

using FeatureVector = std::vector<double>;

/// Fixed 11-column pair layout followed by `extras`:
///  0-3  tf-idf cosine for modalities 0..3
///  4    jaccard of modality-0 token sets
///  5    log1p(shared modality-3 tokens)
///  6-7  hour / weekday histogram cosine
///  8    active-span overlap ratio
///  9-10 log1p(min / max event count)
/// Requires four modalities encoded under the same vocabularies.
FeatureVector assemble(const CookieProfile& a, const CookieProfile& b, std::span<const IdfTable> idf,
                       std::span<const double> extras = {});

/// Feature matrix keyed by canonical pair.
struct FeatureTable {
  std::vector<std::string> columns;
  std::vector<CookiePair> pairs;
  std::vector<FeatureVector> rows;

  /// Orders rows by pair so find() can binary-search.
  void sort_by_pair();
  /// Row for a pair in a sorted table, or nullptr.
  const FeatureVector* find(const CookiePair& pair) const;
  std::size_t width() const noexcept { return columns.size(); }
};

/// `cookie_a<TAB>cookie_b<TAB>f0...` with six decimals, one row per pair.
std::size_t write_features(const FeatureTable& table, std::ostream& out);
/// Column names are the base layout followed by `extra1`, `extra2`, ...
FeatureTable parse_features(std::istream& in);

/// Extra columns keyed by pair: `cookie_a<TAB>cookie_b<TAB>v1[<TAB>v2...]`.
struct ExtraColumns {
  std::size_t width = 0;
  std::vector<std::pair<CookiePair, std::vector<double>>> rows;  // sorted by pair

  /// Values for a pair; throws Error when the pair is missing.
  std::span<const double> at(const CookiePair& pair) const;
};

ExtraColumns parse_extras(std::istream& in);

}  // namespace xmatch
