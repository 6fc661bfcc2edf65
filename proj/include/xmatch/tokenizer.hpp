#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "xmatch/corpus.hpp"

namespace xmatch {

using TokenId = std::int32_t;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kOovId = 1;

/// Widest convolution filter of the ranker; sequences shorter than this
/// cannot be convolved.
inline constexpr int kMaxFilterWidth = 10;

struct TokenizerConfig {
  std::vector<int> depths{1, 2, 3, 4};
  int seq_len = 128;
  int min_count = 2;

  std::size_t modalities() const noexcept { return depths.size(); }

  /// Throws Error when a field is out of range.
  void validate() const;

  bool operator==(const TokenizerConfig&) const = default;
};

/// Host plus the first (depth - 1) path segments, lowercased, with scheme,
/// query and fragment removed.
std::string url_token(std::string_view url, int depth);

/// Token <-> id map for one modality. Ids are dense; 0 is PAD and 1 is OOV.
class Vocabulary {
 public:
  Vocabulary(int modality, int depth);

  int modality() const noexcept { return modality_; }
  int depth() const noexcept { return depth_; }
  std::size_t size() const noexcept { return tokens_.size(); }

  /// Id of a token, or kOovId when it is not in the vocabulary.
  TokenId lookup(std::string_view token) const;

  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::uint64_t count(TokenId id) const { return counts_.at(static_cast<std::size_t>(id)); }

  /// FNV-1a hash over depth and every (token, id, count) entry.
  std::uint64_t fingerprint() const;

  /// `#modality=<m> depth=<d> size=<V>` followed by `token<TAB>id<TAB>count`.
  void save(std::ostream& out) const;
  static Vocabulary load(std::istream& in);

  bool operator==(const Vocabulary& other) const {
    return modality_ == other.modality_ && depth_ == other.depth_ && tokens_ == other.tokens_ &&
           counts_ == other.counts_;
  }

 private:
  friend Vocabulary build_vocab(std::span<const EventLog>, int, int, int);
  void add(std::string token, std::uint64_t count);

  int modality_;
  int depth_;
  std::vector<std::string> tokens_;
  std::vector<std::uint64_t> counts_;
  std::unordered_map<std::string, TokenId> ids_;
};

/// Counts depth tokens over the corpus; tokens seen fewer than min_count
/// times are left out and encode as OOV. Real ids are assigned by descending
/// count, then ascending token string, starting at 2.
Vocabulary build_vocab(std::span<const EventLog> corpus, int depth, int min_count, int modality = 0);

struct TokenSequence {
  int modality = 0;
  std::vector<TokenId> ids;

  bool operator==(const TokenSequence&) const = default;
};

/// Maps every event to its id at `depth`, without truncation or padding.
std::vector<TokenId> encode_all(const EventLog& log, const Vocabulary& vocab, int depth);

/// Keeps the most recent `seq_len` tokens and right-pads with PAD.
TokenSequence encode_cookie(const EventLog& log, const Vocabulary& vocab, int depth, int seq_len);

}  // namespace xmatch
