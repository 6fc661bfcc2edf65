#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "xmatch/autodiff.hpp"
#include "xmatch/candidates.hpp"
#include "xmatch/corpus.hpp"
#include "xmatch/features.hpp"
#include "xmatch/tokenizer.hpp"

namespace xmatch {

struct ScemnetConfig {
  std::vector<int> widths{2, 3, 4, 5, 6, 10};
  int filters_per_width = 40;
  int embed_dim = 64;
  double dropout = 0.5;

  /// Cookie embedding length: one pooled value per filter.
  std::size_t embedding_size() const noexcept {
    return widths.size() * static_cast<std::size_t>(filters_per_width);
  }
  void validate(const TokenizerConfig& tokenizer) const;

  bool operator==(const ScemnetConfig&) const = default;
};

struct VocabInfo {
  int depth = 0;
  std::size_t size = 0;
  std::uint64_t fingerprint = 0;

  bool operator==(const VocabInfo&) const = default;
};

/// Per-modality SeqCNN tower: token table plus one filter bank per width.
struct TowerParams {
  Tensor embedding;             // V x d, row 0 (PAD) stays zero
  std::vector<Tensor> filters;  // per width: F x w x d
  std::vector<Tensor> biases;   // per width: F
};

/// Everything of the ranker except the output bias, which SCEmNet and the
/// joint model each hold exactly once.
struct DeepParams {
  ScemnetConfig config;
  TokenizerConfig tokenizer;
  std::vector<VocabInfo> vocabs;
  std::vector<TowerParams> towers;  // one per modality, shared by both siamese branches
  Tensor output_weights;            // 1 x (M * E)

  /// Seeded initialization: embeddings U(-0.05, 0.05), filters
  /// U(+-1/sqrt(w d)), output weights U(+-1/sqrt(M E)), biases zero.
  static DeepParams init(const ScemnetConfig& config, const TokenizerConfig& tokenizer,
                         std::span<const Vocabulary> vocabs, Rng& rng);

  std::size_t fused_size() const noexcept { return towers.size() * config.embedding_size(); }
  std::vector<Tensor*> tensors();
  /// Throws Error when a profile was encoded with other vocabularies.
  void check_profile(const CookieProfile& profile) const;
};

struct ScemnetParams {
  DeepParams deep;
  Tensor bias{{1}};

  std::vector<Tensor*> tensors();
};

ScemnetParams init_scemnet(const ScemnetConfig& config, const TokenizerConfig& tokenizer,
                           std::span<const Vocabulary> vocabs, std::uint64_t seed);

/// Tower parameters bound once per graph, so both siamese branches read the
/// same leaves and their gradients sum.
struct TowerLeaves {
  Tensor* embedding = nullptr;
  std::vector<Var> filters;
  std::vector<Var> biases;
};

TowerLeaves bind_tower(Graph& g, TowerParams& tower);

/// embed -> per width (conv + ReLU -> max over time) -> concat -> dropout.
Var seqcnn_embed(Graph& g, const TowerLeaves& tower, std::span<const TokenId> ids, double dropout, Mode mode,
                 Rng& rng);

/// Elementwise product of two cookie embeddings.
Var pair_fuse(Graph& g, Var a, Var b);

/// Concatenation of per-modality pair embeddings, in modality order.
Var multimodal_fuse(Graph& g, std::span<const Var> pair_embeddings, std::size_t modalities);

/// Multi-modal pair embedding z for a cookie pair (length M * E).
Var fused_embedding(Graph& g, DeepParams& deep, std::span<const TowerLeaves> towers, const CookieProfile& a,
                    const CookieProfile& b, Mode mode, Rng& rng);

std::vector<TowerLeaves> bind_towers(Graph& g, DeepParams& deep);

/// Output logit v . z + b.
Var scemnet_logit(Graph& g, ScemnetParams& params, const CookieProfile& a, const CookieProfile& b, Mode mode,
                  Rng& rng);

/// sigmoid(v . z + b). Deterministic and symmetric in infer mode.
double score_pair(ScemnetParams& params, const CookieProfile& a, const CookieProfile& b, Mode mode, Rng& rng);

/// Infer-mode tower outputs for every cookie, concatenated over modalities
/// (length M * E). Pair scores computed from these equal score_pair bitwise.
std::vector<std::vector<double>> embed_cookies(DeepParams& deep, std::span<const CookieProfile> profiles,
                                               int threads = 1);

/// Elementwise product of two cached cookie embeddings.
std::vector<double> fuse_cached(std::span<const double> a, std::span<const double> b);

/// sigmoid(v . fuse(a, b) + bias) from cached embeddings.
double score_cached(const ScemnetParams& params, std::span<const double> a, std::span<const double> b);

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch = 256;
  int epochs = 5;
  int neg_ratio = 4;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Uniform sample without replacement of min(ratio * |truth in candidates|,
/// |candidates \ truth|) non-truth candidates, returned in pair order.
std::vector<CookiePair> sample_negatives(std::span<const CandidatePair> candidates, const PairSet& truth, int ratio,
                                         std::uint64_t seed);

struct LabeledPair {
  CookiePair pair;
  double label = 0.0;
};

/// Truth pairs found among the candidates (label 1) plus sampled negatives
/// (label 0), in pair order. Throws Error when no truth pair is a candidate.
std::vector<LabeledPair> training_examples(std::span<const CandidatePair> candidates, const PairSet& truth,
                                           int neg_ratio, std::uint64_t seed);

struct ScemnetTrainResult {
  ScemnetParams params;
  /// Mean infer-mode loss over the training examples at initialization.
  double initial_loss = 0.0;
  /// Mean train-mode loss of each epoch.
  std::vector<double> epoch_loss;
};

/// Mini-batch Adam on binary cross-entropy; example order is reshuffled each
/// epoch from the seed. Single-threaded and bit-reproducible.
ScemnetTrainResult train_scemnet(const PairSet& truth, std::span<const CandidatePair> candidates,
                                 const ProfileSet& profiles, const ScemnetConfig& config, const TrainConfig& train);

/// Named tensors of the deep part, e.g. "m0.embedding", "m0.w2.filters".
std::vector<std::pair<std::string, Tensor*>> named_tensors(DeepParams& deep);

nlohmann::json deep_to_json(const DeepParams& deep, double bias);
/// Returns the bias stored alongside the deep block.
DeepParams deep_from_json(const nlohmann::json& j, double& bias);

/// "scemnet-v1" document.
nlohmann::json to_json(const ScemnetParams& params);
ScemnetParams scemnet_from_json(const nlohmann::json& j);

void save_scemnet(const ScemnetParams& params, std::ostream& out);
ScemnetParams load_scemnet(std::istream& in);

/// Nested-list encoding of a tensor by its shape, and the inverse.
nlohmann::json tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const nlohmann::json& j);

}  // namespace xmatch
