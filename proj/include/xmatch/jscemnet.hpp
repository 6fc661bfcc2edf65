#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "xmatch/autodiff.hpp"
#include "xmatch/candidates.hpp"
#include "xmatch/corpus.hpp"
#include "xmatch/features.hpp"
#include "xmatch/scemnet.hpp"

namespace xmatch {

inline constexpr double kDefaultLambda = 1e-4;

/// Logistic regression over feature columns.
struct WideWeights {
  Tensor weights;  // 1 x n
  Tensor bias{{1}};
  double lambda = kDefaultLambda;
  std::vector<std::string> columns;

  std::size_t width() const noexcept { return weights.size(); }
  static WideWeights zeros(std::vector<std::string> columns, double lambda = kDefaultLambda);
};

/// sigmoid(w . x + b). Throws ShapeError on a dimension mismatch.
double logreg_score(const WideWeights& w, std::span<const double> x);

struct LogregConfig {
  int max_iter = 5000;
  double tol = 1e-6;
};

struct LogregTrace {
  int iterations = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
};

/// Full-batch gradient descent on mean BCE + lambda |w|^2 (bias free).
/// Columns are centered internally; the step is the inverse Lipschitz bound
/// of each block. Throws Error unless both classes are present.
WideWeights train_logreg(std::span<const FeatureVector> X, std::span<const double> y, double lambda,
                         const LogregConfig& cfg = {}, LogregTrace* trace = nullptr);

/// Rows of `features` for each labeled pair; throws Error when one is missing.
std::vector<FeatureVector> feature_rows(const FeatureTable& features, std::span<const LabeledPair> examples);

/// Trains on the same labeled examples as train_scemnet.
WideWeights train_logreg_pairs(const PairSet& truth, std::span<const CandidatePair> candidates,
                               const FeatureTable& features, int neg_ratio, std::uint64_t seed, double lambda,
                               const LogregConfig& cfg = {});

/// Wide&deep model: one sigmoid over v . z + w . x + b.
struct JointParams {
  DeepParams deep;
  Tensor wide{{1, 0}};  // 1 x n
  Tensor bias{{1}};
  double lambda = kDefaultLambda;
  std::vector<std::string> columns;

  std::vector<Tensor*> deep_tensors();
  std::vector<Tensor*> wide_tensors();

  /// The deep pathway with the shared bias, as a standalone ranker.
  ScemnetParams to_scemnet() const;
  /// The wide pathway with the shared bias, as a standalone ranker.
  WideWeights to_logreg() const;
};

/// (v . z) + (w . x + b) on a graph.
Var joint_logit(Graph& g, JointParams& jp, const CookieProfile& a, const CookieProfile& b,
                std::span<const double> x, Mode mode, Rng& rng);

double joint_score(JointParams& jp, const CookieProfile& a, const CookieProfile& b, std::span<const double> x,
                   Mode mode, Rng& rng);

/// Same value as infer-mode joint_score from embed_cookies() outputs.
double joint_score_cached(const JointParams& jp, std::span<const double> a, std::span<const double> b,
                          std::span<const double> x);

struct JointOptions {
  double lambda = kDefaultLambda;
  /// Adam learning rate of the wide part; 0 uses the deep rate.
  double wide_lr = 0.0;
  /// Starting wide weights and bias; zeros when absent.
  std::optional<WideWeights> warm_start;
};

struct JointTrainResult {
  JointParams params;
  double initial_loss = 0.0;
  std::vector<double> epoch_loss;
};

/// Mini-batch Adam over the joint logit with train_scemnet's examples and
/// batch order. Throws Error when a training pair has no feature row.
JointTrainResult train_joint(const PairSet& truth, std::span<const CandidatePair> candidates,
                             const ProfileSet& profiles, const FeatureTable& features, const ScemnetConfig& config,
                             const TrainConfig& train, const JointOptions& options = {});

/// Labeled data for fitting the stacked ranker.
struct TrainingSplit {
  PairSet truth;
  std::vector<CandidatePair> candidates;
  FeatureTable features;
};

/// Unlabeled pairs to score; carries no truth by construction.
struct ScoringSplit {
  std::vector<CandidatePair> candidates;
  FeatureTable features;
};

/// Logistic regression over the base features plus a frozen SCEmNet score.
struct StackedModel {
  ScemnetParams scemnet;
  WideWeights wide;
};

StackedModel train_stacking(const TrainingSplit& split, const ProfileSet& profiles, const ScemnetConfig& config,
                            const TrainConfig& train, double lambda, const LogregConfig& cfg = {});

std::vector<ScoredPair> score_stacking(StackedModel& model, const ScoringSplit& split, const ProfileSet& profiles,
                                       int threads = 1);

/// Appends `column` values to every row of a copy of `table`.
FeatureTable append_column(const FeatureTable& table, const std::string& name, std::span<const ScoredPair> scores);

/// Infer-mode SCEmNet scores for each candidate pair, in candidate order.
std::vector<ScoredPair> score_scemnet(ScemnetParams& params, std::span<const CandidatePair> candidates,
                                      const ProfileSet& profiles, int threads = 1);

std::vector<ScoredPair> score_logreg(const WideWeights& w, std::span<const CandidatePair> candidates,
                                     const FeatureTable& features);

std::vector<ScoredPair> score_joint(JointParams& jp, std::span<const CandidatePair> candidates,
                                    const ProfileSet& profiles, const FeatureTable& features, int threads = 1);

/// "logreg-v1" document.
nlohmann::json to_json(const WideWeights& w);
WideWeights logreg_from_json(const nlohmann::json& j);

/// "jscemnet-v1" document: the scemnet-v1 block (holding the shared bias)
/// plus the wide weights, their column names and lambda.
nlohmann::json to_json(const JointParams& jp);
JointParams jscemnet_from_json(const nlohmann::json& j);

}  // namespace xmatch
