#include "xmatch/jscemnet.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include "pair_trainer.hpp"
#include "xmatch/parallel.hpp"

namespace xmatch {

using nlohmann::json;

WideWeights WideWeights::zeros(std::vector<std::string> columns, double lambda) {
  WideWeights w;
  w.weights = Tensor({1, columns.size()});
  w.lambda = lambda;
  w.columns = std::move(columns);
  return w;
}

double logreg_score(const WideWeights& w, std::span<const double> x) {
  if (x.size() != w.weights.size()) {
    throw ShapeError("logreg: expected " + std::to_string(w.weights.size()) + " features, got " +
                     std::to_string(x.size()));
  }
  return sigmoid(dot(w.weights.values.data(), x.data(), x.size()) + w.bias.values[0]);
}

namespace {

void check_lambda(double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw Error("lambda must be a finite non-negative number");
}

/// Largest eigenvalue of C^T C / n by power iteration.
double gram_max_eigen(const std::vector<double>& centered, std::size_t n, std::size_t p) {
  if (p == 0) return 0.0;
  std::vector<double> v(p, 1.0 / std::sqrt(static_cast<double>(p))), next(p), proj(n);
  double lam = 0.0;
  for (int it = 0; it < 200; ++it) {
    for (std::size_t i = 0; i < n; ++i) proj[i] = dot(centered.data() + i * p, v.data(), p);
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < p; ++j) next[j] += proj[i] * centered[i * p + j];
    }
    for (double& x : next) x /= static_cast<double>(n);
    const double norm = std::sqrt(dot(next.data(), next.data(), p));
    if (norm == 0.0) return 0.0;
    const double prev = lam;
    lam = norm;
    for (std::size_t j = 0; j < p; ++j) v[j] = next[j] / norm;
    if (std::abs(lam - prev) <= 1e-12 * lam) break;
  }
  // Power iteration approaches from below.
  return lam * 1.01;
}

}  // namespace

WideWeights train_logreg(std::span<const FeatureVector> X, std::span<const double> y, double lambda,
                         const LogregConfig& cfg, LogregTrace* trace) {
  check_lambda(lambda);
  if (X.size() != y.size()) throw ShapeError("train_logreg: one label per row required");
  if (X.empty()) throw Error("train_logreg: no training rows");
  const std::size_t n = X.size(), p = X[0].size();
  bool has_pos = false, has_neg = false;
  for (std::size_t i = 0; i < n; ++i) {
    if (X[i].size() != p) throw ShapeError("train_logreg: rows differ in width");
    if (y[i] == 1.0) {
      has_pos = true;
    } else if (y[i] == 0.0) {
      has_neg = true;
    } else {
      throw Error("train_logreg: labels must be 0 or 1");
    }
  }
  if (!has_pos || !has_neg) throw Error("train_logreg: training data must contain both classes");

  // Centered design: the bias decouples from the weights in the Hessian bound.
  std::vector<double> mean(p, 0.0);
  for (const auto& row : X) {
    for (std::size_t j = 0; j < p; ++j) mean[j] += row[j];
  }
  for (double& m : mean) m /= static_cast<double>(n);
  std::vector<double> centered(n * p);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) centered[i * p + j] = X[i][j] - mean[j];
  }
  const double lip_w = 0.25 * gram_max_eigen(centered, n, p) + 2.0 * lambda;
  const double step_w = lip_w > 0.0 ? 1.0 / lip_w : 0.0;
  const double step_b = 4.0;

  Tensor w({p});
  Tensor b({1});
  std::vector<double> labels(y.begin(), y.end());
  LogregTrace local;
  for (int it = 0; it <= cfg.max_iter; ++it) {
    w.zero_grad();
    b.zero_grad();
    Graph g;
    Var logits = g.add_scalar(g.matvec(g.constant({n, p}, centered), g.param(w)), g.param(b));
    Var loss = g.bce_mean(logits, labels);
    if (lambda > 0.0) loss = g.add(loss, g.scale(g.sum_squares(g.param(w)), lambda));
    g.backward(loss);
    double sq = b.grad[0] * b.grad[0];
    for (double gw : w.grad) sq += gw * gw;
    local.loss = g.scalar(loss);
    local.grad_norm = std::sqrt(sq);
    local.iterations = it;
    if (!std::isfinite(local.loss) || !std::isfinite(local.grad_norm)) throw Error("train_logreg diverged");
    if (local.grad_norm < cfg.tol || it == cfg.max_iter) break;
    for (std::size_t j = 0; j < p; ++j) w.values[j] -= step_w * w.grad[j];
    b.values[0] -= step_b * b.grad[0];
  }
  if (trace) *trace = local;

  WideWeights out;
  out.weights = Tensor({1, p}, w.values);
  out.bias = Tensor({1}, {b.values[0] - dot(w.values.data(), mean.data(), p)});
  out.lambda = lambda;
  return out;
}

std::vector<FeatureVector> feature_rows(const FeatureTable& features, std::span<const LabeledPair> examples) {
  std::vector<FeatureVector> rows;
  rows.reserve(examples.size());
  for (const auto& ex : examples) {
    const FeatureVector* row = features.find(ex.pair);
    if (!row) {
      throw Error("no feature row for training pair " + ex.pair.first() + " / " + ex.pair.second());
    }
    rows.push_back(*row);
  }
  return rows;
}

WideWeights train_logreg_pairs(const PairSet& truth, std::span<const CandidatePair> candidates,
                               const FeatureTable& features, int neg_ratio, std::uint64_t seed, double lambda,
                               const LogregConfig& cfg) {
  const auto examples = training_examples(candidates, truth, neg_ratio, seed);
  const auto X = feature_rows(features, examples);
  std::vector<double> y;
  for (const auto& ex : examples) y.push_back(ex.label);
  WideWeights w = train_logreg(X, y, lambda, cfg);
  w.columns = features.columns;
  return w;
}

std::vector<Tensor*> JointParams::deep_tensors() { return deep.tensors(); }

std::vector<Tensor*> JointParams::wide_tensors() { return {&wide, &bias}; }

ScemnetParams JointParams::to_scemnet() const {
  ScemnetParams p;
  p.deep = deep;
  p.bias = bias;
  return p;
}

WideWeights JointParams::to_logreg() const {
  WideWeights w;
  w.weights = wide;
  w.bias = bias;
  w.lambda = lambda;
  w.columns = columns;
  return w;
}

Var joint_logit(Graph& g, JointParams& jp, const CookieProfile& a, const CookieProfile& b,
                std::span<const double> x, Mode mode, Rng& rng) {
  if (x.size() != jp.wide.size()) {
    throw ShapeError("joint model: expected " + std::to_string(jp.wide.size()) + " features, got " +
                     std::to_string(x.size()));
  }
  auto towers = bind_towers(g, jp.deep);
  Var z = fused_embedding(g, jp.deep, towers, a, b, mode, rng);
  Var deep = g.linear(z, g.param(jp.deep.output_weights));
  Var wide = g.affine(g.constant({x.size()}, {x.begin(), x.end()}), g.param(jp.wide), g.param(jp.bias));
  return g.add(deep, wide);
}

double joint_score(JointParams& jp, const CookieProfile& a, const CookieProfile& b, std::span<const double> x,
                   Mode mode, Rng& rng) {
  Graph g;
  return sigmoid(g.scalar(joint_logit(g, jp, a, b, x, mode, rng)));
}

double joint_score_cached(const JointParams& jp, std::span<const double> a, std::span<const double> b,
                          std::span<const double> x) {
  if (x.size() != jp.wide.size()) throw ShapeError("joint model: feature width mismatch");
  const auto z = fuse_cached(a, b);
  if (z.size() != jp.deep.output_weights.size()) throw ShapeError("joint model: wrong embedding size");
  const double deep = dot(jp.deep.output_weights.values.data(), z.data(), z.size());
  const double wide = dot(jp.wide.values.data(), x.data(), x.size()) + jp.bias.values[0];
  return sigmoid(deep + wide);
}

JointTrainResult train_joint(const PairSet& truth, std::span<const CandidatePair> candidates,
                             const ProfileSet& profiles, const FeatureTable& features, const ScemnetConfig& config,
                             const TrainConfig& train, const JointOptions& options) {
  train.validate();
  check_lambda(options.lambda);
  if (options.wide_lr < 0.0) throw Error("wide learning rate must be non-negative");
  const auto examples = training_examples(candidates, truth, train.neg_ratio, train.seed);
  const auto rows = feature_rows(features, examples);

  JointTrainResult result;
  JointParams& jp = result.params;
  {
    ScemnetParams init = init_scemnet(config, profiles.config(), profiles.vocabs(), train.seed);
    jp.deep = std::move(init.deep);
  }
  jp.lambda = options.lambda;
  jp.columns = features.columns;
  jp.wide = Tensor({1, features.width()});
  if (options.warm_start) {
    if (options.warm_start->weights.size() != features.width()) {
      throw ShapeError("warm start weights do not match the feature layout");
    }
    jp.wide.values = options.warm_start->weights.values;
    jp.bias.values = options.warm_start->bias.values;
  }

  std::vector<std::size_t> first(examples.size()), second(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    auto a = profiles.find(examples[i].pair.first());
    auto b = profiles.find(examples[i].pair.second());
    if (a < 0 || b < 0) throw Error("training pair refers to a cookie without events");
    first[i] = static_cast<std::size_t>(a);
    second[i] = static_cast<std::size_t>(b);
  }

  {
    const auto cache = embed_cookies(jp.deep, profiles.profiles());
    std::vector<double> logits(examples.size());
    for (std::size_t i = 0; i < examples.size(); ++i) {
      const auto z = fuse_cached(cache[first[i]], cache[second[i]]);
      logits[i] = dot(jp.deep.output_weights.values.data(), z.data(), z.size()) +
                  (dot(jp.wide.values.data(), rows[i].data(), rows[i].size()) + jp.bias.values[0]);
    }
    double penalty = jp.lambda * dot(jp.wide.values.data(), jp.wide.values.data(), jp.wide.size());
    result.initial_loss = detail::mean_bce(logits, examples) + penalty;
  }

  std::vector<detail::ParamGroup> groups{{jp.deep_tensors(), train.lr},
                                         {jp.wide_tensors(), options.wide_lr > 0.0 ? options.wide_lr : train.lr}};
  const LabeledPair* base = examples.data();
  detail::LogitFn logit = [&](Graph& g, const LabeledPair& ex, Mode mode, Rng& rng) {
    const std::size_t i = static_cast<std::size_t>(&ex - base);
    return joint_logit(g, jp, profiles[first[i]], profiles[second[i]], rows[i], mode, rng);
  };
  detail::PenaltyFn penalty;
  if (jp.lambda > 0.0) {
    penalty = [&jp] {
      for (std::size_t j = 0; j < jp.wide.size(); ++j) jp.wide.grad[j] += 2.0 * jp.lambda * jp.wide.values[j];
      return jp.lambda * dot(jp.wide.values.data(), jp.wide.values.data(), jp.wide.size());
    };
  }
  result.epoch_loss = detail::run_epochs(examples, train, groups, logit, penalty);
  return result;
}

namespace {

std::vector<ScoredPair> attach_scores(std::span<const CandidatePair> candidates, std::span<const double> scores) {
  std::vector<ScoredPair> out;
  out.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) out.push_back(ScoredPair{candidates[i].pair, scores[i]});
  return out;
}

}  // namespace

std::vector<ScoredPair> score_scemnet(ScemnetParams& params, std::span<const CandidatePair> candidates,
                                      const ProfileSet& profiles, int threads) {
  const auto cache = embed_cookies(params.deep, profiles.profiles(), threads);
  std::vector<double> scores(candidates.size());
  parallel_for(candidates.size(), threads, [&](std::size_t i) {
    const auto& pair = candidates[i].pair;
    auto a = profiles.find(pair.first());
    auto b = profiles.find(pair.second());
    if (a < 0 || b < 0) throw Error("candidate pair refers to a cookie without events");
    scores[i] = score_cached(params, cache[static_cast<std::size_t>(a)], cache[static_cast<std::size_t>(b)]);
  });
  return attach_scores(candidates, scores);
}

namespace {

void check_columns(const std::vector<std::string>& model, const std::vector<std::string>& table) {
  if (model != table) {
    throw Error("feature layout mismatch: model expects " + std::to_string(model.size()) + " columns, table has " +
                std::to_string(table.size()));
  }
}

const FeatureVector& row_for(const FeatureTable& features, const CookiePair& pair) {
  const FeatureVector* row = features.find(pair);
  if (!row) throw Error("no feature row for pair " + pair.first() + " / " + pair.second());
  return *row;
}

}  // namespace

std::vector<ScoredPair> score_logreg(const WideWeights& w, std::span<const CandidatePair> candidates,
                                     const FeatureTable& features) {
  check_columns(w.columns, features.columns);
  std::vector<ScoredPair> out;
  out.reserve(candidates.size());
  for (const auto& c : candidates) out.push_back(ScoredPair{c.pair, logreg_score(w, row_for(features, c.pair))});
  return out;
}

std::vector<ScoredPair> score_joint(JointParams& jp, std::span<const CandidatePair> candidates,
                                    const ProfileSet& profiles, const FeatureTable& features, int threads) {
  check_columns(jp.columns, features.columns);
  const auto cache = embed_cookies(jp.deep, profiles.profiles(), threads);
  std::vector<double> scores(candidates.size());
  parallel_for(candidates.size(), threads, [&](std::size_t i) {
    const auto& pair = candidates[i].pair;
    auto a = profiles.find(pair.first());
    auto b = profiles.find(pair.second());
    if (a < 0 || b < 0) throw Error("candidate pair refers to a cookie without events");
    scores[i] = joint_score_cached(jp, cache[static_cast<std::size_t>(a)], cache[static_cast<std::size_t>(b)],
                                   row_for(features, pair));
  });
  return attach_scores(candidates, scores);
}

FeatureTable append_column(const FeatureTable& table, const std::string& name, std::span<const ScoredPair> scores) {
  std::vector<std::pair<CookiePair, double>> sorted;
  sorted.reserve(scores.size());
  for (const auto& s : scores) sorted.emplace_back(s.pair, s.score);
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  FeatureTable out = table;
  out.columns.push_back(name);
  for (std::size_t i = 0; i < out.pairs.size(); ++i) {
    auto it = std::lower_bound(sorted.begin(), sorted.end(), out.pairs[i],
                               [](const auto& e, const CookiePair& p) { return e.first < p; });
    if (it == sorted.end() || it->first != out.pairs[i]) {
      throw Error("no score for feature row " + out.pairs[i].first() + " / " + out.pairs[i].second());
    }
    out.rows[i].push_back(it->second);
  }
  return out;
}

StackedModel train_stacking(const TrainingSplit& split, const ProfileSet& profiles, const ScemnetConfig& config,
                            const TrainConfig& train, double lambda, const LogregConfig& cfg) {
  StackedModel model;
  model.scemnet = train_scemnet(split.truth, split.candidates, profiles, config, train).params;
  const auto scores = score_scemnet(model.scemnet, split.candidates, profiles);
  const FeatureTable stacked = append_column(split.features, "scemnet", scores);
  model.wide = train_logreg_pairs(split.truth, split.candidates, stacked, train.neg_ratio, train.seed, lambda, cfg);
  return model;
}

std::vector<ScoredPair> score_stacking(StackedModel& model, const ScoringSplit& split, const ProfileSet& profiles,
                                       int threads) {
  const auto scores = score_scemnet(model.scemnet, split.candidates, profiles, threads);
  const FeatureTable stacked = append_column(split.features, "scemnet", scores);
  return score_logreg(model.wide, split.candidates, stacked);
}

json to_json(const WideWeights& w) {
  return json{{"version", "logreg-v1"},
              {"columns", w.columns},
              {"weights", w.weights.values},
              {"bias", w.bias.values[0]},
              {"lambda", w.lambda}};
}

namespace {

std::vector<double> finite_values(const json& j, const char* what) {
  auto v = j.get<std::vector<double>>();
  for (double x : v) {
    if (!std::isfinite(x)) throw Error(std::string("model file: non-finite ") + what);
  }
  return v;
}

}  // namespace

WideWeights logreg_from_json(const json& j) {
  try {
    if (j.at("version") != "logreg-v1") throw Error("model file: expected version logreg-v1");
    WideWeights w;
    w.columns = j.at("columns").get<std::vector<std::string>>();
    auto values = finite_values(j.at("weights"), "weight");
    if (values.size() != w.columns.size()) throw Error("model file: weight count does not match columns");
    const std::size_t n = values.size();
    w.weights = Tensor({1, n}, std::move(values));
    w.bias = Tensor({1}, {j.at("bias").get<double>()});
    w.lambda = j.at("lambda").get<double>();
    return w;
  } catch (const json::exception& e) {
    throw Error(std::string("model file: ") + e.what());
  }
}

json to_json(const JointParams& jp) {
  return json{{"version", "jscemnet-v1"},
              {"scemnet", deep_to_json(jp.deep, jp.bias.values[0])},
              {"wide", {{"columns", jp.columns}, {"weights", jp.wide.values}, {"lambda", jp.lambda}}}};
}

JointParams jscemnet_from_json(const json& j) {
  try {
    if (j.at("version") != "jscemnet-v1") throw Error("model file: expected version jscemnet-v1");
    JointParams jp;
    double bias = 0.0;
    jp.deep = deep_from_json(j.at("scemnet"), bias);
    jp.bias = Tensor({1}, {bias});
    const auto& wide = j.at("wide");
    jp.columns = wide.at("columns").get<std::vector<std::string>>();
    auto values = finite_values(wide.at("weights"), "weight");
    if (values.size() != jp.columns.size()) throw Error("model file: weight count does not match columns");
    const std::size_t n = values.size();
    jp.wide = Tensor({1, n}, std::move(values));
    jp.lambda = wide.at("lambda").get<double>();
    return jp;
  } catch (const json::exception& e) {
    throw Error(std::string("model file: ") + e.what());
  }
}

}  // namespace xmatch
