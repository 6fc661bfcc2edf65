#pragma once

// Shared mini-batch loop for the pair rankers.

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "xmatch/autodiff.hpp"
#include "xmatch/scemnet.hpp"

namespace xmatch::detail {

inline constexpr std::uint64_t kInitStream = 1;
inline constexpr std::uint64_t kShuffleStream = 2;
inline constexpr std::uint64_t kDropoutStream = 3;

struct ParamGroup {
  std::vector<Tensor*> tensors;
  double lr = 1e-3;
};

using LogitFn = std::function<Var(Graph&, const LabeledPair&, Mode, Rng&)>;

/// Adds penalty gradients into the tensors and returns the penalty value.
using PenaltyFn = std::function<double()>;

inline void ensure_finite(std::span<Tensor* const> tensors) {
  for (const Tensor* t : tensors) {
    if (!t->all_finite()) throw Error("training diverged: non-finite parameter or gradient");
  }
}

/// Runs `epochs` passes of mini-batch Adam on mean BCE (+ penalty) and
/// returns the mean training loss of each epoch.
inline std::vector<double> run_epochs(std::span<const LabeledPair> examples, const TrainConfig& cfg,
                                      std::vector<ParamGroup>& groups, const LogitFn& logit,
                                      const PenaltyFn& penalty = {}) {
  std::vector<AdamState> states;
  for (auto& group : groups) states.emplace_back(group.tensors);
  Rng shuffle_rng = Rng::derive(cfg.seed, kShuffleStream);
  Rng dropout_rng = Rng::derive(cfg.seed, kDropoutStream);

  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<double> curve;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(std::span(order));
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch);
      const double seed = 1.0 / static_cast<double>(stop - start);
      for (auto& group : groups) {
        for (Tensor* t : group.tensors) t->zero_grad();
      }
      for (std::size_t i = start; i < stop; ++i) {
        const LabeledPair& ex = examples[order[i]];
        Graph g;
        Var loss = g.sigmoid_bce(logit(g, ex, Mode::train, dropout_rng), ex.label);
        total += g.scalar(loss);
        g.backward(loss, seed);
      }
      if (penalty) penalty();
      for (std::size_t k = 0; k < groups.size(); ++k) {
        ensure_finite(groups[k].tensors);
        states[k].step(groups[k].tensors, groups[k].lr);
      }
    }
    double mean = total / static_cast<double>(order.size());
    if (penalty) {
      // Value only; gradients from this call are discarded by the next zero_grad.
      mean += penalty();
    }
    curve.push_back(mean);
  }
  for (auto& group : groups) {
    for (Tensor* t : group.tensors) t->zero_grad();
  }
  return curve;
}

inline double mean_bce(std::span<const double> logits, std::span<const LabeledPair> examples) {
  double total = 0.0;
  for (std::size_t i = 0; i < examples.size(); ++i) total += bce_from_logit(logits[i], examples[i].label);
  return total / static_cast<double>(examples.size());
}

}  // namespace xmatch::detail
