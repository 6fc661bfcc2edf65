#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "xmatch/corpus.hpp"

namespace xmatch {

struct PRF1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Harmonic mean of P and R; 0 when either is 0.
double f1_score(double precision, double recall);

/// Throws Error on an empty truth set. Precision is 0 for an empty prediction.
PRF1 prf1(const PairSet& predicted, const PairSet& truth);

/// {pair : score >= tau}.
PairSet select_pairs(std::span<const ScoredPair> scored, double tau);

inline constexpr std::size_t kThresholdQuantiles = 512;

struct ThresholdChoice {
  double tau = 0.0;
  PRF1 metrics;
};

/// Best validation F1 over the 512 score quantiles plus the minimum score and
/// one step above the maximum. Ties go to the higher threshold.
ThresholdChoice tune_threshold(std::span<const ScoredPair> scored, const PairSet& truth);

struct EvalReport {
  PRF1 metrics;
  bool has_splits = false;
  double mean_f1 = 0.0;
  double std_f1 = 0.0;
  double ci_half_width = 0.0;
  std::size_t n_splits = 0;
};

inline constexpr std::size_t kDefaultSplits = 50;

/// Scores the full prediction against n_splits random halves of the truth.
/// Split s samples floor(|truth|/2) pairs with seed + s. std is the
/// population deviation; ci_half_width is 1.96 std / sqrt(n_splits).
EvalReport half_split_eval(const PairSet& predicted, const PairSet& truth, std::size_t n_splits = kDefaultSplits,
                           std::uint64_t seed = 0, int threads = 1);

/// Aligned human-readable lines.
void write_report_text(const EvalReport& report, std::ostream& out);
/// `P<TAB>R<TAB>F1[<TAB>mean_f1<TAB>std_f1<TAB>ci]` on one line.
void write_report_tsv(const EvalReport& report, std::ostream& out);

/// Cookies appearing in a pair set.
std::vector<std::string> cookies_of(const PairSet& pairs);

}  // namespace xmatch
