#include "xmatch/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include "xmatch/error.hpp"
#include "xmatch/parallel.hpp"
#include "xmatch/rng.hpp"

namespace xmatch {

double f1_score(double precision, double recall) {
  if (precision == 0.0 || recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

PRF1 prf1(const PairSet& predicted, const PairSet& truth) {
  if (truth.empty()) throw Error("evaluation needs a non-empty truth set");
  const auto hits = static_cast<double>(predicted.intersection_size(truth));
  PRF1 m;
  m.precision = predicted.empty() ? 0.0 : hits / static_cast<double>(predicted.size());
  m.recall = hits / static_cast<double>(truth.size());
  m.f1 = f1_score(m.precision, m.recall);
  return m;
}

PairSet select_pairs(std::span<const ScoredPair> scored, double tau) {
  std::vector<CookiePair> out;
  for (const auto& s : scored) {
    if (s.score >= tau) out.push_back(s.pair);
  }
  return PairSet(std::move(out));
}

ThresholdChoice tune_threshold(std::span<const ScoredPair> scored, const PairSet& truth) {
  if (scored.empty()) throw Error("threshold tuning needs at least one scored pair");
  if (truth.empty()) throw Error("evaluation needs a non-empty truth set");

  // Sort descending by score; a threshold tau selects a prefix.
  std::vector<std::pair<double, bool>> ranked;
  ranked.reserve(scored.size());
  {
    std::vector<ScoredPair> uniq(scored.begin(), scored.end());
    std::sort(uniq.begin(), uniq.end(), [](const auto& a, const auto& b) { return a.pair < b.pair; });
    for (std::size_t i = 0; i < uniq.size(); ++i) {
      if (i > 0 && uniq[i].pair == uniq[i - 1].pair) throw Error("duplicate pair in scored list");
      ranked.emplace_back(uniq[i].score, truth.contains(uniq[i].pair));
    }
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<std::size_t> hits_prefix(ranked.size() + 1, 0);
  for (std::size_t i = 0; i < ranked.size(); ++i) hits_prefix[i + 1] = hits_prefix[i] + (ranked[i].second ? 1 : 0);

  std::vector<double> grid;
  const std::size_t n = ranked.size();
  for (std::size_t q = 0; q <= kThresholdQuantiles; ++q) {
    // Quantile q/512 of the ascending scores (lower order statistic).
    const std::size_t rank = static_cast<std::size_t>(
        std::floor(static_cast<double>(q) * static_cast<double>(n - 1) / static_cast<double>(kThresholdQuantiles)));
    grid.push_back(ranked[n - 1 - rank].first);
  }
  grid.push_back(ranked.back().first);
  grid.push_back(std::nextafter(ranked.front().first, std::numeric_limits<double>::infinity()));
  std::sort(grid.begin(), grid.end(), std::greater<>());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  ThresholdChoice best;
  bool first = true;
  std::size_t selected = 0;
  for (double tau : grid) {
    while (selected < n && ranked[selected].first >= tau) ++selected;
    PRF1 m;
    const auto hits = static_cast<double>(hits_prefix[selected]);
    m.precision = selected == 0 ? 0.0 : hits / static_cast<double>(selected);
    m.recall = hits / static_cast<double>(truth.size());
    m.f1 = f1_score(m.precision, m.recall);
    // Grid runs from high to low tau, so strict improvement keeps the higher tie.
    if (first || m.f1 > best.metrics.f1) {
      best = ThresholdChoice{tau, m};
      first = false;
    }
  }
  return best;
}

EvalReport half_split_eval(const PairSet& predicted, const PairSet& truth, std::size_t n_splits, std::uint64_t seed,
                           int threads) {
  if (truth.size() < 2) throw Error("half-split evaluation needs at least two truth pairs");
  if (n_splits == 0) throw Error("half-split evaluation needs at least one split");
  EvalReport report;
  report.metrics = prf1(predicted, truth);
  report.has_splits = true;
  report.n_splits = n_splits;

  const std::size_t half = truth.size() / 2;
  std::vector<double> f1(n_splits);
  parallel_for(n_splits, threads, [&](std::size_t s) {
    Rng rng(seed + s);
    std::vector<CookiePair> pool = truth.pairs();
    for (std::size_t i = 0; i < half; ++i) {
      std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
      std::swap(pool[i], pool[j]);
    }
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(half), pool.end());
    f1[s] = prf1(predicted, PairSet(std::move(pool))).f1;
  });

  // Welford, in split order: identical inputs give exactly zero variance.
  double mean = 0.0, m2 = 0.0;
  for (std::size_t s = 0; s < n_splits; ++s) {
    const double delta = f1[s] - mean;
    mean += delta / static_cast<double>(s + 1);
    m2 += delta * (f1[s] - mean);
  }
  report.mean_f1 = mean;
  report.std_f1 = std::sqrt(m2 / static_cast<double>(n_splits));
  report.ci_half_width = 1.96 * report.std_f1 / std::sqrt(static_cast<double>(n_splits));
  return report;
}

void write_report_text(const EvalReport& report, std::ostream& out) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "precision  %.6f\nrecall     %.6f\nf1         %.6f\n", report.metrics.precision,
                report.metrics.recall, report.metrics.f1);
  out << buf;
  if (report.has_splits) {
    std::snprintf(buf, sizeof buf, "mean_f1    %.6f\nstd_f1     %.6f\nci95       %.6f\nsplits     %zu\n",
                  report.mean_f1, report.std_f1, report.ci_half_width, report.n_splits);
    out << buf;
  }
}

void write_report_tsv(const EvalReport& report, std::ostream& out) {
  out << format_fixed6(report.metrics.precision) << '\t' << format_fixed6(report.metrics.recall) << '\t'
      << format_fixed6(report.metrics.f1);
  if (report.has_splits) {
    out << '\t' << format_fixed6(report.mean_f1) << '\t' << format_fixed6(report.std_f1) << '\t'
        << format_fixed6(report.ci_half_width);
  }
  out << '\n';
}

std::vector<std::string> cookies_of(const PairSet& pairs) {
  std::vector<std::string> out;
  for (const auto& p : pairs) {
    out.push_back(p.first());
    out.push_back(p.second());
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace xmatch
