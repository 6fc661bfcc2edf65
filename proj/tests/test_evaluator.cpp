#include <doctest.h>

#include <cmath>
#include <sstream>

#include "xmatch/evaluator.hpp"
#include "xmatch/rng.hpp"

using namespace xmatch;

namespace {

PairSet numbered(std::size_t n, const std::string& prefix = "a") {
  std::vector<CookiePair> v;
  for (std::size_t i = 0; i < n; ++i) v.emplace_back(prefix + std::to_string(i), "z" + std::to_string(i));
  return PairSet(std::move(v));
}

}  // namespace

TEST_CASE("prf1 examples") {
  const PairSet truth = numbered(4);
  auto same = prf1(truth, truth);
  CHECK(same.precision == 1.0);
  CHECK(same.recall == 1.0);
  CHECK(same.f1 == 1.0);
  PairSet pred({truth.pairs()[0], CookiePair("x", "y")});
  auto m = prf1(pred, truth);
  CHECK(m.precision == 0.5);
  CHECK(m.recall == 0.25);
  CHECK(m.f1 == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(prf1(PairSet{}, truth).f1 == 0.0);
  CHECK_THROWS_AS(prf1(truth, PairSet{}), Error);
  CHECK(f1_score(0.4481, 0.4786) == doctest::Approx(0.46285).epsilon(1e-4));
}

TEST_CASE("f1 identity") {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double p = rng.uniform(), r = rng.uniform();
    CHECK(std::abs(f1_score(p, r) - 2 * p * r / (p + r)) <= 1e-12);
  }
  CHECK(f1_score(0.0, 0.7) == 0.0);
}

TEST_CASE("select_pairs") {
  std::vector<ScoredPair> s;
  Rng rng(2);
  for (int i = 0; i < 50; ++i) s.push_back({CookiePair("a" + std::to_string(i), "b"), rng.uniform()});
  CHECK(select_pairs(s, 0.0).size() == 50);
  double hi = 0;
  for (auto& x : s) hi = std::max(hi, x.score);
  CHECK(select_pairs(s, std::nextafter(hi, 2.0)).empty());
  for (int t = 0; t < 100; ++t) {
    double a = rng.uniform(), b = rng.uniform();
    if (a > b) std::swap(a, b);
    auto big = select_pairs(s, a), small = select_pairs(s, b);
    CHECK(big.intersection_size(small) == small.size());
  }
}

TEST_CASE("tune_threshold") {
  const PairSet truth = numbered(10);
  std::vector<ScoredPair> perfect;
  for (const auto& p : truth) perfect.push_back({p, 1.0});
  for (int i = 0; i < 30; ++i) perfect.push_back({CookiePair("n" + std::to_string(i), "m"), 0.0});
  auto c = tune_threshold(perfect, truth);
  CHECK(c.metrics.f1 == 1.0);
  CHECK(c.tau > 0.0);
  CHECK(c.tau <= 1.0);

  std::vector<ScoredPair> flat = perfect;
  for (auto& s : flat) s.score = 0.3;
  auto f = tune_threshold(flat, truth);
  CHECK(f.tau == 0.3);
  CHECK(f.metrics.f1 == doctest::Approx(prf1(select_pairs(flat, 0.0), truth).f1));

  Rng rng(3);
  for (int run = 0; run < 20; ++run) {
    std::vector<ScoredPair> noisy;
    for (const auto& p : truth) noisy.push_back({p, rng.uniform(0.2, 1.0)});
    for (int i = 0; i < 40; ++i) noisy.push_back({CookiePair("n" + std::to_string(i), "m"), rng.uniform(0.0, 0.8)});
    auto best = tune_threshold(noisy, truth);
    CHECK(best.metrics.f1 >= prf1(select_pairs(noisy, 0.5), truth).f1);
    CHECK(best.metrics.f1 == prf1(select_pairs(noisy, best.tau), truth).f1);
  }
}

TEST_CASE("tune_threshold prefers the higher threshold on ties") {
  const PairSet truth = numbered(2);
  std::vector<ScoredPair> s{{truth.pairs()[0], 0.9}, {CookiePair("x", "y"), 0.8}, {truth.pairs()[1], 0.7},
                            {CookiePair("u", "v"), 0.1}};
  // tau = 0.9 gives F1 2/3; tau = 0.7 also gives F1 0.8.
  auto c = tune_threshold(s, truth);
  CHECK(c.tau == 0.7);
  std::vector<ScoredPair> tie{{truth.pairs()[0], 0.9}, {CookiePair("x", "y"), 0.5}};
  CHECK(tune_threshold(tie, PairSet({truth.pairs()[0]})).tau == 0.9);
}

TEST_CASE("half_split_eval") {
  const PairSet truth = numbered(1000);
  auto r = half_split_eval(truth, truth, 50, 4);
  CHECK(r.mean_f1 == 2.0 / 3.0);
  CHECK(r.std_f1 == 0.0);
  CHECK(r.ci_half_width == 0.0);
  auto empty = half_split_eval(PairSet{}, truth, 10, 1);
  CHECK(empty.mean_f1 == 0.0);
  PairSet partial(std::vector<CookiePair>(truth.pairs().begin(), truth.pairs().begin() + 400));
  auto a = half_split_eval(partial, truth, 50, 9, 1);
  auto b = half_split_eval(partial, truth, 50, 9, 3);
  CHECK(a.mean_f1 == b.mean_f1);
  CHECK(a.std_f1 == b.std_f1);
  CHECK(a.std_f1 > 0.0);
  CHECK(a.ci_half_width == doctest::Approx(1.96 * a.std_f1 / std::sqrt(50.0)));
  CHECK_THROWS(half_split_eval(truth, numbered(1), 10, 0));
}

TEST_CASE("half_split_eval ignores cookie naming") {
  // Relabel every cookie and compare the split means.
  const PairSet truth = numbered(1000);
  PairSet pred(std::vector<CookiePair>(truth.pairs().begin(), truth.pairs().begin() + 600));
  const PairSet truth2 = numbered(1000, "q");
  PairSet pred2;
  for (const auto& p : pred) pred2.insert(CookiePair("q" + p.first().substr(1), p.second()));
  auto a = half_split_eval(pred, truth, 50, 1);
  auto b = half_split_eval(pred2, truth2, 50, 1);
  const double se = std::sqrt((a.std_f1 * a.std_f1 + b.std_f1 * b.std_f1) / 50.0);
  CHECK(std::abs(a.mean_f1 - b.mean_f1) < 3.0 * se + 1e-12);
}

TEST_CASE("report formats") {
  EvalReport r;
  r.metrics = {0.5, 0.25, 1.0 / 3.0};
  std::ostringstream tsv;
  write_report_tsv(r, tsv);
  CHECK(tsv.str() == "0.500000\t0.250000\t0.333333\n");
  r.has_splits = true;
  r.mean_f1 = 0.3;
  r.std_f1 = 0.01;
  r.ci_half_width = 0.002;
  r.n_splits = 50;
  std::ostringstream tsv2;
  write_report_tsv(r, tsv2);
  CHECK(tsv2.str() == "0.500000\t0.250000\t0.333333\t0.300000\t0.010000\t0.002000\n");
  std::ostringstream text;
  write_report_text(r, text);
  CHECK(text.str().find("f1         0.333333\n") != std::string::npos);
  CHECK(text.str().find("splits     50\n") != std::string::npos);
}
