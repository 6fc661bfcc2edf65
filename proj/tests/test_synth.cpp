#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "test_util.hpp"
#include "xmatch/candidates.hpp"
#include "xmatch/evaluator.hpp"
#include "xmatch/features.hpp"
#include "xmatch/pipeline.hpp"
#include "xmatch/synth.hpp"

using namespace xmatch;

namespace {

const SynthCorpus& default_corpus() {
  static const SynthCorpus c = generate(SynthConfig{});
  return c;
}

const ProfileSet& default_profiles() {
  static const ProfileSet ps = [] {
    TokenizerConfig t;
    t.seq_len = 16;
    return ProfileSet::build(Corpus(default_corpus().logs), t);
  }();
  return ps;
}

}  // namespace

TEST_CASE("synth basics") {
  SynthConfig cfg;
  cfg.n_users = 1;
  auto one = generate(cfg);
  CHECK(one.truth.size() == 1);
  CHECK(one.logs.size() == 2);

  cfg.n_users = 50;
  auto a = generate(cfg);
  auto b = generate(cfg);
  CHECK(a.logs == b.logs);
  CHECK(a.truth == b.truth);
  cfg.seed = 2;
  CHECK_FALSE(generate(cfg).logs == a.logs);

  for (const auto& log : a.logs) {
    CHECK(log.events.size() >= 20);
    CHECK(log.events.size() <= 40);
    for (std::size_t i = 1; i < log.events.size(); ++i) CHECK(log.events[i - 1].timestamp <= log.events[i].timestamp);
  }
  CHECK(a.train.size() + a.valid.size() + a.test.size() == a.truth.size());
  CHECK(a.train.intersection_size(a.test) == 0);
}

TEST_CASE("synth config validation") {
  SynthConfig cfg;
  cfg.noise = 1.5;
  CHECK_THROWS(generate(cfg));
  cfg = SynthConfig{};
  cfg.n_users = 0;
  CHECK_THROWS(generate(cfg));
  cfg = SynthConfig{};
  cfg.valid_fraction = 0.7;
  cfg.test_fraction = 0.7;
  CHECK_THROWS(generate(cfg));
}

TEST_CASE("without noise siblings share deep tokens") {
  SynthConfig cfg;
  cfg.n_users = 200;
  cfg.noise = 0.0;
  auto c = generate(cfg);
  TokenizerConfig t;
  t.seq_len = 16;
  t.min_count = 1;
  auto ps = ProfileSet::build(Corpus(c.logs), t);
  for (const auto& p : c.truth) {
    auto a = support(ps.at(p.first()).tf[3]);
    auto b = support(ps.at(p.second()).tf[3]);
    CHECK(term_match(a, b).jaccard > 0.0);
  }
}

TEST_CASE("planted signal: true pairs are more similar than random pairs") {
  const auto& c = default_corpus();
  const auto& ps = default_profiles();
  const std::size_t m = ps.modality_for_depth(2);
  Rng rng(17);
  const auto& truth = c.truth.pairs();
  double sum = 0.0, sum_sq = 0.0;
  const int n = 1000;
  for (int i = 0; i < n; ++i) {
    const auto& p = truth[static_cast<std::size_t>(rng.below(truth.size()))];
    const auto& a = ps.at(p.first());
    const auto& other = ps[static_cast<std::size_t>(rng.below(ps.size()))];
    const double diff = cosine(tfidf(a.tf[m], ps.idf()[m]), tfidf(ps.at(p.second()).tf[m], ps.idf()[m])) -
                        cosine(tfidf(a.tf[m], ps.idf()[m]), tfidf(other.tf[m], ps.idf()[m]));
    sum += diff;
    sum_sq += diff * diff;
  }
  const double mean = sum / n;
  const double se = std::sqrt((sum_sq / n - mean * mean) / n);
  CHECK(mean > 5.0 * se);
}

TEST_CASE("candidate recall on the default corpus") {
  const auto& c = default_corpus();
  const auto cands = generate_candidates(default_profiles(), 10);
  const double recall = static_cast<double>(recall_ceiling(cands, c.truth).size()) / static_cast<double>(c.truth.size());
  CHECK(recall >= 0.8);
}

TEST_CASE("write_synth files") {
  SynthConfig cfg;
  cfg.n_users = 20;
  auto c = generate(cfg);
  const auto dir = std::filesystem::temp_directory_path() / "xmatch_synth_unit";
  std::filesystem::remove_all(dir);
  write_synth(c, cfg, dir);
  for (const char* f : {"events.tsv", "truth.tsv", "truth_train.tsv", "truth_valid.tsv", "truth_test.tsv",
                        "synth_config.txt"}) {
    CHECK(std::filesystem::exists(dir / f));
  }
  std::ifstream ev(dir / "events.tsv");
  CHECK(parse_events(ev) == c.logs);
  std::ifstream tr(dir / "truth.tsv");
  CHECK(parse_pairs(tr) == c.truth);
  std::ostringstream conf;
  write_config(cfg, conf);
  CHECK(conf.str().find("noise=0.20000000000000001\n") != std::string::npos);
  std::filesystem::remove_all(dir);
}
