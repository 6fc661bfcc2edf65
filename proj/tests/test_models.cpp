#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "test_util.hpp"
#include "xmatch/candidates.hpp"
#include "xmatch/evaluator.hpp"
#include "xmatch/jscemnet.hpp"
#include "xmatch/pipeline.hpp"
#include "xmatch/scemnet.hpp"

using namespace xmatch;

namespace {

ScemnetConfig toy_config() {
  ScemnetConfig c;
  c.widths = {2, 3};
  c.filters_per_width = 3;
  c.embed_dim = 4;
  c.dropout = 0.5;
  return c;
}

struct Fixture {
  SynthCorpus corpus;
  ProfileSet profiles;
  std::vector<CandidatePair> candidates;
  FeatureTable features;

  explicit Fixture(std::uint64_t seed, std::size_t users = 40, double noise = 0.2, std::size_t domains = 200)
      : corpus(testutil::small_corpus(seed, users, noise, domains)),
        profiles(testutil::profiles_of(corpus.logs, 16, 1)),
        candidates(generate_candidates(profiles, 5)),
        features(build_features(profiles, candidates)) {}
};

void randomize(std::vector<Tensor*> tensors, std::uint64_t seed, double scale = 0.5) {
  Rng rng(seed);
  for (Tensor* t : tensors) {
    for (double& x : t->values) x = rng.uniform(-scale, scale);
  }
}

void zero_pad_rows(DeepParams& deep) {
  for (auto& tower : deep.towers) {
    const std::size_t d = tower.embedding.shape[1];
    std::fill(tower.embedding.values.begin(), tower.embedding.values.begin() + static_cast<std::ptrdiff_t>(d), 0.0);
  }
}

// Straight-line forward pass in infer mode.
std::vector<double> oracle_embedding(const DeepParams& deep, std::size_t m, const std::vector<TokenId>& ids) {
  const auto& tower = deep.towers[m];
  const std::size_t d = tower.embedding.shape[1];
  const std::size_t L = ids.size();
  std::vector<double> out;
  for (std::size_t k = 0; k < deep.config.widths.size(); ++k) {
    const std::size_t w = static_cast<std::size_t>(deep.config.widths[k]);
    const std::size_t F = tower.filters[k].shape[0];
    for (std::size_t f = 0; f < F; ++f) {
      double best = -1.0;
      for (std::size_t t = 0; t + w <= L; ++t) {
        double s = tower.biases[k].values[f];
        for (std::size_t o = 0; o < w; ++o) {
          for (std::size_t j = 0; j < d; ++j) {
            s += tower.filters[k].values[(f * w + o) * d + j] *
                 tower.embedding.values[static_cast<std::size_t>(ids[t + o]) * d + j];
          }
        }
        best = std::max(best, std::max(s, 0.0));
      }
      out.push_back(best);
    }
  }
  return out;
}

double oracle_score(const ScemnetParams& p, const CookieProfile& a, const CookieProfile& b) {
  double logit = p.bias.values[0];
  std::size_t pos = 0;
  for (std::size_t m = 0; m < p.deep.towers.size(); ++m) {
    auto ea = oracle_embedding(p.deep, m, a.sequences[m].ids);
    auto eb = oracle_embedding(p.deep, m, b.sequences[m].ids);
    for (std::size_t i = 0; i < ea.size(); ++i) logit += p.deep.output_weights.values[pos++] * ea[i] * eb[i];
  }
  return 1.0 / (1.0 + std::exp(-logit));
}

}  // namespace

TEST_CASE("embedding and fused sizes under the default config") {
  ScemnetConfig c;
  CHECK(c.embedding_size() == 240);
  Fixture fx(1, 10);
  auto p = init_scemnet(c, fx.profiles.config(), fx.profiles.vocabs(), 1);
  CHECK(p.deep.fused_size() == 960);
  CHECK(p.deep.output_weights.shape == std::vector<std::size_t>{1, 960});
}

TEST_CASE("all-PAD sequence embeds to zero") {
  Fixture fx(2, 10);
  auto p = init_scemnet(toy_config(), fx.profiles.config(), fx.profiles.vocabs(), 3);
  Graph g;
  auto towers = bind_towers(g, p.deep);
  Rng rng(0);
  std::vector<TokenId> pad(16, kPadId);
  Var e = seqcnn_embed(g, towers[0], pad, 0.5, Mode::infer, rng);
  for (double v : g.value(e)) CHECK(v == 0.0);
}

TEST_CASE("fusion ops") {
  Graph g;
  Var e = g.constant({2}, {1, 2});
  CHECK(g.value(pair_fuse(g, e, g.constant({2}, {1, 1}))) == std::vector<double>{1, 2});
  CHECK(g.value(pair_fuse(g, e, g.constant({2}, {0, 0}))) == std::vector<double>{0, 0});
  CHECK(g.value(pair_fuse(g, e, g.constant({2}, {3, 4}))) == std::vector<double>{3, 8});
  std::vector<Var> parts{g.constant({1}, {1}), g.constant({1}, {2})};
  CHECK(g.value(multimodal_fuse(g, parts, 2)) == std::vector<double>{1, 2});
  CHECK_THROWS_AS(multimodal_fuse(g, parts, 3), ShapeError);
}

TEST_CASE("forward pass matches a straight-line oracle") {
  Fixture fx(3, 20);
  auto cfg = toy_config();
  cfg.embed_dim = 2;
  cfg.filters_per_width = 1;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto p = init_scemnet(cfg, fx.profiles.config(), fx.profiles.vocabs(), seed);
    randomize(p.tensors(), seed + 100);
    zero_pad_rows(p.deep);
    Rng rng(0);
    for (std::size_t i = 0; i + 1 < fx.profiles.size(); i += 5) {
      const auto& a = fx.profiles[i];
      const auto& b = fx.profiles[i + 1];
      CHECK(std::abs(score_pair(p, a, b, Mode::infer, rng) - oracle_score(p, a, b)) <= 1e-12);
    }
  }
}

TEST_CASE("zero output weights score one half") {
  Fixture fx(4, 10);
  auto p = init_scemnet(toy_config(), fx.profiles.config(), fx.profiles.vocabs(), 1);
  std::fill(p.deep.output_weights.values.begin(), p.deep.output_weights.values.end(), 0.0);
  Rng rng(0);
  CHECK(score_pair(p, fx.profiles[0], fx.profiles[1], Mode::infer, rng) == 0.5);
}

TEST_CASE("cached scoring equals graph scoring and is symmetric") {
  Fixture fx(5, 20);
  auto p = init_scemnet(toy_config(), fx.profiles.config(), fx.profiles.vocabs(), 9);
  randomize(p.tensors(), 10);
  zero_pad_rows(p.deep);
  auto cache = embed_cookies(p.deep, fx.profiles.profiles(), 2);
  Rng rng(0);
  for (std::size_t i = 0; i + 3 < fx.profiles.size(); i += 3) {
    const double s = score_pair(p, fx.profiles[i], fx.profiles[i + 3], Mode::infer, rng);
    CHECK(s == score_pair(p, fx.profiles[i + 3], fx.profiles[i], Mode::infer, rng));
    CHECK(s == score_cached(p, cache[i], cache[i + 3]));
  }
}

TEST_CASE("negative sampling") {
  std::vector<CandidatePair> cands;
  std::vector<CookiePair> truth;
  for (int i = 0; i < 10; ++i) {
    CookiePair p("a", "b" + std::to_string(i));
    cands.push_back({p, 0.5});
    if (i < 2) truth.push_back(p);
  }
  PairSet t(truth);
  auto neg = sample_negatives(cands, t, 4, 7);
  CHECK(neg.size() == 8);
  CHECK(neg == sample_negatives(cands, t, 4, 7));
  for (const auto& p : neg) CHECK_FALSE(t.contains(p));
  auto one = sample_negatives(cands, t, 1, 7);
  CHECK(one.size() == 2);
  std::vector<CandidatePair> only_truth(cands.begin(), cands.begin() + 2);
  CHECK(sample_negatives(only_truth, t, 4, 1).empty());
}

TEST_CASE("training examples never label a non-truth pair positive") {
  Fixture fx(6, 40);
  auto ex = training_examples(fx.candidates, fx.corpus.truth, 4, 3);
  for (const auto& e : ex) CHECK((e.label == 1.0) == fx.corpus.truth.contains(e.pair));
  CHECK_THROWS(training_examples(fx.candidates, PairSet({CookiePair("zz1", "zz2")}), 4, 3));
}

TEST_CASE("scemnet training learns a separable corpus") {
  // Each user draws from three tokens of its own; candidates are all pairs.
  Rng rng(1);
  std::vector<EventLog> logs;
  PairSet truth;
  for (int u = 0; u < 200; ++u) {
    std::string ids[2];
    for (int c = 0; c < 2; ++c) {
      EventLog log{"u" + std::to_string(100 + u) + "c" + std::to_string(c), {}};
      for (int e = 0; e < 12; ++e) {
        log.events.push_back(Event{"http://u" + std::to_string(u) + "t" + std::to_string(rng.below(3)) + ".com/x", e});
      }
      ids[c] = log.cookie_id;
      logs.push_back(std::move(log));
    }
    truth.insert(CookiePair(ids[0], ids[1]));
  }
  const auto ps = testutil::profiles_of(logs, 12, 1);
  std::vector<CandidatePair> cands;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    for (std::size_t j = i + 1; j < ps.size(); ++j) cands.push_back({CookiePair(ps[i].cookie_id, ps[j].cookie_id), 0.0});
  }
  std::sort(cands.begin(), cands.end(), [](const auto& a, const auto& b) { return a.pair < b.pair; });

  auto cfg = toy_config();
  cfg.embed_dim = 8;
  cfg.filters_per_width = 16;
  cfg.dropout = 0.0;
  TrainConfig t;
  t.epochs = 5;
  t.lr = 5e-3;
  t.batch = 2;
  t.seed = 1;
  auto r = train_scemnet(truth, cands, ps, cfg, t);
  REQUIRE(r.epoch_loss.size() == 5);
  CHECK(r.epoch_loss.front() < r.initial_loss);
  CHECK(r.epoch_loss.back() < 0.1);
  auto again = train_scemnet(truth, cands, ps, cfg, t);
  CHECK(again.epoch_loss == r.epoch_loss);
  CHECK(again.params.deep.output_weights == r.params.deep.output_weights);
}

TEST_CASE("scemnet json round trip preserves scores") {
  Fixture fx(8, 15);
  auto p = init_scemnet(toy_config(), fx.profiles.config(), fx.profiles.vocabs(), 2);
  randomize(p.tensors(), 3);
  zero_pad_rows(p.deep);
  std::stringstream s;
  save_scemnet(p, s);
  auto q = load_scemnet(s);
  CHECK(to_json(q)["version"] == "scemnet-v1");
  auto a = score_scemnet(p, fx.candidates, fx.profiles);
  auto b = score_scemnet(q, fx.candidates, fx.profiles);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].score == b[i].score);
  auto j = to_json(p);
  j["params"]["m0.embedding"]["shape"][0] = 1;
  CHECK_THROWS(scemnet_from_json(j));
}

TEST_CASE("logreg_score examples") {
  auto w = WideWeights::zeros({"x"});
  std::vector<double> x{std::log(2.0)};
  CHECK(logreg_score(w, x) == 0.5);
  w.bias.values[0] = 40.0;
  CHECK(logreg_score(w, x) == doctest::Approx(1.0));
  w.bias.values[0] = 0.0;
  w.weights.values[0] = 1.0;
  CHECK(logreg_score(w, x) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  std::vector<double> wide{1.0, 2.0};
  CHECK_THROWS_AS(logreg_score(w, wide), ShapeError);
}

TEST_CASE("logreg training") {
  std::vector<FeatureVector> X;
  std::vector<double> y;
  for (int i = 0; i < 40; ++i) {
    X.push_back({i < 20 ? -1.0 - 0.05 * i : 1.0 + 0.05 * i});
    y.push_back(i < 20 ? 0.0 : 1.0);
  }
  LogregTrace trace;
  auto w = train_logreg(X, y, 0.0, {}, &trace);
  CHECK(trace.loss < 0.1);

  auto strong = train_logreg(X, y, 1e6);
  CHECK(std::abs(strong.weights.values[0]) < 1e-5);
  std::vector<double> zero{0.0};
  CHECK(logreg_score(strong, zero) == doctest::Approx(0.5).epsilon(1e-4));

  std::vector<FeatureVector> X2;
  std::vector<double> y2;
  std::vector<double> skewed{0, 0, 0, 1};
  for (int i = 0; i < 40; ++i) {
    X2.push_back({static_cast<double>(i % 5), static_cast<double>(i % 3)});
    y2.push_back(skewed[static_cast<std::size_t>(i % 4)]);
  }
  auto base = train_logreg(X2, y2, 1e-3);
  auto prior = train_logreg(X2, y2, 1e6);
  CHECK(logreg_score(prior, X2[0]) == doctest::Approx(0.25).epsilon(1e-3));
  std::vector<FeatureVector> Xd;
  std::vector<double> yd;
  for (std::size_t i = 0; i < X2.size(); ++i) {
    for (int r = 0; r < 2; ++r) {
      Xd.push_back(X2[i]);
      yd.push_back(y2[i]);
    }
  }
  auto dup = train_logreg(Xd, yd, 1e-3);
  for (std::size_t j = 0; j < 2; ++j) CHECK(dup.weights.values[j] == doctest::Approx(base.weights.values[j]).epsilon(1e-6));
  CHECK(dup.bias.values[0] == doctest::Approx(base.bias.values[0]).epsilon(1e-6));

  std::vector<double> one_class(40, 1.0);
  CHECK_THROWS_AS(train_logreg(X, one_class, 0.0), Error);
}

TEST_CASE("joint ablations are exact") {
  Fixture fx(9, 20);
  auto cfg = toy_config();
  auto deep = init_scemnet(cfg, fx.profiles.config(), fx.profiles.vocabs(), 4);
  JointParams jp;
  jp.deep = deep.deep;
  jp.columns = fx.features.columns;
  jp.wide = Tensor({1, fx.features.width()});
  randomize(jp.deep_tensors(), 5);
  randomize(jp.wide_tensors(), 6);
  zero_pad_rows(jp.deep);
  Rng rng(0);
  JointParams no_deep = jp;
  std::fill(no_deep.deep.output_weights.values.begin(), no_deep.deep.output_weights.values.end(), 0.0);
  JointParams no_wide = jp;
  std::fill(no_wide.wide.values.begin(), no_wide.wide.values.end(), 0.0);
  auto lr = no_deep.to_logreg();
  auto sc = no_wide.to_scemnet();
  for (std::size_t i = 0; i < fx.features.pairs.size(); ++i) {
    const auto& pair = fx.features.pairs[i];
    const auto& a = fx.profiles.at(pair.first());
    const auto& b = fx.profiles.at(pair.second());
    const auto& x = fx.features.rows[i];
    CHECK(joint_score(no_deep, a, b, x, Mode::infer, rng) == logreg_score(lr, x));
    CHECK(joint_score(no_wide, a, b, x, Mode::infer, rng) == score_pair(sc, a, b, Mode::infer, rng));
    CHECK(joint_score(jp, a, b, x, Mode::infer, rng) == joint_score(jp, b, a, x, Mode::infer, rng));
  }
}

TEST_CASE("joint training with zero features follows scemnet") {
  Fixture fx(10, 30);
  FeatureTable zero = fx.features;
  for (auto& r : zero.rows) std::fill(r.begin(), r.end(), 0.0);
  auto cfg = toy_config();
  TrainConfig t;
  t.epochs = 2;
  t.batch = 16;
  t.seed = 3;
  auto s = train_scemnet(fx.corpus.truth, fx.candidates, fx.profiles, cfg, t);
  auto j = train_joint(fx.corpus.truth, fx.candidates, fx.profiles, zero, cfg, t);
  CHECK(j.epoch_loss == s.epoch_loss);
  CHECK(j.params.deep.output_weights == s.params.deep.output_weights);
  CHECK(j.params.bias == s.params.bias);
  for (double w : j.params.wide.values) CHECK(w == 0.0);
}

TEST_CASE("joint training is deterministic and beats wide-only on a separable corpus") {
  Fixture fx(11, 40, 0.0, 3000);
  auto cfg = toy_config();
  TrainConfig t;
  t.epochs = 3;
  t.batch = 16;
  t.lr = 5e-3;
  t.seed = 2;
  auto a = train_joint(fx.corpus.truth, fx.candidates, fx.profiles, fx.features, cfg, t);
  auto b = train_joint(fx.corpus.truth, fx.candidates, fx.profiles, fx.features, cfg, t);
  CHECK(a.params.wide == b.params.wide);
  CHECK(a.params.deep.output_weights == b.params.deep.output_weights);
  auto wide = train_logreg_pairs(fx.corpus.truth, fx.candidates, fx.features, t.neg_ratio, t.seed, kDefaultLambda);
  auto joint_f1 = tune_threshold(score_joint(a.params, fx.candidates, fx.profiles, fx.features), fx.corpus.truth).metrics.f1;
  auto wide_f1 = tune_threshold(score_logreg(wide, fx.candidates, fx.features), fx.corpus.truth).metrics.f1;
  CHECK(joint_f1 >= wide_f1);
}

TEST_CASE("model documents round trip") {
  Fixture fx(12, 20);
  auto w = train_logreg_pairs(fx.corpus.truth, fx.candidates, fx.features, 4, 1, kDefaultLambda);
  auto w2 = logreg_from_json(to_json(w));
  CHECK(w2.weights == w.weights);
  CHECK(w2.bias == w.bias);
  CHECK(w2.columns == w.columns);
  TrainConfig t;
  t.epochs = 1;
  t.batch = 32;
  auto j = train_joint(fx.corpus.truth, fx.candidates, fx.profiles, fx.features, toy_config(), t);
  auto j2 = jscemnet_from_json(to_json(j.params));
  auto sa = score_joint(j.params, fx.candidates, fx.profiles, fx.features, 2);
  auto sb = score_joint(j2, fx.candidates, fx.profiles, fx.features);
  for (std::size_t i = 0; i < sa.size(); ++i) CHECK(sa[i].score == sb[i].score);
  FeatureTable narrow = fx.features;
  for (auto& r : narrow.rows) r.pop_back();
  narrow.columns.pop_back();
  CHECK_THROWS(score_logreg(w, fx.candidates, narrow));
}

TEST_CASE("stacking appends the frozen scemnet score") {
  Fixture fx(13, 40);
  TrainingSplit split{fx.corpus.truth, fx.candidates, fx.features};
  TrainConfig t;
  t.epochs = 1;
  t.batch = 32;
  auto model = train_stacking(split, fx.profiles, toy_config(), t, kDefaultLambda);
  CHECK(model.wide.width() == fx.features.width() + 1);
  ScoringSplit scoring{fx.candidates, fx.features};
  auto scores = score_stacking(model, scoring, fx.profiles);
  REQUIRE(scores.size() == fx.candidates.size());
  for (const auto& s : scores) {
    CHECK(s.score >= 0.0);
    CHECK(s.score <= 1.0);
  }
}
