#include "xmatch/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>

#include "xmatch/candidates.hpp"
#include "xmatch/corpus.hpp"
#include "xmatch/evaluator.hpp"
#include "xmatch/features.hpp"
#include "xmatch/jscemnet.hpp"
#include "xmatch/pipeline.hpp"
#include "xmatch/scemnet.hpp"
#include "xmatch/synth.hpp"

namespace xmatch {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string events, pairs, candidates, features, model, predictions, extras, out, tsv;
  std::string valid_predictions, valid_pairs, warm_start;
  std::uint64_t seed = 1;
  int threads = 1;
  std::size_t k = kDefaultNeighbors;
  int retrieval_depth = kDefaultRetrievalDepth;
  TokenizerConfig tokenizer;
  ScemnetConfig scemnet;
  TrainConfig train;
  double lambda = kDefaultLambda;
  double wide_lr = 0.0;
  int max_iter = LogregConfig{}.max_iter;
  double threshold = 0.5;
  std::size_t splits = kDefaultSplits;
  SynthConfig synth;
};

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return in;
}

template <class Fn>
void write_file(const std::string& path, Fn&& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  body(out);
  out.flush();
  if (!out) throw Error("write failed: " + path);
}

template <class T, class Fn>
T read_file(const std::string& path, Fn&& parse) {
  auto in = open_in(path);
  try {
    return parse(in);
  } catch (const ParseError& e) {
    throw Error(path + ":" + std::to_string(e.line()) + ": " + e.what());
  } catch (const Error& e) {
    throw Error(path + ": " + e.what());
  }
}

Corpus read_events(const std::string& path) {
  return Corpus(read_file<std::vector<EventLog>>(path, [](std::istream& in) { return parse_events(in); }));
}

PairSet read_pairs(const std::string& path) {
  return read_file<PairSet>(path, [](std::istream& in) { return parse_pairs(in); });
}

std::vector<CandidatePair> read_candidates(const std::string& path) {
  return read_file<std::vector<CandidatePair>>(path, [](std::istream& in) { return parse_candidates(in); });
}

FeatureTable read_features(const std::string& path) {
  return read_file<FeatureTable>(path, [](std::istream& in) { return parse_features(in); });
}

std::vector<ScoredPair> read_scored(const std::string& path) {
  return read_file<std::vector<ScoredPair>>(path, [](std::istream& in) { return parse_scored(in); });
}

json read_json(const std::string& path) {
  auto in = open_in(path);
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw Error(path + ": " + e.what());
  }
}

void write_json(const std::string& path, const json& j) {
  write_file(path, [&](std::ostream& out) { out << j.dump() << '\n'; });
}

void require(const std::string& value, const char* flag, const char* why) {
  if (value.empty()) throw UsageError(std::string(flag) + " is required " + why);
}

/// Resolved option values of the selected subcommand, keyed by flag name.
json manifest_for(const CLI::App& sub, const std::string& name) {
  json params = json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    std::string key = opt->get_name();
    if (key == "--help" || key.empty()) continue;
    while (!key.empty() && key.front() == '-') key.erase(key.begin());
    std::string value;
    if (opt->count() > 0) {
      const auto& results = opt->results();
      for (std::size_t i = 0; i < results.size(); ++i) value += (i ? "," : "") + results[i];
    } else {
      value = opt->get_default_str();
    }
    params[key] = value;
  }
  return json{{"tool", "xmatch"}, {"version", kToolVersion}, {"subcommand", name}, {"params", params}};
}

void add_threads(CLI::App* sub, Options& o) {
  sub->add_option("--threads", o.threads, "Worker threads for data-parallel stages")
      ->envname("XMATCH_THREADS")
      ->check(CLI::Range(1, 1024));
}

void add_tokenizer(CLI::App* sub, Options& o) {
  sub->add_option("--depths", o.tokenizer.depths, "URL depths, one modality each")->delimiter(',');
  sub->add_option("--seq-len", o.tokenizer.seq_len, "Tokens kept per cookie and modality")->check(CLI::PositiveNumber);
  sub->add_option("--min-count", o.tokenizer.min_count, "Minimum token count kept in a vocabulary")
      ->check(CLI::NonNegativeNumber);
}

void add_training(CLI::App* sub, Options& o) {
  sub->add_option("--seed", o.seed, "Seed for initialization, sampling and shuffling");
  sub->add_option("--epochs", o.train.epochs)->check(CLI::NonNegativeNumber);
  sub->add_option("--lr", o.train.lr)->check(CLI::PositiveNumber);
  sub->add_option("--batch", o.train.batch)->check(CLI::PositiveNumber);
  sub->add_option("--neg-ratio", o.train.neg_ratio)->check(CLI::PositiveNumber);
  sub->add_option("--embed-dim", o.scemnet.embed_dim)->check(CLI::PositiveNumber);
  sub->add_option("--filters", o.scemnet.filters_per_width, "Filters per width")->check(CLI::PositiveNumber);
  sub->add_option("--widths", o.scemnet.widths, "Filter widths")->delimiter(',');
  sub->add_option("--dropout", o.scemnet.dropout)->check(CLI::Range(0.0, 0.999));
}

ProfileSet load_profiles(const Options& o, const TokenizerConfig& cfg) {
  return ProfileSet::build(read_events(o.events), cfg, o.threads);
}

void cmd_synth(const Options& o) {
  SynthConfig cfg = o.synth;
  cfg.seed = o.seed;
  write_synth(generate(cfg), cfg, o.out);
}

void cmd_candidates(const Options& o) {
  ProfileSet profiles = load_profiles(o, o.tokenizer);
  if (!o.pairs.empty()) profiles = restrict_to(profiles, read_pairs(o.pairs));
  const auto cands = generate_candidates(profiles, o.k, o.retrieval_depth, o.threads);
  write_file(o.out, [&](std::ostream& out) { write_candidates(cands, out); });
}

void cmd_features(const Options& o) {
  const ProfileSet profiles = load_profiles(o, o.tokenizer);
  const auto cands = read_candidates(o.candidates);
  std::optional<ExtraColumns> extras;
  if (!o.extras.empty()) {
    extras = read_file<ExtraColumns>(o.extras, [](std::istream& in) { return parse_extras(in); });
  }
  const auto table = build_features(profiles, cands, extras ? &*extras : nullptr, o.threads);
  write_file(o.out, [&](std::ostream& out) { write_features(table, out); });
}

void report_losses(double initial, const std::vector<double>& epochs) {
  std::fprintf(stderr, "initial loss %.6f\n", initial);
  for (std::size_t e = 0; e < epochs.size(); ++e) std::fprintf(stderr, "epoch %zu loss %.6f\n", e + 1, epochs[e]);
}

TrainConfig train_config(const Options& o) {
  TrainConfig t = o.train;
  t.seed = o.seed;
  return t;
}

void cmd_train_scemnet(const Options& o) {
  const ProfileSet profiles = load_profiles(o, o.tokenizer);
  const auto result =
      train_scemnet(read_pairs(o.pairs), read_candidates(o.candidates), profiles, o.scemnet, train_config(o));
  report_losses(result.initial_loss, result.epoch_loss);
  write_json(o.out, to_json(result.params));
}

void cmd_train_logreg(const Options& o) {
  LogregConfig cfg;
  cfg.max_iter = o.max_iter;
  const auto w = train_logreg_pairs(read_pairs(o.pairs), read_candidates(o.candidates), read_features(o.features),
                                    o.train.neg_ratio, o.seed, o.lambda, cfg);
  write_json(o.out, to_json(w));
}

void cmd_train_joint(const Options& o) {
  const ProfileSet profiles = load_profiles(o, o.tokenizer);
  JointOptions options;
  options.lambda = o.lambda;
  options.wide_lr = o.wide_lr;
  if (!o.warm_start.empty()) options.warm_start = logreg_from_json(read_json(o.warm_start));
  const auto result = train_joint(read_pairs(o.pairs), read_candidates(o.candidates), profiles,
                                  read_features(o.features), o.scemnet, train_config(o), options);
  report_losses(result.initial_loss, result.epoch_loss);
  write_json(o.out, to_json(result.params));
}

void cmd_predict(const Options& o) {
  const json model = read_json(o.model);
  const std::string version = model.is_object() && model.contains("version") && model["version"].is_string()
                                  ? model["version"].get<std::string>()
                                  : "";
  const auto cands = read_candidates(o.candidates);
  std::vector<ScoredPair> scored;
  if (version == "scemnet-v1") {
    require(o.events, "--events", "for a scemnet model");
    ScemnetParams params = scemnet_from_json(model);
    const ProfileSet profiles = load_profiles(o, params.deep.tokenizer);
    scored = score_scemnet(params, cands, profiles, o.threads);
  } else if (version == "logreg-v1") {
    require(o.features, "--features", "for a logreg model");
    scored = score_logreg(logreg_from_json(model), cands, read_features(o.features));
  } else if (version == "jscemnet-v1") {
    require(o.events, "--events", "for a jscemnet model");
    require(o.features, "--features", "for a jscemnet model");
    JointParams jp = jscemnet_from_json(model);
    const ProfileSet profiles = load_profiles(o, jp.deep.tokenizer);
    scored = score_joint(jp, cands, profiles, read_features(o.features), o.threads);
  } else {
    throw Error(o.model + ": unknown model version '" + version + "'");
  }
  write_file(o.out, [&](std::ostream& out) { write_predictions(scored, out); });
}

void write_reports(const Options& o, const EvalReport& report, double tau) {
  write_file(o.out, [&](std::ostream& out) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "threshold  %.6f\n", tau);
    out << buf;
    write_report_text(report, out);
  });
  if (!o.tsv.empty()) write_file(o.tsv, [&](std::ostream& out) { write_report_tsv(report, out); });
}

double resolve_threshold(const Options& o) {
  if (o.valid_predictions.empty() != o.valid_pairs.empty()) {
    throw UsageError("--valid-predictions and --valid-pairs must be given together");
  }
  if (o.valid_predictions.empty()) return o.threshold;
  return tune_threshold(read_scored(o.valid_predictions), read_pairs(o.valid_pairs)).tau;
}

void cmd_eval(const Options& o, bool halfsplit) {
  const double tau = resolve_threshold(o);
  const auto scored = read_scored(o.predictions);
  const PairSet truth = read_pairs(o.pairs);
  const PairSet predicted = select_pairs(scored, tau);
  EvalReport report;
  if (halfsplit) {
    report = half_split_eval(predicted, truth, o.splits, o.seed, o.threads);
  } else {
    report.metrics = prf1(predicted, truth);
  }
  write_reports(o, report, tau);
}

std::string manifest_path(const std::string& command, const Options& o) {
  if (command == "synth") return (fs::path(o.out) / "manifest.json").string();
  return o.out + ".manifest.json";
}

int dispatch(CLI::App& app, const std::vector<std::string>& args_reversed, Options& o) {
  std::vector<std::string> args = args_reversed;
  app.parse(args);

  const CLI::App* chosen = nullptr;
  std::string command;
  for (const CLI::App* sub : app.get_subcommands()) {
    chosen = sub;
    command = sub->get_name();
    for (const CLI::App* inner : sub->get_subcommands()) {
      chosen = inner;
      command += " " + inner->get_name();
    }
  }
  if (!chosen) throw CLI::CallForHelp();

  if (command == "synth") {
    cmd_synth(o);
  } else if (command == "candidates") {
    cmd_candidates(o);
  } else if (command == "features") {
    cmd_features(o);
  } else if (command == "train scemnet") {
    cmd_train_scemnet(o);
  } else if (command == "train logreg") {
    cmd_train_logreg(o);
  } else if (command == "train joint") {
    cmd_train_joint(o);
  } else if (command == "predict") {
    cmd_predict(o);
  } else if (command == "eval") {
    cmd_eval(o, false);
  } else if (command == "eval-halfsplit") {
    cmd_eval(o, true);
  } else {
    throw UsageError("missing subcommand after '" + command + "'");
  }
  json manifest = manifest_for(*chosen, command);
  manifest["seed"] = o.seed;
  write_json(manifest_path(command, o), manifest);
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  Options o;
  CLI::App app{"Cross-device cookie matching toolkit", "xmatch"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus with planted identities");
  synth->add_option("--out", o.out, "Output directory")->required();
  synth->add_option("--seed", o.seed);
  synth->add_option("--users", o.synth.n_users)->check(CLI::PositiveNumber);
  synth->add_option("--noise", o.synth.noise)->check(CLI::Range(0.0, 1.0));
  synth->add_option("--domains", o.synth.n_domains)->check(CLI::PositiveNumber);
  synth->add_option("--popularity", o.synth.popularity)->check(CLI::NonNegativeNumber);

  auto* cands = app.add_subcommand("candidates", "Generate candidate pairs by kNN over tf-idf vectors");
  cands->add_option("--events", o.events)->required();
  cands->add_option("--pairs", o.pairs, "Restrict to the cookies of these pairs");
  cands->add_option("--out", o.out)->required();
  cands->add_option("--k", o.k)->check(CLI::PositiveNumber);
  cands->add_option("--retrieval-depth", o.retrieval_depth, "URL depth of the retrieval index");
  add_tokenizer(cands, o);
  add_threads(cands, o);

  auto* feats = app.add_subcommand("features", "Assemble baseline pair features");
  feats->add_option("--events", o.events)->required();
  feats->add_option("--candidates", o.candidates)->required();
  feats->add_option("--extras", o.extras, "Additional feature columns keyed by pair");
  feats->add_option("--out", o.out)->required();
  add_tokenizer(feats, o);
  add_threads(feats, o);

  auto* train = app.add_subcommand("train", "Train a ranker");
  train->require_subcommand(1);
  auto* t_scemnet = train->add_subcommand("scemnet", "Siamese multi-modal CNN");
  auto* t_logreg = train->add_subcommand("logreg", "Logistic regression over features");
  auto* t_joint = train->add_subcommand("joint", "Wide and deep joint model");
  for (auto* sub : {t_scemnet, t_logreg, t_joint}) {
    sub->add_option("--pairs", o.pairs, "Ground-truth pairs")->required();
    sub->add_option("--candidates", o.candidates)->required();
    sub->add_option("--out", o.out, "Model file")->required();
  }
  for (auto* sub : {t_scemnet, t_joint}) {
    sub->add_option("--events", o.events)->required();
    add_tokenizer(sub, o);
    add_training(sub, o);
  }
  for (auto* sub : {t_logreg, t_joint}) {
    sub->add_option("--features", o.features)->required();
    sub->add_option("--lambda", o.lambda, "L2 strength of the wide weights")->check(CLI::NonNegativeNumber);
  }
  t_logreg->add_option("--seed", o.seed);
  t_logreg->add_option("--neg-ratio", o.train.neg_ratio)->check(CLI::PositiveNumber);
  t_logreg->add_option("--max-iter", o.max_iter)->check(CLI::NonNegativeNumber);
  t_joint->add_option("--wide-lr", o.wide_lr, "Learning rate of the wide part (0: same as --lr)")
      ->check(CLI::NonNegativeNumber);
  t_joint->add_option("--warm-start", o.warm_start, "Logreg model for the initial wide weights");

  auto* predict = app.add_subcommand("predict", "Score candidate pairs with a trained model");
  predict->add_option("--model", o.model)->required();
  predict->add_option("--candidates", o.candidates)->required();
  predict->add_option("--events", o.events);
  predict->add_option("--features", o.features);
  predict->add_option("--out", o.out)->required();
  add_threads(predict, o);

  for (const char* name : {"eval", "eval-halfsplit"}) {
    auto* ev = app.add_subcommand(name, std::string(name) == "eval" ? "Precision, recall and F1 of predictions"
                                                                     : "F1 over random halves of the truth");
    ev->add_option("--predictions", o.predictions)->required();
    ev->add_option("--pairs", o.pairs, "Ground-truth pairs")->required();
    ev->add_option("--out", o.out, "Text report")->required();
    ev->add_option("--tsv", o.tsv, "Single-line TSV report");
    ev->add_option("--threshold", o.threshold, "Score threshold when not tuned");
    ev->add_option("--valid-predictions", o.valid_predictions, "Validation scores for threshold tuning");
    ev->add_option("--valid-pairs", o.valid_pairs, "Validation truth for threshold tuning");
    if (std::string(name) == "eval-halfsplit") {
      ev->add_option("--splits", o.splits)->check(CLI::PositiveNumber);
      ev->add_option("--seed", o.seed);
      add_threads(ev, o);
    }
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    return dispatch(app, reversed, o);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "xmatch: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "xmatch: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "xmatch: " << e.what() << "\n";
    return 1;
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

}  // namespace xmatch
