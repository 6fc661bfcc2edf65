#include "xmatch/scemnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>

#include "pair_trainer.hpp"
#include "xmatch/parallel.hpp"

namespace xmatch {

using nlohmann::json;

void ScemnetConfig::validate(const TokenizerConfig& tokenizer) const {
  if (widths.empty()) throw Error("scemnet: at least one filter width is required");
  for (int w : widths) {
    if (w < 1) throw Error("scemnet: filter widths must be positive");
    if (w > tokenizer.seq_len) throw Error("scemnet: filter width exceeds the sequence length");
  }
  if (filters_per_width < 1) throw Error("scemnet: filters per width must be positive");
  if (embed_dim < 1) throw Error("scemnet: embedding dimension must be positive");
  if (!(dropout >= 0.0) || dropout >= 1.0) throw Error("scemnet: dropout must be in [0, 1)");
}

DeepParams DeepParams::init(const ScemnetConfig& config, const TokenizerConfig& tokenizer,
                            std::span<const Vocabulary> vocabs, Rng& rng) {
  config.validate(tokenizer);
  if (vocabs.size() != tokenizer.modalities()) throw ShapeError("scemnet: one vocabulary per modality required");
  DeepParams deep;
  deep.config = config;
  deep.tokenizer = tokenizer;
  const auto dim = static_cast<std::size_t>(config.embed_dim);
  const auto n_filters = static_cast<std::size_t>(config.filters_per_width);
  for (const auto& vocab : vocabs) {
    deep.vocabs.push_back(VocabInfo{vocab.depth(), vocab.size(), vocab.fingerprint()});
    TowerParams tower;
    tower.embedding = Tensor({vocab.size(), dim});
    for (std::size_t i = dim; i < tower.embedding.values.size(); ++i) {
      tower.embedding.values[i] = rng.uniform(-0.05, 0.05);
    }
    for (int w : config.widths) {
      Tensor filters({n_filters, static_cast<std::size_t>(w), dim});
      const double bound = 1.0 / std::sqrt(static_cast<double>(w) * static_cast<double>(dim));
      for (double& x : filters.values) x = rng.uniform(-bound, bound);
      tower.filters.push_back(std::move(filters));
      tower.biases.emplace_back(std::vector<std::size_t>{n_filters});
    }
    deep.towers.push_back(std::move(tower));
  }
  deep.output_weights = Tensor({1, deep.fused_size()});
  const double bound = 1.0 / std::sqrt(static_cast<double>(deep.fused_size()));
  for (double& x : deep.output_weights.values) x = rng.uniform(-bound, bound);
  return deep;
}

std::vector<Tensor*> DeepParams::tensors() {
  std::vector<Tensor*> out;
  for (auto& tower : towers) {
    out.push_back(&tower.embedding);
    for (auto& f : tower.filters) out.push_back(&f);
    for (auto& b : tower.biases) out.push_back(&b);
  }
  out.push_back(&output_weights);
  return out;
}

void DeepParams::check_profile(const CookieProfile& profile) const {
  if (profile.vocab_fingerprints.size() != vocabs.size() || profile.sequences.size() != vocabs.size()) {
    throw Error("cookie '" + profile.cookie_id + "' has a different number of modalities than the model");
  }
  for (std::size_t m = 0; m < vocabs.size(); ++m) {
    if (profile.vocab_fingerprints[m] != vocabs[m].fingerprint) {
      throw Error("cookie '" + profile.cookie_id + "' was encoded with a different vocabulary (modality " +
                  std::to_string(m) + ")");
    }
    if (profile.sequences[m].ids.size() != static_cast<std::size_t>(tokenizer.seq_len)) {
      throw ShapeError("cookie '" + profile.cookie_id + "' has a sequence of the wrong length");
    }
  }
}

std::vector<Tensor*> ScemnetParams::tensors() {
  auto out = deep.tensors();
  out.push_back(&bias);
  return out;
}

ScemnetParams init_scemnet(const ScemnetConfig& config, const TokenizerConfig& tokenizer,
                           std::span<const Vocabulary> vocabs, std::uint64_t seed) {
  Rng rng = Rng::derive(seed, detail::kInitStream);
  ScemnetParams params;
  params.deep = DeepParams::init(config, tokenizer, vocabs, rng);
  return params;
}

TowerLeaves bind_tower(Graph& g, TowerParams& tower) {
  TowerLeaves leaves;
  leaves.embedding = &tower.embedding;
  for (auto& f : tower.filters) leaves.filters.push_back(g.param(f));
  for (auto& b : tower.biases) leaves.biases.push_back(g.param(b));
  return leaves;
}

std::vector<TowerLeaves> bind_towers(Graph& g, DeepParams& deep) {
  std::vector<TowerLeaves> out;
  for (auto& tower : deep.towers) out.push_back(bind_tower(g, tower));
  return out;
}

Var seqcnn_embed(Graph& g, const TowerLeaves& tower, std::span<const TokenId> ids, double dropout, Mode mode,
                 Rng& rng) {
  Var embedded = g.embed(*tower.embedding, ids);
  std::vector<Var> pooled;
  pooled.reserve(tower.filters.size());
  for (std::size_t k = 0; k < tower.filters.size(); ++k) {
    pooled.push_back(g.max_over_time(g.conv1d_relu(embedded, tower.filters[k], tower.biases[k])));
  }
  return g.dropout(g.concat(pooled), dropout, mode, rng);
}

Var pair_fuse(Graph& g, Var a, Var b) {
  if (g.value(a).size() != g.value(b).size()) throw ShapeError("pair_fuse: embeddings differ in length");
  return g.mul(a, b);
}

Var multimodal_fuse(Graph& g, std::span<const Var> pair_embeddings, std::size_t modalities) {
  if (pair_embeddings.size() != modalities) {
    throw ShapeError("multimodal_fuse: expected " + std::to_string(modalities) + " pair embeddings, got " +
                     std::to_string(pair_embeddings.size()));
  }
  return g.concat(pair_embeddings);
}

Var fused_embedding(Graph& g, DeepParams& deep, std::span<const TowerLeaves> towers, const CookieProfile& a,
                    const CookieProfile& b, Mode mode, Rng& rng) {
  deep.check_profile(a);
  deep.check_profile(b);
  std::vector<Var> pairs;
  pairs.reserve(towers.size());
  for (std::size_t m = 0; m < towers.size(); ++m) {
    Var ea = seqcnn_embed(g, towers[m], a.sequences[m].ids, deep.config.dropout, mode, rng);
    Var eb = seqcnn_embed(g, towers[m], b.sequences[m].ids, deep.config.dropout, mode, rng);
    pairs.push_back(pair_fuse(g, ea, eb));
  }
  return multimodal_fuse(g, pairs, deep.towers.size());
}

Var scemnet_logit(Graph& g, ScemnetParams& params, const CookieProfile& a, const CookieProfile& b, Mode mode,
                  Rng& rng) {
  auto towers = bind_towers(g, params.deep);
  Var z = fused_embedding(g, params.deep, towers, a, b, mode, rng);
  return g.affine(z, g.param(params.deep.output_weights), g.param(params.bias));
}

double score_pair(ScemnetParams& params, const CookieProfile& a, const CookieProfile& b, Mode mode, Rng& rng) {
  Graph g;
  return sigmoid(g.scalar(scemnet_logit(g, params, a, b, mode, rng)));
}

std::vector<std::vector<double>> embed_cookies(DeepParams& deep, std::span<const CookieProfile> profiles,
                                               int threads) {
  for (const auto& p : profiles) deep.check_profile(p);
  // Binding sizes missing grad buffers; do it once here, not from the workers.
  for (Tensor* t : deep.tensors()) {
    if (t->grad.size() != t->values.size()) t->grad.assign(t->values.size(), 0.0);
  }
  std::vector<std::vector<double>> out(profiles.size());
  parallel_for(profiles.size(), threads, [&](std::size_t i) {
    Graph g;
    Rng unused(0);
    auto towers = bind_towers(g, deep);
    std::vector<double> joined;
    joined.reserve(deep.fused_size());
    for (std::size_t m = 0; m < towers.size(); ++m) {
      Var e = seqcnn_embed(g, towers[m], profiles[i].sequences[m].ids, deep.config.dropout, Mode::infer, unused);
      const auto& v = g.value(e);
      joined.insert(joined.end(), v.begin(), v.end());
    }
    out[i] = std::move(joined);
  });
  return out;
}

std::vector<double> fuse_cached(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("fuse_cached: embeddings differ in length");
  std::vector<double> z(a.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = a[i] * b[i];
  return z;
}

double score_cached(const ScemnetParams& params, std::span<const double> a, std::span<const double> b) {
  const auto z = fuse_cached(a, b);
  if (z.size() != params.deep.output_weights.values.size()) throw ShapeError("score_cached: wrong embedding size");
  return sigmoid(dot(params.deep.output_weights.values.data(), z.data(), z.size()) + params.bias.values[0]);
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw Error("training: learning rate must be positive");
  if (batch < 1) throw Error("training: batch size must be positive");
  if (epochs < 0) throw Error("training: epochs must be non-negative");
  if (neg_ratio < 1) throw Error("training: negative ratio must be at least 1");
}

std::vector<CookiePair> sample_negatives(std::span<const CandidatePair> candidates, const PairSet& truth, int ratio,
                                         std::uint64_t seed) {
  if (ratio < 1) throw Error("sample_negatives: ratio must be at least 1");
  std::vector<CookiePair> eligible;
  std::size_t positives = 0;
  for (const auto& c : candidates) {
    if (truth.contains(c.pair)) {
      ++positives;
    } else {
      eligible.push_back(c.pair);
    }
  }
  std::sort(eligible.begin(), eligible.end());
  eligible.erase(std::unique(eligible.begin(), eligible.end()), eligible.end());
  const std::size_t wanted = std::min(static_cast<std::size_t>(ratio) * positives, eligible.size());
  Rng rng(seed);
  // Partial Fisher-Yates: the first `wanted` slots are a uniform sample.
  for (std::size_t i = 0; i < wanted; ++i) {
    std::size_t j = i + static_cast<std::size_t>(rng.below(eligible.size() - i));
    std::swap(eligible[i], eligible[j]);
  }
  eligible.erase(eligible.begin() + static_cast<std::ptrdiff_t>(wanted), eligible.end());
  std::sort(eligible.begin(), eligible.end());
  return eligible;
}

std::vector<LabeledPair> training_examples(std::span<const CandidatePair> candidates, const PairSet& truth,
                                           int neg_ratio, std::uint64_t seed) {
  std::vector<LabeledPair> examples;
  for (const auto& c : candidates) {
    if (truth.contains(c.pair)) examples.push_back(LabeledPair{c.pair, 1.0});
  }
  if (examples.empty()) throw Error("no ground-truth pair appears among the candidates; nothing to train on");
  for (auto& neg : sample_negatives(candidates, truth, neg_ratio, seed)) {
    examples.push_back(LabeledPair{std::move(neg), 0.0});
  }
  std::sort(examples.begin(), examples.end(), [](const auto& a, const auto& b) { return a.pair < b.pair; });
  return examples;
}

ScemnetTrainResult train_scemnet(const PairSet& truth, std::span<const CandidatePair> candidates,
                                 const ProfileSet& profiles, const ScemnetConfig& config, const TrainConfig& train) {
  train.validate();
  auto examples = training_examples(candidates, truth, train.neg_ratio, train.seed);
  ScemnetTrainResult result;
  result.params = init_scemnet(config, profiles.config(), profiles.vocabs(), train.seed);
  ScemnetParams& params = result.params;

  std::vector<std::size_t> first(examples.size()), second(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    auto a = profiles.find(examples[i].pair.first());
    auto b = profiles.find(examples[i].pair.second());
    if (a < 0 || b < 0) throw Error("training pair refers to a cookie without events");
    first[i] = static_cast<std::size_t>(a);
    second[i] = static_cast<std::size_t>(b);
  }

  {
    const auto cache = embed_cookies(params.deep, profiles.profiles());
    std::vector<double> logits(examples.size());
    for (std::size_t i = 0; i < examples.size(); ++i) {
      const auto z = fuse_cached(cache[first[i]], cache[second[i]]);
      logits[i] = dot(params.deep.output_weights.values.data(), z.data(), z.size()) + params.bias.values[0];
    }
    result.initial_loss = detail::mean_bce(logits, examples);
  }

  std::vector<detail::ParamGroup> groups{{params.tensors(), train.lr}};
  auto index_of = [&](const LabeledPair& ex) { return static_cast<std::size_t>(&ex - examples.data()); };
  detail::LogitFn logit = [&](Graph& g, const LabeledPair& ex, Mode mode, Rng& rng) {
    const std::size_t i = index_of(ex);
    return scemnet_logit(g, params, profiles[first[i]], profiles[second[i]], mode, rng);
  };
  result.epoch_loss = detail::run_epochs(examples, train, groups, logit);
  return result;
}

json tensor_to_json(const Tensor& t) {
  json shape = t.shape;
  // Nest values by shape, innermost dimension last.
  std::function<json(std::size_t, std::size_t)> nest = [&](std::size_t dim, std::size_t offset) -> json {
    json arr = json::array();
    if (dim + 1 == t.shape.size()) {
      for (std::size_t i = 0; i < t.shape[dim]; ++i) arr.push_back(t.values[offset + i]);
      return arr;
    }
    std::size_t stride = 1;
    for (std::size_t k = dim + 1; k < t.shape.size(); ++k) stride *= t.shape[k];
    for (std::size_t i = 0; i < t.shape[dim]; ++i) arr.push_back(nest(dim + 1, offset + i * stride));
    return arr;
  };
  return json{{"shape", shape}, {"values", t.shape.empty() ? json::array() : nest(0, 0)}};
}

Tensor tensor_from_json(const json& j) {
  auto shape = j.at("shape").get<std::vector<std::size_t>>();
  std::vector<double> values;
  values.reserve(shape_size(shape));
  std::function<void(const json&, std::size_t)> flatten = [&](const json& node, std::size_t dim) {
    if (!node.is_array() || dim >= shape.size() || node.size() != shape[dim]) {
      throw Error("model file: tensor values do not match the declared shape");
    }
    for (const auto& child : node) {
      if (dim + 1 == shape.size()) {
        if (!child.is_number()) throw Error("model file: tensor entry is not a number");
        values.push_back(child.get<double>());
      } else {
        flatten(child, dim + 1);
      }
    }
  };
  flatten(j.at("values"), 0);
  return Tensor(std::move(shape), std::move(values));
}

std::vector<std::pair<std::string, Tensor*>> named_tensors(DeepParams& deep) {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t m = 0; m < deep.towers.size(); ++m) {
    auto& tower = deep.towers[m];
    const std::string prefix = "m" + std::to_string(m) + ".";
    out.emplace_back(prefix + "embedding", &tower.embedding);
    for (std::size_t k = 0; k < tower.filters.size(); ++k) {
      const std::string w = "w" + std::to_string(deep.config.widths[k]) + ".";
      out.emplace_back(prefix + w + "filters", &tower.filters[k]);
      out.emplace_back(prefix + w + "bias", &tower.biases[k]);
    }
  }
  out.emplace_back("output.weights", &deep.output_weights);
  return out;
}

namespace {

std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

std::uint64_t parse_hex64(const std::string& s) {
  std::size_t used = 0;
  unsigned long long x = std::stoull(s, &used, 16);
  if (used != s.size()) throw Error("model file: bad fingerprint");
  return x;
}

}  // namespace

json deep_to_json(const DeepParams& deep, double bias) {
  json vocabs = json::array();
  for (std::size_t m = 0; m < deep.vocabs.size(); ++m) {
    vocabs.push_back({{"modality", m},
                      {"depth", deep.vocabs[m].depth},
                      {"size", deep.vocabs[m].size},
                      {"fingerprint", hex64(deep.vocabs[m].fingerprint)}});
  }
  json params = json::object();
  for (auto& [name, tensor] : named_tensors(const_cast<DeepParams&>(deep))) params[name] = tensor_to_json(*tensor);
  params["output.bias"] = tensor_to_json(Tensor({1}, {bias}));
  return json{{"version", "scemnet-v1"},
              {"config",
               {{"filter_widths", deep.config.widths},
                {"filters_per_width", deep.config.filters_per_width},
                {"embed_dim", deep.config.embed_dim},
                {"dropout", deep.config.dropout},
                {"embedding_size", deep.config.embedding_size()},
                {"fused_size", deep.fused_size()}}},
              {"tokenizer",
               {{"depths", deep.tokenizer.depths},
                {"seq_len", deep.tokenizer.seq_len},
                {"min_count", deep.tokenizer.min_count}}},
              {"vocabularies", vocabs},
              {"params", params}};
}

DeepParams deep_from_json(const json& j, double& bias) {
  try {
    if (j.at("version") != "scemnet-v1") throw Error("model file: expected version scemnet-v1");
    DeepParams deep;
    const auto& cfg = j.at("config");
    deep.config.widths = cfg.at("filter_widths").get<std::vector<int>>();
    deep.config.filters_per_width = cfg.at("filters_per_width").get<int>();
    deep.config.embed_dim = cfg.at("embed_dim").get<int>();
    deep.config.dropout = cfg.at("dropout").get<double>();
    const auto& tok = j.at("tokenizer");
    deep.tokenizer.depths = tok.at("depths").get<std::vector<int>>();
    deep.tokenizer.seq_len = tok.at("seq_len").get<int>();
    deep.tokenizer.min_count = tok.at("min_count").get<int>();
    deep.tokenizer.validate();
    deep.config.validate(deep.tokenizer);
    for (const auto& v : j.at("vocabularies")) {
      deep.vocabs.push_back(VocabInfo{v.at("depth").get<int>(), v.at("size").get<std::size_t>(),
                                      parse_hex64(v.at("fingerprint").get<std::string>())});
    }
    if (deep.vocabs.size() != deep.tokenizer.modalities()) throw Error("model file: vocabulary count mismatch");
    deep.towers.resize(deep.vocabs.size());
    for (auto& tower : deep.towers) {
      tower.filters.resize(deep.config.widths.size());
      tower.biases.resize(deep.config.widths.size());
    }
    const auto& params = j.at("params");
    for (auto& [name, tensor] : named_tensors(deep)) *tensor = tensor_from_json(params.at(name));
    const Tensor b = tensor_from_json(params.at("output.bias"));
    if (b.size() != 1) throw Error("model file: output bias must be a scalar");
    bias = b.values[0];

    // Shapes must agree with the declared config.
    const auto dim = static_cast<std::size_t>(deep.config.embed_dim);
    const auto n_filters = static_cast<std::size_t>(deep.config.filters_per_width);
    for (std::size_t m = 0; m < deep.towers.size(); ++m) {
      const auto& tower = deep.towers[m];
      if (tower.embedding.shape != std::vector<std::size_t>{deep.vocabs[m].size, dim}) {
        throw Error("model file: embedding shape mismatch");
      }
      for (std::size_t k = 0; k < tower.filters.size(); ++k) {
        const auto w = static_cast<std::size_t>(deep.config.widths[k]);
        if (tower.filters[k].shape != std::vector<std::size_t>{n_filters, w, dim} ||
            tower.biases[k].shape != std::vector<std::size_t>{n_filters}) {
          throw Error("model file: filter shape mismatch");
        }
      }
    }
    if (deep.output_weights.shape != std::vector<std::size_t>{1, deep.fused_size()}) {
      throw Error("model file: output weight shape mismatch");
    }
    return deep;
  } catch (const json::exception& e) {
    throw Error(std::string("model file: ") + e.what());
  }
}

json to_json(const ScemnetParams& params) { return deep_to_json(params.deep, params.bias.values[0]); }

ScemnetParams scemnet_from_json(const json& j) {
  ScemnetParams params;
  double bias = 0.0;
  params.deep = deep_from_json(j, bias);
  params.bias = Tensor({1}, {bias});
  return params;
}

void save_scemnet(const ScemnetParams& params, std::ostream& out) {
  out << to_json(params).dump() << '\n';
  if (!out) throw Error("write failed");
}

ScemnetParams load_scemnet(std::istream& in) {
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(std::string("model file: ") + e.what());
  }
  return scemnet_from_json(j);
}

}  // namespace xmatch
