#include "xmatch/features.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>

#include "xmatch/parallel.hpp"

namespace xmatch {

SparseVector tf_vector(std::span<const TokenId> ids) {
  std::vector<TokenId> sorted;
  sorted.reserve(ids.size());
  for (TokenId id : ids) {
    if (id != kPadId && id != kOovId) sorted.push_back(id);
  }
  std::sort(sorted.begin(), sorted.end());
  SparseVector v;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    v.entries.emplace_back(sorted[i], static_cast<double>(j - i));
    i = j;
  }
  return v;
}

IdfTable idf_weights(std::span<const SparseVector> docs, std::size_t n_docs, std::size_t vocab_size,
                     std::uint64_t vocab_fingerprint) {
  if (n_docs == 0) throw Error("idf_weights: corpus size must be positive");
  std::vector<std::size_t> df(vocab_size, 0);
  for (const auto& doc : docs) {
    for (const auto& [id, w] : doc.entries) {
      auto i = static_cast<std::size_t>(id);
      if (i >= vocab_size) throw Error("idf_weights: token id outside the vocabulary");
      ++df[i];
    }
  }
  std::vector<double> idf(vocab_size, 0.0);
  for (std::size_t i = 0; i < vocab_size; ++i) {
    if (df[i] > 0) idf[i] = std::log(static_cast<double>(n_docs) / static_cast<double>(df[i]));
  }
  return IdfTable(std::move(idf), n_docs, vocab_fingerprint);
}

SparseVector tfidf(const SparseVector& tf, const IdfTable& idf) {
  SparseVector out;
  out.entries.reserve(tf.entries.size());
  for (const auto& [id, w] : tf.entries) {
    double x = w * idf[id];
    if (x > 0.0) out.entries.emplace_back(id, x);
  }
  return out;
}

double l2_norm(const SparseVector& v) {
  double ss = 0.0;
  for (const auto& [id, w] : v.entries) ss += w * w;
  return std::sqrt(ss);
}

double cosine(const SparseVector& a, const SparseVector& b) {
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  double dot = 0.0;
  auto ia = a.entries.begin();
  auto ib = b.entries.begin();
  while (ia != a.entries.end() && ib != b.entries.end()) {
    if (ia->first < ib->first) {
      ++ia;
    } else if (ib->first < ia->first) {
      ++ib;
    } else {
      dot += ia->second * ib->second;
      ++ia;
      ++ib;
    }
  }
  return std::clamp(dot / (na * nb), 0.0, 1.0);
}

double dense_cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("dense_cosine: length mismatch");
  double dot = 0.0, ssa = 0.0, ssb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    ssa += a[i] * a[i];
    ssb += b[i] * b[i];
  }
  if (ssa == 0.0 || ssb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(ssa) * std::sqrt(ssb)), 0.0, 1.0);
}

TermMatch term_match(std::span<const TokenId> a, std::span<const TokenId> b) {
  std::size_t shared = 0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] < b[j]) {
      ++i;
    } else if (b[j] < a[i]) {
      ++j;
    } else {
      ++shared;
      ++i;
      ++j;
    }
  }
  const std::size_t uni = a.size() + b.size() - shared;
  return TermMatch{uni == 0 ? 0.0 : static_cast<double>(shared) / static_cast<double>(uni), shared};
}

std::vector<TokenId> support(const SparseVector& v) {
  std::vector<TokenId> ids;
  ids.reserve(v.entries.size());
  for (const auto& [id, w] : v.entries) ids.push_back(id);
  return ids;
}

namespace {

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

std::int64_t floor_mod(std::int64_t a, std::int64_t b) { return a - floor_div(a, b) * b; }

}  // namespace

TimeProfile time_profile(const EventLog& log) {
  if (log.events.empty()) throw Error("time_profile: cookie '" + log.cookie_id + "' has no events");
  TimeProfile p;
  p.t_min = log.events.front().timestamp;
  p.t_max = log.events.front().timestamp;
  for (const auto& ev : log.events) {
    p.hour_hist[static_cast<std::size_t>(floor_mod(floor_div(ev.timestamp, 3600), 24))] += 1.0;
    p.dow_hist[static_cast<std::size_t>(floor_mod(floor_div(ev.timestamp, 86400), 7))] += 1.0;
    p.t_min = std::min(p.t_min, ev.timestamp);
    p.t_max = std::max(p.t_max, ev.timestamp);
  }
  p.n_events = log.events.size();
  return p;
}

TimeFeatures time_features(const TimeProfile& a, const TimeProfile& b) {
  TimeFeatures f;
  f.hour_cos = dense_cosine(a.hour_hist, b.hour_hist);
  f.dow_cos = dense_cosine(a.dow_hist, b.dow_hist);
  const std::int64_t lo = std::max(a.t_min, b.t_min);
  const std::int64_t hi = std::min(a.t_max, b.t_max);
  const std::int64_t hull = std::max(a.t_max, b.t_max) - std::min(a.t_min, b.t_min);
  if (hull == 0) {
    f.span_overlap = 1.0;
  } else {
    f.span_overlap = hi > lo ? static_cast<double>(hi - lo) / static_cast<double>(hull) : 0.0;
  }
  return f;
}

CookieProfile build_profile(const EventLog& log, std::span<const Vocabulary> vocabs, const TokenizerConfig& cfg) {
  if (vocabs.size() != cfg.modalities()) throw ShapeError("build_profile: one vocabulary per modality required");
  CookieProfile p;
  p.cookie_id = log.cookie_id;
  p.time = time_profile(log);
  for (std::size_t m = 0; m < vocabs.size(); ++m) {
    const int depth = cfg.depths[m];
    if (vocabs[m].depth() != depth) throw Error("build_profile: vocabulary depth does not match the config");
    auto ids = encode_all(log, vocabs[m], depth);
    p.tf.push_back(tf_vector(ids));
    TokenSequence seq{static_cast<int>(m), std::vector<TokenId>(static_cast<std::size_t>(cfg.seq_len), kPadId)};
    const std::size_t keep = std::min(ids.size(), seq.ids.size());
    std::copy(ids.end() - static_cast<std::ptrdiff_t>(keep), ids.end(), seq.ids.begin());
    p.sequences.push_back(std::move(seq));
    p.vocab_fingerprints.push_back(vocabs[m].fingerprint());
  }
  return p;
}

ProfileSet ProfileSet::build(const Corpus& corpus, const TokenizerConfig& cfg, int threads) {
  cfg.validate();
  if (corpus.size() == 0) throw Error("cannot build profiles for an empty corpus");
  std::vector<Vocabulary> vocabs;
  for (std::size_t m = 0; m < cfg.modalities(); ++m) {
    vocabs.push_back(build_vocab(corpus.logs(), cfg.depths[m], cfg.min_count, static_cast<int>(m)));
  }
  return with_vocabs(corpus, cfg, std::move(vocabs), threads);
}

ProfileSet ProfileSet::with_vocabs(const Corpus& corpus, const TokenizerConfig& cfg, std::vector<Vocabulary> vocabs,
                                   int threads) {
  cfg.validate();
  ProfileSet set;
  set.cfg_ = cfg;
  set.vocabs_ = std::move(vocabs);
  set.profiles_.resize(corpus.size());
  parallel_for(corpus.size(), threads,
               [&](std::size_t i) { set.profiles_[i] = build_profile(corpus[i], set.vocabs_, cfg); });
  for (std::size_t m = 0; m < cfg.modalities(); ++m) {
    std::vector<SparseVector> docs;
    docs.reserve(set.profiles_.size());
    for (const auto& p : set.profiles_) docs.push_back(p.tf[m]);
    set.idf_.push_back(idf_weights(docs, set.profiles_.size(), set.vocabs_[m].size(), set.vocabs_[m].fingerprint()));
  }
  return set;
}

ProfileSet ProfileSet::subset(std::span<const std::string> cookie_ids) const {
  ProfileSet set;
  set.cfg_ = cfg_;
  set.vocabs_ = vocabs_;
  set.idf_ = idf_;
  set.profiles_.reserve(cookie_ids.size());
  for (std::size_t i = 0; i < cookie_ids.size(); ++i) {
    if (i > 0 && !(cookie_ids[i - 1] < cookie_ids[i])) throw Error("subset: cookie ids must be sorted and unique");
    set.profiles_.push_back(at(cookie_ids[i]));
  }
  return set;
}

std::ptrdiff_t ProfileSet::find(const std::string& cookie_id) const {
  auto it = std::lower_bound(profiles_.begin(), profiles_.end(), cookie_id,
                             [](const CookieProfile& p, const std::string& id) { return p.cookie_id < id; });
  if (it == profiles_.end() || it->cookie_id != cookie_id) return -1;
  return it - profiles_.begin();
}

const CookieProfile& ProfileSet::at(const std::string& cookie_id) const {
  auto i = find(cookie_id);
  if (i < 0) throw Error("unknown cookie id: " + cookie_id);
  return profiles_[static_cast<std::size_t>(i)];
}

std::size_t ProfileSet::modality_for_depth(int depth) const {
  for (std::size_t m = 0; m < cfg_.depths.size(); ++m) {
    if (cfg_.depths[m] == depth) return m;
  }
  throw Error("no modality with depth " + std::to_string(depth));
}

std::vector<std::string> base_feature_names() {
  return {"tfidf_cos_m0", "tfidf_cos_m1", "tfidf_cos_m2", "tfidf_cos_m3", "jaccard_m0",    "log1p_shared_m3",
          "hour_cos",     "dow_cos",      "span_overlap", "log1p_min_events", "log1p_max_events"};
}

FeatureVector assemble(const CookieProfile& a, const CookieProfile& b, std::span<const IdfTable> idf,
                       std::span<const double> extras) {
  constexpr std::size_t kModalities = 4;
  if (a.tf.size() != kModalities || b.tf.size() != kModalities || idf.size() != kModalities) {
    throw ShapeError("assemble: the feature layout needs exactly four modalities");
  }
  if (a.vocab_fingerprints != b.vocab_fingerprints) {
    throw Error("assemble: cookies encoded under different vocabularies");
  }
  for (std::size_t m = 0; m < kModalities; ++m) {
    if (idf[m].vocab_fingerprint() != a.vocab_fingerprints[m]) {
      throw Error("assemble: idf table built for a different vocabulary");
    }
  }
  FeatureVector f;
  f.reserve(kBaseFeatureCount + extras.size());
  for (std::size_t m = 0; m < kModalities; ++m) {
    f.push_back(cosine(tfidf(a.tf[m], idf[m]), tfidf(b.tf[m], idf[m])));
  }
  const auto jac = term_match(support(a.tf[0]), support(b.tf[0]));
  const auto deep = term_match(support(a.tf[3]), support(b.tf[3]));
  f.push_back(jac.jaccard);
  f.push_back(std::log1p(static_cast<double>(deep.shared)));
  const auto tfeat = time_features(a.time, b.time);
  f.push_back(tfeat.hour_cos);
  f.push_back(tfeat.dow_cos);
  f.push_back(tfeat.span_overlap);
  const auto lo = std::min(a.time.n_events, b.time.n_events);
  const auto hi = std::max(a.time.n_events, b.time.n_events);
  f.push_back(std::log1p(static_cast<double>(lo)));
  f.push_back(std::log1p(static_cast<double>(hi)));
  for (double x : extras) {
    if (!std::isfinite(x)) throw Error("assemble: non-finite extra column");
    f.push_back(x);
  }
  return f;
}

void FeatureTable::sort_by_pair() {
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [this](std::size_t a, std::size_t b) { return pairs[a] < pairs[b]; });
  std::vector<CookiePair> sorted_pairs;
  std::vector<FeatureVector> sorted_rows;
  sorted_pairs.reserve(order.size());
  sorted_rows.reserve(order.size());
  for (std::size_t i : order) {
    sorted_pairs.push_back(pairs[i]);
    sorted_rows.push_back(std::move(rows[i]));
  }
  pairs = std::move(sorted_pairs);
  rows = std::move(sorted_rows);
  for (std::size_t i = 1; i < pairs.size(); ++i) {
    if (pairs[i] == pairs[i - 1]) throw Error("feature table: duplicate pair");
  }
}

const FeatureVector* FeatureTable::find(const CookiePair& pair) const {
  auto it = std::lower_bound(pairs.begin(), pairs.end(), pair);
  if (it == pairs.end() || *it != pair) return nullptr;
  return &rows[static_cast<std::size_t>(it - pairs.begin())];
}

std::size_t write_features(const FeatureTable& table, std::ostream& out) {
  if (table.pairs.size() != table.rows.size()) throw ShapeError("feature table: pair/row count mismatch");
  std::size_t bytes = 0;
  std::string line;
  for (std::size_t i = 0; i < table.pairs.size(); ++i) {
    line = table.pairs[i].first() + '\t' + table.pairs[i].second();
    for (double x : table.rows[i]) {
      line += '\t';
      line += format_fixed6(x);
    }
    line += '\n';
    out.write(line.data(), static_cast<std::streamsize>(line.size()));
    if (!out) throw Error("write failed");
    bytes += line.size();
  }
  return bytes;
}

namespace {

std::vector<double> parse_numbers(std::span<const std::string_view> fields, std::size_t line_no) {
  std::vector<double> values;
  values.reserve(fields.size());
  for (auto field : fields) {
    double x = 0.0;
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), x);
    if (ec != std::errc{} || ptr != field.data() + field.size() || !std::isfinite(x)) {
      throw ParseError(line_no, "not a finite number: '" + std::string(field) + "'");
    }
    values.push_back(x);
  }
  return values;
}

}  // namespace

FeatureTable parse_features(std::istream& in) {
  FeatureTable table;
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() < 2 + kBaseFeatureCount) throw ParseError(line_no, "too few feature columns");
    if (width == 0) width = fields.size() - 2;
    if (fields.size() - 2 != width) throw ParseError(line_no, "inconsistent column count");
    table.pairs.emplace_back(std::string(fields[0]), std::string(fields[1]));
    table.rows.push_back(parse_numbers(std::span(fields).subspan(2), line_no));
  }
  table.columns = base_feature_names();
  for (std::size_t i = kBaseFeatureCount; i < width; ++i) {
    table.columns.push_back("extra" + std::to_string(i - kBaseFeatureCount + 1));
  }
  table.sort_by_pair();
  return table;
}

std::span<const double> ExtraColumns::at(const CookiePair& pair) const {
  auto it = std::lower_bound(rows.begin(), rows.end(), pair,
                             [](const auto& row, const CookiePair& p) { return row.first < p; });
  if (it == rows.end() || it->first != pair) {
    throw Error("extras: no row for pair " + pair.first() + "/" + pair.second());
  }
  return it->second;
}

ExtraColumns parse_extras(std::istream& in) {
  ExtraColumns extras;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() < 3) throw ParseError(line_no, "expected at least one extra column");
    if (extras.width == 0) extras.width = fields.size() - 2;
    if (fields.size() - 2 != extras.width) throw ParseError(line_no, "inconsistent column count");
    extras.rows.emplace_back(CookiePair(std::string(fields[0]), std::string(fields[1])),
                             parse_numbers(std::span(fields).subspan(2), line_no));
  }
  std::sort(extras.rows.begin(), extras.rows.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t i = 1; i < extras.rows.size(); ++i) {
    if (extras.rows[i].first == extras.rows[i - 1].first) throw Error("extras: duplicate pair row");
  }
  return extras;
}

}  // namespace xmatch
