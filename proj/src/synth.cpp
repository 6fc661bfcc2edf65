#include "xmatch/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

#include "xmatch/error.hpp"
#include "xmatch/rng.hpp"

namespace xmatch {

namespace {

constexpr std::uint64_t kUserStream = 0x100;
constexpr std::uint64_t kSplitStream = 2;

bool is_probability(double p) { return p >= 0.0 && p <= 1.0; }

/// Inverse-CDF sampler over domain popularity.
class DomainSampler {
 public:
  DomainSampler(std::size_t n, double exponent) : cdf_(n) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      total += std::pow(static_cast<double>(i + 1), -exponent);
      cdf_[i] = total;
    }
    for (double& c : cdf_) c /= total;
  }

  std::size_t operator()(Rng& rng) const {
    const double u = rng.uniform();
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    return std::min(static_cast<std::size_t>(it - cdf_.begin()), cdf_.size() - 1);
  }

 private:
  std::vector<double> cdf_;
};

std::string cookie_id(Rng& rng) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "c%012llx", static_cast<unsigned long long>(rng.next_u64() >> 16));
  return buf;
}

}  // namespace

void SynthConfig::validate() const {
  if (n_users < 1) throw Error("synth: n_users must be positive");
  if (cookies_per_user != 2) throw Error("synth: exactly two cookies per user are supported");
  if (n_domains < 1 || paths_per_domain < 1) throw Error("synth: domain and path counts must be positive");
  if (min_events < 1 || max_events < min_events) throw Error("synth: need 1 <= min_events <= max_events");
  if (topic_size < 1) throw Error("synth: topic size must be positive");
  if (topic_size > n_domains * paths_per_domain) throw Error("synth: topic size exceeds the URL pool");
  if (!is_probability(noise)) throw Error("synth: noise must be in [0, 1]");
  if (!(popularity >= 0.0) || !std::isfinite(popularity)) throw Error("synth: popularity must be >= 0");
  if (!(hour_spread >= 0.0) || !std::isfinite(hour_spread)) throw Error("synth: hour spread must be >= 0");
  if (days < 1) throw Error("synth: days must be positive");
  if (!is_probability(valid_fraction) || !is_probability(test_fraction) || valid_fraction + test_fraction > 1.0) {
    throw Error("synth: split fractions must be in [0, 1] and sum to at most 1");
  }
}

std::string synth_url(std::size_t domain, std::size_t page) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "http://d%zu.example/c%zu/s%zu/p%zu", domain, page % 2, page % 3, page);
  return buf;
}

SynthCorpus generate(const SynthConfig& cfg) {
  cfg.validate();
  const DomainSampler domains(cfg.n_domains, cfg.popularity);
  auto draw_url = [&](Rng& rng) {
    const std::size_t d = domains(rng);
    return d * cfg.paths_per_domain + static_cast<std::size_t>(rng.below(cfg.paths_per_domain));
  };

  SynthCorpus out;
  std::vector<CookiePair> pairs;
  pairs.reserve(cfg.n_users);
  for (std::size_t u = 0; u < cfg.n_users; ++u) {
    Rng rng = Rng::derive(cfg.seed, kUserStream + u);
    std::vector<std::size_t> preferred;
    while (preferred.size() < cfg.topic_size) {
      const std::size_t url = draw_url(rng);
      if (std::find(preferred.begin(), preferred.end(), url) == preferred.end()) preferred.push_back(url);
    }
    const double peak = rng.uniform(0.0, 24.0);

    std::vector<std::string> ids;
    for (int c = 0; c < cfg.cookies_per_user; ++c) {
      EventLog log;
      log.cookie_id = cookie_id(rng);
      const auto n_events = static_cast<std::size_t>(rng.between(cfg.min_events, cfg.max_events));
      std::vector<std::int64_t> times(n_events);
      for (auto& ts : times) {
        const auto hour_bin = static_cast<std::int64_t>(std::floor(peak + cfg.hour_spread * rng.normal()));
        const std::int64_t hod = ((hour_bin % 24) + 24) % 24;
        const std::int64_t day = rng.between(0, cfg.days - 1);
        ts = cfg.start_time + day * 86400 + hod * 3600 + rng.between(0, 3599);
      }
      std::sort(times.begin(), times.end());
      for (std::size_t e = 0; e < n_events; ++e) {
        const std::size_t url =
            rng.bernoulli(cfg.noise) ? draw_url(rng) : preferred[static_cast<std::size_t>(rng.below(preferred.size()))];
        log.events.push_back(Event{synth_url(url / cfg.paths_per_domain, url % cfg.paths_per_domain), times[e]});
      }
      std::stable_sort(log.events.begin(), log.events.end(),
                       [](const Event& a, const Event& b) { return a.timestamp < b.timestamp; });
      ids.push_back(log.cookie_id);
      out.logs.push_back(std::move(log));
    }
    pairs.emplace_back(ids[0], ids[1]);
  }
  std::sort(out.logs.begin(), out.logs.end(),
            [](const EventLog& a, const EventLog& b) { return a.cookie_id < b.cookie_id; });
  for (std::size_t i = 1; i < out.logs.size(); ++i) {
    if (out.logs[i].cookie_id == out.logs[i - 1].cookie_id) {
      throw Error("synth: cookie id collision; choose another seed");
    }
  }

  // Split users, not pairs of different users, so each cookie lives in one split.
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng split_rng = Rng::derive(cfg.seed, kSplitStream);
  split_rng.shuffle(std::span(order));
  const auto n = pairs.size();
  const auto n_valid = static_cast<std::size_t>(std::floor(cfg.valid_fraction * static_cast<double>(n)));
  const auto n_test = static_cast<std::size_t>(std::floor(cfg.test_fraction * static_cast<double>(n)));
  const std::size_t n_train = n - n_valid - n_test;
  std::vector<CookiePair> train, valid, test;
  for (std::size_t i = 0; i < n; ++i) {
    const CookiePair& p = pairs[order[i]];
    if (i < n_train) {
      train.push_back(p);
    } else if (i < n_train + n_valid) {
      valid.push_back(p);
    } else {
      test.push_back(p);
    }
  }
  out.truth = PairSet(std::move(pairs));
  out.train = PairSet(std::move(train));
  out.valid = PairSet(std::move(valid));
  out.test = PairSet(std::move(test));
  return out;
}

void write_config(const SynthConfig& cfg, std::ostream& out) {
  char buf[64];
  auto real = [&](double x) {
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return std::string(buf);
  };
  out << "n_users=" << cfg.n_users << '\n'
      << "cookies_per_user=" << cfg.cookies_per_user << '\n'
      << "n_domains=" << cfg.n_domains << '\n'
      << "paths_per_domain=" << cfg.paths_per_domain << '\n'
      << "min_events=" << cfg.min_events << '\n'
      << "max_events=" << cfg.max_events << '\n'
      << "topic_size=" << cfg.topic_size << '\n'
      << "noise=" << real(cfg.noise) << '\n'
      << "popularity=" << real(cfg.popularity) << '\n'
      << "hour_spread=" << real(cfg.hour_spread) << '\n'
      << "days=" << cfg.days << '\n'
      << "start_time=" << cfg.start_time << '\n'
      << "valid_fraction=" << real(cfg.valid_fraction) << '\n'
      << "test_fraction=" << real(cfg.test_fraction) << '\n'
      << "seed=" << cfg.seed << '\n';
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw Error("write failed: " + path.string());
}

}  // namespace

void write_synth(const SynthCorpus& corpus, const SynthConfig& cfg, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());
  auto put = [&](const char* name, auto&& body) {
    const auto path = dir / name;
    auto out = open_out(path);
    body(out);
    finish(out, path);
  };
  put("events.tsv", [&](std::ostream& o) { write_events(corpus.logs, o); });
  put("truth.tsv", [&](std::ostream& o) { write_pairs(corpus.truth, o); });
  put("truth_train.tsv", [&](std::ostream& o) { write_pairs(corpus.train, o); });
  put("truth_valid.tsv", [&](std::ostream& o) { write_pairs(corpus.valid, o); });
  put("truth_test.tsv", [&](std::ostream& o) { write_pairs(corpus.test, o); });
  put("synth_config.txt", [&](std::ostream& o) { write_config(cfg, o); });
}

}  // namespace xmatch
