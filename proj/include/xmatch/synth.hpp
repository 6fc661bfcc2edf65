#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "xmatch/corpus.hpp"

namespace xmatch {

struct SynthConfig {
  std::size_t n_users = 2000;
  int cookies_per_user = 2;
  std::size_t n_domains = 500;
  std::size_t paths_per_domain = 10;
  int min_events = 20;
  int max_events = 40;
  std::size_t topic_size = 8;
  /// Probability that an event comes from the global pool.
  double noise = 0.2;
  /// Zipf exponent of domain popularity in the global pool (0 = uniform).
  double popularity = 0.0;
  /// Standard deviation, in hours, around each user's peak hour.
  double hour_spread = 3.0;
  int days = 30;
  std::int64_t start_time = 1704067200;  // 2024-01-01 00:00:00 UTC
  double valid_fraction = 0.2;
  double test_fraction = 0.2;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SynthCorpus {
  std::vector<EventLog> logs;  // sorted by cookie id
  PairSet truth;
  PairSet train;
  PairSet valid;
  PairSet test;
};

/// `http://d<domain>.example/c<j%2>/s<j%3>/p<j>`.
std::string synth_url(std::size_t domain, std::size_t page);

/// Users are generated independently from seed-derived streams, so the
/// output depends only on the config.
SynthCorpus generate(const SynthConfig& cfg);

/// `key=value` lines describing every field.
void write_config(const SynthConfig& cfg, std::ostream& out);

/// Writes events.tsv, truth.tsv, truth_{train,valid,test}.tsv and
/// synth_config.txt into `dir`.
void write_synth(const SynthCorpus& corpus, const SynthConfig& cfg, const std::filesystem::path& dir);

}  // namespace xmatch
