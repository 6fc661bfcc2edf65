#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "xmatch/corpus.hpp"
#include "xmatch/features.hpp"
#include "xmatch/rng.hpp"
#include "xmatch/synth.hpp"

namespace testutil {

inline xmatch::EventLog make_log(std::string id, std::vector<std::pair<std::int64_t, std::string>> events) {
  xmatch::EventLog log{std::move(id), {}};
  for (auto& [ts, url] : events) log.events.push_back(xmatch::Event{url, ts});
  return log;
}

inline std::vector<xmatch::EventLog> parse(const std::string& text) {
  std::istringstream in(text);
  return xmatch::parse_events(in);
}

/// Small synthetic corpus for property tests.
inline xmatch::SynthCorpus small_corpus(std::uint64_t seed, std::size_t users = 60, double noise = 0.2,
                                        std::size_t domains = 40) {
  xmatch::SynthConfig cfg;
  cfg.n_users = users;
  cfg.n_domains = domains;
  cfg.noise = noise;
  cfg.seed = seed;
  return xmatch::generate(cfg);
}

inline xmatch::ProfileSet profiles_of(const std::vector<xmatch::EventLog>& logs, int seq_len = 16, int min_count = 1) {
  xmatch::TokenizerConfig cfg;
  cfg.seq_len = seq_len;
  cfg.min_count = min_count;
  return xmatch::ProfileSet::build(xmatch::Corpus(logs), cfg);
}

}  // namespace testutil
