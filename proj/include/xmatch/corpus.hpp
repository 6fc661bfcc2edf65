#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "xmatch/error.hpp"

namespace xmatch {

struct Event {
  std::string url;
  std::int64_t timestamp = 0;

  bool operator==(const Event&) const = default;
};

/// One cookie's browsing history, ascending by timestamp.
struct EventLog {
  std::string cookie_id;
  std::vector<Event> events;

  bool operator==(const EventLog&) const = default;
};

/// Cookie pair in canonical order (first < second).
class CookiePair {
 public:
  /// Canonicalizes; throws Error on a self-pair or an empty id.
  CookiePair(std::string a, std::string b);

  const std::string& first() const noexcept { return first_; }
  const std::string& second() const noexcept { return second_; }

  auto operator<=>(const CookiePair&) const = default;

 private:
  std::string first_;
  std::string second_;
};

struct CookiePairHash {
  std::size_t operator()(const CookiePair& p) const noexcept;
};

/// Deduplicated, sorted set of canonical pairs.
class PairSet {
 public:
  PairSet() = default;
  explicit PairSet(std::vector<CookiePair> pairs);

  /// Returns false if the pair was already present.
  bool insert(CookiePair pair);
  bool contains(const CookiePair& pair) const;

  std::size_t size() const noexcept { return pairs_.size(); }
  bool empty() const noexcept { return pairs_.empty(); }
  auto begin() const noexcept { return pairs_.begin(); }
  auto end() const noexcept { return pairs_.end(); }
  const std::vector<CookiePair>& pairs() const noexcept { return pairs_; }

  /// Number of pairs present in both sets.
  std::size_t intersection_size(const PairSet& other) const;

  bool operator==(const PairSet&) const = default;

 private:
  std::vector<CookiePair> pairs_;
};

struct ScoredPair {
  CookiePair pair;
  double score = 0.0;
};

/// Corpus of event logs sorted by cookie id with an id -> index lookup.
class Corpus {
 public:
  Corpus() = default;
  explicit Corpus(std::vector<EventLog> logs);

  std::size_t size() const noexcept { return logs_.size(); }
  const EventLog& operator[](std::size_t i) const { return logs_[i]; }
  std::span<const EventLog> logs() const noexcept { return logs_; }

  /// Index of a cookie id, or -1 when absent.
  std::ptrdiff_t find(std::string_view cookie_id) const;

 private:
  std::vector<EventLog> logs_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Parses `cookie_id<TAB>timestamp<TAB>url` lines. Output is sorted by
/// cookie id; per-cookie events are stably sorted by timestamp.
std::vector<EventLog> parse_events(std::istream& in);

/// Parses `cookie_a<TAB>cookie_b` lines into canonical, deduplicated pairs.
PairSet parse_pairs(std::istream& in);

/// Parses `cookie_a<TAB>cookie_b<TAB>score` lines (predictions, candidates).
std::vector<ScoredPair> parse_scored(std::istream& in);

std::size_t write_events(std::span<const EventLog> logs, std::ostream& out);
std::size_t write_pairs(const PairSet& pairs, std::ostream& out);

/// Writes scored pairs sorted by descending score, then pair. Scores must be
/// finite and in [0, 1]. Returns the number of bytes written.
std::size_t write_predictions(std::vector<ScoredPair> pairs, std::ostream& out);

/// Fixed six-decimal rendering used by every TSV writer.
std::string format_fixed6(double value);

/// Splits a line on TAB characters without dropping empty fields.
std::vector<std::string_view> split_tabs(std::string_view line);

}  // namespace xmatch
