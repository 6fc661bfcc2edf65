#include "xmatch/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <istream>
#include <map>
#include <ostream>

namespace xmatch {

namespace {

bool next_line(std::istream& in, std::string& line) {
  if (!std::getline(in, line)) return false;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return true;
}

std::size_t emit(std::ostream& out, const std::string& text) {
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error("write failed");
  return text.size();
}

}  // namespace

CookiePair::CookiePair(std::string a, std::string b) {
  if (a.empty() || b.empty()) throw Error("cookie pair with empty id");
  if (a == b) throw Error("self-pair for cookie '" + a + "'");
  if (b < a) std::swap(a, b);
  first_ = std::move(a);
  second_ = std::move(b);
}

std::size_t CookiePairHash::operator()(const CookiePair& p) const noexcept {
  std::size_t h = std::hash<std::string>{}(p.first());
  return h ^ (std::hash<std::string>{}(p.second()) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2));
}

PairSet::PairSet(std::vector<CookiePair> pairs) : pairs_(std::move(pairs)) {
  std::sort(pairs_.begin(), pairs_.end());
  pairs_.erase(std::unique(pairs_.begin(), pairs_.end()), pairs_.end());
}

bool PairSet::insert(CookiePair pair) {
  auto it = std::lower_bound(pairs_.begin(), pairs_.end(), pair);
  if (it != pairs_.end() && *it == pair) return false;
  pairs_.insert(it, std::move(pair));
  return true;
}

bool PairSet::contains(const CookiePair& pair) const {
  return std::binary_search(pairs_.begin(), pairs_.end(), pair);
}

std::size_t PairSet::intersection_size(const PairSet& other) const {
  std::size_t n = 0;
  auto a = pairs_.begin();
  auto b = other.pairs_.begin();
  while (a != pairs_.end() && b != other.pairs_.end()) {
    if (*a < *b) {
      ++a;
    } else if (*b < *a) {
      ++b;
    } else {
      ++n;
      ++a;
      ++b;
    }
  }
  return n;
}

Corpus::Corpus(std::vector<EventLog> logs) : logs_(std::move(logs)) {
  std::sort(logs_.begin(), logs_.end(),
            [](const EventLog& a, const EventLog& b) { return a.cookie_id < b.cookie_id; });
  index_.reserve(logs_.size());
  for (std::size_t i = 0; i < logs_.size(); ++i) {
    if (!index_.emplace(logs_[i].cookie_id, i).second) {
      throw Error("duplicate cookie id in corpus: " + logs_[i].cookie_id);
    }
  }
}

std::ptrdiff_t Corpus::find(std::string_view cookie_id) const {
  auto it = index_.find(std::string(cookie_id));
  return it == index_.end() ? -1 : static_cast<std::ptrdiff_t>(it->second);
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (;;) {
    std::size_t tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

std::vector<EventLog> parse_events(std::istream& in) {
  std::map<std::string, std::vector<Event>, std::less<>> grouped;
  std::string line;
  std::size_t line_no = 0;
  while (next_line(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() != 3) throw ParseError(line_no, "expected 3 tab-separated fields");
    if (fields[0].empty()) throw ParseError(line_no, "empty cookie id");
    if (fields[2].empty()) throw ParseError(line_no, "empty url");
    std::int64_t ts = 0;
    auto [ptr, ec] = std::from_chars(fields[1].data(), fields[1].data() + fields[1].size(), ts);
    if (ec != std::errc{} || ptr != fields[1].data() + fields[1].size() || fields[1].empty()) {
      throw ParseError(line_no, "timestamp is not an integer: '" + std::string(fields[1]) + "'");
    }
    auto it = grouped.find(fields[0]);
    if (it == grouped.end()) it = grouped.emplace(std::string(fields[0]), std::vector<Event>{}).first;
    it->second.push_back(Event{std::string(fields[2]), ts});
  }
  if (in.bad()) throw Error("read failed");

  std::vector<EventLog> logs;
  logs.reserve(grouped.size());
  for (auto& [id, events] : grouped) {
    std::stable_sort(events.begin(), events.end(),
                     [](const Event& a, const Event& b) { return a.timestamp < b.timestamp; });
    logs.push_back(EventLog{id, std::move(events)});
  }
  return logs;
}

PairSet parse_pairs(std::istream& in) {
  std::vector<CookiePair> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (next_line(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() != 2) throw ParseError(line_no, "expected 2 tab-separated fields");
    if (fields[0].empty() || fields[1].empty()) throw ParseError(line_no, "empty cookie id");
    if (fields[0] == fields[1]) throw ParseError(line_no, "self-pair");
    pairs.emplace_back(std::string(fields[0]), std::string(fields[1]));
  }
  if (in.bad()) throw Error("read failed");
  return PairSet(std::move(pairs));
}

std::vector<ScoredPair> parse_scored(std::istream& in) {
  std::vector<ScoredPair> out;
  std::string line;
  std::size_t line_no = 0;
  while (next_line(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() != 3) throw ParseError(line_no, "expected 3 tab-separated fields");
    if (fields[0].empty() || fields[1].empty()) throw ParseError(line_no, "empty cookie id");
    if (fields[0] == fields[1]) throw ParseError(line_no, "self-pair");
    double score = 0.0;
    auto [ptr, ec] = std::from_chars(fields[2].data(), fields[2].data() + fields[2].size(), score);
    if (ec != std::errc{} || ptr != fields[2].data() + fields[2].size() || !std::isfinite(score)) {
      throw ParseError(line_no, "score is not a finite number");
    }
    out.push_back(ScoredPair{CookiePair(std::string(fields[0]), std::string(fields[1])), score});
  }
  if (in.bad()) throw Error("read failed");
  return out;
}

std::string format_fixed6(double value) {
  char buf[64];
  int n = std::snprintf(buf, sizeof buf, "%.6f", value);
  std::string s(buf, static_cast<std::size_t>(n));
  if (s == "-0.000000") s.erase(0, 1);
  return s;
}

std::size_t write_events(std::span<const EventLog> logs, std::ostream& out) {
  std::size_t bytes = 0;
  for (const auto& log : logs) {
    for (const auto& ev : log.events) {
      bytes += emit(out, log.cookie_id + '\t' + std::to_string(ev.timestamp) + '\t' + ev.url + '\n');
    }
  }
  return bytes;
}

std::size_t write_pairs(const PairSet& pairs, std::ostream& out) {
  std::size_t bytes = 0;
  for (const auto& p : pairs) bytes += emit(out, p.first() + '\t' + p.second() + '\n');
  return bytes;
}

std::size_t write_predictions(std::vector<ScoredPair> pairs, std::ostream& out) {
  for (const auto& sp : pairs) {
    if (!std::isfinite(sp.score) || sp.score < 0.0 || sp.score > 1.0) {
      throw Error("prediction score outside [0,1] for " + sp.pair.first() + "/" + sp.pair.second());
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const ScoredPair& a, const ScoredPair& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.pair < b.pair;
  });
  std::size_t bytes = 0;
  for (const auto& sp : pairs) {
    bytes += emit(out, sp.pair.first() + '\t' + sp.pair.second() + '\t' + format_fixed6(sp.score) + '\n');
  }
  return bytes;
}

}  // namespace xmatch
