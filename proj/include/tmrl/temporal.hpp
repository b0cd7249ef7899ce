#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <functional>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tmrl/common.hpp"

namespace tmrl {

// ---------------------------------------------------------------------------
// Calendar dates at day resolution
// ---------------------------------------------------------------------------

struct Date {
  int year = 1970;
  int month = 1;  // 1..12
  int day = 1;    // 1..31

  auto operator<=>(const Date&) const = default;
};

/// Serial day number (Hinnant's civil-days algorithm).
inline std::int64_t days_from_civil(const Date& d) {
  int y = d.year;
  unsigned m = static_cast<unsigned>(d.month);
  unsigned dd = static_cast<unsigned>(d.day);
  y -= m <= 2;
  const int era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + dd - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return static_cast<std::int64_t>(era) * 146097 +
         static_cast<std::int64_t>(doe) - 719468;
}

inline Date civil_from_days(std::int64_t z) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp + (mp < 10 ? 3 : -9);
  return Date{static_cast<int>(y + (m <= 2)), static_cast<int>(m),
              static_cast<int>(d)};
}

inline bool is_leap_year(int y) {
  return (y % 4 == 0 && y % 100 != 0) || (y % 400 == 0);
}

inline int days_in_month(int y, int m) {
  static constexpr std::array<int, 12> lens{31, 28, 31, 30, 31, 30,
                                            31, 31, 30, 31, 30, 31};
  if (m == 2 && is_leap_year(y)) return 29;
  return lens[static_cast<std::size_t>(m - 1)];
}

inline std::string to_iso(const Date& d) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", d.year, d.month, d.day);
  return buf;
}

// ---------------------------------------------------------------------------
// Intervals and temporal spans
// ---------------------------------------------------------------------------

enum class Granularity { Day, Month, Year };

inline std::string to_string(Granularity g) {
  switch (g) {
    case Granularity::Day: return "day";
    case Granularity::Month: return "month";
    case Granularity::Year: return "year";
  }
  return "day";
}

inline Granularity granularity_from_string(const std::string& s) {
  if (s == "day") return Granularity::Day;
  if (s == "month") return Granularity::Month;
  if (s == "year") return Granularity::Year;
  throw input_error("unknown granularity: " + s);
}

/// Closed interval of calendar days. Normalization aligns the endpoints to
/// full units of the granularity (a year spans Jan 1 - Dec 31), so adjacent
/// calendar units are adjacent days.
struct Interval {
  Date start;
  Date end;
  Granularity granularity = Granularity::Day;

  bool valid() const { return start <= end; }

  static Interval year(int y) {
    return {Date{y, 1, 1}, Date{y, 12, 31}, Granularity::Year};
  }
  static Interval month(int y, int m) {
    return {Date{y, m, 1}, Date{y, m, days_in_month(y, m)}, Granularity::Month};
  }
  static Interval day(const Date& d) { return {d, d, Granularity::Day}; }
  static Interval year_range(int y0, int y1) {
    return {Date{y0, 1, 1}, Date{y1, 12, 31}, Granularity::Year};
  }

  bool operator==(const Interval& o) const {
    return start == o.start && end == o.end && granularity == o.granularity;
  }
};

/// A detected temporal expression. Relative expressions ("now", "today")
/// carry no interval.
struct TemporalSpan {
  std::string surface;
  std::size_t begin = 0;  // [begin, end) in the source text
  std::size_t end = 0;
  std::optional<Interval> interval;
  bool is_relative = false;
};

// ---------------------------------------------------------------------------
// Allen interval algebra
// ---------------------------------------------------------------------------

enum class AllenRelation {
  Before,
  After,
  Meets,
  MetBy,
  Overlaps,
  OverlappedBy,
  Starts,
  StartedBy,
  During,
  Contains,
  Finishes,
  FinishedBy,
  Equals,
  Empty,  // reserved for time-seeking queries with no expression
};

inline std::string to_string(AllenRelation r) {
  switch (r) {
    case AllenRelation::Before: return "Before";
    case AllenRelation::After: return "After";
    case AllenRelation::Meets: return "Meets";
    case AllenRelation::MetBy: return "MetBy";
    case AllenRelation::Overlaps: return "Overlaps";
    case AllenRelation::OverlappedBy: return "OverlappedBy";
    case AllenRelation::Starts: return "Starts";
    case AllenRelation::StartedBy: return "StartedBy";
    case AllenRelation::During: return "During";
    case AllenRelation::Contains: return "Contains";
    case AllenRelation::Finishes: return "Finishes";
    case AllenRelation::FinishedBy: return "FinishedBy";
    case AllenRelation::Equals: return "Equals";
    case AllenRelation::Empty: return "Empty";
  }
  return "Empty";
}

inline std::optional<AllenRelation> allen_from_string(std::string_view s) {
  static const std::pair<std::string_view, AllenRelation> table[] = {
      {"Before", AllenRelation::Before},
      {"After", AllenRelation::After},
      {"Meets", AllenRelation::Meets},
      {"MetBy", AllenRelation::MetBy},
      {"Overlaps", AllenRelation::Overlaps},
      {"OverlappedBy", AllenRelation::OverlappedBy},
      {"Starts", AllenRelation::Starts},
      {"StartedBy", AllenRelation::StartedBy},
      {"During", AllenRelation::During},
      {"Contains", AllenRelation::Contains},
      {"Finishes", AllenRelation::Finishes},
      {"FinishedBy", AllenRelation::FinishedBy},
      {"Equals", AllenRelation::Equals},
      {"Empty", AllenRelation::Empty},
  };
  for (const auto& [name, rel] : table)
    if (name == s) return rel;
  return std::nullopt;
}

inline AllenRelation allen_converse(AllenRelation r) {
  switch (r) {
    case AllenRelation::Before: return AllenRelation::After;
    case AllenRelation::After: return AllenRelation::Before;
    case AllenRelation::Meets: return AllenRelation::MetBy;
    case AllenRelation::MetBy: return AllenRelation::Meets;
    case AllenRelation::Overlaps: return AllenRelation::OverlappedBy;
    case AllenRelation::OverlappedBy: return AllenRelation::Overlaps;
    case AllenRelation::Starts: return AllenRelation::StartedBy;
    case AllenRelation::StartedBy: return AllenRelation::Starts;
    case AllenRelation::During: return AllenRelation::Contains;
    case AllenRelation::Contains: return AllenRelation::During;
    case AllenRelation::Finishes: return AllenRelation::FinishedBy;
    case AllenRelation::FinishedBy: return AllenRelation::Finishes;
    default: return r;  // Equals and Empty are self-converse
  }
}

/// The unique relation of a (Event A) relative to b (Event B), decided on
/// day-resolution endpoints of the normalized intervals. Touching intervals
/// Meet (end(a) + 1 day == start(b)); a gap of at least one day is Before.
inline AllenRelation allen_relation(const Interval& a, const Interval& b) {
  if (!a.valid() || !b.valid())
    throw input_error("allen_relation: invalid interval (start > end)");
  const std::int64_t s1 = days_from_civil(a.start), e1 = days_from_civil(a.end);
  const std::int64_t s2 = days_from_civil(b.start), e2 = days_from_civil(b.end);
  if (s1 == s2 && e1 == e2) return AllenRelation::Equals;
  if (e1 < s2) return e1 + 1 == s2 ? AllenRelation::Meets : AllenRelation::Before;
  if (e2 < s1) return e2 + 1 == s1 ? AllenRelation::MetBy : AllenRelation::After;
  if (s1 == s2) return e1 < e2 ? AllenRelation::Starts : AllenRelation::StartedBy;
  if (e1 == e2) return s1 > s2 ? AllenRelation::Finishes : AllenRelation::FinishedBy;
  if (s1 > s2 && e1 < e2) return AllenRelation::During;
  if (s1 < s2 && e1 > e2) return AllenRelation::Contains;
  if (s1 < s2) return AllenRelation::Overlaps;
  return AllenRelation::OverlappedBy;
}

// ---------------------------------------------------------------------------
// Rule-based temporal expression tagger
// ---------------------------------------------------------------------------

namespace tagdetail {

inline const std::string kMonthAlt =
    "January|February|March|April|May|June|July|August|September|October|"
    "November|December|Jan|Feb|Mar|Apr|Jun|Jul|Aug|Sept|Sep|Oct|Nov|Dec";

inline int month_number(std::string_view name) {
  static const std::pair<std::string_view, int> table[] = {
      {"jan", 1}, {"feb", 2}, {"mar", 3}, {"apr", 4},  {"may", 5},  {"jun", 6},
      {"jul", 7}, {"aug", 8}, {"sep", 9}, {"oct", 10}, {"nov", 11}, {"dec", 12},
  };
  std::string lower;
  for (char c : name.substr(0, 3))
    lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  for (const auto& [prefix, num] : table)
    if (lower == prefix) return num;
  throw input_error("unknown month name: " + std::string(name));
}

// Single-expression rules carry an optional anchoring preposition so the
// surface keeps phrases like "In 1906" or "after July 2010" intact.
inline const std::string kPrep =
    "\\b(?:(?:in|on|at|by|during|after|before|since|until|around|from)\\s+)?";

struct Rule {
  std::regex re;
  bool relative = false;
  // Normalizes a match into an interval; nullopt marks a relative expression
  // or a match to be skipped entirely (second flag).
  std::function<std::optional<Interval>(const std::smatch&, bool& skip)> normalize;
};

inline int to_int(const std::string& s) { return std::stoi(s); }

inline const std::vector<Rule>& rules() {
  static const std::vector<Rule> rs = [] {
    std::vector<Rule> v;
    auto flags = std::regex::icase | std::regex::optimize;
    const std::string year = "([12][0-9]{3})";
    const std::string month = "(" + kMonthAlt + ")";
    const std::string md = month + "\\s+([0-9]{1,2})";  // July 2
    // Ranges: "from X to Y", "between X and Y".
    v.push_back(Rule{
        std::regex("\\b(?:from|between)\\s+" + month + "?,?\\s*" + year +
                       "\\s+(?:to|and|until)\\s+" + month + "?,?\\s*" + year + "\\b",
                   flags),
        false,
        [](const std::smatch& m, bool& skip) -> std::optional<Interval> {
          int y0 = to_int(m[2]), y1 = to_int(m[4]);
          Date s = m[1].matched ? Date{y0, month_number(m[1].str()), 1}
                                : Date{y0, 1, 1};
          Date e;
          Granularity g;
          if (m[3].matched) {
            int mm = month_number(m[3].str());
            e = Date{y1, mm, days_in_month(y1, mm)};
            g = Granularity::Month;
          } else {
            e = Date{y1, 12, 31};
            g = m[1].matched ? Granularity::Month : Granularity::Year;
          }
          if (days_from_civil(s) > days_from_civil(e)) {
            skip = true;  // reversed range; let finer rules tag the pieces
            return std::nullopt;
          }
          return Interval{s, e, g};
        }});
    // Year span "1990-1995" / "1990–1995" (hyphen or UTF-8 dashes).
    v.push_back(Rule{
        std::regex("\\b" + year + "\\s*(?:-|\u2013|\u2014)\\s*" + year + "\\b",
                   flags),
        false,
        [](const std::smatch& m, bool& skip) -> std::optional<Interval> {
          int y0 = to_int(m[1]), y1 = to_int(m[2]);
          if (y0 > y1) {
            skip = true;
            return std::nullopt;
          }
          return Interval::year_range(y0, y1);
        }});
    // ISO date 2010-07-02.
    v.push_back(Rule{
        std::regex(kPrep + year + "-([01][0-9])-([0-3][0-9])\\b", flags),
        false,
        [](const std::smatch& m, bool& skip) -> std::optional<Interval> {
          int y = to_int(m[1]), mo = to_int(m[2]), d = to_int(m[3]);
          if (mo < 1 || mo > 12 || d < 1 || d > days_in_month(y, mo)) {
            skip = true;
            return std::nullopt;
          }
          return Interval::day(Date{y, mo, d});
        }});
    // "July 2, 2010" and "July 2 2010".
    v.push_back(Rule{
        std::regex(kPrep + md + ",?\\s+" + year + "\\b", flags),
        false,
        [](const std::smatch& m, bool& skip) -> std::optional<Interval> {
          int mo = month_number(m[1].str());
          int d = to_int(m[2]);
          int y = to_int(m[3]);
          if (d < 1 || d > days_in_month(y, mo)) {
            skip = true;
            return std::nullopt;
          }
          return Interval::day(Date{y, mo, d});
        }});
    // "2 July 2010".
    v.push_back(Rule{
        std::regex(kPrep + "([0-9]{1,2})\\s+" + month + ",?\\s+" + year + "\\b",
                   flags),
        false,
        [](const std::smatch& m, bool& skip) -> std::optional<Interval> {
          int d = to_int(m[1]);
          int mo = month_number(m[2].str());
          int y = to_int(m[3]);
          if (d < 1 || d > days_in_month(y, mo)) {
            skip = true;
            return std::nullopt;
          }
          return Interval::day(Date{y, mo, d});
        }});
    // Month-year: "July 2010", "April, 1906".
    v.push_back(Rule{
        std::regex(kPrep + month + ",?\\s+" + year + "\\b", flags),
        false,
        [](const std::smatch& m, bool&) -> std::optional<Interval> {
          return Interval::month(to_int(m[2]), month_number(m[1].str()));
        }});
    // Decades: "the 1990s", "1990s".
    v.push_back(Rule{
        std::regex(kPrep + "(?:the\\s+)?([12][0-9]{2}0)s\\b", flags),
        false,
        [](const std::smatch& m, bool&) -> std::optional<Interval> {
          int y = to_int(m[1]);
          return Interval::year_range(y, y + 9);
        }});
    // Bare year.
    v.push_back(Rule{
        std::regex(kPrep + year + "\\b", flags),
        false,
        [](const std::smatch& m, bool&) -> std::optional<Interval> {
          return Interval::year(to_int(m[1]));
        }});
    // Relative expressions: detected, flagged, never normalized.
    v.push_back(Rule{
        std::regex("\\b(now|today|yesterday)\\b", flags),
        true,
        [](const std::smatch&, bool&) -> std::optional<Interval> {
          return std::nullopt;
        }});
    return v;
  }();
  return rs;
}

}  // namespace tagdetail

/// Detects temporal expressions with a deterministic rule grammar: years,
/// month-year, full dates, ranges, decades, plus relative forms flagged as
/// such. Spans are ordered by position and never overlap.
inline std::vector<TemporalSpan> tag_temporal(const std::string& text) {
  struct Candidate {
    std::size_t begin, end;
    std::optional<Interval> interval;
    bool relative;
  };
  std::vector<Candidate> accepted;
  auto overlaps_accepted = [&](std::size_t b, std::size_t e) {
    for (const auto& c : accepted)
      if (c.begin < e && b < c.end) return true;
    return false;
  };
  const auto& rules = tagdetail::rules();
  for (const auto& rule : rules) {
    auto begin_it = std::sregex_iterator(text.begin(), text.end(), rule.re);
    for (auto it = begin_it; it != std::sregex_iterator(); ++it) {
      const std::smatch& m = *it;
      std::size_t b = static_cast<std::size_t>(m.position(0));
      std::size_t e = b + static_cast<std::size_t>(m.length(0));
      if (overlaps_accepted(b, e)) continue;
      bool skip = false;
      std::optional<Interval> interval = rule.normalize(m, skip);
      if (skip) continue;
      accepted.push_back({b, e, interval, rule.relative});
    }
  }
  std::sort(accepted.begin(), accepted.end(),
            [](const Candidate& a, const Candidate& b) { return a.begin < b.begin; });
  std::vector<TemporalSpan> out;
  out.reserve(accepted.size());
  for (const auto& c : accepted)
    out.push_back({text.substr(c.begin, c.end - c.begin), c.begin, c.end,
                   c.interval, c.relative});
  return out;
}

// ---------------------------------------------------------------------------
// Query taxonomy
// ---------------------------------------------------------------------------

enum class QueryType { Explicit, Implicit, TemporalAnswer };

inline std::string to_string(QueryType t) {
  switch (t) {
    case QueryType::Explicit: return "Explicit";
    case QueryType::Implicit: return "Implicit";
    case QueryType::TemporalAnswer: return "TemporalAnswer";
  }
  return "Implicit";
}

inline std::optional<QueryType> query_type_from_string(std::string_view s) {
  if (s == "Explicit") return QueryType::Explicit;
  if (s == "Implicit") return QueryType::Implicit;
  if (s == "TemporalAnswer") return QueryType::TemporalAnswer;
  return std::nullopt;
}

struct QueryClassification {
  QueryType type = QueryType::Implicit;
  bool low_confidence = false;
};

/// Rule order: time-seeking phrasing wins, then a dated (non-relative) span
/// makes the query Explicit, then an event anchor makes it Implicit.
inline QueryClassification classify_query(const std::string& text,
                                          const std::vector<TemporalSpan>& spans) {
  static const std::regex time_seeking(
      "\\bwhen\\b|\\b(?:what|which)\\s+(?:year|date|day|month|time)\\b|\\bhow\\s+long\\b",
      std::regex::icase | std::regex::optimize);
  if (std::regex_search(text, time_seeking))
    return {QueryType::TemporalAnswer, false};
  for (const auto& s : spans)
    if (!s.is_relative && s.interval.has_value())
      return {QueryType::Explicit, false};
  static const std::regex event_anchor(
      "\\b(?:before|after|during|since|until)\\s+(?:the\\s+)?\\S",
      std::regex::icase | std::regex::optimize);
  if (std::regex_search(text, event_anchor)) return {QueryType::Implicit, false};
  return {QueryType::Implicit, true};
}

}  // namespace tmrl
