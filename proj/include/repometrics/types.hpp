#pragma once

// Canonical domain vocabulary: civil dates, business-day calendars, sector and
// segment enums, transaction and bond-quote records, and string-id registries.

#include <array>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "common.hpp"

namespace repometrics {

// ---------------------------------------------------------------------------
// Civil dates. Internally a date is days since 1970-01-01 (Howard Hinnant's
// algorithms); panels then use business-day indices into an explicit Calendar.

inline std::int64_t civil_to_days(int y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

inline void days_to_civil(std::int64_t z, int& y, unsigned& m, unsigned& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t yy = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp + (mp < 10 ? 3 : -9);
  y = static_cast<int>(yy + (m <= 2));
}

inline std::int64_t parse_date(std::string_view s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-')
    throw DataError("bad date '" + std::string(s) + "' (want YYYY-MM-DD)");
  const int y = static_cast<int>(parse_int(s.substr(0, 4)));
  const auto m = static_cast<unsigned>(parse_int(s.substr(5, 2)));
  const auto d = static_cast<unsigned>(parse_int(s.substr(8, 2)));
  if (m < 1 || m > 12 || d < 1 || d > 31)
    throw DataError("bad date '" + std::string(s) + "'");
  return civil_to_days(y, m, d);
}

inline std::string format_date(std::int64_t days) {
  int y;
  unsigned m, d;
  days_to_civil(days, y, m, d);
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", y, m, d);
  return buf;
}

// 1970-01-01 was a Thursday; day%7 == 2 is Saturday, 3 is Sunday.
inline bool is_weekend(std::int64_t days) {
  const std::int64_t w = ((days % 7) + 7) % 7;
  return w == 2 || w == 3;
}

inline int year_of(std::int64_t days) {
  int y;
  unsigned m, d;
  days_to_civil(days, y, m, d);
  return y;
}

inline int month_key(std::int64_t days) {  // e.g. 202104
  int y;
  unsigned m, d;
  days_to_civil(days, y, m, d);
  return y * 100 + static_cast<int>(m);
}

// ISO-8601 week key (year*100 + week). Used for FE interactions with week.
inline int week_key(std::int64_t days) {
  // ISO weekday: Monday=1..Sunday=7. day 0 (1970-01-01) was Thursday (=4).
  const auto weekday = static_cast<int>(((days % 7) + 7) % 7) + 4;
  const int wd = (weekday - 1) % 7 + 1;
  const std::int64_t thursday = days + (4 - wd);
  int y;
  unsigned m, d;
  days_to_civil(thursday, y, m, d);
  const std::int64_t jan1 = civil_to_days(y, 1, 1);
  const int week = static_cast<int>((thursday - jan1) / 7) + 1;
  return y * 100 + week;
}

// Explicit business-day calendar: a sorted list of civil dates. Panel rows
// refer to dates through their index in the calendar, so "20 business days"
// is an index arithmetic, never a civil-date guess.
class Calendar {
 public:
  Calendar() = default;
  explicit Calendar(std::vector<std::int64_t> days) : days_(std::move(days)) {
    for (std::size_t i = 0; i + 1 < days_.size(); ++i)
      if (days_[i] >= days_[i + 1])
        throw ConfigError("calendar dates must be strictly increasing");
    for (std::size_t i = 0; i < days_.size(); ++i)
      index_[days_[i]] = static_cast<std::int32_t>(i);
  }

  static Calendar weekdays(std::int64_t first, std::int64_t last) {
    std::vector<std::int64_t> days;
    for (std::int64_t d = first; d <= last; ++d)
      if (!is_weekend(d)) days.push_back(d);
    return Calendar(std::move(days));
  }

  // n business days starting at `first` (first is advanced to a weekday).
  static Calendar weekdays_from(std::int64_t first, int n) {
    std::vector<std::int64_t> days;
    days.reserve(static_cast<std::size_t>(n));
    std::int64_t d = first;
    while (static_cast<int>(days.size()) < n) {
      if (!is_weekend(d)) days.push_back(d);
      ++d;
    }
    return Calendar(std::move(days));
  }

  std::int32_t size() const { return static_cast<std::int32_t>(days_.size()); }
  std::int64_t day(std::int32_t idx) const {
    return days_[static_cast<std::size_t>(idx)];
  }
  std::string date_string(std::int32_t idx) const {
    return format_date(day(idx));
  }

  // Returns -1 when the civil date is not a calendar day.
  std::int32_t index_of(std::int64_t civil_days) const {
    auto it = index_.find(civil_days);
    return it == index_.end() ? -1 : it->second;
  }

  const std::vector<std::int64_t>& days() const { return days_; }

 private:
  std::vector<std::int64_t> days_;
  std::unordered_map<std::int64_t, std::int32_t> index_;
};

// ---------------------------------------------------------------------------
// Enums.

enum class Segment : std::uint8_t { repo = 0, reverse = 1 };

inline constexpr std::array<Segment, 2> kSegments = {Segment::repo,
                                                     Segment::reverse};

inline std::string_view segment_name(Segment s) {
  return s == Segment::repo ? "repo" : "reverse";
}

inline Segment segment_from(std::string_view s) {
  if (s == "repo") return Segment::repo;
  if (s == "reverse") return Segment::reverse;
  throw DataError("unknown segment '" + std::string(s) + "'");
}

enum class Sector : std::uint8_t {
  hedge_fund = 0,
  asset_manager,
  pension_fund,
  insurer,
  mmf,
  bank,
  other
};

inline constexpr int kNumSectors = 7;

inline std::string_view sector_name(Sector s) {
  static constexpr std::array<std::string_view, kNumSectors> names = {
      "hedge_fund", "asset_manager", "pension_fund", "insurer",
      "mmf",        "bank",          "other"};
  return names[static_cast<std::size_t>(s)];
}

inline Sector sector_from(std::string_view s) {
  for (int i = 0; i < kNumSectors; ++i)
    if (sector_name(static_cast<Sector>(i)) == s)
      return static_cast<Sector>(i);
  throw DataError("unknown sector '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Records. Ids are dense indices into per-run registries.

struct Transaction {
  std::int32_t date = 0;  // business-day index
  std::int32_t dealer = 0;
  std::int32_t nondealer = 0;
  std::int32_t family = 0;
  Sector sector = Sector::other;
  Segment segment = Segment::repo;
  double volume = 0.0;       // GBP, > 0
  double rate_spread = 0.0;  // pp vs reference rate
  std::int32_t maturity_days = 1;
  std::int32_t isin = 0;
  double collateral_mv = 0.0;  // GBP, >= 0
};

struct BondQuote {
  std::int32_t date = 0;  // business-day index
  std::int32_t isin = 0;
  double yield = 0.0;  // pp
  double bid = 0.0;
  double ask = 0.0;
  double high = 0.0;
  double low = 0.0;
  double duration = 0.0;           // years
  double residual_maturity = 0.0;  // years
};

// Interns opaque string ids into dense indices, preserving first-appearance
// order so ids are stable for a given input.
class Registry {
 public:
  std::int32_t intern(std::string_view name) {
    auto it = lookup_.find(std::string(name));
    if (it != lookup_.end()) return it->second;
    const auto id = static_cast<std::int32_t>(names_.size());
    names_.emplace_back(name);
    lookup_.emplace(names_.back(), id);
    return id;
  }

  std::int32_t find(std::string_view name) const {
    auto it = lookup_.find(std::string(name));
    return it == lookup_.end() ? -1 : it->second;
  }

  const std::string& name(std::int32_t id) const {
    return names_[static_cast<std::size_t>(id)];
  }

  std::int32_t size() const { return static_cast<std::int32_t>(names_.size()); }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::int32_t> lookup_;
};

}  // namespace repometrics
