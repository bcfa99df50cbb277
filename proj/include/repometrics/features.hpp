#pragma once

// Relationship-trading metrics on the dyad-day panel: depth (lagged-window
// funding share), intensity (lagged-window trading-day count), and the
// client/low-client dyad classifications.
//
// Windows cover business-day indices t-window .. t-1, strictly lagged; rows
// exist only for t >= window (full history) and only where the dyad itself
// traded within the window, so depth > 0 and intensity >= 1 on every row.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "datamodel.hpp"
#include "types.hpp"

namespace repometrics::features {

struct RelationshipRow {
  std::int32_t date = 0;
  Segment segment = Segment::repo;
  std::int32_t dealer = 0;
  std::int32_t family = 0;
  double depth = 0.0;
  std::int32_t intensity = 0;
};

struct RelationshipPanel {
  std::vector<RelationshipRow> rows;  // sorted by (date, segment, dealer, family)
  int window = 20;
};

namespace detail {

struct DyadSeries {
  Segment segment;
  std::int32_t dealer;
  std::int32_t family;
  std::vector<std::int32_t> dates;   // strictly increasing
  std::vector<double> volumes;       // aligned with dates
};

inline std::vector<DyadSeries> group_dyads(const datamodel::DyadPanel& panel) {
  std::map<std::tuple<int, std::int32_t, std::int32_t>, DyadSeries> groups;
  for (const auto& row : panel.rows) {
    auto key = std::make_tuple(static_cast<int>(row.segment), row.dealer,
                               row.family);
    auto& g = groups[key];
    g.segment = row.segment;
    g.dealer = row.dealer;
    g.family = row.family;
    g.dates.push_back(row.date);
    g.volumes.push_back(row.volume);
  }
  std::vector<DyadSeries> out;
  out.reserve(groups.size());
  for (auto& [key, g] : groups) {
    // DyadPanel is date-sorted within key already, but do not rely on it.
    std::vector<std::size_t> idx(g.dates.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return g.dates[a] < g.dates[b];
    });
    DyadSeries s;
    s.segment = g.segment;
    s.dealer = g.dealer;
    s.family = g.family;
    for (auto i : idx) {
      s.dates.push_back(g.dates[i]);
      s.volumes.push_back(g.volumes[i]);
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace detail

// Dealer's total in-window volume per (segment, dealer, t), then each dyad's
// share of it. Returns rows sorted by (date, segment, dealer, family).
inline RelationshipPanel build_relationship(const datamodel::DyadPanel& panel,
                                            int window = 20) {
  if (window < 1) throw ConfigError("relationship window must be >= 1");
  RelationshipPanel out;
  out.window = window;
  if (panel.rows.empty()) return out;

  std::int32_t t_max = 0;
  for (const auto& row : panel.rows) t_max = std::max(t_max, row.date);
  const auto T = static_cast<std::size_t>(t_max) + 1;

  // Dealer daily totals per (segment, dealer), then prefix sums over dates.
  std::map<std::pair<int, std::int32_t>, std::vector<double>> dealer_daily;
  for (const auto& row : panel.rows) {
    auto& daily =
        dealer_daily[{static_cast<int>(row.segment), row.dealer}];
    if (daily.empty()) daily.assign(T, 0.0);
    daily[static_cast<std::size_t>(row.date)] += row.volume;
  }
  std::map<std::pair<int, std::int32_t>, std::vector<double>> dealer_prefix;
  for (auto& [key, daily] : dealer_daily) {
    std::vector<double> pref(T + 1, 0.0);
    for (std::size_t t = 0; t < T; ++t) pref[t + 1] = pref[t] + daily[t];
    dealer_prefix[key] = std::move(pref);
  }

  const auto dyads = detail::group_dyads(panel);
  for (const auto& dyad : dyads) {
    const auto& pref =
        dealer_prefix[{static_cast<int>(dyad.segment), dyad.dealer}];
    // Two-pointer window over the dyad's sparse trade dates.
    std::size_t lo = 0, hi = 0;
    const auto n = dyad.dates.size();
    double win_vol = 0.0;
    for (std::int32_t t = window; t < static_cast<std::int32_t>(T); ++t) {
      const std::int32_t win_start = t - window;
      while (hi < n && dyad.dates[hi] < t) {
        win_vol += dyad.volumes[hi];
        ++hi;
      }
      while (lo < hi && dyad.dates[lo] < win_start) {
        win_vol -= dyad.volumes[lo];
        ++lo;
      }
      if (lo == hi) continue;  // dyad silent in window
      const double dealer_win =
          pref[static_cast<std::size_t>(t)] -
          pref[static_cast<std::size_t>(win_start)];
      RelationshipRow row;
      row.date = t;
      row.segment = dyad.segment;
      row.dealer = dyad.dealer;
      row.family = dyad.family;
      row.depth = win_vol / dealer_win;
      row.intensity = static_cast<std::int32_t>(hi - lo);
      out.rows.push_back(row);
    }
  }
  std::sort(out.rows.begin(), out.rows.end(),
            [](const RelationshipRow& a, const RelationshipRow& b) {
              return std::tie(a.date, a.segment, a.dealer, a.family) <
                     std::tie(b.date, b.segment, b.dealer, b.family);
            });
  return out;
}

// Scalar forms, direct nested-loop evaluation. Depth is undefined (nullopt)
// when the dealer had no in-window activity.
inline std::optional<double> depth_at(const datamodel::DyadPanel& panel,
                                      Segment segment, std::int32_t dealer,
                                      std::int32_t family, std::int32_t t,
                                      int window = 20) {
  double dyad_vol = 0.0, dealer_vol = 0.0;
  for (const auto& row : panel.rows) {
    if (row.segment != segment || row.dealer != dealer) continue;
    if (row.date < t - window || row.date >= t) continue;
    dealer_vol += row.volume;
    if (row.family == family) dyad_vol += row.volume;
  }
  if (dealer_vol <= 0.0) return std::nullopt;
  return dyad_vol / dealer_vol;
}

inline std::int32_t intensity_at(const datamodel::DyadPanel& panel,
                                 Segment segment, std::int32_t dealer,
                                 std::int32_t family, std::int32_t t,
                                 int window = 20) {
  std::int32_t count = 0;
  for (const auto& row : panel.rows) {
    if (row.segment != segment || row.dealer != dealer ||
        row.family != family)
      continue;
    if (row.date < t - window || row.date >= t) continue;
    if (row.volume > 0.0) ++count;  // panel has one row per day, so this is
                                    // the day indicator
  }
  return count;
}

// ---------------------------------------------------------------------------
// Client flags. Per segment: each dyad's sample-mean depth and intensity are
// ranked against the cross-dyad 0.70 / 0.30 quantiles; a dyad is client_high
// when strictly above the high quantile in both metrics, client_low when
// strictly below the low quantile in both.

struct DyadFlags {
  Segment segment = Segment::repo;
  std::int32_t dealer = 0;
  std::int32_t family = 0;
  bool client_high = false;
  bool client_low = false;
};

struct ClientFlags {
  std::vector<DyadFlags> flags;  // sorted by (segment, dealer, family)
  std::vector<std::string> warnings;
};

// Inclusive type-1 empirical quantile: step function, q(p) = x_(ceil(p n)).
inline double quantile_type1(std::vector<double> x, double p) {
  if (x.empty()) throw DataError("quantile of empty sample");
  std::sort(x.begin(), x.end());
  const auto n = x.size();
  auto k = static_cast<std::size_t>(std::ceil(p * static_cast<double>(n)));
  if (k < 1) k = 1;
  if (k > n) k = n;
  return x[k - 1];
}

inline ClientFlags client_flags(const RelationshipPanel& panel,
                                double q_high = 0.70, double q_low = 0.30) {
  if (!(q_low < q_high) || q_low <= 0.0 || q_high >= 1.0)
    throw ConfigError("client_flags: need 0 < q_low < q_high < 1");
  struct Acc {
    double depth_sum = 0.0;
    double intensity_sum = 0.0;
    std::int64_t n = 0;
  };
  std::map<std::tuple<int, std::int32_t, std::int32_t>, Acc> acc;
  for (const auto& row : panel.rows) {
    auto& a = acc[{static_cast<int>(row.segment), row.dealer, row.family}];
    a.depth_sum += row.depth;
    a.intensity_sum += row.intensity;
    a.n += 1;
  }

  ClientFlags out;
  for (int seg = 0; seg < 2; ++seg) {
    std::vector<std::tuple<std::int32_t, std::int32_t, double, double>> dyads;
    for (const auto& [key, a] : acc) {
      if (std::get<0>(key) != seg) continue;
      dyads.emplace_back(std::get<1>(key), std::get<2>(key),
                         a.depth_sum / static_cast<double>(a.n),
                         a.intensity_sum / static_cast<double>(a.n));
    }
    if (dyads.empty()) continue;
    if (dyads.size() < 10)
      throw DataError("client_flags: need >= 10 dyads per segment, have " +
                      std::to_string(dyads.size()) + " in segment " +
                      std::string(segment_name(static_cast<Segment>(seg))));

    std::vector<double> depths, intensities;
    for (const auto& d : dyads) {
      depths.push_back(std::get<2>(d));
      intensities.push_back(std::get<3>(d));
    }
    const double dep_hi = quantile_type1(depths, q_high);
    const double dep_lo = quantile_type1(depths, q_low);
    const double int_hi = quantile_type1(intensities, q_high);
    const double int_lo = quantile_type1(intensities, q_low);

    const bool dep_degenerate =
        *std::min_element(depths.begin(), depths.end()) ==
        *std::max_element(depths.begin(), depths.end());
    const bool int_degenerate =
        *std::min_element(intensities.begin(), intensities.end()) ==
        *std::max_element(intensities.begin(), intensities.end());
    if (dep_degenerate || int_degenerate)
      out.warnings.push_back(
          std::string("degenerate metric distribution in segment ") +
          std::string(segment_name(static_cast<Segment>(seg))) +
          "; all flags 0");

    for (const auto& d : dyads) {
      DyadFlags f;
      f.segment = static_cast<Segment>(seg);
      f.dealer = std::get<0>(d);
      f.family = std::get<1>(d);
      f.client_high = std::get<2>(d) > dep_hi && std::get<3>(d) > int_hi;
      f.client_low = std::get<2>(d) < dep_lo && std::get<3>(d) < int_lo;
      out.flags.push_back(f);
    }
  }
  return out;
}

}  // namespace repometrics::features
