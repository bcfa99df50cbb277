#pragma once

// Granular instruments: extract common factors from unit-level panels
// (principal components on standardized series), strip them per unit to get
// idiosyncratic residuals, and aggregate those residuals with size weights
// into market-level instrument series (plus their squares).
//
// Units are dealer-family dyads (depth), dyad-segment pairs (intensity), or
// dealer-segment pairs (market power). Panels are unbalanced; the factor
// step imputes missing standardized entries at zero (the unit mean), while
// per-unit regressions and the final aggregation use observed entries only,
// with size weights renormalized over the units available at each date.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "datamodel.hpp"
#include "demand.hpp"
#include "features.hpp"
#include "panelreg.hpp"
#include "types.hpp"

namespace repometrics::giv {

struct UnitKey {
  std::int32_t dealer = -1;
  std::int32_t family = -1;  // -1 for dealer-level units
  Segment segment = Segment::repo;

  bool operator<(const UnitKey& o) const {
    if (dealer != o.dealer) return dealer < o.dealer;
    if (family != o.family) return family < o.family;
    return static_cast<int>(segment) < static_cast<int>(o.segment);
  }
};

struct Panel {
  std::vector<UnitKey> units;
  std::vector<double> unit_volume;  // full-sample size-weight basis
  std::vector<std::int32_t> obs_unit;
  std::vector<std::int32_t> obs_date;
  std::vector<double> obs_value;
  std::int32_t n_dates = 0;
};

// ---------------------------------------------------------------------------
// Panel construction from upstream feature tables.

inline Panel panel_from_depth(const features::RelationshipPanel& rel,
                              const datamodel::DyadPanel& dyads,
                              Segment segment) {
  std::map<UnitKey, std::int32_t> index;
  Panel panel;
  for (const auto& row : rel.rows) {
    if (row.segment != segment) continue;
    UnitKey key{row.dealer, row.family, segment};
    auto [it, inserted] = index.emplace(key, 0);
    if (inserted) {
      it->second = static_cast<std::int32_t>(panel.units.size());
      panel.units.push_back(key);
      panel.unit_volume.push_back(0.0);
    }
    panel.obs_unit.push_back(it->second);
    panel.obs_date.push_back(row.date);
    panel.obs_value.push_back(row.depth);
    panel.n_dates = std::max(panel.n_dates, row.date + 1);
  }
  for (const auto& d : dyads.rows) {
    if (d.segment != segment) continue;
    auto it = index.find(UnitKey{d.dealer, d.family, segment});
    if (it != index.end())
      panel.unit_volume[static_cast<std::size_t>(it->second)] += d.volume;
  }
  return panel;
}

inline Panel panel_from_intensity(const features::RelationshipPanel& rel,
                                  const datamodel::DyadPanel& dyads) {
  std::map<UnitKey, std::int32_t> index;
  Panel panel;
  for (const auto& row : rel.rows) {
    UnitKey key{row.dealer, row.family, row.segment};
    auto [it, inserted] = index.emplace(key, 0);
    if (inserted) {
      it->second = static_cast<std::int32_t>(panel.units.size());
      panel.units.push_back(key);
      panel.unit_volume.push_back(0.0);
    }
    panel.obs_unit.push_back(it->second);
    panel.obs_date.push_back(row.date);
    panel.obs_value.push_back(static_cast<double>(row.intensity));
    panel.n_dates = std::max(panel.n_dates, row.date + 1);
  }
  for (const auto& d : dyads.rows) {
    auto it = index.find(UnitKey{d.dealer, d.family, d.segment});
    if (it != index.end())
      panel.unit_volume[static_cast<std::size_t>(it->second)] += d.volume;
  }
  return panel;
}

inline Panel panel_from_power(const std::vector<demand::PowerRow>& repo_rows,
                              const std::vector<demand::PowerRow>& rev_rows,
                              const datamodel::DyadPanel& dyads) {
  std::map<UnitKey, std::int32_t> index;
  Panel panel;
  auto add = [&](const std::vector<demand::PowerRow>& rows) {
    for (const auto& row : rows) {
      UnitKey key{row.dealer, -1, row.segment};
      auto [it, inserted] = index.emplace(key, 0);
      if (inserted) {
        it->second = static_cast<std::int32_t>(panel.units.size());
        panel.units.push_back(key);
        panel.unit_volume.push_back(0.0);
      }
      panel.obs_unit.push_back(it->second);
      panel.obs_date.push_back(row.date);
      panel.obs_value.push_back(row.lerner);
      panel.n_dates = std::max(panel.n_dates, row.date + 1);
    }
  };
  add(repo_rows);
  add(rev_rows);
  for (const auto& d : dyads.rows) {
    auto it = index.find(UnitKey{d.dealer, -1, d.segment});
    if (it != index.end())
      panel.unit_volume[static_cast<std::size_t>(it->second)] += d.volume;
  }
  return panel;
}

// ---------------------------------------------------------------------------
// Factor extraction.

struct FactorConfig {
  double evr_threshold = 0.90;  // cumulative explained-variance target
  int min_obs = 30;             // units observed on fewer dates are dropped
  int max_factors = 10;
};

struct Factors {
  Eigen::MatrixXd scores;            // T_kept x k
  std::vector<std::int32_t> dates;   // date index per score row
  std::vector<std::int32_t> kept_units;  // indices into panel.units
  std::vector<double> explained;     // per-component variance share
  int n_factors = 0;
  std::vector<std::string> warnings;
};

inline Factors extract_factors(const Panel& panel,
                               const FactorConfig& config = {}) {
  if (config.evr_threshold <= 0.0 || config.evr_threshold > 1.0)
    throw ConfigError("explained-variance threshold must lie in (0, 1]");
  if (panel.units.empty()) throw DataError("factor extraction: empty panel");

  Factors out;
  const auto n_units = panel.units.size();
  std::vector<int> obs_count(n_units, 0);
  for (auto u : panel.obs_unit) obs_count[static_cast<std::size_t>(u)] += 1;

  // Per-unit moments over observed entries.
  std::vector<double> mean(n_units, 0.0), sd(n_units, 0.0);
  for (std::size_t i = 0; i < panel.obs_unit.size(); ++i)
    mean[static_cast<std::size_t>(panel.obs_unit[i])] += panel.obs_value[i];
  for (std::size_t u = 0; u < n_units; ++u)
    if (obs_count[u] > 0) mean[u] /= obs_count[u];
  for (std::size_t i = 0; i < panel.obs_unit.size(); ++i) {
    const auto u = static_cast<std::size_t>(panel.obs_unit[i]);
    const double d = panel.obs_value[i] - mean[u];
    sd[u] += d * d;
  }
  int dropped_short = 0, dropped_flat = 0;
  std::vector<std::int32_t> kept;
  for (std::size_t u = 0; u < n_units; ++u) {
    sd[u] = obs_count[u] > 1 ? std::sqrt(sd[u] / (obs_count[u] - 1)) : 0.0;
    if (obs_count[u] < config.min_obs) {
      ++dropped_short;
      continue;
    }
    if (!(sd[u] > 0.0)) {
      ++dropped_flat;
      continue;
    }
    kept.push_back(static_cast<std::int32_t>(u));
  }
  if (dropped_short > 0)
    out.warnings.push_back(std::to_string(dropped_short) +
                           " unit(s) dropped: fewer than " +
                           std::to_string(config.min_obs) + " observations");
  if (dropped_flat > 0)
    out.warnings.push_back(std::to_string(dropped_flat) +
                           " unit(s) dropped: zero variance");
  if (kept.empty())
    throw DataError("factor extraction: no usable units after screening");
  out.kept_units = kept;

  // Dates with at least one kept-unit observation.
  std::vector<std::int32_t> unit_slot(n_units, -1);
  for (std::size_t j = 0; j < kept.size(); ++j)
    unit_slot[static_cast<std::size_t>(kept[j])] =
        static_cast<std::int32_t>(j);
  std::vector<char> date_seen(static_cast<std::size_t>(panel.n_dates), 0);
  for (std::size_t i = 0; i < panel.obs_unit.size(); ++i)
    if (unit_slot[static_cast<std::size_t>(panel.obs_unit[i])] >= 0)
      date_seen[static_cast<std::size_t>(panel.obs_date[i])] = 1;
  for (std::int32_t t = 0; t < panel.n_dates; ++t)
    if (date_seen[static_cast<std::size_t>(t)]) out.dates.push_back(t);
  std::vector<std::int32_t> date_slot(static_cast<std::size_t>(panel.n_dates),
                                      -1);
  for (std::size_t r = 0; r < out.dates.size(); ++r)
    date_slot[static_cast<std::size_t>(out.dates[r])] =
        static_cast<std::int32_t>(r);

  // Standardized matrix with unobserved entries imputed at the unit mean
  // (zero after standardization).
  const auto T = static_cast<Eigen::Index>(out.dates.size());
  const auto N = static_cast<Eigen::Index>(kept.size());
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(T, N);
  for (std::size_t i = 0; i < panel.obs_unit.size(); ++i) {
    const auto u = static_cast<std::size_t>(panel.obs_unit[i]);
    if (unit_slot[u] < 0) continue;
    const auto r = date_slot[static_cast<std::size_t>(panel.obs_date[i])];
    X(r, unit_slot[u]) = (panel.obs_value[i] - mean[u]) / sd[u];
  }

  Eigen::MatrixXd corr = X.transpose() * X / static_cast<double>(T);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(corr);
  if (eig.info() != Eigen::Success)
    throw NumericalError("factor extraction: eigendecomposition failed");

  // Eigen returns ascending order; walk from the top.
  const Eigen::VectorXd& vals = eig.eigenvalues();
  double total = 0.0;
  for (Eigen::Index i = 0; i < vals.size(); ++i)
    total += std::max(0.0, vals(i));
  if (!(total > 0.0))
    throw NumericalError("factor extraction: degenerate covariance");

  double cum = 0.0;
  int k = 0;
  std::vector<Eigen::Index> order;
  for (Eigen::Index i = vals.size() - 1; i >= 0; --i) order.push_back(i);
  for (auto idx : order) {
    const double share = std::max(0.0, vals(idx)) / total;
    out.explained.push_back(share);
    cum += share;
    ++k;
    if (cum >= config.evr_threshold || k >= config.max_factors) break;
  }
  out.n_factors = k;

  Eigen::MatrixXd V(N, k);
  for (int j = 0; j < k; ++j) {
    Eigen::VectorXd v = eig.eigenvectors().col(order[static_cast<std::size_t>(j)]);
    // Deterministic sign: the largest-magnitude loading is positive.
    Eigen::Index imax = 0;
    v.cwiseAbs().maxCoeff(&imax);
    if (v(imax) < 0) v = -v;
    V.col(j) = v;
  }
  out.scores = X * V;
  return out;
}

// ---------------------------------------------------------------------------
// Idiosyncratic residuals.

enum class FeMode { none, full };  // full = dealer + family + month effects

// Residuals aligned with panel.obs_*; entries for screened-out units or
// units too short to regress are NaN.
inline std::vector<double> idiosyncratic_residuals(
    const Panel& panel, const Factors& fac, const Calendar& calendar,
    FeMode fe = FeMode::full, std::vector<std::string>* warnings = nullptr) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> resid(panel.obs_value.size(), nan);

  std::vector<std::int32_t> unit_slot(panel.units.size(), -1);
  for (std::size_t j = 0; j < fac.kept_units.size(); ++j)
    unit_slot[static_cast<std::size_t>(fac.kept_units[j])] =
        static_cast<std::int32_t>(j);
  std::vector<std::int32_t> date_slot(static_cast<std::size_t>(panel.n_dates),
                                      -1);
  for (std::size_t r = 0; r < fac.dates.size(); ++r)
    date_slot[static_cast<std::size_t>(fac.dates[r])] =
        static_cast<std::int32_t>(r);

  // Working copy of values for kept-unit observations.
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < panel.obs_unit.size(); ++i)
    if (unit_slot[static_cast<std::size_t>(panel.obs_unit[i])] >= 0 &&
        date_slot[static_cast<std::size_t>(panel.obs_date[i])] >= 0)
      rows.push_back(i);

  Eigen::MatrixXd y(static_cast<Eigen::Index>(rows.size()), 1);
  for (std::size_t i = 0; i < rows.size(); ++i)
    y(static_cast<Eigen::Index>(i), 0) = panel.obs_value[rows[i]];

  if (fe == FeMode::full && !rows.empty()) {
    // Shared dealer / family / month effects across the stacked panel.
    std::vector<std::vector<std::int64_t>> factors;
    auto encode = [&](auto&& keyfn) {
      std::map<std::int64_t, std::int64_t> remap;
      std::vector<std::int64_t> codes(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const std::int64_t raw = keyfn(rows[i]);
        auto [it, inserted] = remap.emplace(raw, remap.size());
        codes[i] = it->second;
      }
      return codes;
    };
    factors.push_back(encode([&](std::size_t i) {
      return static_cast<std::int64_t>(
          panel.units[static_cast<std::size_t>(panel.obs_unit[i])].dealer);
    }));
    factors.push_back(encode([&](std::size_t i) {
      return static_cast<std::int64_t>(
          panel.units[static_cast<std::size_t>(panel.obs_unit[i])].family);
    }));
    factors.push_back(encode([&](std::size_t i) {
      return static_cast<std::int64_t>(
          month_key(calendar.day(panel.obs_date[i])));
    }));
    panelreg::absorb_fe(y, factors);
  }

  // Per-unit regression on the factor scores plus an intercept.
  const int k = fac.n_factors;
  std::map<std::int32_t, std::vector<std::size_t>> by_unit;  // slot -> rows
  for (std::size_t i = 0; i < rows.size(); ++i)
    by_unit[panel.obs_unit[rows[i]]].push_back(i);

  int too_short = 0;
  for (const auto& [unit, idx] : by_unit) {
    const auto n = static_cast<Eigen::Index>(idx.size());
    if (n < k + 2) {
      ++too_short;
      continue;
    }
    Eigen::MatrixXd X(n, k + 1);
    Eigen::VectorXd yy(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const std::size_t row = rows[idx[static_cast<std::size_t>(i)]];
      const auto t = date_slot[static_cast<std::size_t>(panel.obs_date[row])];
      X(i, 0) = 1.0;
      for (int j = 0; j < k; ++j) X(i, j + 1) = fac.scores(t, j);
      yy(i) = y(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(i)]), 0);
    }
    Eigen::VectorXd beta = (X.transpose() * X)
                               .ldlt()
                               .solve(X.transpose() * yy);
    Eigen::VectorXd e = yy - X * beta;
    for (Eigen::Index i = 0; i < n; ++i)
      resid[rows[idx[static_cast<std::size_t>(i)]]] = e(i);
  }
  if (too_short > 0 && warnings != nullptr)
    warnings->push_back(std::to_string(too_short) +
                        " unit(s) skipped in residual step: too few "
                        "observations for the factor regression");
  return resid;
}

// ---------------------------------------------------------------------------
// Aggregation into instruments.

enum class Weighting { volume, observations };

struct Instrument {
  std::vector<double> z;   // indexed by date 0..n_dates-1; NaN when undefined
  std::vector<double> z2;  // square of z
};

inline Instrument build_giv(const Panel& panel,
                            const std::vector<double>& resid,
                            Weighting weighting = Weighting::volume) {
  if (resid.size() != panel.obs_value.size())
    throw ConfigError("build_giv: residual vector length mismatch");
  const double nan = std::numeric_limits<double>::quiet_NaN();

  std::vector<double> weight(panel.units.size(), 0.0);
  if (weighting == Weighting::volume) {
    for (std::size_t u = 0; u < panel.units.size(); ++u)
      weight[u] = panel.unit_volume[u];
  } else {
    for (auto u : panel.obs_unit) weight[static_cast<std::size_t>(u)] += 1.0;
  }

  std::vector<double> num(static_cast<std::size_t>(panel.n_dates), 0.0);
  std::vector<double> den(static_cast<std::size_t>(panel.n_dates), 0.0);
  for (std::size_t i = 0; i < resid.size(); ++i) {
    if (!std::isfinite(resid[i])) continue;
    const auto t = static_cast<std::size_t>(panel.obs_date[i]);
    const double w = weight[static_cast<std::size_t>(panel.obs_unit[i])];
    num[t] += w * resid[i];
    den[t] += w;
  }
  Instrument out;
  out.z.assign(static_cast<std::size_t>(panel.n_dates), nan);
  out.z2.assign(static_cast<std::size_t>(panel.n_dates), nan);
  for (std::size_t t = 0; t < num.size(); ++t) {
    if (den[t] > 0.0) {
      out.z[t] = num[t] / den[t];
      out.z2[t] = out.z[t] * out.z[t];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Full instrument table.

struct Config {
  FactorConfig factors;
  FeMode fe = FeMode::full;
  Weighting weighting = Weighting::volume;
};

struct Series {
  std::vector<std::int32_t> dates;  // calendar indices 0..n-1
  std::vector<double> z_depthD, z_depthD2;
  std::vector<double> z_depthND, z_depthND2;
  std::vector<double> z_int, z_int2;
  std::vector<double> z_li, z_li2;
  std::vector<std::string> warnings;
};

inline Series build_series(const datamodel::DyadPanel& dyads,
                           const features::RelationshipPanel& rel,
                           const std::vector<demand::PowerRow>& power_repo,
                           const std::vector<demand::PowerRow>& power_rev,
                           const Calendar& calendar, const Config& config = {}) {
  const auto n_dates = static_cast<std::int32_t>(calendar.size());
  auto run = [&](Panel panel, std::vector<double>& z, std::vector<double>& z2,
                 std::vector<std::string>& warnings) {
    panel.n_dates = n_dates;
    auto fac = extract_factors(panel, config.factors);
    for (auto& w : fac.warnings) warnings.push_back(std::move(w));
    auto resid = idiosyncratic_residuals(panel, fac, calendar, config.fe,
                                         &warnings);
    auto inst = build_giv(panel, resid, config.weighting);
    z = std::move(inst.z);
    z2 = std::move(inst.z2);
  };

  Series out;
  out.dates.resize(static_cast<std::size_t>(n_dates));
  for (std::int32_t t = 0; t < n_dates; ++t)
    out.dates[static_cast<std::size_t>(t)] = t;
  run(panel_from_depth(rel, dyads, Segment::repo), out.z_depthD, out.z_depthD2,
      out.warnings);
  run(panel_from_depth(rel, dyads, Segment::reverse), out.z_depthND,
      out.z_depthND2, out.warnings);
  run(panel_from_intensity(rel, dyads), out.z_int, out.z_int2, out.warnings);
  run(panel_from_power(power_repo, power_rev, dyads), out.z_li, out.z_li2,
      out.warnings);
  return out;
}

}  // namespace repometrics::giv
