#pragma once
// Canned regression specifications for the three study designs that consume
// the measurement pipeline's outputs:
//
//   * run_repo_impact  — dyad-day panels of secured-lending volume and spread
//     on dealer market power, relationship depth, contact frequency, and the
//     four network-factor series, with lender/borrower fixed effects.
//   * run_mispricing   — bond-day panels of absolute yield-curve deviations on
//     traded-dealer market power and the network factors, pooled and split by
//     residual-maturity bucket.
//   * run_liquidity    — a single daily time series of the market-wide noise
//     index on aggregated power and factor series.
//
// Each preset assembles a RegressionSpec against a documented column contract
// (the `cols` namespace below) and runs it through the shared panel engine.
// Frames are built by the caller (pipeline, CLI, or tests); the presets only
// wire columns, fixed effects, instruments, and covariance choices together.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "curve.hpp"
#include "panelreg.hpp"
#include "types.hpp"

namespace repometrics::panelreg {

// ---------------------------------------------------------------------------
// Column contract shared by the presets and the frame builders.

namespace cols {
// Dyad-day panel (one row per dealer x family x day within a segment).
inline constexpr const char* log_volume = "log_volume";
inline constexpr const char* abs_spread = "abs_spread";
inline constexpr const char* market_power = "market_power";
inline constexpr const char* depth = "depth";
inline constexpr const char* frequency = "frequency";
// Network-factor series, split by persistence band and segment.
inline constexpr const char* df_tran_repo = "df_tran_repo";
inline constexpr const char* df_per_repo = "df_per_repo";
inline constexpr const char* df_tran_rev = "df_tran_rev";
inline constexpr const char* df_per_rev = "df_per_rev";
// Bond-day panel.
inline constexpr const char* abs_deviation = "abs_deviation";
inline constexpr const char* markup = "markup";
inline constexpr const char* markdown = "markdown";
inline constexpr const char* markup_disp = "markup_disp";
inline constexpr const char* markdown_disp = "markdown_disp";
inline constexpr const char* residual_maturity = "residual_maturity";
// Daily noise regression dependent.
inline constexpr const char* noise = "noise";
// Categorical keys.
inline constexpr const char* dealer = "dealer";
inline constexpr const char* nondealer = "nondealer";
inline constexpr const char* bond = "bond";
inline constexpr const char* bucket = "bucket";
inline constexpr const char* date = "date";
inline constexpr const char* week = "week";
inline constexpr const char* month = "month";
inline constexpr const char* year = "year";
}  // namespace cols

// Instrument columns available in the frame (size-weighted idiosyncratic
// aggregates and their squares). Presets switch to two-stage estimation when
// endogenous regressors are flagged; flagging them without instruments is a
// configuration error.
struct GivColumns {
  std::vector<std::string> names;
};

// ---------------------------------------------------------------------------
// Shared helpers.

inline std::string interaction_name(const std::string& a,
                                    const std::string& b) {
  return a + "_x_" + b;
}

// Adds the elementwise product of two numeric columns; returns its name.
inline std::string add_interaction(Frame& frame, const std::string& a,
                                   const std::string& b) {
  const auto& va = frame.num(a);
  const auto& vb = frame.num(b);
  std::vector<double> prod(va.size());
  for (std::size_t i = 0; i < va.size(); ++i) prod[i] = va[i] * vb[i];
  const std::string name = interaction_name(a, b);
  frame.add_num(name, std::move(prod));
  return name;
}

// Adds the categorical calendar keys (date, week, month, year) derived from
// per-row civil day counts.
inline void add_calendar_keys(Frame& frame,
                              const std::vector<std::int64_t>& civil_days) {
  const std::size_t n = civil_days.size();
  std::vector<std::int64_t> d(n), w(n), m(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    d[i] = civil_days[i];
    w[i] = week_key(civil_days[i]);
    m[i] = month_key(civil_days[i]);
    y[i] = year_of(civil_days[i]);
  }
  frame.add_cat(cols::date, std::move(d));
  frame.add_cat(cols::week, std::move(w));
  frame.add_cat(cols::month, std::move(m));
  frame.add_cat(cols::year, std::move(y));
}

namespace detail {

inline void require_instruments(const std::vector<std::string>& endogenous,
                                const GivColumns& giv) {
  if (!endogenous.empty() && giv.names.empty())
    throw ConfigError(
        "endogenous regressors configured but no instrument columns supplied");
}

// Surfaces collinearity drops as an explicit notice on the result.
inline void note_dropped(RegressionResult& res) {
  for (const auto& c : res.dropped_columns)
    res.warnings.push_back("column '" + c +
                           "' dropped: collinear within the specification");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dyad-day impact regressions: log volume and absolute spread on market
// power, relationship depth, contact frequency, and the four network-factor
// series. Fixed effects depend on which side provides liquidity: when dealers
// lend (repo), dealer effects plus nondealer-by-period effects; when dealers
// borrow (reverse), nondealer effects plus dealer-by-period effects. A year
// factor is absorbed on top when enabled. Standard errors cluster on dealer.

struct RepoImpactPreset {
  Segment segment = Segment::repo;
  // Calendar key interacted with the counterparty factor ("week" or "month").
  std::string counterparty_period = cols::week;
  bool year_fe = true;
  std::vector<std::string> endogenous = {cols::market_power, cols::depth,
                                         cols::frequency};
  std::vector<std::string> controls;  // extra numeric regressor columns
  VcovSpec vcov = VcovSpec::clustered_on(cols::dealer);
  double weak_f_threshold = 10.0;
  bool drop_collinear = true;

  std::vector<std::string> regressor_list() const {
    std::vector<std::string> r = {cols::market_power, cols::depth,
                                  cols::frequency,    cols::df_tran_repo,
                                  cols::df_per_repo,  cols::df_tran_rev,
                                  cols::df_per_rev};
    r.insert(r.end(), controls.begin(), controls.end());
    return r;
  }
};

struct RepoImpactResult {
  RegressionResult volume;
  RegressionResult spread;
};

inline RegressionResult run_repo_impact_one(const RepoImpactPreset& preset,
                                            const Frame& data,
                                            const GivColumns& giv,
                                            const std::string& dependent) {
  detail::require_instruments(preset.endogenous, giv);
  RegressionSpec spec;
  spec.dependent = dependent;
  spec.regressors = preset.regressor_list();
  spec.endogenous = preset.endogenous;
  spec.instruments = preset.endogenous.empty() ? std::vector<std::string>{}
                                               : giv.names;
  const bool dealer_lends = preset.segment == Segment::repo;
  const std::string own = dealer_lends ? cols::dealer : cols::nondealer;
  const std::string other = dealer_lends ? cols::nondealer : cols::dealer;
  spec.absorb.push_back(FactorSpec{{own}});
  spec.absorb.push_back(FactorSpec{{other, preset.counterparty_period}});
  if (preset.year_fe) spec.absorb.push_back(FactorSpec{{cols::year}});
  spec.vcov = preset.vcov;
  spec.weak_f_threshold = preset.weak_f_threshold;
  spec.drop_collinear = preset.drop_collinear;
  auto res = tsls(spec, data);
  detail::note_dropped(res);
  return res;
}

inline RepoImpactResult run_repo_impact(const RepoImpactPreset& preset,
                                        const Frame& data,
                                        const GivColumns& giv) {
  return {run_repo_impact_one(preset, data, giv, cols::log_volume),
          run_repo_impact_one(preset, data, giv, cols::abs_spread)};
}

// ---------------------------------------------------------------------------
// Bond-day mispricing regressions: absolute deviation from the fitted curve
// on the market power of the dealers trading each bond, the network factors,
// and caller-supplied bond/macro controls. Absorbs bond-by-month and year
// factors (plus the maturity bucket in the pooled run); covariance uses the
// cross-sectionally aggregated kernel estimator over business days.

// How dealer market power enters: levels, dispersions across dealers trading
// the bond, or levels together with dispersions and their products.
enum class PowerForm { level, dispersion, interaction };

struct MispricingPreset {
  PowerForm form = PowerForm::level;
  // Adds the named stress dummy and its products with the factor series.
  bool stress_terms = false;
  std::string stress_column = "stress_dash";
  std::vector<std::string> controls;
  std::vector<std::string> endogenous;
  bool bucket_fe = true;  // pooled run only
  bool year_fe = true;
  int dk_lag = 20;
  double weak_f_threshold = 10.0;
  bool drop_collinear = true;

  std::vector<std::string> power_terms() const {
    switch (form) {
      case PowerForm::level:
        return {cols::markup, cols::markdown};
      case PowerForm::dispersion:
        return {cols::markup_disp, cols::markdown_disp};
      case PowerForm::interaction:
        return {cols::markup,
                cols::markup_disp,
                interaction_name(cols::markup, cols::markup_disp),
                cols::markdown,
                cols::markdown_disp,
                interaction_name(cols::markdown, cols::markdown_disp)};
    }
    throw ConfigError("unknown power form");
  }
};

struct MispricingResults {
  RegressionResult pooled;
  RegressionResult short_term;
  RegressionResult medium_term;
  RegressionResult long_term;
};

// Bucket code for a residual maturity: 0/1/2 per curve::Bucket, -1 when the
// bond is below the shortest bucket's lower edge and excluded from analysis.
inline std::int64_t bucket_code(double maturity_years) {
  const auto b = curve::assign_bucket(maturity_years);
  return b ? static_cast<std::int64_t>(*b) : -1;
}

// Derives the categorical bucket column from residual maturity.
inline void add_bucket_column(Frame& frame) {
  const auto& m = frame.num(cols::residual_maturity);
  std::vector<std::int64_t> code(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) code[i] = bucket_code(m[i]);
  frame.add_cat(cols::bucket, std::move(code));
}

inline MispricingResults run_mispricing(const MispricingPreset& preset,
                                        const Frame& data,
                                        const GivColumns& giv = {}) {
  detail::require_instruments(preset.endogenous, giv);

  Frame frame = data;
  if (!frame.has_cat(cols::bucket)) add_bucket_column(frame);

  std::vector<std::string> regressors;
  if (preset.form == PowerForm::interaction) {
    add_interaction(frame, cols::markup, cols::markup_disp);
    add_interaction(frame, cols::markdown, cols::markdown_disp);
  }
  for (auto& t : preset.power_terms()) regressors.push_back(t);
  const std::array<const char*, 4> dfs = {cols::df_tran_repo,
                                          cols::df_per_repo, cols::df_tran_rev,
                                          cols::df_per_rev};
  for (auto* f : dfs) regressors.emplace_back(f);
  if (preset.stress_terms) {
    regressors.push_back(preset.stress_column);
    for (auto* f : dfs)
      regressors.push_back(add_interaction(frame, preset.stress_column, f));
  }
  regressors.insert(regressors.end(), preset.controls.begin(),
                    preset.controls.end());

  RegressionSpec base;
  base.dependent = cols::abs_deviation;
  base.regressors = regressors;
  base.endogenous = preset.endogenous;
  base.instruments =
      preset.endogenous.empty() ? std::vector<std::string>{} : giv.names;
  base.absorb.push_back(FactorSpec{{cols::bond, cols::month}});
  if (preset.year_fe) base.absorb.push_back(FactorSpec{{cols::year}});
  base.vcov = VcovSpec::dk(cols::date, preset.dk_lag);
  base.weak_f_threshold = preset.weak_f_threshold;
  base.drop_collinear = preset.drop_collinear;

  const auto& bucket = frame.cat(cols::bucket);
  auto subset = [&](std::int64_t want) {
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < bucket.size(); ++i)
      if (want < 0 ? bucket[i] >= 0 : bucket[i] == want) keep.push_back(i);
    return keep;
  };

  auto run_or_skip = [&](const RegressionSpec& spec,
                         const std::vector<std::size_t>& keep,
                         const std::string& label) {
    if (keep.empty()) {
      RegressionResult empty;
      empty.warnings.push_back("no observations in " + label +
                               " maturity bucket; regression skipped");
      return empty;
    }
    auto res = tsls(spec, frame.select(keep));
    detail::note_dropped(res);
    return res;
  };

  MispricingResults out;
  {
    RegressionSpec pooled = base;
    if (preset.bucket_fe) pooled.absorb.push_back(FactorSpec{{cols::bucket}});
    out.pooled = run_or_skip(pooled, subset(-1), "any");
  }
  out.short_term =
      run_or_skip(base, subset(0), curve::bucket_name(curve::Bucket::short_term));
  out.medium_term = run_or_skip(base, subset(1),
                                curve::bucket_name(curve::Bucket::medium_term));
  out.long_term =
      run_or_skip(base, subset(2), curve::bucket_name(curve::Bucket::long_term));
  return out;
}

// ---------------------------------------------------------------------------
// Daily noise regression: the market-wide noise index on aggregated power
// series and the network factors, with month effects and robust errors. The
// preset joins the named daily series on the dependent's dates and reports
// any misalignment explicitly.

using DailySeries = std::map<std::int64_t, double>;  // civil day -> value
using NamedSeries = std::vector<std::pair<std::string, DailySeries>>;

struct LiquidityPreset {
  // Regressor order; empty means all supplied series in their given order.
  std::vector<std::string> regressors;
  bool month_fe = true;
  VcovSpec vcov = VcovSpec::robust();
  bool drop_collinear = true;
};

inline RegressionResult run_liquidity(const LiquidityPreset& preset,
                                      const DailySeries& noise,
                                      const NamedSeries& power,
                                      const NamedSeries& factors) {
  if (noise.empty()) throw DataError("noise series is empty");

  NamedSeries columns = power;
  columns.insert(columns.end(), factors.begin(), factors.end());

  std::vector<std::string> order;
  if (preset.regressors.empty()) {
    for (const auto& [name, series] : columns) order.push_back(name);
  } else {
    order = preset.regressors;
  }

  auto find_series = [&](const std::string& name) -> const DailySeries& {
    for (const auto& [n, s] : columns)
      if (n == name) return s;
    throw ConfigError("unknown daily series '" + name + "'");
  };

  // Join on the dependent's dates; report gaps per series.
  std::string misalignment;
  for (const auto& name : order) {
    const auto& s = find_series(name);
    std::size_t missing = 0;
    std::int64_t first_missing = 0;
    for (const auto& [day, value] : noise) {
      (void)value;
      if (s.find(day) == s.end()) {
        if (missing == 0) first_missing = day;
        ++missing;
      }
    }
    if (missing > 0) {
      if (!misalignment.empty()) misalignment += "; ";
      misalignment += "series '" + name + "' missing " +
                      std::to_string(missing) + " of " +
                      std::to_string(noise.size()) + " dates (first " +
                      format_date(first_missing) + ")";
    }
  }
  if (!misalignment.empty())
    throw DataError("daily join failed: " + misalignment);

  Frame frame;
  std::vector<std::int64_t> days;
  std::vector<double> y;
  days.reserve(noise.size());
  y.reserve(noise.size());
  for (const auto& [day, value] : noise) {
    days.push_back(day);
    y.push_back(value);
  }
  frame.add_num(cols::noise, std::move(y));
  for (const auto& name : order) {
    const auto& s = find_series(name);
    std::vector<double> v(days.size());
    for (std::size_t i = 0; i < days.size(); ++i)
      v[i] = s.find(days[i])->second;
    frame.add_num(name, std::move(v));
  }
  add_calendar_keys(frame, days);

  RegressionSpec spec;
  spec.dependent = cols::noise;
  spec.regressors = order;
  if (preset.month_fe) spec.absorb.push_back(FactorSpec{{cols::month}});
  spec.vcov = preset.vcov;
  spec.drop_collinear = preset.drop_collinear;
  auto res = tsls(spec, frame);
  detail::note_dropped(res);
  return res;
}

}  // namespace repometrics::panelreg
