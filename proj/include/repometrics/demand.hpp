#pragma once

// Structural demand system: market shares with an outside option, the logit
// share map and its inversion, demand/supply coefficient estimation (plain or
// control-function), own/cross elasticities, Lerner wedges, and bond-level
// volume-weighted market-power summaries.
//
// Sign conventions: for repo (dealers lend, non-dealers demand funding) the
// structural rate coefficient is alpha = -b_rate and the own elasticity is
// eta = -alpha (1 - s) r < 0, markup = -1/eta. For reverse repo (dealers
// borrow, non-dealers supply funding) alpha = +b_rate and the own supply
// elasticity is nu = +alpha (1 - s) r > 0, markdown = 1/nu.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "features.hpp"
#include "panelreg.hpp"
#include "types.hpp"

namespace repometrics::demand {

enum class Side { demand, supply };

inline Side side_of(Segment seg) {
  return seg == Segment::repo ? Side::demand : Side::supply;
}

// ---------------------------------------------------------------------------
// Share panel.

struct ShareRow {
  std::int32_t date = 0;
  std::int32_t dealer = 0;
  double volume = 0.0;
  double share = 0.0;          // S_dt
  double outside_share = 0.0;  // S_0t (repeated per row for convenience)
  double market_size = 0.0;    // M_t
  double rate = 0.0;           // volume-weighted spread + reference level
  double maturity_days = 0.0;  // volume-weighted
  double collateral = 0.0;     // summed collateral_mv
  double frequency = 0.0;      // mean dyad intensity, attached separately
  double log_odds = 0.0;       // filled by berry_invert
};

struct SharePanel {
  Segment segment = Segment::repo;
  double reference_rate = 1.0;
  std::vector<ShareRow> rows;  // sorted by (date, dealer)
};

struct MarketSizeRule {
  enum class Kind { series, multiple };
  Kind kind = Kind::multiple;
  double multiple = 2.0;                  // M_t = multiple * total volume
  std::map<std::int32_t, double> series;  // date -> M_t

  static MarketSizeRule times(double m) {
    MarketSizeRule r;
    r.kind = Kind::multiple;
    r.multiple = m;
    return r;
  }
  static MarketSizeRule from_series(std::map<std::int32_t, double> s) {
    MarketSizeRule r;
    r.kind = Kind::series;
    r.series = std::move(s);
    return r;
  }
};

inline SharePanel build_shares(const std::vector<Transaction>& records,
                               Segment segment, const MarketSizeRule& rule,
                               double reference_rate = 1.0) {
  struct Acc {
    double vol = 0, wrate = 0, wmat = 0, coll = 0;
  };
  std::map<std::pair<std::int32_t, std::int32_t>, Acc> cells;
  std::map<std::int32_t, double> day_total;
  for (const auto& t : records) {
    if (t.segment != segment) continue;
    auto& a = cells[{t.date, t.dealer}];
    a.vol += t.volume;
    a.wrate += t.volume * t.rate_spread;
    a.wmat += t.volume * static_cast<double>(t.maturity_days);
    a.coll += t.collateral_mv;
    day_total[t.date] += t.volume;
  }
  if (cells.empty())
    throw DataError("build_shares: no transactions in segment " +
                    std::string(segment_name(segment)));

  SharePanel panel;
  panel.segment = segment;
  panel.reference_rate = reference_rate;
  for (const auto& [key, a] : cells) {
    const auto [date, dealer] = key;
    double m_t;
    if (rule.kind == MarketSizeRule::Kind::multiple) {
      m_t = rule.multiple * day_total.at(date);
    } else {
      auto it = rule.series.find(date);
      if (it == rule.series.end())
        throw ConfigError("market size series missing date index " +
                          std::to_string(date));
      m_t = it->second;
    }
    const double total = day_total.at(date);
    if (m_t < total)
      throw ConfigError(
          "market size must cover observed trade: M_t = " +
          format_double(m_t) + " < total volume " + format_double(total) +
          " at date index " + std::to_string(date));
    ShareRow row;
    row.date = date;
    row.dealer = dealer;
    row.volume = a.vol;
    row.share = a.vol / m_t;
    row.outside_share = 1.0 - total / m_t;
    row.market_size = m_t;
    row.rate = a.wrate / a.vol + reference_rate;
    row.maturity_days = a.wmat / a.vol;
    row.collateral = a.coll;
    panel.rows.push_back(row);
  }
  return panel;
}

// Dealer-level trading frequency: mean dyad intensity across the dealer's
// active dyads at (date, segment).
inline void attach_frequency(SharePanel& panel,
                             const features::RelationshipPanel& rel) {
  struct Acc {
    double sum = 0;
    int n = 0;
  };
  std::map<std::pair<std::int32_t, std::int32_t>, Acc> acc;
  for (const auto& row : rel.rows) {
    if (row.segment != panel.segment) continue;
    auto& a = acc[{row.date, row.dealer}];
    a.sum += row.intensity;
    a.n += 1;
  }
  for (auto& row : panel.rows) {
    auto it = acc.find({row.date, row.dealer});
    row.frequency = it == acc.end()
                        ? std::numeric_limits<double>::quiet_NaN()
                        : it->second.sum / it->second.n;
  }
}

// ---------------------------------------------------------------------------
// Logit share map and Berry inversion.

// Choice probabilities given mean utilities; the outside option has utility 0.
inline std::vector<double> choice_probabilities(
    const std::vector<double>& mean_utility) {
  double mx = 0.0;
  for (double v : mean_utility) mx = std::max(mx, v);
  double denom = std::exp(-mx);
  std::vector<double> out(mean_utility.size());
  for (std::size_t i = 0; i < mean_utility.size(); ++i) {
    out[i] = std::exp(mean_utility[i] - mx);
    denom += out[i];
  }
  for (auto& v : out) v /= denom;
  return out;
}

// Fills log_odds = ln S_dt - ln S_0t on every row.
inline void berry_invert(SharePanel& panel) {
  for (auto& row : panel.rows) {
    if (!(row.share > 0.0) || !(row.share < 1.0) || !(row.outside_share > 0.0))
      throw DataError("berry_invert: non-interior share for dealer " +
                      std::to_string(row.dealer) + " at date index " +
                      std::to_string(row.date) + " (share = " +
                      format_double(row.share) + ", outside = " +
                      format_double(row.outside_share) + ")");
    row.log_odds = std::log(row.share) - std::log(row.outside_share);
  }
}

// ---------------------------------------------------------------------------
// Estimation.

enum class Method { plain, control_function };

struct EstimateConfig {
  Method method = Method::plain;
  // Right-hand-side slopes; built-in columns are rate, frequency,
  // maturity_days, collateral; extra names resolve through `extra_series`.
  std::vector<std::string> regressors = {"rate", "frequency", "maturity_days",
                                         "collateral"};
  // Endogenous regressors corrected by the control function.
  std::vector<std::string> endogenous = {"rate", "frequency", "maturity_days"};
  // Excluded-instrument columns, supplied through `extra_series`.
  std::vector<std::string> instruments;
  enum class TimeFE { none, month, day };
  TimeFE time_fe = TimeFE::month;
  bool dealer_fe = true;
  // Share of largest families excluded upstream; recorded for provenance.
  double excluded_top_share = 0.05;
};

struct DemandEstimates {
  Segment segment = Segment::repo;
  Side side = Side::demand;
  double alpha = 0.0;  // structural rate coefficient (sign-adjusted per side)
  double rate_coef = 0.0;
  double gamma = 0.0;  // frequency coefficient
  double beta_maturity = 0.0;
  double beta_collateral = 0.0;
  std::vector<std::string> terms;
  Eigen::VectorXd coef;
  Eigen::MatrixXd vcov;
  std::vector<double> first_stage_F;
  std::vector<std::string> warnings;
  std::vector<std::pair<std::int32_t, double>> dealer_fe;  // (dealer, estimate)
  std::size_t n_obs = 0;

  double coef_of(const std::string& term) const {
    for (std::size_t i = 0; i < terms.size(); ++i)
      if (terms[i] == term) return coef(static_cast<Eigen::Index>(i));
    throw ConfigError("no term '" + term + "' in demand estimates");
  }
  double se_of(const std::string& term) const {
    for (std::size_t i = 0; i < terms.size(); ++i)
      if (terms[i] == term)
        return std::sqrt(vcov(static_cast<Eigen::Index>(i),
                              static_cast<Eigen::Index>(i)));
    throw ConfigError("no term '" + term + "' in demand estimates");
  }
};

// The dealer-level "difference IV" transform: (x_dt - mean_t) / sd_t with the
// moments taken across dealers at each date (population sd). A date with no
// cross-sectional variation maps to 0.
inline std::vector<double> difference_iv(
    const std::vector<std::int32_t>& dates, const std::vector<double>& x) {
  if (dates.size() != x.size())
    throw ConfigError("difference_iv: length mismatch");
  std::map<std::int32_t, std::pair<double, double>> mom;  // sum, sumsq
  std::map<std::int32_t, int> cnt;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mom[dates[i]].first += x[i];
    mom[dates[i]].second += x[i] * x[i];
    cnt[dates[i]] += 1;
  }
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto& m = mom[dates[i]];
    const double n = cnt[dates[i]];
    const double mean = m.first / n;
    const double var = m.second / n - mean * mean;
    const double sd = var > 0 ? std::sqrt(var) : 0.0;
    out[i] = sd > 0 ? (x[i] - mean) / sd : 0.0;
  }
  return out;
}

// `extra_series` carries instrument columns and any extra regressors, keyed by
// name, aligned with panel.rows. The month key for the time FE needs the
// calendar to map date indices to civil months.
inline DemandEstimates estimate_demand(
    const SharePanel& panel, const Calendar& calendar,
    const EstimateConfig& config,
    const std::map<std::string, std::vector<double>>& extra_series = {}) {
  const std::size_t n = panel.rows.size();
  if (n == 0) throw DataError("estimate_demand: empty share panel");

  panelreg::Frame frame;
  std::vector<double> y(n), rate(n), freq(n), mat(n), coll(n);
  std::vector<std::int64_t> dealer(n), month(n), day(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& row = panel.rows[i];
    y[i] = row.log_odds;
    rate[i] = row.rate;
    freq[i] = row.frequency;
    mat[i] = row.maturity_days;
    coll[i] = row.collateral;
    dealer[i] = row.dealer;
    month[i] = month_key(calendar.day(row.date));
    day[i] = row.date;
  }
  frame.add_num("log_odds", std::move(y));
  frame.add_num("rate", std::move(rate));
  frame.add_num("frequency", std::move(freq));
  frame.add_num("maturity_days", std::move(mat));
  frame.add_num("collateral", std::move(coll));
  frame.add_cat("dealer", std::move(dealer));
  frame.add_cat("month", std::move(month));
  frame.add_cat("day", std::move(day));
  for (const auto& [name, series] : extra_series) {
    if (series.size() != n)
      throw ConfigError("extra series '" + name + "' length mismatch");
    frame.add_num(name, series);
  }

  panelreg::RegressionSpec spec;
  spec.dependent = "log_odds";
  spec.regressors = config.regressors;
  if (config.dealer_fe) spec.absorb.push_back(panelreg::FactorSpec{{"dealer"}});
  if (config.time_fe == EstimateConfig::TimeFE::month)
    spec.absorb.push_back(panelreg::FactorSpec{{"month"}});
  else if (config.time_fe == EstimateConfig::TimeFE::day)
    spec.absorb.push_back(panelreg::FactorSpec{{"day"}});
  spec.vcov = panelreg::VcovSpec::robust();

  panelreg::RegressionResult fit;
  if (config.method == Method::control_function) {
    if (config.instruments.size() < config.endogenous.size())
      throw ConfigError(
          "control function needs at least as many instruments as "
          "endogenous regressors");
    for (const auto& endo : config.endogenous)
      if (std::find(spec.regressors.begin(), spec.regressors.end(), endo) ==
          spec.regressors.end())
        throw ConfigError("endogenous regressor '" + endo +
                          "' is not in the regressor list");
    // First stages: each endogenous regressor on instruments + exogenous;
    // residuals join the outcome equation as controls.
    panelreg::RegressionSpec base = spec;
    for (const auto& endo : config.endogenous) {
      panelreg::RegressionSpec fs = base;
      fs.dependent = endo;
      fs.regressors.clear();
      for (const auto& r : base.regressors)
        if (r != endo &&
            std::find(config.endogenous.begin(), config.endogenous.end(), r) ==
                config.endogenous.end())
          fs.regressors.push_back(r);
      for (const auto& z : config.instruments) fs.regressors.push_back(z);
      fs.vcov = panelreg::VcovSpec::none();
      auto fsr = panelreg::ols(fs, frame);
      // Residual of the first stage, aligned with frame rows. Rows the first
      // stage dropped (missing values) stay NaN and fall out downstream.
      std::vector<double> resid(frame.rows(),
                                std::numeric_limits<double>::quiet_NaN());
      // Rebuild fitted values row by row.
      for (std::size_t i = 0; i < frame.rows(); ++i) {
        bool ok = std::isfinite(frame.num(endo)[i]);
        double fitted = 0.0;
        for (std::size_t j = 0; j < fs.regressors.size(); ++j) {
          const double v = frame.num(fs.regressors[j])[i];
          if (!std::isfinite(v)) {
            ok = false;
            break;
          }
          fitted += fsr.coef(static_cast<Eigen::Index>(j)) * v;
        }
        if (!ok) continue;
        resid[i] = frame.num(endo)[i] - fitted;
      }
      // The absorbed FE part of the first stage is not in `fitted`; demean
      // the residual within the same factors so it matches the projection.
      if (!fs.absorb.empty()) {
        std::vector<std::size_t> ok_rows;
        for (std::size_t i = 0; i < frame.rows(); ++i)
          if (std::isfinite(resid[i])) ok_rows.push_back(i);
        Eigen::MatrixXd sub(static_cast<Eigen::Index>(ok_rows.size()), 1);
        for (std::size_t i = 0; i < ok_rows.size(); ++i)
          sub(static_cast<Eigen::Index>(i), 0) = resid[ok_rows[i]];
        panelreg::Frame subframe = frame.select(ok_rows);
        std::vector<std::vector<std::int64_t>> factors;
        for (const auto& fspec : fs.absorb)
          factors.push_back(panelreg::combine_factors(subframe, fspec));
        panelreg::absorb_fe(sub, factors);
        for (std::size_t i = 0; i < ok_rows.size(); ++i)
          resid[ok_rows[i]] = sub(static_cast<Eigen::Index>(i), 0);
      }
      frame.add_num("cf_resid_" + endo, resid);
      spec.regressors.push_back("cf_resid_" + endo);
    }
    fit = panelreg::ols(spec, frame);
    // First-stage strength diagnostics via a parallel 2SLS run.
    panelreg::RegressionSpec diag = base;
    diag.endogenous = config.endogenous;
    diag.instruments = config.instruments;
    auto dres = panelreg::tsls(diag, frame);
    fit.first_stage_F = dres.first_stage_F;
    for (const auto& w : dres.warnings) fit.warnings.push_back(w);
  } else {
    fit = panelreg::ols(spec, frame);
  }

  DemandEstimates out;
  out.segment = panel.segment;
  out.side = side_of(panel.segment);
  out.terms = fit.terms;
  out.coef = fit.coef;
  out.vcov = fit.vcov;
  out.first_stage_F = fit.first_stage_F;
  out.warnings = fit.warnings;
  out.n_obs = fit.n_obs;
  auto pick = [&](const std::string& name) {
    auto idx = fit.term_index(name);
    return idx ? fit.coef(static_cast<Eigen::Index>(*idx)) : 0.0;
  };
  auto rate_idx = fit.term_index("rate");
  if (!rate_idx)
    throw ConfigError("demand estimation requires a 'rate' regressor");
  out.rate_coef = fit.coef(static_cast<Eigen::Index>(*rate_idx));
  out.alpha = out.side == Side::demand ? -out.rate_coef : out.rate_coef;
  out.gamma = pick("frequency");
  out.beta_maturity = pick("maturity_days");
  out.beta_collateral = pick("collateral");

  // Dealer FE estimates: group means of (y - X beta) per dealer after
  // netting the other absorbed dimensions' contribution via residual means.
  if (config.dealer_fe) {
    std::map<std::int32_t, std::pair<double, int>> means;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& row = panel.rows[i];
      double fitted = 0.0;
      bool ok = true;
      for (std::size_t j = 0; j < spec.regressors.size(); ++j) {
        const double v = frame.num(spec.regressors[j])[i];
        if (!std::isfinite(v)) {
          ok = false;
          break;
        }
        fitted += fit.coef(static_cast<Eigen::Index>(j)) * v;
      }
      if (!ok || !std::isfinite(row.log_odds)) continue;
      auto& m = means[row.dealer];
      m.first += row.log_odds - fitted;
      m.second += 1;
    }
    for (const auto& [d, m] : means)
      out.dealer_fe.emplace_back(d, m.first / m.second);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elasticities and Lerner wedges.

inline double own_elasticity(double alpha, double share, double rate,
                             Side side) {
  const double mag = alpha * (1.0 - share) * rate;
  return side == Side::demand ? -mag : mag;
}

// Cross elasticity of dealer d's share with respect to dealer k's rate.
inline double cross_elasticity(double alpha, double share_k, double rate_k,
                               Side side) {
  const double mag = alpha * share_k * rate_k;
  return side == Side::demand ? mag : -mag;
}

inline double lerner(double elasticity, Side side) {
  if (side == Side::demand) {
    if (!(elasticity < 0.0))
      throw NumericalError(
          "sign violation: demand elasticity must be negative, got " +
          format_double(elasticity));
    return -1.0 / elasticity;
  }
  if (!(elasticity > 0.0))
    throw NumericalError(
        "sign violation: supply elasticity must be positive, got " +
        format_double(elasticity));
  return 1.0 / elasticity;
}

struct PowerRow {
  std::int32_t date = 0;
  std::int32_t dealer = 0;
  Segment segment = Segment::repo;
  double share = 0.0;
  double rate = 0.0;
  double elasticity = 0.0;
  double lerner = 0.0;  // markup (repo) or markdown (reverse)
};

inline std::vector<PowerRow> build_market_power(const SharePanel& panel,
                                                double alpha) {
  const Side side = side_of(panel.segment);
  std::vector<PowerRow> out;
  out.reserve(panel.rows.size());
  for (const auto& row : panel.rows) {
    PowerRow p;
    p.date = row.date;
    p.dealer = row.dealer;
    p.segment = panel.segment;
    p.share = row.share;
    p.rate = row.rate;
    p.elasticity = own_elasticity(alpha, row.share, row.rate, side);
    p.lerner = lerner(p.elasticity, side);
    out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bond-level weighted market power. Weights are the dealer's volume in the
// bond's trades at (date, segment).

struct BondPowerRow {
  std::int32_t date = 0;
  std::int32_t isin = 0;
  Segment segment = Segment::repo;
  double mean = 0.0;
  double dispersion = 0.0;  // volume-weighted standard deviation
  double volume = 0.0;
};

inline std::vector<BondPowerRow> bond_weighted_power(
    const std::vector<PowerRow>& power,
    const std::vector<Transaction>& records, Segment segment) {
  std::map<std::pair<std::int32_t, std::int32_t>, double> lerner_of;
  for (const auto& p : power)
    if (p.segment == segment) lerner_of[{p.date, p.dealer}] = p.lerner;

  struct Acc {
    double w = 0, wx = 0, wxx = 0;
  };
  std::map<std::pair<std::int32_t, std::int32_t>, Acc> cells;
  for (const auto& t : records) {
    if (t.segment != segment) continue;
    auto it = lerner_of.find({t.date, t.dealer});
    if (it == lerner_of.end()) continue;
    auto& a = cells[{t.date, t.isin}];
    a.w += t.volume;
    a.wx += t.volume * it->second;
    a.wxx += t.volume * it->second * it->second;
  }
  std::vector<BondPowerRow> out;
  for (const auto& [key, a] : cells) {
    if (a.w <= 0) continue;
    BondPowerRow row;
    row.date = key.first;
    row.isin = key.second;
    row.segment = segment;
    row.mean = a.wx / a.w;
    const double var = std::max(0.0, a.wxx / a.w - row.mean * row.mean);
    row.dispersion = std::sqrt(var);
    row.volume = a.w;
    out.push_back(row);
  }
  return out;
}

// Drops the largest families by total volume before estimation; returns the
// retained records. `top_share` = 0.05 removes the top 5%.
inline std::vector<Transaction> exclude_top_families(
    const std::vector<Transaction>& records, double top_share) {
  if (top_share <= 0.0) return records;
  std::map<std::int32_t, double> fam_vol;
  for (const auto& t : records) fam_vol[t.family] += t.volume;
  std::vector<std::pair<double, std::int32_t>> ranked;
  for (const auto& [fam, v] : fam_vol) ranked.emplace_back(v, fam);
  std::sort(ranked.rbegin(), ranked.rend());
  const auto n_drop = static_cast<std::size_t>(
      std::floor(top_share * static_cast<double>(ranked.size())));
  std::set<std::int32_t> dropped;
  for (std::size_t i = 0; i < n_drop; ++i) dropped.insert(ranked[i].second);
  std::vector<Transaction> out;
  out.reserve(records.size());
  for (const auto& t : records)
    if (dropped.count(t.family) == 0) out.push_back(t);
  return out;
}

}  // namespace repometrics::demand
