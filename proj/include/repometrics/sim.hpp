#pragma once

// Synthetic two-segment collateralized funding market with fully known ground
// truth. Dealers post rates as Nash equilibria of a logit choice model, so
// wedges between rates and marginal costs/values are exact by construction; a
// latent vector autoregression with a dealer "hub" block drives volumes so
// network transmission has an analytic benchmark; bond yields deviate from a
// smooth base curve by a planted linear model so downstream regressions have
// known coefficients.
//
// Everything is drawn from named counter-based substreams of one seed:
// identical (config, seed) reproduces identical output bytes.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "csv.hpp"
#include "rng.hpp"
#include "types.hpp"

namespace repometrics::sim {

// ---------------------------------------------------------------------------
// Configuration.

struct DemandParams {
  // Rate sensitivity of choice utilities (both segments). Zero switches off
  // pricing power entirely: rates equal costs and all wedges are zero.
  double alpha = 5.0;
  // Taste for the strictly lagged relationship-frequency metric.
  double gamma = 0.05;
  // Loadings on static dealer characteristics (may be empty). Characteristics
  // are drawn once per run; estimation-side dealer effects absorb them.
  std::vector<double> beta = {};
  // Utility advantage of the hub dealers over the rest (total gap). Together
  // with the hub dealers' cost/value edge this calibrates the top-5
  // cumulative volume share to straddle the selection coverage.
  double core_edge = 0.35;
  // Small idiosyncratic static attraction jitter.
  double attraction_sd = 0.05;
  // Day-level dealer utility shock: loading on the latent dealer state plus
  // pure noise, with the combined shock clamped at shock_bound so market
  // shares stay moderate and posted spreads stay inside their support.
  double state_load = 0.45;
  double util_noise_sd = 0.35;
  double shock_bound = 1.8;
  // Market-wide day-level utility shock.
  double common_shock_sd = 0.08;
  // Inside/outside odds at the calibration point; the outside option keeps
  // roughly 1/(1+odds) of the market.
  double outside_odds = 1.857;
};

struct CostParams {
  // Dealer marginal funding-cost spreads (pp vs the reference rate) where
  // dealers lend cash; evenly spaced over [lo, hi], cheapest first.
  double base_repo_lo = -0.375, base_repo_hi = -0.325;
  // Dealer marginal value of funds where dealers borrow; assigned in the
  // opposite order (the low-cost dealers also redeploy at the highest
  // value), so the same dealers dominate both segments.
  double base_rev_lo = 0.275, base_rev_hi = 0.325;
  // Shared (cross-segment) dealer funding factor: the exclusion-restriction
  // channel that makes the other segment's rate a valid instrument.
  double factor_sd = 0.05;
  double factor_rho = 0.6;
  // Loading of the segment's own (bounded) utility shock in costs/values: the
  // planted simultaneity that biases uninstrumented rate coefficients.
  double endo_load = 0.12;
};

struct VolumeParams {
  double median = 3.12e7;     // median family daily funding need, GBP
  double log_sd = 0.6;        // idiosyncratic dispersion of log needs
  double sector_load = 0.45;  // loading of the latent sector state in needs
  // Every dealer has one small always-on house family per segment, which
  // keeps every dealer-day share interior.
  double captive_scale = 0.05;
  double captive_log_sd = 0.3;
  // Volume share of overnight trades per segment (rest is term).
  double overnight_repo = 0.3159, overnight_rev = 0.4661;
  int term_lo = 5, term_hi = 60;  // term-trade maturity range, days
  double collateral_haircut = 0.02;
};

// Latent VAR(1) for the (dealers + sectors) state vector. The first n_core
// dealers form a hub: every other variable loads on their lagged states, so
// a known share of system variance transmits from the large dealers. The
// cross blocks are modulated sinusoidally over the sample, with the borrowing
// segment's path phase-shifted so the two segments' transmission differs.
struct VarSpec {
  double own = 0.35;
  int n_core = 5;
  double core_in = 0.10;           // per-core-column loading of every row
  double dealer_cross = 0.015;     // row mass spread across non-core dealers
  double sector_to_dealer = 0.05;  // row mass from sector states into dealers
  double dealer_to_sector = 0.05;
  double sector_cross = 0.03;
  double cycle_amplitude = 0.06;  // relative modulation of the cross blocks
  double rev_phase = 0.25;        // cycle phase shift, borrowing segment
  double dealer_sd = 0.90;        // innovation standard deviations
  double sector_sd = 0.85;
};

struct CurveSpec {
  // Smooth base curve: level + slope * (1-e^{-m/tau})/(m/tau) +
  // curvature * e^{-m/tau}, with a slowly moving level factor.
  double level = 2.5, slope = -1.2, curvature = 0.8, tau = 5.0;
  double level_sd = 0.10, level_rho = 0.98;
  // Pricing-deviation model: intercept plus planted effect terms plus
  // loadings on observable bond characteristics plus bounded AR(1) noise.
  double a0 = 0.2;
  double b_bidask = 0.3, b_hilo = 0.2, b_duration = 0.01, b_maturity = 0.005;
  double b_reserves = -0.05, b_stress = 0.1;
  double noise_sd = 0.05, noise_rho = 0.5;
};

struct EffectParams {
  double a1_markup = 0.5;    // lending-segment wedge level -> |deviation|
  double a2_markdown = 0.4;  // borrowing-segment wedge level
  double a3_df_repo = 0.4;   // lending-segment network factor (band total)
  double a4_df_rev = 0.3;    // borrowing-segment network factor
};

struct SimConfig {
  int n_dealers = 15;
  int n_sectors = 7;
  int n_families = 220;  // per segment, includes one captive per dealer
  int n_days = 250;
  int n_bonds = 30;
  std::uint64_t seed = 42;
  std::int64_t start_date = civil_to_days(2021, 1, 4);
  double reference_rate = 1.0;                 // level added to spreads, pp
  double spread_lo = -0.95, spread_hi = 0.77;  // admissible spread support
  DemandParams demand;
  CostParams cost;
  VolumeParams volume;
  VarSpec var_spec;
  CurveSpec curve_spec;
  EffectParams effects;
  double coverage = 0.4;  // cumulative-volume coverage for dealer selection
  int fevd_grid = 100;    // frequency grid for the analytic decomposition
  double period_cut = 20.0;  // business-day cycle cutoff between bands
  int fevd_knots = 25;  // points where the factor path is evaluated exactly
                        // (linearly interpolated in between); 0 = every day
  int intensity_window = 20;
};

// ---------------------------------------------------------------------------
// Latent system coefficients.

inline Eigen::MatrixXd var_coefficients(const VarSpec& v, int n_dealers,
                                        int n_sectors, double frac,
                                        double phase) {
  const int nd = n_dealers, ns = n_sectors, n = nd + ns;
  const int nc = std::min(v.n_core, nd);
  const double scale =
      1.0 + v.cycle_amplitude * std::sin(2.0 * M_PI * (frac + phase));
  Eigen::MatrixXd phi = Eigen::MatrixXd::Zero(n, n);
  const int n_noncore = nd - nc;
  const double dd =
      n_noncore > 1 ? v.dealer_cross * scale / (n_noncore - 1) : 0.0;
  const double sd = ns > 0 ? v.sector_to_dealer * scale / ns : 0.0;
  const double ds = nd > 0 ? v.dealer_to_sector * scale / nd : 0.0;
  const double ss = ns > 1 ? v.sector_cross * scale / (ns - 1) : 0.0;
  const double hub = v.core_in * scale;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) {
        phi(i, j) = v.own;
      } else if (j < nc) {
        phi(i, j) = hub;  // everyone loads on the hub dealers
      } else if (i < nd) {
        phi(i, j) = j < nd ? (i >= nc ? dd : 0.0) : sd;
      } else {
        phi(i, j) = j < nd ? ds : ss;
      }
    }
  }
  return phi;
}

inline Eigen::VectorXd var_innovation_sd(const VarSpec& v, int n_dealers,
                                         int n_sectors) {
  Eigen::VectorXd sd(n_dealers + n_sectors);
  sd.head(n_dealers).setConstant(v.dealer_sd);
  sd.tail(n_sectors).setConstant(v.sector_sd);
  return sd;
}

inline double spectral_radius(const Eigen::MatrixXd& phi) {
  return Eigen::EigenSolver<Eigen::MatrixXd>(phi, false)
      .eigenvalues()
      .cwiseAbs()
      .maxCoeff();
}

// ---------------------------------------------------------------------------
// Analytic band decomposition of the true system — the estimation-free
// benchmark for the spectral-network pipeline. Deliberately a separate
// implementation (direct complex arithmetic over the frequency grid) from
// the estimation-side code so the two routes can cross-validate.

enum class Band { persistent, transitory, total };

namespace detail {

// Spectral power of the grid-truncated moving-average representation:
// power[j](r, k) = sigma_kk * |sum_h (phi^h e^{-i w_j h})|_{rk}^2.
inline std::vector<Eigen::MatrixXd> spectral_power(
    const Eigen::MatrixXd& phi, const Eigen::VectorXd& sigma_diag, int grid) {
  const auto n = phi.rows();
  std::vector<Eigen::MatrixXd> a(static_cast<std::size_t>(grid));
  a[0] = Eigen::MatrixXd::Identity(n, n);
  for (int h = 1; h < grid; ++h)
    a[static_cast<std::size_t>(h)] = phi * a[static_cast<std::size_t>(h - 1)];
  std::vector<Eigen::MatrixXd> power;
  power.reserve(static_cast<std::size_t>(grid));
  for (int j = 0; j < grid; ++j) {
    const double w = 2.0 * M_PI * j / grid;
    Eigen::MatrixXcd psi = Eigen::MatrixXcd::Zero(n, n);
    for (int h = 0; h < grid; ++h)
      psi += a[static_cast<std::size_t>(h)] *
             std::polar(1.0, -w * static_cast<double>(h));
    power.push_back(psi.cwiseAbs2() * sigma_diag.asDiagonal());
  }
  return power;
}

inline bool in_persistent_band(int j, int grid, double period_cut) {
  const double w = 2.0 * M_PI * j / grid;
  const double folded = std::min(w, 2.0 * M_PI - w);
  return folded < 2.0 * M_PI / period_cut;
}

}  // namespace detail

inline Eigen::MatrixXd analytic_band_fevd(const Eigen::MatrixXd& phi,
                                          const Eigen::VectorXd& sigma_diag,
                                          int grid, double period_cut,
                                          Band band) {
  const auto n = phi.rows();
  if (phi.cols() != n) throw ConfigError("coefficient matrix must be square");
  if (sigma_diag.size() != n)
    throw ConfigError("innovation-variance dimension mismatch");
  if (grid < 4) throw ConfigError("frequency grid too small");
  if (!(period_cut > 2.0))
    throw ConfigError("band period cutoff must exceed 2 observations");
  if (spectral_radius(phi) >= 1.0)
    throw ConfigError("coefficient matrix is unstable");

  const auto power = detail::spectral_power(phi, sigma_diag, grid);
  Eigen::MatrixXd num = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd den = Eigen::VectorXd::Zero(n);
  for (int j = 0; j < grid; ++j) {
    den += power[static_cast<std::size_t>(j)].rowwise().sum();
    const bool pers = detail::in_persistent_band(j, grid, period_cut);
    if (band == Band::total || (band == Band::persistent && pers) ||
        (band == Band::transitory && !pers))
      num += power[static_cast<std::size_t>(j)];
  }
  Eigen::MatrixXd theta(n, n);
  for (Eigen::Index r = 0; r < n; ++r) {
    if (den(r) > 0.0)
      theta.row(r) = num.row(r) / den(r);
    else
      theta.row(r).setConstant(std::numeric_limits<double>::quiet_NaN());
  }
  return theta;
}

// Cross-dealer transmission share: variance mass dealer rows receive from
// selected dealer columns other than themselves, relative to total system
// mass (each row carries unit mass across the full grid, so the total is
// the system dimension).
inline double analytic_global_factor(const Eigen::MatrixXd& theta,
                                     int n_dealers,
                                     const std::vector<int>& selected) {
  if (selected.empty()) return 0.0;
  double cross = 0.0;
  for (int j = 0; j < n_dealers; ++j)
    for (int k : selected)
      if (j != k) cross += theta(j, k);
  return cross / static_cast<double>(theta.rows());
}

struct FactorPoint {
  double transitory = 0.0;
  double persistent = 0.0;
};

// Both bands' global factors in one spectral pass (the per-day truth path
// uses this; it equals analytic_global_factor(analytic_band_fevd(...))).
inline FactorPoint analytic_factor_point(const Eigen::MatrixXd& phi,
                                         const Eigen::VectorXd& sigma_diag,
                                         int grid, double period_cut,
                                         int n_dealers,
                                         const std::vector<int>& selected) {
  const auto n = phi.rows();
  const auto power = detail::spectral_power(phi, sigma_diag, grid);
  Eigen::MatrixXd num_tr = Eigen::MatrixXd::Zero(n, n);
  Eigen::MatrixXd num_pe = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd den = Eigen::VectorXd::Zero(n);
  for (int j = 0; j < grid; ++j) {
    den += power[static_cast<std::size_t>(j)].rowwise().sum();
    if (detail::in_persistent_band(j, grid, period_cut))
      num_pe += power[static_cast<std::size_t>(j)];
    else
      num_tr += power[static_cast<std::size_t>(j)];
  }
  FactorPoint out;
  if (selected.empty()) return out;
  for (int j = 0; j < n_dealers; ++j) {
    if (!(den(j) > 0.0)) continue;
    for (int k : selected) {
      if (j == k) continue;
      out.transitory += num_tr(j, k) / den(j);
      out.persistent += num_pe(j, k) / den(j);
    }
  }
  out.transitory /= static_cast<double>(n);
  out.persistent /= static_cast<double>(n);
  return out;
}

// ---------------------------------------------------------------------------
// Ground truth.

struct PowerTruth {
  std::int32_t date = 0;
  std::int32_t dealer = 0;
  double rate = 0.0;        // level (spread + reference), pp
  double cost = 0.0;        // marginal cost (lending) or value (borrowing)
  double share = 0.0;       // model choice probability
  double elasticity = 0.0;  // signed own-rate elasticity at the equilibrium
  double wedge = 0.0;       // (rate-cost)/rate lending, (cost-rate)/rate
                            // borrowing; 0 when alpha == 0
};

struct FactorTruth {
  std::int32_t date = 0;
  double transitory = 0.0;
  double persistent = 0.0;
};

struct MispricingTruth {
  std::int32_t date = 0;
  std::int32_t isin = 0;
  double value = 0.0;  // signed deviation, pp
};

struct GroundTruth {
  // Full configuration echo: the true VAR coefficient paths and innovation
  // covariances are deterministic functions of it (see the accessors below).
  SimConfig config;
  // Per-segment wedge panel stored day-major, dealer-minor:
  // power[seg][t * n_dealers + d].
  std::array<std::vector<PowerTruth>, 2> power;
  std::array<std::map<std::int32_t, double>, 2> market_size;
  std::array<std::vector<double>, 2> outside_share;  // per date
  std::array<std::vector<FactorTruth>, 2> factors;   // per date
  std::array<std::vector<std::int32_t>, 2> selected_dealers;
  std::array<Eigen::MatrixXd, 2> latent_states;  // (nd+ns) x n_days
  std::vector<MispricingTruth> mispricing;       // date-major, bond-minor

  Eigen::MatrixXd coefficients_at(Segment seg, int t) const {
    const double phase = seg == Segment::repo ? 0.0 : config.var_spec.rev_phase;
    return var_coefficients(config.var_spec, config.n_dealers,
                            config.n_sectors,
                            static_cast<double>(t) / config.n_days, phase);
  }
  Eigen::VectorXd innovation_variance() const {
    return var_innovation_sd(config.var_spec, config.n_dealers,
                             config.n_sectors)
        .array()
        .square();
  }
  Eigen::MatrixXd band_fevd_at(Segment seg, int t, Band band) const {
    return analytic_band_fevd(coefficients_at(seg, t), innovation_variance(),
                              config.fevd_grid, config.period_cut, band);
  }
};

struct SimResult {
  Calendar calendar;
  std::vector<Transaction> transactions;
  std::vector<BondQuote> bonds;
  Registry dealers, nondealers, families, isins;
  std::vector<Sector> family_sector;
  // Market-level control series, one value per calendar day.
  std::vector<double> log_reserves, cb_share, stress_a, stress_b;
  GroundTruth truth;
};

// ---------------------------------------------------------------------------
// Internal helpers.

namespace detail {

inline double squash(double x, double bound) {
  return bound * std::tanh(x / bound);
}

// Softmax shares against an outside option of utility zero.
inline Eigen::VectorXd logit_shares(const Eigen::VectorXd& util) {
  const double mx = std::max(0.0, util.maxCoeff());
  const Eigen::ArrayXd e = (util.array() - mx).exp();
  return (e / (std::exp(-mx) + e.sum())).matrix();
}

struct Equilibrium {
  Eigen::VectorXd rate;   // spread vs reference, pp
  Eigen::VectorXd share;  // model choice probabilities
};

// Nash posted rates under logit demand. Where dealers lend, each dealer's
// first-order condition is rate = cost + 1/(alpha (1-share)); where they
// borrow, both the utility slope and the wedge sign flip. alpha == 0 means
// no pricing power: rates equal costs and shares ignore rates.
inline Equilibrium solve_equilibrium(Segment seg, double alpha,
                                     double reference,
                                     const Eigen::VectorXd& base_util,
                                     const Eigen::VectorXd& cost_spread) {
  Equilibrium eq;
  if (alpha == 0.0) {
    eq.rate = cost_spread;
    eq.share = logit_shares(base_util);
    return eq;
  }
  const double sign = seg == Segment::repo ? -1.0 : 1.0;
  const auto n = base_util.size();
  Eigen::VectorXd r = cost_spread;
  for (int it = 0; it < 500; ++it) {
    const Eigen::VectorXd util =
        base_util + sign * alpha * (r.array() + reference).matrix();
    const Eigen::VectorXd s = logit_shares(util);
    Eigen::VectorXd target(n);
    for (Eigen::Index d = 0; d < n; ++d)
      target(d) = cost_spread(d) - sign / (alpha * (1.0 - s(d)));
    const double step = (target - r).cwiseAbs().maxCoeff();
    r = 0.5 * (r + target);
    if (step < 1e-13) {
      eq.rate = r;
      eq.share = logit_shares(
          base_util + sign * alpha * (r.array() + reference).matrix());
      return eq;
    }
  }
  throw NumericalError("posted-rate equilibrium did not converge");
}

// Rolling strictly-lagged dyad activity tracker for one segment: per dealer,
// the mean count of in-window trading days across dyads active in the
// window. Matches the estimation-side relationship metric, which is built
// from days t-window..t-1 only.
class IntensityTracker {
 public:
  IntensityTracker(int n_dealers, int n_families, int window)
      : window_(window),
        n_families_(n_families),
        count_(static_cast<std::size_t>(n_dealers) *
                   static_cast<std::size_t>(n_families),
               0),
        dealer_sum_(static_cast<std::size_t>(n_dealers), 0),
        dealer_active_(static_cast<std::size_t>(n_dealers), 0) {}

  double mean_intensity(int dealer) const {
    const auto d = static_cast<std::size_t>(dealer);
    return dealer_active_[d] == 0
               ? 0.0
               : static_cast<double>(dealer_sum_[d]) /
                     static_cast<double>(dealer_active_[d]);
  }

  // Called after a day's trades are final; `pairs` lists (dealer, family)
  // dyads that traded that day (each at most once).
  void push_day(std::vector<std::pair<int, int>> pairs) {
    history_.push_back(std::move(pairs));
    for (const auto& [d, f] : history_.back()) bump(d, f, +1);
    if (static_cast<int>(history_.size()) > window_) {
      for (const auto& [d, f] : history_.front()) bump(d, f, -1);
      history_.erase(history_.begin());
    }
  }

 private:
  void bump(int dealer, int family, int delta) {
    const auto idx = static_cast<std::size_t>(dealer) *
                         static_cast<std::size_t>(n_families_) +
                     static_cast<std::size_t>(family);
    const auto d = static_cast<std::size_t>(dealer);
    const int before = count_[idx];
    count_[idx] += delta;
    dealer_sum_[d] += delta;
    if (before == 0 && delta > 0) dealer_active_[d] += 1;
    if (before == 1 && delta < 0) dealer_active_[d] -= 1;
  }

  int window_;
  int n_families_;
  std::vector<int> count_;
  std::vector<long long> dealer_sum_;
  std::vector<int> dealer_active_;
  std::vector<std::vector<std::pair<int, int>>> history_;
};

inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path);
  return os;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Validation and generation.

inline void validate(const SimConfig& cfg) {
  if (cfg.n_dealers < 2) throw ConfigError("need at least 2 dealers");
  if (cfg.n_sectors < 1 || cfg.n_sectors > kNumSectors)
    throw ConfigError("sector count must be in [1, " +
                      std::to_string(kNumSectors) + "]");
  if (cfg.var_spec.n_core < 1 || cfg.var_spec.n_core > cfg.n_dealers)
    throw ConfigError("hub size must be in [1, n_dealers]");
  if (cfg.n_families < 2 * cfg.n_dealers)
    throw ConfigError("need at least two families per dealer");
  if (cfg.n_days < 30) throw ConfigError("need at least 30 days");
  if (cfg.n_bonds < 12) throw ConfigError("need at least 12 bonds");
  if (cfg.demand.alpha < 0.0)
    throw ConfigError("rate sensitivity must be nonnegative");
  if (!(cfg.demand.outside_odds > 0.0))
    throw ConfigError("outside odds must be positive");
  if (!(cfg.demand.shock_bound > 0.0))
    throw ConfigError("utility shock bound must be positive");
  if (cfg.fevd_grid < 8) throw ConfigError("frequency grid too small");
  if (!(cfg.period_cut > 2.0))
    throw ConfigError("band period cutoff must exceed 2 observations");
  if (cfg.fevd_knots < 0) throw ConfigError("fevd_knots must be nonnegative");
  if (cfg.intensity_window < 1)
    throw ConfigError("intensity window must be positive");
  if (!(cfg.spread_lo < cfg.spread_hi))
    throw ConfigError("spread support must be a nonempty interval");
  // The latent system must be stable at every day of both segment paths.
  for (int seg = 0; seg < 2; ++seg) {
    const double phase = seg == 0 ? 0.0 : cfg.var_spec.rev_phase;
    for (int t = 0; t < cfg.n_days; ++t) {
      const auto phi =
          var_coefficients(cfg.var_spec, cfg.n_dealers, cfg.n_sectors,
                           static_cast<double>(t) / cfg.n_days, phase);
      const double rho = spectral_radius(phi);
      if (rho >= 1.0)
        throw ConfigError("latent system unstable at day " +
                          std::to_string(t) + " (spectral radius " +
                          format_double(rho) + ")");
    }
  }
}

inline SimResult simulate_market(const SimConfig& cfg) {
  validate(cfg);
  const int nd = cfg.n_dealers, ns = cfg.n_sectors, T = cfg.n_days;
  const int nf = cfg.n_families;
  const int nc = std::min(cfg.var_spec.n_core, nd);
  const double alpha = cfg.demand.alpha;

  SimResult out;
  out.calendar = Calendar::weekdays_from(cfg.start_date, T);
  out.truth.config = cfg;

  rng::Stream root(cfg.seed);

  // --- static entities -------------------------------------------------
  char buf[32];
  for (int d = 0; d < nd; ++d) {
    std::snprintf(buf, sizeof(buf), "D%02d", d + 1);
    out.dealers.intern(buf);
  }
  for (int f = 0; f < nf; ++f) {
    std::snprintf(buf, sizeof(buf), "F%04d", f + 1);
    out.families.intern(buf);
    std::snprintf(buf, sizeof(buf), "N%04d", f + 1);
    out.nondealers.intern(buf);
    out.family_sector.push_back(static_cast<Sector>(f % ns));
  }
  for (int b = 0; b < cfg.n_bonds; ++b) {
    std::snprintf(buf, sizeof(buf), "GILT%04d", b + 1);
    out.isins.intern(buf);
  }

  // Dealer cost/value bases (evenly spaced plus deterministic jitter),
  // static attraction (hub dealers get the demand edge so the
  // volume-selected set lines up with the latent hub), and optional
  // characteristics entering utilities through beta.
  auto base_stream = root.child("dealer_base");
  Eigen::VectorXd cost_base(nd), value_base(nd), attraction(nd);
  for (int d = 0; d < nd; ++d) {
    const double frac = nd > 1 ? static_cast<double>(d) / (nd - 1) : 0.5;
    const double jit = 0.01 * detail::squash(base_stream.normal(), 2.0);
    cost_base(d) = cfg.cost.base_repo_lo +
                   frac * (cfg.cost.base_repo_hi - cfg.cost.base_repo_lo) +
                   jit;
    value_base(d) = cfg.cost.base_rev_hi -
                    frac * (cfg.cost.base_rev_hi - cfg.cost.base_rev_lo) + jit;
    attraction(d) =
        cfg.demand.core_edge * (d < nc ? 0.5 : -0.5) +
        cfg.demand.attraction_sd * detail::squash(base_stream.normal(), 3.0);
  }
  if (!cfg.demand.beta.empty()) {
    auto chars_stream = root.child("dealer_chars");
    for (int d = 0; d < nd; ++d)
      for (double b_k : cfg.demand.beta)
        attraction(d) += b_k * detail::squash(chars_stream.normal(), 3.0);
  }

  // Utility level calibration so the outside option keeps a sensible share.
  const double s_typ =
      (cfg.demand.outside_odds / (1.0 + cfg.demand.outside_odds)) / nd;
  const double wedge_typ = alpha > 0.0 ? 1.0 / (alpha * (1.0 - s_typ)) : 0.0;
  const double level_base = std::log(cfg.demand.outside_odds / nd);
  const double cal_repo =
      level_base + alpha * (cfg.reference_rate + cost_base.mean() + wedge_typ);
  const double cal_rev =
      level_base - alpha * (cfg.reference_rate + value_base.mean() - wedge_typ);

  // Dealer-bond collateral affinities (static sampling weights).
  auto aff_stream = root.child("affinity");
  std::vector<std::vector<double>> bond_cum(static_cast<std::size_t>(nd));
  for (int d = 0; d < nd; ++d) {
    auto& cum = bond_cum[static_cast<std::size_t>(d)];
    cum.reserve(static_cast<std::size_t>(cfg.n_bonds));
    double acc = 0.0;
    for (int b = 0; b < cfg.n_bonds; ++b) {
      acc += std::exp(0.7 * detail::squash(aff_stream.normal(), 3.0));
      cum.push_back(acc);
    }
  }

  // --- latent paths ------------------------------------------------------
  const Eigen::VectorXd innov_sd = var_innovation_sd(cfg.var_spec, nd, ns);
  for (int seg = 0; seg < 2; ++seg) {
    auto s = root.child("latent").child(static_cast<std::uint64_t>(seg));
    const double phase = seg == 0 ? 0.0 : cfg.var_spec.rev_phase;
    Eigen::VectorXd x = Eigen::VectorXd::Zero(nd + ns);
    const auto phi0 = var_coefficients(cfg.var_spec, nd, ns, 0.0, phase);
    for (int burn = 0; burn < 50; ++burn) {
      Eigen::VectorXd eps(nd + ns);
      for (Eigen::Index i = 0; i < eps.size(); ++i)
        eps(i) = innov_sd(i) * s.normal();
      x = phi0 * x + eps;
    }
    auto& path = out.truth.latent_states[seg];
    path.resize(nd + ns, T);
    for (int t = 0; t < T; ++t) {
      const auto phi = var_coefficients(cfg.var_spec, nd, ns,
                                        static_cast<double>(t) / T, phase);
      Eigen::VectorXd eps(nd + ns);
      for (Eigen::Index i = 0; i < eps.size(); ++i)
        eps(i) = innov_sd(i) * s.normal();
      x = phi * x + eps;
      path.col(t) = x;
    }
  }

  // Shared dealer funding factor (AR(1) per dealer, common to segments):
  // moves marginal costs and values in both segments but never utilities,
  // so each segment's rate instruments the other's.
  Eigen::MatrixXd funding(nd, T);
  {
    auto s = root.child("funding");
    const double innov =
        cfg.cost.factor_sd *
        std::sqrt(1.0 - cfg.cost.factor_rho * cfg.cost.factor_rho);
    for (int d = 0; d < nd; ++d) {
      double u = cfg.cost.factor_sd * s.normal();
      for (int t = 0; t < T; ++t) {
        u = cfg.cost.factor_rho * u + innov * s.normal();
        funding(d, t) = u;
      }
    }
  }

  // Market-level control series.
  out.log_reserves.resize(static_cast<std::size_t>(T));
  out.cb_share.resize(static_cast<std::size_t>(T));
  out.stress_a.assign(static_cast<std::size_t>(T), 0.0);
  out.stress_b.assign(static_cast<std::size_t>(T), 0.0);
  {
    auto s = root.child("macro");
    double res = 0.0, share = 0.0;
    for (int t = 0; t < T; ++t) {
      res = 0.98 * res + 0.02 * s.normal();
      share = 0.95 * share + 0.04 * s.normal();
      out.log_reserves[static_cast<std::size_t>(t)] = 12.0 + res;
      out.cb_share[static_cast<std::size_t>(t)] =
          0.25 + detail::squash(share, 0.15);
    }
    for (int t = T / 3; t < std::min(T, T / 3 + 15); ++t)
      out.stress_a[static_cast<std::size_t>(t)] = 1.0;
    for (int t = 2 * T / 3; t < std::min(T, 2 * T / 3 + 10); ++t)
      out.stress_b[static_cast<std::size_t>(t)] = 1.0;
  }

  // --- daily market loop ---------------------------------------------------
  const double log_median = std::log(cfg.volume.median);

  // Per-(day, bond) accumulators of volume-weighted true wedges, and the
  // day-mean wedge fallback for bonds not traded that day.
  struct WedgeAcc {
    double w = 0.0, wx = 0.0;
  };
  std::array<std::vector<WedgeAcc>, 2> bond_wedge;
  std::array<std::vector<double>, 2> day_mean_wedge;
  for (int seg = 0; seg < 2; ++seg) {
    bond_wedge[seg].assign(static_cast<std::size_t>(T) *
                               static_cast<std::size_t>(cfg.n_bonds),
                           WedgeAcc{});
    day_mean_wedge[seg].assign(static_cast<std::size_t>(T), 0.0);
  }

  std::array<Eigen::VectorXd, 2> dealer_volume_total;
  for (int seg = 0; seg < 2; ++seg)
    dealer_volume_total[seg] = Eigen::VectorXd::Zero(nd);

  for (int seg = 0; seg < 2; ++seg) {
    const Segment segment = static_cast<Segment>(seg);
    auto taste = root.child("tastes").child(static_cast<std::uint64_t>(seg));
    auto dayshock =
        root.child("dayshock").child(static_cast<std::uint64_t>(seg));
    auto needs = root.child("needs").child(static_cast<std::uint64_t>(seg));
    auto choice = root.child("choice").child(static_cast<std::uint64_t>(seg));
    auto trades = root.child("trades").child(static_cast<std::uint64_t>(seg));
    detail::IntensityTracker tracker(nd, nf, cfg.intensity_window);
    const double p_on =
        seg == 0 ? cfg.volume.overnight_repo : cfg.volume.overnight_rev;
    const double cal = seg == 0 ? cal_repo : cal_rev;
    const auto& states = out.truth.latent_states[seg];

    for (int t = 0; t < T; ++t) {
      // Bounded dealer-day demand shock; the same value tilts marginal
      // costs (lending) or values (borrowing), planting simultaneity while
      // leaving the equilibrium wedge identity exact.
      const double phi_t = cfg.demand.common_shock_sd * dayshock.normal();
      Eigen::VectorXd xi(nd), base_util(nd), cost_spread(nd);
      for (int d = 0; d < nd; ++d) {
        const double raw = cfg.demand.state_load * states(d, t) +
                           cfg.demand.util_noise_sd * taste.normal();
        xi(d) = detail::squash(raw, cfg.demand.shock_bound);
        base_util(d) = attraction(d) + cal +
                       cfg.demand.gamma * tracker.mean_intensity(d) + phi_t +
                       xi(d);
        const double fund =
            detail::squash(funding(d, t), 3.0 * cfg.cost.factor_sd);
        const double endo = cfg.cost.endo_load * xi(d);
        cost_spread(d) = seg == 0 ? cost_base(d) + fund + endo
                                  : value_base(d) + fund - endo;
      }

      const auto eq = detail::solve_equilibrium(
          segment, alpha, cfg.reference_rate, base_util, cost_spread);
      for (int d = 0; d < nd; ++d)
        if (eq.rate(d) < cfg.spread_lo || eq.rate(d) > cfg.spread_hi)
          throw NumericalError("posted spread " + format_double(eq.rate(d)) +
                               " outside the supported band on " +
                               out.calendar.date_string(t));

      // Ground-truth wedges at the model equilibrium.
      std::vector<double> wedge_today(static_cast<std::size_t>(nd));
      double mean_wedge = 0.0;
      for (int d = 0; d < nd; ++d) {
        PowerTruth p;
        p.date = t;
        p.dealer = d;
        p.rate = eq.rate(d) + cfg.reference_rate;
        p.cost = cost_spread(d) + cfg.reference_rate;
        p.share = eq.share(d);
        const double mag = alpha * (1.0 - eq.share(d)) * p.rate;
        p.elasticity = seg == 0 ? -mag : mag;
        p.wedge = alpha == 0.0 ? 0.0
                  : seg == 0   ? (p.rate - p.cost) / p.rate
                               : (p.cost - p.rate) / p.rate;
        wedge_today[static_cast<std::size_t>(d)] = p.wedge;
        mean_wedge += p.wedge;
        out.truth.power[seg].push_back(p);
      }
      day_mean_wedge[seg][static_cast<std::size_t>(t)] = mean_wedge / nd;
      out.truth.outside_share[seg].push_back(1.0 - eq.share.sum());

      // Funding needs (all families, traded or not) define the market size.
      std::vector<double> need(static_cast<std::size_t>(nf));
      double m_t = 0.0;
      for (int f = 0; f < nf; ++f) {
        double mu, sd_f;
        if (f < nd) {  // captive house account
          mu = log_median + std::log(cfg.volume.captive_scale);
          sd_f = cfg.volume.captive_log_sd;
        } else {
          mu = log_median + cfg.volume.sector_load * states(nd + (f % ns), t);
          sd_f = cfg.volume.log_sd;
        }
        need[static_cast<std::size_t>(f)] =
            std::exp(mu + sd_f * needs.normal());
        m_t += need[static_cast<std::size_t>(f)];
      }
      out.truth.market_size[seg][t] = m_t;

      // Choice draws: one uniform per open family against the cumulative
      // choice distribution implied by the posted rates (outside first).
      std::vector<double> cum(static_cast<std::size_t>(nd) + 1);
      {
        const Eigen::VectorXd util =
            base_util + (seg == 0 ? -alpha : alpha) *
                            (eq.rate.array() + cfg.reference_rate).matrix();
        const double mx = std::max(0.0, util.maxCoeff());
        cum[0] = std::exp(-mx);
        for (int d = 0; d < nd; ++d)
          cum[static_cast<std::size_t>(d) + 1] =
              cum[static_cast<std::size_t>(d)] + std::exp(util(d) - mx);
      }

      std::vector<std::pair<int, int>> traded_pairs;
      for (int f = 0; f < nf; ++f) {
        int pick;  // 0 = outside, 1..nd = dealer index + 1
        if (f < nd) {
          pick = f + 1;  // house account always trades with its dealer
        } else {
          const double u = choice.uniform();
          const auto it =
              std::upper_bound(cum.begin(), cum.end(), u * cum.back());
          pick = static_cast<int>(std::distance(cum.begin(), it));
          if (pick > nd) pick = nd;
        }
        if (pick == 0) continue;
        const int d = pick - 1;

        Transaction tx;
        tx.date = t;
        tx.dealer = d;
        tx.nondealer = f;
        tx.family = f;
        tx.sector = out.family_sector[static_cast<std::size_t>(f)];
        tx.segment = segment;
        tx.volume = need[static_cast<std::size_t>(f)];
        tx.rate_spread = eq.rate(d);
        tx.maturity_days =
            trades.uniform() < p_on
                ? 1
                : cfg.volume.term_lo +
                      static_cast<std::int32_t>(trades.below(
                          static_cast<std::uint64_t>(cfg.volume.term_hi -
                                                     cfg.volume.term_lo + 1)));
        const auto& cumb = bond_cum[static_cast<std::size_t>(d)];
        const auto bit = std::upper_bound(cumb.begin(), cumb.end(),
                                          trades.uniform() * cumb.back());
        tx.isin = std::min(
            static_cast<std::int32_t>(std::distance(cumb.begin(), bit)),
            cfg.n_bonds - 1);
        tx.collateral_mv = tx.volume * (1.0 + cfg.volume.collateral_haircut);
        out.transactions.push_back(tx);

        dealer_volume_total[seg](d) += tx.volume;
        traded_pairs.emplace_back(d, f);
        auto& acc =
            bond_wedge[seg][static_cast<std::size_t>(t) *
                                static_cast<std::size_t>(cfg.n_bonds) +
                            static_cast<std::size_t>(tx.isin)];
        acc.w += tx.volume;
        acc.wx += tx.volume * wedge_today[static_cast<std::size_t>(d)];
      }
      tracker.push_day(std::move(traded_pairs));
    }
  }

  // --- dealer selection and analytic network factor paths -----------------
  const Eigen::VectorXd sigma_diag = innov_sd.array().square();
  for (int seg = 0; seg < 2; ++seg) {
    std::vector<int> order(static_cast<std::size_t>(nd));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      if (dealer_volume_total[seg](a) != dealer_volume_total[seg](b))
        return dealer_volume_total[seg](a) > dealer_volume_total[seg](b);
      return a < b;
    });
    const double total = dealer_volume_total[seg].sum();
    double cum = 0.0;
    std::vector<int> sel;
    for (int idx : order) {
      sel.push_back(idx);
      cum += dealer_volume_total[seg](idx);
      if (cum >= cfg.coverage * total - 1e-12) break;
    }
    std::sort(sel.begin(), sel.end());
    out.truth.selected_dealers[seg].assign(sel.begin(), sel.end());

    const double phase = seg == 0 ? 0.0 : cfg.var_spec.rev_phase;
    auto factor_at = [&](double frac) {
      return analytic_factor_point(
          var_coefficients(cfg.var_spec, nd, ns, frac, phase), sigma_diag,
          cfg.fevd_grid, cfg.period_cut, nd, sel);
    };

    auto& factors = out.truth.factors[seg];
    factors.resize(static_cast<std::size_t>(T));
    const int knots = cfg.fevd_knots;
    if (knots == 0 || knots >= T || T < 3) {
      for (int t = 0; t < T; ++t) {
        const auto fp = factor_at(static_cast<double>(t) / T);
        factors[static_cast<std::size_t>(t)] = {t, fp.transitory,
                                                fp.persistent};
      }
    } else {
      // The coefficient path is a smooth sinusoid of t/T, so the factor
      // path is evaluated exactly at a few knots and linearly interpolated.
      const int K = std::max(2, knots);
      std::vector<FactorPoint> at_knot(static_cast<std::size_t>(K));
      for (int k = 0; k < K; ++k) {
        const double frac = static_cast<double>(k) / (K - 1) * (T - 1.0) / T;
        at_knot[static_cast<std::size_t>(k)] = factor_at(frac);
      }
      for (int t = 0; t < T; ++t) {
        const double u = static_cast<double>(t) / (T - 1.0) * (K - 1);
        const int k0 = std::min(K - 2, static_cast<int>(u));
        const double w = u - k0;
        const auto& a = at_knot[static_cast<std::size_t>(k0)];
        const auto& b = at_knot[static_cast<std::size_t>(k0) + 1];
        factors[static_cast<std::size_t>(t)] = {
            t, (1.0 - w) * a.transitory + w * b.transitory,
            (1.0 - w) * a.persistent + w * b.persistent};
      }
    }
  }

  // --- bond quotes ---------------------------------------------------------
  {
    auto curve_s = root.child("curve");
    auto liq_s = root.child("liquidity");
    auto price_s = root.child("pricing");
    const auto& cs = cfg.curve_spec;

    std::vector<double> level_path(static_cast<std::size_t>(T));
    {
      double lvl = 0.0;
      const double innov =
          cs.level_sd * std::sqrt(1.0 - cs.level_rho * cs.level_rho);
      for (int t = 0; t < T; ++t) {
        lvl = cs.level_rho * lvl + innov * curve_s.normal();
        level_path[static_cast<std::size_t>(t)] = cs.level + lvl;
      }
    }

    std::vector<double> z1(static_cast<std::size_t>(cfg.n_bonds), 0.0);
    std::vector<double> z2(static_cast<std::size_t>(cfg.n_bonds), 0.0);
    std::vector<double> u(static_cast<std::size_t>(cfg.n_bonds), 0.0);
    std::vector<double> m0(static_cast<std::size_t>(cfg.n_bonds));
    for (int b = 0; b < cfg.n_bonds; ++b)
      m0[static_cast<std::size_t>(b)] =
          1.5 + (30.0 - 1.5) * b / std::max(1, cfg.n_bonds - 1);

    const double noise_innov =
        cs.noise_sd * std::sqrt(1.0 - cs.noise_rho * cs.noise_rho);

    for (int t = 0; t < T; ++t) {
      const auto ti = static_cast<std::size_t>(t);
      const double df_repo = out.truth.factors[0][ti].transitory +
                             out.truth.factors[0][ti].persistent;
      const double df_rev = out.truth.factors[1][ti].transitory +
                            out.truth.factors[1][ti].persistent;

      for (int b = 0; b < cfg.n_bonds; ++b) {
        const auto bi = static_cast<std::size_t>(b);
        const double maturity = std::max(0.25, m0[bi] - t / 250.0);
        const double duration = 0.85 * maturity;
        z1[bi] = 0.7 * z1[bi] + 0.3 * liq_s.normal();
        z2[bi] = 0.7 * z2[bi] + 0.3 * liq_s.normal();
        const double bidask = 0.02 + 0.015 * std::abs(z1[bi]);
        const double hilo = 0.05 + 0.03 * std::abs(z2[bi]);
        u[bi] = cs.noise_rho * u[bi] +
                noise_innov * detail::squash(price_s.normal(), 3.0);

        const auto& wa =
            bond_wedge[0][ti * static_cast<std::size_t>(cfg.n_bonds) + bi];
        const auto& wb =
            bond_wedge[1][ti * static_cast<std::size_t>(cfg.n_bonds) + bi];
        const double vw_markup =
            wa.w > 0.0 ? wa.wx / wa.w : day_mean_wedge[0][ti];
        const double vw_markdown =
            wb.w > 0.0 ? wb.wx / wb.w : day_mean_wedge[1][ti];

        const double level =
            cs.a0 + cfg.effects.a1_markup * vw_markup +
            cfg.effects.a2_markdown * vw_markdown +
            cfg.effects.a3_df_repo * df_repo +
            cfg.effects.a4_df_rev * df_rev + cs.b_bidask * bidask +
            cs.b_hilo * hilo + cs.b_duration * duration +
            cs.b_maturity * maturity +
            cs.b_reserves * (out.log_reserves[ti] - 12.0) +
            cs.b_stress * (out.stress_a[ti] + out.stress_b[ti]) + u[bi];
        if (!(level > 0.0))
          throw NumericalError("pricing-deviation level nonpositive on " +
                               out.calendar.date_string(t) + ", bond " +
                               std::to_string(b) + " (value " +
                               format_double(level) + ")");
        // Alternate deviation signs across bonds so the per-date smooth
        // benchmark stays centered and |deviation| equals the level.
        const double mis = (b % 2 == 0 ? 1.0 : -1.0) * level;

        const double x = maturity / cs.tau;
        const double base = level_path[ti] +
                            cs.slope * (1.0 - std::exp(-x)) / x +
                            cs.curvature * std::exp(-x);

        BondQuote q;
        q.date = t;
        q.isin = b;
        q.yield = base + mis;
        q.bid = q.yield - bidask / 2.0;
        q.ask = q.yield + bidask / 2.0;
        q.high = q.yield + hilo / 2.0;
        q.low = q.yield - hilo / 2.0;
        q.duration = duration;
        q.residual_maturity = maturity;
        out.bonds.push_back(q);

        out.truth.mispricing.push_back({t, b, mis});
      }
    }
  }

  return out;
}

// ---------------------------------------------------------------------------
// Emitters. Files are written with '\n' endings and shortest round-trip
// numbers; rerunning with the same (config, seed) reproduces identical bytes.

inline void write_transactions(const SimResult& r, const std::string& path) {
  auto os = detail::open_out(path);
  csv::Writer w(os);
  w.row({"date", "dealer_id", "nondealer_id", "family_id", "sector",
         "segment", "volume_gbp", "rate_spread_pp", "maturity_days", "isin",
         "collateral_mv"});
  for (const auto& t : r.transactions) {
    w.field(r.calendar.date_string(t.date));
    w.field(r.dealers.name(t.dealer));
    w.field(r.nondealers.name(t.nondealer));
    w.field(r.families.name(t.family));
    w.field(sector_name(t.sector));
    w.field(segment_name(t.segment));
    w.field(t.volume);
    w.field(t.rate_spread);
    w.field(static_cast<int>(t.maturity_days));
    w.field(r.isins.name(t.isin));
    w.field(t.collateral_mv);
    w.endrow();
  }
}

inline void write_bonds(const SimResult& r, const std::string& path) {
  auto os = detail::open_out(path);
  csv::Writer w(os);
  w.row({"date", "isin", "yield_pp", "bid", "ask", "high", "low", "duration_y",
         "residual_maturity_y"});
  for (const auto& q : r.bonds) {
    w.field(r.calendar.date_string(q.date));
    w.field(r.isins.name(q.isin));
    w.field(q.yield);
    w.field(q.bid);
    w.field(q.ask);
    w.field(q.high);
    w.field(q.low);
    w.field(q.duration);
    w.field(q.residual_maturity);
    w.endrow();
  }
}

inline void write_market_size(const SimResult& r, const std::string& path) {
  auto os = detail::open_out(path);
  csv::Writer w(os);
  w.row({"date", "segment", "market_size"});
  for (int seg = 0; seg < 2; ++seg)
    for (const auto& [date, m] : r.truth.market_size[seg]) {
      w.field(r.calendar.date_string(date));
      w.field(segment_name(static_cast<Segment>(seg)));
      w.field(m);
      w.endrow();
    }
}

inline void write_macro(const SimResult& r, const std::string& path) {
  auto os = detail::open_out(path);
  csv::Writer w(os);
  w.row({"date", "log_reserves", "cb_share", "stress_a", "stress_b"});
  for (std::int32_t t = 0; t < r.calendar.size(); ++t) {
    const auto i = static_cast<std::size_t>(t);
    w.field(r.calendar.date_string(t));
    w.field(r.log_reserves[i]);
    w.field(r.cb_share[i]);
    w.field(r.stress_a[i]);
    w.field(r.stress_b[i]);
    w.endrow();
  }
}

inline void write_ground_truth(const SimResult& r, const std::string& path) {
  const auto& tr = r.truth;
  nlohmann::ordered_json j;
  j["alpha"] = tr.config.demand.alpha;
  j["gamma"] = tr.config.demand.gamma;
  j["reference_rate"] = tr.config.reference_rate;
  j["effects"] = {{"markup", tr.config.effects.a1_markup},
                  {"markdown", tr.config.effects.a2_markdown},
                  {"factor_repo", tr.config.effects.a3_df_repo},
                  {"factor_reverse", tr.config.effects.a4_df_rev}};
  j["deviation_model"] = {{"intercept", tr.config.curve_spec.a0},
                          {"bidask", tr.config.curve_spec.b_bidask},
                          {"hilo", tr.config.curve_spec.b_hilo},
                          {"duration", tr.config.curve_spec.b_duration},
                          {"maturity", tr.config.curve_spec.b_maturity},
                          {"reserves", tr.config.curve_spec.b_reserves},
                          {"stress", tr.config.curve_spec.b_stress}};
  {
    const Eigen::VectorXd iv = tr.innovation_variance();
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (Eigen::Index i = 0; i < iv.size(); ++i) arr.push_back(iv(i));
    j["innovation_variance"] = std::move(arr);
  }
  for (int seg = 0; seg < 2; ++seg) {
    const std::string name{segment_name(static_cast<Segment>(seg))};
    nlohmann::ordered_json power = nlohmann::ordered_json::array();
    for (const auto& p : tr.power[seg])
      power.push_back({{"date", r.calendar.date_string(p.date)},
                       {"dealer", r.dealers.name(p.dealer)},
                       {"rate", p.rate},
                       {"cost", p.cost},
                       {"share", p.share},
                       {"elasticity", p.elasticity},
                       {"wedge", p.wedge}});
    j["market_power"][name] = std::move(power);

    nlohmann::ordered_json ms = nlohmann::ordered_json::array();
    for (const auto& [date, m] : tr.market_size[seg])
      ms.push_back({{"date", r.calendar.date_string(date)}, {"value", m}});
    j["market_size"][name] = std::move(ms);

    nlohmann::ordered_json fac = nlohmann::ordered_json::array();
    for (const auto& f : tr.factors[seg])
      fac.push_back({{"date", r.calendar.date_string(f.date)},
                     {"transitory", f.transitory},
                     {"persistent", f.persistent}});
    j["global_factors"][name] = std::move(fac);

    nlohmann::ordered_json sel = nlohmann::ordered_json::array();
    for (auto d : tr.selected_dealers[seg]) sel.push_back(r.dealers.name(d));
    j["selected_dealers"][name] = std::move(sel);

    nlohmann::ordered_json osh = nlohmann::ordered_json::array();
    for (double v : tr.outside_share[seg]) osh.push_back(v);
    j["outside_share"][name] = std::move(osh);
  }
  nlohmann::ordered_json mis = nlohmann::ordered_json::array();
  for (const auto& m : tr.mispricing)
    mis.push_back({{"date", r.calendar.date_string(m.date)},
                   {"isin", r.isins.name(m.isin)},
                   {"value", m.value}});
  j["mispricing"] = std::move(mis);

  auto os = detail::open_out(path);
  os << j.dump(1) << '\n';
}

}  // namespace repometrics::sim
