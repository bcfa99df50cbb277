#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "repometrics/common.hpp"
#include "repometrics/datamodel.hpp"
#include "repometrics/rng.hpp"
#include "repometrics/sim.hpp"

using namespace repometrics;

namespace {

// One shared default-configuration run for the invariant tests.
const sim::SimResult& default_run() {
  static const sim::SimResult r = sim::simulate_market(sim::SimConfig{});
  return r;
}

// Upper chi-squared quantile via the Wilson-Hilferty cube approximation.
double chi2_upper(double df, double z) {
  const double c = 2.0 / (9.0 * df);
  const double b = 1.0 - c + z * std::sqrt(c);
  return df * b * b * b;
}

std::filesystem::path temp_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("rm_sim_" + tag);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

// ---------------------------------------------------------------------------
// Analytic band decomposition.

TEST_CASE("diagonal system transmits nothing across variables") {
  const int n = 4;
  Eigen::MatrixXd phi = Eigen::MatrixXd::Zero(n, n);
  phi.diagonal() << 0.6, 0.3, -0.4, 0.8;
  Eigen::VectorXd sig(n);
  sig << 1.0, 0.5, 2.0, 0.25;
  for (sim::Band band :
       {sim::Band::persistent, sim::Band::transitory, sim::Band::total}) {
    const auto theta = sim::analytic_band_fevd(phi, sig, 64, 20.0, band);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j) REQUIRE(theta(i, j) == 0.0);
  }
  const auto total =
      sim::analytic_band_fevd(phi, sig, 64, 20.0, sim::Band::total);
  for (int i = 0; i < n; ++i) REQUIRE(total(i, i) == Catch::Approx(1.0));
}

TEST_CASE("band shares add to the total and rows sum to one") {
  sim::SimConfig cfg;
  const Eigen::VectorXd sig =
      sim::var_innovation_sd(cfg.var_spec, cfg.n_dealers, cfg.n_sectors)
          .array()
          .square();
  for (double frac : {0.0, 0.3, 0.7}) {
    const auto phi = sim::var_coefficients(cfg.var_spec, cfg.n_dealers,
                                           cfg.n_sectors, frac, 0.0);
    const auto pe = sim::analytic_band_fevd(phi, sig, cfg.fevd_grid,
                                            cfg.period_cut,
                                            sim::Band::persistent);
    const auto tr = sim::analytic_band_fevd(phi, sig, cfg.fevd_grid,
                                            cfg.period_cut,
                                            sim::Band::transitory);
    const auto tot = sim::analytic_band_fevd(phi, sig, cfg.fevd_grid,
                                             cfg.period_cut, sim::Band::total);
    REQUIRE(((pe + tr) - tot).cwiseAbs().maxCoeff() < 1e-12);
    const Eigen::VectorXd rows = tot.rowwise().sum();
    for (Eigen::Index i = 0; i < rows.size(); ++i)
      REQUIRE(std::abs(rows(i) - 1.0) < 1e-10);
    REQUIRE(tot.minCoeff() >= 0.0);
  }
}

TEST_CASE("bivariate decomposition matches a forecast-error simulation") {
  // x_t = Phi x_{t-1} + eps_t with unit-variance shocks. Starting from zero
  // and running H steps makes x_H exactly the H-term moving average, whose
  // variance split by originating shock is the total-band decomposition.
  Eigen::MatrixXd phi(2, 2);
  phi << 0.5, 0.2, 0.0, 0.5;
  const Eigen::VectorXd sig = Eigen::VectorXd::Ones(2);
  const int H = 48;
  const auto analytic =
      sim::analytic_band_fevd(phi, sig, H, 20.0, sim::Band::total);

  rng::Stream s(20260819u);
  const int reps = 1000000;
  Eigen::Vector2d var_full = Eigen::Vector2d::Zero();
  Eigen::Matrix2d var_k = Eigen::Matrix2d::Zero();  // (variable, shock)
  for (int rep = 0; rep < reps; ++rep) {
    Eigen::Vector2d x = Eigen::Vector2d::Zero();
    Eigen::Vector2d x1 = Eigen::Vector2d::Zero();  // shock-1-only path
    Eigen::Vector2d x2 = Eigen::Vector2d::Zero();  // shock-2-only path
    for (int t = 0; t < H; ++t) {
      const double e1 = s.normal(), e2 = s.normal();
      x = phi * x + Eigen::Vector2d(e1, e2);
      x1 = phi * x1 + Eigen::Vector2d(e1, 0.0);
      x2 = phi * x2 + Eigen::Vector2d(0.0, e2);
    }
    var_full += x.cwiseAbs2();
    var_k.col(0) += x1.cwiseAbs2();
    var_k.col(1) += x2.cwiseAbs2();
    // Linearity: the shock-specific paths decompose the full path.
    REQUIRE((x - x1 - x2).cwiseAbs().maxCoeff() < 1e-9);
  }
  for (int i = 0; i < 2; ++i)
    for (int k = 0; k < 2; ++k)
      REQUIRE(std::abs(var_k(i, k) / var_full(i) - analytic(i, k)) < 1e-2);
  // Triangular structure: variable 2 never loads on shock 1.
  REQUIRE(analytic(1, 0) == 0.0);
}

TEST_CASE("band decomposition rejects invalid inputs") {
  const Eigen::MatrixXd ok = Eigen::MatrixXd::Identity(2, 2) * 0.5;
  const Eigen::VectorXd sig = Eigen::VectorXd::Ones(2);
  REQUIRE_THROWS_AS(sim::analytic_band_fevd(Eigen::MatrixXd::Zero(2, 3), sig,
                                            16, 20.0, sim::Band::total),
                    ConfigError);
  REQUIRE_THROWS_AS(sim::analytic_band_fevd(ok, Eigen::VectorXd::Ones(3), 16,
                                            20.0, sim::Band::total),
                    ConfigError);
  REQUIRE_THROWS_AS(sim::analytic_band_fevd(ok, sig, 2, 20.0, sim::Band::total),
                    ConfigError);
  REQUIRE_THROWS_AS(sim::analytic_band_fevd(ok, sig, 16, 1.5, sim::Band::total),
                    ConfigError);
  REQUIRE_THROWS_AS(
      sim::analytic_band_fevd(Eigen::MatrixXd::Identity(2, 2), sig, 16, 20.0,
                              sim::Band::total),
      ConfigError);
}

TEST_CASE("factor point equals the two-pass band decomposition route") {
  sim::SimConfig cfg;
  const int nd = cfg.n_dealers, ns = cfg.n_sectors;
  const Eigen::VectorXd sig =
      sim::var_innovation_sd(cfg.var_spec, nd, ns).array().square();
  const std::vector<int> hub{0, 1, 2, 3, 4};
  const std::vector<int> odd{1, 6, 9};
  for (double frac : {0.0, 0.4, 0.9}) {
    for (double phase : {0.0, cfg.var_spec.rev_phase}) {
      const auto phi = sim::var_coefficients(cfg.var_spec, nd, ns, frac, phase);
      for (const auto& sel : {hub, odd}) {
        const auto fp = sim::analytic_factor_point(phi, sig, cfg.fevd_grid,
                                                   cfg.period_cut, nd, sel);
        const double via_tr = sim::analytic_global_factor(
            sim::analytic_band_fevd(phi, sig, cfg.fevd_grid, cfg.period_cut,
                                    sim::Band::transitory),
            nd, sel);
        const double via_pe = sim::analytic_global_factor(
            sim::analytic_band_fevd(phi, sig, cfg.fevd_grid, cfg.period_cut,
                                    sim::Band::persistent),
            nd, sel);
        REQUIRE(std::abs(fp.transitory - via_tr) < 1e-12);
        REQUIRE(std::abs(fp.persistent - via_pe) < 1e-12);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Configuration validation.

TEST_CASE("simulation rejects out-of-range configurations") {
  auto broken = [](auto mutate) {
    sim::SimConfig cfg;
    mutate(cfg);
    return cfg;
  };
  REQUIRE_THROWS_AS(
      sim::validate(broken([](sim::SimConfig& c) { c.n_dealers = 1; })),
      ConfigError);
  REQUIRE_THROWS_AS(
      sim::validate(broken([](sim::SimConfig& c) { c.n_days = 10; })),
      ConfigError);
  REQUIRE_THROWS_AS(
      sim::validate(broken([](sim::SimConfig& c) { c.n_families = 20; })),
      ConfigError);
  REQUIRE_THROWS_AS(
      sim::validate(broken([](sim::SimConfig& c) { c.demand.alpha = -1.0; })),
      ConfigError);
  REQUIRE_THROWS_AS(
      sim::validate(broken([](sim::SimConfig& c) { c.fevd_grid = 4; })),
      ConfigError);
  REQUIRE_THROWS_AS(sim::validate(broken([](sim::SimConfig& c) {
                      c.var_spec.n_core = c.n_dealers + 1;
                    })),
                    ConfigError);
  // An overloaded hub makes the latent system explosive.
  REQUIRE_THROWS_AS(sim::validate(broken([](sim::SimConfig& c) {
                      c.var_spec.core_in = 0.5;
                    })),
                    ConfigError);
  REQUIRE_NOTHROW(sim::validate(sim::SimConfig{}));
}

// ---------------------------------------------------------------------------
// Determinism.

TEST_CASE("identical configurations reproduce identical output bytes") {
  sim::SimConfig cfg;
  cfg.n_days = 60;
  cfg.n_families = 60;
  cfg.n_bonds = 12;
  cfg.fevd_grid = 24;
  cfg.fevd_knots = 7;
  const auto dir = temp_dir("determinism");
  const auto emit = [&](const sim::SimResult& r, const std::string& tag) {
    sim::write_transactions(r, (dir / (tag + "_tx.csv")).string());
    sim::write_bonds(r, (dir / (tag + "_bonds.csv")).string());
    sim::write_market_size(r, (dir / (tag + "_ms.csv")).string());
    sim::write_macro(r, (dir / (tag + "_macro.csv")).string());
    sim::write_ground_truth(r, (dir / (tag + "_truth.json")).string());
  };
  emit(sim::simulate_market(cfg), "a");
  emit(sim::simulate_market(cfg), "b");
  cfg.seed = 43;
  emit(sim::simulate_market(cfg), "c");
  for (const char* suffix :
       {"_tx.csv", "_bonds.csv", "_ms.csv", "_macro.csv", "_truth.json"}) {
    const auto a = read_file((dir / ("a" + std::string(suffix))).string());
    const auto b = read_file((dir / ("b" + std::string(suffix))).string());
    REQUIRE(a == b);
    REQUIRE(!a.empty());
  }
  // A different seed must actually change the data.
  REQUIRE(read_file((dir / "a_tx.csv").string()) !=
          read_file((dir / "c_tx.csv").string()));
}

// ---------------------------------------------------------------------------
// Choice model.

TEST_CASE("zero rate sensitivity with symmetric dealers yields uniform "
          "choices") {
  sim::SimConfig cfg;
  cfg.demand.alpha = 0.0;
  cfg.demand.gamma = 0.0;
  cfg.demand.core_edge = 0.0;
  cfg.demand.attraction_sd = 0.0;
  cfg.demand.state_load = 0.0;
  cfg.demand.util_noise_sd = 0.0;
  const auto r = sim::simulate_market(cfg);

  for (int seg = 0; seg < 2; ++seg) {
    // Rates equal costs exactly and all wedges and elasticities vanish.
    for (const auto& p : r.truth.power[seg]) {
      REQUIRE(p.rate == p.cost);
      REQUIRE(p.wedge == 0.0);
      REQUIRE(p.elasticity == 0.0);
    }
    // Non-captive choices are exchangeable across dealers: conditional on
    // the inside total, per-dealer counts are uniform multinomial.
    std::vector<long> count(static_cast<std::size_t>(cfg.n_dealers), 0);
    long inside = 0;
    for (const auto& t : r.transactions)
      if (static_cast<int>(t.segment) == seg && t.family >= cfg.n_dealers) {
        ++count[static_cast<std::size_t>(t.dealer)];
        ++inside;
      }
    const double expected =
        static_cast<double>(inside) / static_cast<double>(cfg.n_dealers);
    REQUIRE(expected > 1000.0);
    double stat = 0.0;
    for (long c : count) {
      const double d = static_cast<double>(c) - expected;
      stat += d * d / expected;
    }
    REQUIRE(stat < chi2_upper(cfg.n_dealers - 1.0, 2.3263));
  }
}

TEST_CASE("choice frequencies match the model probabilities") {
  const auto& r = default_run();
  const auto& cfg = r.truth.config;
  const int nd = cfg.n_dealers;
  const double n_open = cfg.n_families - nd;

  double stat = 0.0, df = 0.0;
  for (int seg = 0; seg < 2; ++seg) {
    // Observed non-captive counts per (day, dealer).
    std::vector<long> count(
        static_cast<std::size_t>(cfg.n_days) * static_cast<std::size_t>(nd),
        0);
    for (const auto& t : r.transactions)
      if (static_cast<int>(t.segment) == seg && t.family >= nd)
        ++count[static_cast<std::size_t>(t.date) * nd +
                static_cast<std::size_t>(t.dealer)];

    for (int t = 0; t < cfg.n_days; ++t) {
      // Cells with small expected counts pool into the outside cell.
      double rest_p = 1.0;
      long rest_obs = static_cast<long>(n_open);
      int cells = 1;
      for (int d = 0; d < nd; ++d) {
        const double p =
            r.truth.power[seg][static_cast<std::size_t>(t) * nd + d].share;
        const long obs = count[static_cast<std::size_t>(t) * nd +
                               static_cast<std::size_t>(d)];
        if (n_open * p >= 5.0) {
          const double diff = static_cast<double>(obs) - n_open * p;
          stat += diff * diff / (n_open * p);
          rest_p -= p;
          rest_obs -= obs;
          ++cells;
        }
      }
      const double diff = static_cast<double>(rest_obs) - n_open * rest_p;
      stat += diff * diff / (n_open * rest_p);
      df += cells - 1;
    }
  }
  REQUIRE(stat < chi2_upper(df, 2.3263));
}

// ---------------------------------------------------------------------------
// Equilibrium invariants.

TEST_CASE("posted spreads stay inside the supported band") {
  const auto& r = default_run();
  const auto& cfg = r.truth.config;
  for (int seg = 0; seg < 2; ++seg)
    for (const auto& p : r.truth.power[seg]) {
      const double spread = p.rate - cfg.reference_rate;
      REQUIRE(spread >= cfg.spread_lo);
      REQUIRE(spread <= cfg.spread_hi);
    }
  for (const auto& t : r.transactions) {
    REQUIRE(t.rate_spread >= cfg.spread_lo);
    REQUIRE(t.rate_spread <= cfg.spread_hi);
  }
}

TEST_CASE("wedges satisfy the pricing identity and the first-order "
          "condition") {
  const auto& r = default_run();
  const auto& cfg = r.truth.config;
  const double alpha = cfg.demand.alpha;
  for (int seg = 0; seg < 2; ++seg)
    for (const auto& p : r.truth.power[seg]) {
      const double identity = seg == 0 ? (p.rate - p.cost) / p.rate
                                       : (p.cost - p.rate) / p.rate;
      REQUIRE(p.wedge == identity);  // exact by construction
      // Optimal posting equates the wedge with the inverse semi-elasticity.
      const double foc = 1.0 / (alpha * (1.0 - p.share) * p.rate);
      REQUIRE(std::abs(p.wedge - foc) < 1e-9);
      const double mag = alpha * (1.0 - p.share) * p.rate;
      REQUIRE(p.elasticity == (seg == 0 ? -mag : mag));
      REQUIRE(p.share > 0.0);
      REQUIRE(p.share < 1.0);
    }
}

TEST_CASE("outside option keeps an interior share of the market") {
  const auto& r = default_run();
  for (int seg = 0; seg < 2; ++seg) {
    REQUIRE(r.truth.outside_share[seg].size() ==
            static_cast<std::size_t>(r.truth.config.n_days));
    for (double v : r.truth.outside_share[seg]) {
      REQUIRE(v > 0.2);
      REQUIRE(v < 0.8);
    }
  }
}

// ---------------------------------------------------------------------------
// Network factor truth.

TEST_CASE("selected dealers cover the volume target and the factor path "
          "stays in its calibrated range") {
  const auto& r = default_run();
  const auto& cfg = r.truth.config;
  for (int seg = 0; seg < 2; ++seg) {
    // At the default calibration the five hub dealers carry the most volume.
    const std::vector<std::int32_t> hub{0, 1, 2, 3, 4};
    REQUIRE(r.truth.selected_dealers[seg] == hub);

    // Selected dealers cumulate at least the coverage share of volume.
    Eigen::VectorXd vol = Eigen::VectorXd::Zero(cfg.n_dealers);
    for (const auto& t : r.transactions)
      if (static_cast<int>(t.segment) == seg) vol(t.dealer) += t.volume;
    double sel_vol = 0.0;
    for (auto d : r.truth.selected_dealers[seg]) sel_vol += vol(d);
    REQUIRE(sel_vol >= cfg.coverage * vol.sum() - 1e-6);

    REQUIRE(r.truth.factors[seg].size() ==
            static_cast<std::size_t>(cfg.n_days));
    double mean = 0.0;
    for (const auto& f : r.truth.factors[seg]) {
      const double tot = f.transitory + f.persistent;
      REQUIRE(f.transitory >= 0.0);
      REQUIRE(f.persistent >= 0.0);
      REQUIRE(tot > 0.08);
      REQUIRE(tot < 0.18);
      mean += tot;
    }
    mean /= static_cast<double>(r.truth.factors[seg].size());
    REQUIRE(mean > 0.10);
    REQUIRE(mean < 0.16);
  }
}

TEST_CASE("knot-interpolated factor paths track the exact evaluation") {
  sim::SimConfig cfg;
  cfg.n_days = 60;
  cfg.n_families = 60;
  cfg.n_bonds = 12;
  cfg.fevd_grid = 24;

  cfg.fevd_knots = 13;
  const auto interp = sim::simulate_market(cfg);
  cfg.fevd_knots = 0;
  const auto exact = sim::simulate_market(cfg);

  for (int seg = 0; seg < 2; ++seg)
    for (int t = 0; t < cfg.n_days; ++t) {
      const auto& a = interp.truth.factors[seg][static_cast<std::size_t>(t)];
      const auto& b = exact.truth.factors[seg][static_cast<std::size_t>(t)];
      REQUIRE(std::abs(a.transitory - b.transitory) < 2e-3);
      REQUIRE(std::abs(a.persistent - b.persistent) < 2e-3);
    }
}

TEST_CASE("truth accessors expose the planted latent system") {
  const auto& r = default_run();
  const auto& cfg = r.truth.config;
  const auto phi = r.truth.coefficients_at(Segment::repo, 100);
  const auto direct =
      sim::var_coefficients(cfg.var_spec, cfg.n_dealers, cfg.n_sectors,
                            100.0 / cfg.n_days, 0.0);
  REQUIRE((phi - direct).cwiseAbs().maxCoeff() == 0.0);
  const Eigen::VectorXd iv = r.truth.innovation_variance();
  REQUIRE(iv.size() == cfg.n_dealers + cfg.n_sectors);
  REQUIRE(iv(0) ==
          Catch::Approx(cfg.var_spec.dealer_sd * cfg.var_spec.dealer_sd));
  REQUIRE(iv(iv.size() - 1) ==
          Catch::Approx(cfg.var_spec.sector_sd * cfg.var_spec.sector_sd));
  const auto theta =
      r.truth.band_fevd_at(Segment::reverse, 100, sim::Band::total);
  const Eigen::VectorXd rows = theta.rowwise().sum();
  for (Eigen::Index i = 0; i < rows.size(); ++i)
    REQUIRE(std::abs(rows(i) - 1.0) < 1e-10);
  REQUIRE(r.truth.latent_states[0].rows() == cfg.n_dealers + cfg.n_sectors);
  REQUIRE(r.truth.latent_states[0].cols() == cfg.n_days);
}

TEST_CASE("latent states are stationary when the coefficient cycle is flat") {
  sim::SimConfig cfg;
  cfg.n_days = 500;
  cfg.n_families = 60;
  cfg.var_spec.cycle_amplitude = 0.0;
  const auto r = sim::simulate_market(cfg);
  for (int seg = 0; seg < 2; ++seg) {
    const auto& st = r.truth.latent_states[seg];
    const int half = cfg.n_days / 2;
    const auto first = st.leftCols(half);
    const auto second = st.rightCols(cfg.n_days - half);
    const double m1 = first.mean(), m2 = second.mean();
    const double v1 = (first.array() - m1).square().mean();
    const double v2 = (second.array() - m2).square().mean();
    REQUIRE(std::abs(m1 - m2) < 0.5);
    REQUIRE(v1 / v2 > 0.7);
    REQUIRE(v1 / v2 < 1.43);
  }
}

// ---------------------------------------------------------------------------
// Volumes, maturities, house accounts.

TEST_CASE("traded volumes and maturities match the calibration targets") {
  const auto& r = default_run();
  const auto& cfg = r.truth.config;

  std::vector<double> open_vols, all_vols;
  for (const auto& t : r.transactions) {
    all_vols.push_back(t.volume);
    if (t.family >= cfg.n_dealers) open_vols.push_back(t.volume);
    REQUIRE((t.maturity_days == 1 || (t.maturity_days >= cfg.volume.term_lo &&
                                      t.maturity_days <= cfg.volume.term_hi)));
    REQUIRE(t.collateral_mv ==
            t.volume * (1.0 + cfg.volume.collateral_haircut));
    REQUIRE(t.volume > 0.0);
  }
  const auto median_of = [](std::vector<double>& v) {
    std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
    return v[v.size() / 2];
  };
  const double med_open = median_of(open_vols);
  const double med_all = median_of(all_vols);
  REQUIRE(med_open > 0.95 * cfg.volume.median);
  REQUIRE(med_open < 1.05 * cfg.volume.median);
  REQUIRE(med_all > 0.90 * cfg.volume.median);
  REQUIRE(med_all < 1.10 * cfg.volume.median);

  for (int seg = 0; seg < 2; ++seg) {
    long n_on = 0, n_all = 0;
    for (const auto& t : r.transactions)
      if (static_cast<int>(t.segment) == seg) {
        ++n_all;
        if (t.maturity_days == 1) ++n_on;
      }
    const double target =
        seg == 0 ? cfg.volume.overnight_repo : cfg.volume.overnight_rev;
    REQUIRE(std::abs(static_cast<double>(n_on) / n_all - target) < 0.01);
  }
}

TEST_CASE("house accounts keep every dealer active every day") {
  const auto& r = default_run();
  const auto& cfg = r.truth.config;
  for (int seg = 0; seg < 2; ++seg) {
    std::vector<int> seen(static_cast<std::size_t>(cfg.n_days) *
                              static_cast<std::size_t>(cfg.n_dealers),
                          0);
    for (const auto& t : r.transactions) {
      if (static_cast<int>(t.segment) != seg) continue;
      seen[static_cast<std::size_t>(t.date) * cfg.n_dealers +
           static_cast<std::size_t>(t.dealer)] = 1;
      // House accounts always trade with their own dealer.
      if (t.family < cfg.n_dealers) REQUIRE(t.dealer == t.family);
    }
    REQUIRE(std::count(seen.begin(), seen.end(), 0) == 0);
  }
}

TEST_CASE("market size dominates traded volume") {
  const auto& r = default_run();
  const auto& cfg = r.truth.config;
  for (int seg = 0; seg < 2; ++seg) {
    std::map<std::int32_t, double> traded;
    for (const auto& t : r.transactions)
      if (static_cast<int>(t.segment) == seg) traded[t.date] += t.volume;
    REQUIRE(r.truth.market_size[seg].size() ==
            static_cast<std::size_t>(cfg.n_days));
    for (const auto& [date, m] : r.truth.market_size[seg]) {
      REQUIRE(m > 0.0);
      const double tv = traded[date];
      REQUIRE(tv <= m);
      REQUIRE(tv / m > 0.3);
    }
  }
}

// ---------------------------------------------------------------------------
// Bond quotes and planted deviations.

TEST_CASE("bond quotes are internally consistent and deviations alternate "
          "in sign") {
  const auto& r = default_run();
  const auto& cfg = r.truth.config;
  REQUIRE(r.bonds.size() == static_cast<std::size_t>(cfg.n_days) *
                                static_cast<std::size_t>(cfg.n_bonds));
  REQUIRE(r.truth.mispricing.size() == r.bonds.size());
  for (const auto& q : r.bonds) {
    REQUIRE(q.ask >= q.bid);
    REQUIRE(q.high >= q.low);
    REQUIRE(q.residual_maturity > 0.0);
    REQUIRE(q.duration > 0.0);
    REQUIRE(std::isfinite(q.yield));
  }
  for (const auto& m : r.truth.mispricing) {
    REQUIRE(std::abs(m.value) > 0.0);
    REQUIRE(std::abs(m.value) < 2.0);
    if (m.isin % 2 == 0)
      REQUIRE(m.value > 0.0);
    else
      REQUIRE(m.value < 0.0);
  }
}

// ---------------------------------------------------------------------------
// Emission and loading.

TEST_CASE("emitted files round-trip through the loaders") {
  const auto& r = default_run();
  const auto& cfg = r.truth.config;
  const auto dir = temp_dir("roundtrip");
  const auto tx_path = (dir / "transactions.csv").string();
  const auto bond_path = (dir / "bonds.csv").string();
  sim::write_transactions(r, tx_path);
  sim::write_bonds(r, bond_path);

  const auto tx = datamodel::load_transactions(tx_path);
  REQUIRE(tx.rejects.empty());
  REQUIRE(tx.records.size() == r.transactions.size());
  REQUIRE(tx.calendar.size() == r.calendar.size());
  REQUIRE(tx.calendar.day(0) == r.calendar.day(0));
  REQUIRE(tx.calendar.day(tx.calendar.size() - 1) ==
          r.calendar.day(r.calendar.size() - 1));
  for (std::size_t i : {std::size_t{0}, tx.records.size() / 2,
                        tx.records.size() - 1}) {
    const auto& a = r.transactions[i];
    const auto& b = tx.records[i];
    REQUIRE(b.volume == a.volume);  // shortest round-trip formatting
    REQUIRE(b.rate_spread == a.rate_spread);
    REQUIRE(b.collateral_mv == a.collateral_mv);
    REQUIRE(b.maturity_days == a.maturity_days);
    REQUIRE(b.segment == a.segment);
    REQUIRE(b.sector == a.sector);
    REQUIRE(b.date == a.date);
    REQUIRE(tx.dealers.name(b.dealer) == r.dealers.name(a.dealer));
    REQUIRE(tx.families.name(b.family) == r.families.name(a.family));
    REQUIRE(tx.isins.name(b.isin) == r.isins.name(a.isin));
  }

  const auto bonds = datamodel::load_bonds(bond_path);
  REQUIRE(bonds.rejects.empty());
  REQUIRE(bonds.records.size() == r.bonds.size());
  for (std::size_t i : {std::size_t{0}, bonds.records.size() - 1}) {
    REQUIRE(bonds.records[i].yield == r.bonds[i].yield);
    REQUIRE(bonds.records[i].duration == r.bonds[i].duration);
    REQUIRE(bonds.isins.name(bonds.records[i].isin) ==
            r.isins.name(r.bonds[i].isin));
  }

  // The ground-truth file parses and echoes the planted parameters.
  const auto truth_path = (dir / "truth.json").string();
  sim::write_ground_truth(r, truth_path);
  std::ifstream is(truth_path, std::ios::binary);
  const auto j = nlohmann::json::parse(is);
  REQUIRE(j["alpha"].get<double>() == cfg.demand.alpha);
  REQUIRE(j["effects"]["markup"].get<double>() == cfg.effects.a1_markup);
  REQUIRE(j["market_power"]["repo"].size() ==
          static_cast<std::size_t>(cfg.n_days) *
              static_cast<std::size_t>(cfg.n_dealers));
  REQUIRE(j["global_factors"]["reverse"].size() ==
          static_cast<std::size_t>(cfg.n_days));
  REQUIRE(j["mispricing"].size() == r.truth.mispricing.size());
  REQUIRE(j["selected_dealers"]["repo"].size() ==
          r.truth.selected_dealers[0].size());
  REQUIRE(j["selected_dealers"]["repo"][0].get<std::string>() ==
          r.dealers.name(r.truth.selected_dealers[0][0]));
}
