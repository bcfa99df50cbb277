// Tests for granular instruments: factor retention, screening, residual
// orthogonality, size-weighted aggregation with renormalization, and the
// relevance/exclusion properties on a planted factor model.

#include <Eigen/Dense>
#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <vector>

#include "repometrics/giv.hpp"
#include "repometrics/rng.hpp"
#include "repometrics/types.hpp"

using namespace repometrics;

namespace {

Calendar make_calendar(int n_days) {
  return Calendar::weekdays_from(parse_date("2021-01-04"), n_days);
}

// Balanced panel from a dense T x N matrix.
giv::Panel dense_panel(const Eigen::MatrixXd& x,
                       const std::vector<double>& volumes) {
  giv::Panel panel;
  panel.n_dates = static_cast<std::int32_t>(x.rows());
  for (Eigen::Index u = 0; u < x.cols(); ++u) {
    panel.units.push_back(
        giv::UnitKey{static_cast<std::int32_t>(u), 0, Segment::repo});
    panel.unit_volume.push_back(volumes[static_cast<std::size_t>(u)]);
  }
  for (Eigen::Index t = 0; t < x.rows(); ++t)
    for (Eigen::Index u = 0; u < x.cols(); ++u) {
      panel.obs_unit.push_back(static_cast<std::int32_t>(u));
      panel.obs_date.push_back(static_cast<std::int32_t>(t));
      panel.obs_value.push_back(x(t, u));
    }
  return panel;
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(a.size());
  mb /= static_cast<double>(a.size());
  double saa = 0, sbb = 0, sab = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
    sab += (a[i] - ma) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST_CASE("retention count on exactly uncorrelated units") {
  // Columns built to be mean-zero and mutually orthogonal with equal
  // variance: every component explains exactly 1/N, so a 0.895 target
  // retains ceil(0.895 * 20) = 18 components.
  const int T = 100, N = 20;
  rng::Stream rng(5);
  Eigen::MatrixXd raw(T, N + 1);
  raw.col(0).setOnes();
  for (int t = 0; t < T; ++t)
    for (int u = 1; u <= N; ++u) raw(t, u) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(raw);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(T, N + 1);
  Eigen::MatrixXd x = q.rightCols(N);  // orthonormal, orthogonal to constant

  auto panel = dense_panel(x, std::vector<double>(N, 1.0));
  giv::FactorConfig config;
  config.evr_threshold = 0.895;
  config.max_factors = N;
  auto fac = giv::extract_factors(panel, config);
  CHECK(fac.n_factors == 18);
  CHECK(fac.kept_units.size() == static_cast<std::size_t>(N));
  CHECK(fac.dates.size() == static_cast<std::size_t>(T));
}

TEST_CASE("a dominant common factor is captured by one component") {
  const int T = 300, N = 25;
  rng::Stream rng(11);
  std::vector<double> f(T), lambda(N);
  for (auto& v : f) v = rng.normal();
  for (auto& l : lambda) l = 0.5 + rng.uniform();
  Eigen::MatrixXd x(T, N);
  for (int t = 0; t < T; ++t)
    for (int u = 0; u < N; ++u)
      x(t, u) = lambda[static_cast<std::size_t>(u)] *
                    f[static_cast<std::size_t>(t)] +
                0.05 * rng.normal();

  auto panel = dense_panel(x, std::vector<double>(N, 1.0));
  auto fac = giv::extract_factors(panel);
  REQUIRE(fac.n_factors == 1);
  CHECK(fac.explained[0] > 0.9);
  std::vector<double> score(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t)
    score[static_cast<std::size_t>(t)] = fac.scores(t, 0);
  CHECK(std::abs(correlation(score, f)) > 0.99);
}

TEST_CASE("screening drops flat and short units with warnings") {
  const int T = 100;
  rng::Stream rng(3);
  Eigen::MatrixXd x(T, 4);
  for (int t = 0; t < T; ++t) {
    x(t, 0) = rng.normal();
    x(t, 1) = rng.normal();
    x(t, 2) = 7.5;  // constant
    x(t, 3) = rng.normal();
  }
  auto panel = dense_panel(x, {1, 1, 1, 1});
  // Thin out unit 3 to 40 observations.
  giv::Panel thinned;
  thinned.units = panel.units;
  thinned.unit_volume = panel.unit_volume;
  thinned.n_dates = panel.n_dates;
  for (std::size_t i = 0; i < panel.obs_unit.size(); ++i) {
    if (panel.obs_unit[i] == 3 && panel.obs_date[i] >= 40) continue;
    thinned.obs_unit.push_back(panel.obs_unit[i]);
    thinned.obs_date.push_back(panel.obs_date[i]);
    thinned.obs_value.push_back(panel.obs_value[i]);
  }
  giv::FactorConfig config;
  config.min_obs = 50;
  auto fac = giv::extract_factors(thinned, config);
  REQUIRE(fac.kept_units.size() == 2);
  CHECK(fac.kept_units[0] == 0);
  CHECK(fac.kept_units[1] == 1);
  bool saw_short = false, saw_flat = false;
  for (const auto& w : fac.warnings) {
    if (w.find("fewer than") != std::string::npos) saw_short = true;
    if (w.find("zero variance") != std::string::npos) saw_flat = true;
  }
  CHECK(saw_short);
  CHECK(saw_flat);
}

TEST_CASE("residuals are orthogonal to factors and mean zero per unit") {
  const int T = 200, N = 10;
  rng::Stream rng(7);
  std::vector<double> f(T);
  for (auto& v : f) v = rng.normal();
  Eigen::MatrixXd x(T, N);
  for (int t = 0; t < T; ++t)
    for (int u = 0; u < N; ++u)
      x(t, u) = (0.5 + 0.1 * u) * f[static_cast<std::size_t>(t)] +
                0.3 * rng.normal() + 0.2 * u;

  auto panel = dense_panel(x, std::vector<double>(N, 1.0));
  auto cal = make_calendar(T);

  for (auto fe : {giv::FeMode::none, giv::FeMode::full}) {
    auto fac = giv::extract_factors(panel);
    auto resid = giv::idiosyncratic_residuals(panel, fac, cal, fe);
    // Accumulate per-unit sums and factor cross-products.
    std::vector<double> sum(N, 0.0);
    std::vector<double> cross(static_cast<std::size_t>(N) *
                                  static_cast<std::size_t>(fac.n_factors),
                              0.0);
    for (std::size_t i = 0; i < resid.size(); ++i) {
      REQUIRE(std::isfinite(resid[i]));
      const auto u = static_cast<std::size_t>(panel.obs_unit[i]);
      sum[u] += resid[i];
      for (int j = 0; j < fac.n_factors; ++j)
        cross[u * static_cast<std::size_t>(fac.n_factors) +
              static_cast<std::size_t>(j)] +=
            resid[i] * fac.scores(panel.obs_date[i], j);
    }
    for (int u = 0; u < N; ++u) {
      CHECK(std::abs(sum[static_cast<std::size_t>(u)]) < 1e-7);
      for (int j = 0; j < fac.n_factors; ++j)
        CHECK(std::abs(cross[static_cast<std::size_t>(u) *
                                 static_cast<std::size_t>(fac.n_factors) +
                             static_cast<std::size_t>(j)]) < 1e-6);
    }
  }
}

TEST_CASE("aggregation weights by size and renormalizes over availability") {
  giv::Panel panel;
  panel.n_dates = 3;
  for (int u = 0; u < 3; ++u)
    panel.units.push_back(giv::UnitKey{u, 0, Segment::repo});
  panel.unit_volume = {5.0, 3.0, 2.0};
  // Date 0: all three units; date 1: units 0 and 2; date 2: nothing.
  panel.obs_unit = {0, 1, 2, 0, 2};
  panel.obs_date = {0, 0, 0, 1, 1};
  panel.obs_value = {0, 0, 0, 0, 0};  // unused by build_giv
  std::vector<double> resid = {1.0, 2.0, 3.0, 1.0, 3.0};

  auto inst = giv::build_giv(panel, resid, giv::Weighting::volume);
  REQUIRE(inst.z.size() == 3);
  CHECK(inst.z[0] == Catch::Approx((5.0 + 6.0 + 6.0) / 10.0).margin(1e-12));
  CHECK(inst.z[1] == Catch::Approx((5.0 + 6.0) / 7.0).margin(1e-12));
  CHECK(std::isnan(inst.z[2]));
  CHECK(inst.z2[0] == Catch::Approx(inst.z[0] * inst.z[0]).margin(1e-12));
  CHECK(std::isnan(inst.z2[2]));

  auto byobs = giv::build_giv(panel, resid, giv::Weighting::observations);
  // Observation counts: 2, 1, 2.
  CHECK(byobs.z[0] == Catch::Approx((2.0 + 2.0 + 6.0) / 5.0).margin(1e-12));
  CHECK(byobs.z[1] == Catch::Approx((2.0 + 6.0) / 4.0).margin(1e-12));
}

TEST_CASE("instrument tracks the granular idiosyncratic aggregate") {
  // The factor step absorbs an (approximately equal-weighted) average of the
  // idiosyncratic shocks along with the common factor, so the feasible
  // series equals the size-weighted minus equal-weighted shock aggregate.
  // With concentrated (Zipf) sizes that difference retains most of the
  // size-weighted shock, which is what makes the instrument relevant.
  const int T = 500, N = 30;
  rng::Stream rng(2024);
  std::vector<double> volumes(N), lambda(N);
  double volsum = 0.0;
  for (int u = 0; u < N; ++u) {
    volumes[static_cast<std::size_t>(u)] = 1.0 / (1.0 + u);
    volsum += volumes[static_cast<std::size_t>(u)];
    lambda[static_cast<std::size_t>(u)] = 0.5 + rng.uniform();
  }
  std::vector<double> f(T);
  for (auto& v : f) v = rng.normal();

  Eigen::MatrixXd eps(T, N);
  Eigen::MatrixXd x(T, N);
  for (int t = 0; t < T; ++t)
    for (int u = 0; u < N; ++u) {
      eps(t, u) = 0.5 * rng.normal();
      x(t, u) = lambda[static_cast<std::size_t>(u)] *
                    f[static_cast<std::size_t>(t)] +
                eps(t, u);
    }

  std::vector<double> z_size(static_cast<std::size_t>(T), 0.0);
  std::vector<double> z_diff(static_cast<std::size_t>(T), 0.0);
  for (int t = 0; t < T; ++t) {
    double eq = 0.0;
    for (int u = 0; u < N; ++u) eq += eps(t, u) / N;
    for (int u = 0; u < N; ++u)
      z_size[static_cast<std::size_t>(t)] +=
          volumes[static_cast<std::size_t>(u)] / volsum * eps(t, u);
    z_diff[static_cast<std::size_t>(t)] =
        z_size[static_cast<std::size_t>(t)] - eq;
  }

  auto panel = dense_panel(x, volumes);
  auto cal = make_calendar(T);
  giv::FactorConfig config;
  config.evr_threshold = 0.3;  // one component captures the planted factor
  auto fac = giv::extract_factors(panel, config);
  REQUIRE(fac.n_factors == 1);
  auto resid = giv::idiosyncratic_residuals(panel, fac, cal, giv::FeMode::none);
  auto inst = giv::build_giv(panel, resid, giv::Weighting::volume);

  // Relevance: tracks the feasible granular target almost perfectly and
  // retains most of the size-weighted shock.
  CHECK(correlation(inst.z, z_diff) > 0.95);
  CHECK(correlation(inst.z, z_size) > 0.6);
  // Exclusion: orthogonal to the common factor.
  CHECK(std::abs(correlation(inst.z, f)) < 0.1);
}
