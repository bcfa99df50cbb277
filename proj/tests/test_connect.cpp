#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <limits>
#include <vector>

#include "repometrics/connect.hpp"
#include "repometrics/rng.hpp"
#include "repometrics/tvpvar.hpp"

using namespace repometrics;

namespace {

// Stationary 3-variable order-2 coefficient stack [c; Phi1'; Phi2'].
Eigen::MatrixXd stable_coefficients() {
  const int N = 3;
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(1 + 2 * N, N);
  Eigen::MatrixXd phi1(N, N), phi2(N, N);
  phi1 << 0.5, 0.1, -0.2, 0.05, 0.4, 0.1, -0.1, 0.2, 0.3;
  phi2 << 0.1, 0.0, 0.05, -0.05, 0.15, 0.0, 0.0, -0.1, 0.2;
  b.middleRows(1, N) = phi1.transpose();
  b.middleRows(1 + N, N) = phi2.transpose();
  REQUIRE(tvpvar::companion_spectral_radius(b, N, 2) < 0.9);
  return b;
}

double frobenius_sq(const Eigen::MatrixXd& m) { return m.squaredNorm(); }

}  // namespace

TEST_CASE("transfer function satisfies the discrete energy identity") {
  const int N = 3, H = 64;
  auto b = stable_coefficients();
  auto vma = tvpvar::var_to_vma(b, N, 2, H - 1);  // exactly H terms
  REQUIRE(vma.size() == static_cast<std::size_t>(H));

  auto tf = connect::transfer_function(vma, H);
  REQUIRE(tf.grid == H);
  REQUIRE(tf.re.size() == static_cast<std::size_t>(H));

  // Sum of squared transfer magnitudes over the grid equals grid size times
  // the sum of squared moving-average coefficients.
  double freq_energy = 0.0;
  for (int j = 0; j < H; ++j)
    freq_energy += frobenius_sq(tf.re[j]) + frobenius_sq(tf.im[j]);
  double time_energy = 0.0;
  for (const auto& a : vma) time_energy += frobenius_sq(a);
  CHECK(freq_energy / H == Catch::Approx(time_energy).epsilon(1e-12));

  // Frequency zero is the plain sum of the coefficients.
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(N, N);
  for (const auto& a : vma) sum += a;
  CHECK((tf.re[0] - sum).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(tf.im[0].cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("scalar autoregression reproduces its spectral density") {
  const int H = 100;
  const double phi = 0.5;
  std::vector<Eigen::MatrixXd> vma;
  for (int h = 0; h < H; ++h) {
    Eigen::MatrixXd a(1, 1);
    a(0, 0) = std::pow(phi, h);
    vma.push_back(a);
  }
  auto tf = connect::transfer_function(vma, H);
  for (int j = 0; j < H; ++j) {
    const double w = 2.0 * M_PI * j / H;
    const double mag2 = tf.re[j](0, 0) * tf.re[j](0, 0) +
                        tf.im[j](0, 0) * tf.im[j](0, 0);
    // Exact value of the truncated geometric sum.
    const std::complex<double> z = phi * std::exp(std::complex<double>(0, -w));
    const double exact = std::norm((1.0 - std::pow(z, H)) / (1.0 - z));
    CHECK(mag2 == Catch::Approx(exact).epsilon(1e-10));
    // Infinite-order limit 1 / (1 - 2 phi cos w + phi^2); truncation error
    // is of order phi^H and invisible at this tolerance.
    const double limit = 1.0 / (1.0 - 2.0 * phi * std::cos(w) + phi * phi);
    CHECK(mag2 == Catch::Approx(limit).epsilon(1e-9));
  }
}

TEST_CASE("band partition splits the grid at the period cutoff") {
  auto bands = connect::make_band_indices(100, 20.0);
  CHECK(bands.persistent ==
        std::vector<int>{0, 1, 2, 3, 4, 96, 97, 98, 99});
  REQUIRE(bands.transitory.size() == 91);
  CHECK(bands.transitory.front() == 5);
  CHECK(bands.transitory.back() == 95);

  // Every index lands in exactly one band.
  std::vector<char> seen(100, 0);
  for (int j : bands.persistent) seen[static_cast<std::size_t>(j)]++;
  for (int j : bands.transitory) seen[static_cast<std::size_t>(j)]++;
  for (char c : seen) CHECK(static_cast<int>(c) == 1);

  CHECK_THROWS_AS(connect::make_band_indices(1, 20.0), ConfigError);
  CHECK_THROWS_AS(connect::make_band_indices(100, 2.0), ConfigError);
}

TEST_CASE("band decomposition is additive and rows sum to one") {
  const int N = 3, H = 100;
  auto b = stable_coefficients();
  auto vma = tvpvar::var_to_vma(b, N, 2, H - 1);
  auto tf = connect::transfer_function(vma, H);

  Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(N, N);
  sigma.diagonal() << 1.0, 0.5, 2.0;

  auto bands = connect::make_band_indices(H, 20.0);
  std::vector<int> all(H);
  std::iota(all.begin(), all.end(), 0);
  auto thetas = connect::band_fevd(
      tf, sigma, {bands.persistent, bands.transitory, all});
  REQUIRE(thetas.size() == 3);

  // The two bands partition the grid, so their shares add to the total.
  CHECK((thetas[0] + thetas[1] - thetas[2]).cwiseAbs().maxCoeff() < 1e-12);

  // Shares over the full grid sum to one per row by construction.
  for (int r = 0; r < N; ++r)
    CHECK(thetas[2].row(r).sum() == Catch::Approx(1.0).epsilon(1e-12));

  // Off-diagonal variances in the covariance are ignored (diagonalized
  // first): adding them changes nothing.
  Eigen::MatrixXd sigma_full = sigma;
  sigma_full(0, 1) = sigma_full(1, 0) = 0.4;
  auto thetas_full = connect::band_fevd(tf, sigma_full, {all});
  CHECK((thetas_full[0] - thetas[2]).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("grid-total decomposition matches the time-domain variance ratio") {
  const int N = 3, H = 128;
  auto b = stable_coefficients();
  auto vma = tvpvar::var_to_vma(b, N, 2, H - 1);
  auto tf = connect::transfer_function(vma, H);

  Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(N, N);
  sigma.diagonal() << 0.7, 1.3, 0.4;

  std::vector<int> all(H);
  std::iota(all.begin(), all.end(), 0);
  auto theta = connect::band_fevd(tf, sigma, {all})[0];

  // Independent route: with variance-only shocks the share of j's forecast
  // error variance due to shock k over the same horizon window is
  //   sigma_kk sum_h a_jk(h)^2 / sum_k' sigma_k'k' sum_h a_jk'(h)^2.
  Eigen::MatrixXd sumsq = Eigen::MatrixXd::Zero(N, N);
  for (const auto& a : vma) sumsq += a.cwiseProduct(a);
  for (int j = 0; j < N; ++j) {
    double den = 0.0;
    for (int k = 0; k < N; ++k) den += sigma(k, k) * sumsq(j, k);
    for (int k = 0; k < N; ++k) {
      const double expected = sigma(k, k) * sumsq(j, k) / den;
      CHECK(theta(j, k) == Catch::Approx(expected).margin(1e-10));
    }
  }
}

TEST_CASE("decomposition shares are invariant to rescaling the covariance") {
  const int N = 3, H = 100;
  auto b = stable_coefficients();
  auto vma = tvpvar::var_to_vma(b, N, 2, H - 1);
  auto tf = connect::transfer_function(vma, H);

  Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(N, N);
  sigma.diagonal() << 1.0, 0.5, 2.0;
  auto bands = connect::make_band_indices(H, 20.0);
  std::vector<std::vector<int>> spec{bands.persistent, bands.transitory};

  auto base = connect::band_fevd(tf, sigma, spec);
  auto scaled = connect::band_fevd(tf, 7.3 * sigma, spec);
  for (std::size_t i = 0; i < spec.size(); ++i)
    CHECK((base[i] - scaled[i]).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("zero-variance responders become NaN rows") {
  const int N = 2, H = 16;
  // Second variable never moves: its moving-average row is identically zero
  // and its own innovation variance is zero.
  std::vector<Eigen::MatrixXd> vma;
  for (int h = 0; h < H; ++h) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(N, N);
    a(0, 0) = std::pow(0.5, h);
    vma.push_back(a);
  }
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(N, N);
  sigma(0, 0) = 1.0;
  auto tf = connect::transfer_function(vma, H);

  std::vector<int> all(H);
  std::iota(all.begin(), all.end(), 0);
  auto thetas = connect::band_fevd(tf, sigma, {all});
  REQUIRE(thetas.size() == 1);
  CHECK(thetas[0](0, 0) == Catch::Approx(1.0).epsilon(1e-12));
  CHECK(thetas[0](0, 1) == 0.0);
  CHECK(std::isnan(thetas[0](1, 0)));
  CHECK(std::isnan(thetas[0](1, 1)));

  // Row normalization keeps finite rows at unit mass and NaN rows NaN.
  connect::row_normalize(thetas);
  CHECK(thetas[0].row(0).sum() == Catch::Approx(1.0).epsilon(1e-12));
  CHECK(std::isnan(thetas[0](1, 1)));
}

TEST_CASE("row normalization rescales to unit mass across bands") {
  Eigen::MatrixXd a(2, 2), b(2, 2);
  a << 0.4, 0.2, 0.1, 0.3;
  b << 0.8, 0.6, 0.5, 0.1;
  std::vector<Eigen::MatrixXd> thetas{a, b};
  connect::row_normalize(thetas);
  for (int r = 0; r < 2; ++r) {
    const double total = thetas[0].row(r).sum() + thetas[1].row(r).sum();
    CHECK(total == Catch::Approx(1.0).epsilon(1e-12));
  }
  // Relative proportions are preserved.
  CHECK(thetas[0](0, 0) / thetas[0](0, 1) == Catch::Approx(2.0));
  CHECK(thetas[1](1, 0) / thetas[1](1, 1) == Catch::Approx(5.0));
}

TEST_CASE("global factor matches the closed form on a uniform network") {
  // Every row spreads its unit mass evenly over all N columns, with a
  // fraction `share` of it in the measured band. Selecting every dealer as
  // both receiver and source gives (N - 1) / N * share.
  const int N = 6;
  const double share = 0.3;
  std::vector<Eigen::MatrixXd> thetas{
      Eigen::MatrixXd::Constant(N, N, share / N),
      Eigen::MatrixXd::Constant(N, N, (1.0 - share) / N)};
  std::vector<int> everyone(N);
  std::iota(everyone.begin(), everyone.end(), 0);

  const double gf =
      connect::global_dealer_factor(thetas, 0, everyone, everyone);
  CHECK(gf == Catch::Approx((N - 1.0) / N * share).epsilon(1e-12));

  // Empty selection contributes nothing.
  CHECK(connect::global_dealer_factor(thetas, 0, everyone, {}) == 0.0);

  // Restricting the sources scales the cross mass accordingly: two selected
  // columns reach N rows each, minus the two diagonal hits.
  const double gf2 =
      connect::global_dealer_factor(thetas, 0, everyone, {0, 1});
  CHECK(gf2 == Catch::Approx((2.0 * N - 2.0) * (share / N) / N)
                   .epsilon(1e-12));

  CHECK_THROWS_AS(
      connect::global_dealer_factor(thetas, 5, everyone, everyone),
      ConfigError);
}

TEST_CASE("global factor on an estimated system stays a valid share") {
  const int N = 3, H = 100;
  auto b = stable_coefficients();
  auto vma = tvpvar::var_to_vma(b, N, 2, H - 1);
  auto tf = connect::transfer_function(vma, H);
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(N, N);
  sigma.diagonal() << 1.0, 0.5, 2.0;
  auto bands = connect::make_band_indices(H, 20.0);
  auto thetas = connect::band_fevd(
      tf, sigma, {bands.persistent, bands.transitory});
  connect::row_normalize(thetas);

  // Treat variables 0 and 1 as dealers, both selected.
  std::vector<int> dealers{0, 1};
  const double gf_p =
      connect::global_dealer_factor(thetas, 0, dealers, dealers);
  const double gf_t =
      connect::global_dealer_factor(thetas, 1, dealers, dealers);
  CHECK(gf_p >= 0.0);
  CHECK(gf_t >= 0.0);
  CHECK(gf_p + gf_t < 1.0);

  // The denominator equals the number of variables after normalization, so
  // the factor equals the raw cross-entry sum divided by N.
  double cross = 0.0;
  for (int j : dealers)
    for (int k : dealers)
      if (j != k) cross += thetas[0](j, k);
  CHECK(gf_p == Catch::Approx(cross / N).epsilon(1e-12));
}

TEST_CASE("dealer selection takes the smallest covering prefix") {
  // Fifteen equal volumes at 40% coverage: five cover only a third, so six
  // are needed.
  std::vector<double> equal(15, 1.0);
  auto sel = connect::select_dealers(equal, 0.4);
  CHECK(sel == std::vector<int>{0, 1, 2, 3, 4, 5});

  std::vector<double> skewed{50.0, 30.0, 20.0};
  CHECK(connect::select_dealers(skewed, 0.5) == std::vector<int>{0});
  CHECK(connect::select_dealers(skewed, 0.8) == std::vector<int>{0, 1});
  CHECK(connect::select_dealers(skewed, 0.81) == std::vector<int>{0, 1, 2});
  CHECK(connect::select_dealers(skewed, 1.0) == std::vector<int>{0, 1, 2});

  // Order in the input does not bias the pick: largest first regardless.
  std::vector<double> shuffled{20.0, 50.0, 30.0};
  CHECK(connect::select_dealers(shuffled, 0.5) == std::vector<int>{1});

  CHECK_THROWS_AS(connect::select_dealers(equal, 0.0), ConfigError);
  CHECK_THROWS_AS(connect::select_dealers(equal, 1.5), ConfigError);
  CHECK_THROWS_AS(connect::select_dealers({0.0, 0.0}, 0.5), DataError);
  CHECK_THROWS_AS(connect::select_dealers({1.0, -2.0}, 0.5), DataError);
}

TEST_CASE("transfer and decomposition reject malformed inputs") {
  CHECK_THROWS_AS(connect::transfer_function({}, 16), ConfigError);
  std::vector<Eigen::MatrixXd> vma{Eigen::MatrixXd::Identity(2, 2)};
  CHECK_THROWS_AS(connect::transfer_function(vma, 1), ConfigError);

  auto tf = connect::transfer_function(vma, 8);
  Eigen::MatrixXd bad_sigma = Eigen::MatrixXd::Identity(3, 3);
  CHECK_THROWS_AS(connect::band_fevd(tf, bad_sigma, {{0}}), ConfigError);
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Identity(2, 2);
  CHECK_THROWS_AS(connect::band_fevd(tf, sigma, {{8}}), ConfigError);
  CHECK_THROWS_AS(connect::band_fevd(tf, sigma, {{-1}}), ConfigError);
}
