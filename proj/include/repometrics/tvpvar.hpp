#pragma once

// Time-varying VAR by kernel-weighted quasi-Bayesian local likelihood.
// At each reference period the sample is reweighted with a Gaussian kernel
// and combined with a Minnesota-style normal/inverse-Wishart prior, giving
// closed-form conjugate posteriors for the coefficient matrix and the
// innovation covariance. Draws (or posterior means) feed the moving-average
// representation used by the spectral decomposition downstream.
//
// Posterior updates, with D = diag(rho), coefficients B (m x N, columns are
// equations), prior precision Xi0 (m x m), prior mean B0:
//   Xi~    = Xi0 + X' D X
//   B~     = Xi~^{-1} (Xi0 B0 + X' D Y)
//   alpha~ = alpha0 + sum(rho)
//   Gamma~ = Gamma0 + Y' D Y + B0' Xi0 B0 - B~' Xi~ B~
// These satisfy exact sequential conjugacy: updating on one weighted batch
// and then another reproduces the single-pass posterior.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "common.hpp"
#include "rng.hpp"

namespace repometrics::tvpvar {

inline void validate_lags(int p) {
  if (p < 2 || p > 5)
    throw ConfigError("lag order must be one of {2, 3, 4, 5}, got " +
                      std::to_string(p));
}

struct Config {
  int lags = 2;
  double bandwidth = 0.0;    // <= 0 means sqrt(effective sample size)
  bool ess_normalize = true; // rescale kernel weights to effective sample size
  double minnesota_phi = 0.05;
  double intercept_kappa = 100.0;
  int h_truncation = 100;    // moving-average horizon
};

// ---------------------------------------------------------------------------
// Design construction.

struct Design {
  Eigen::MatrixXd x;  // T_eff x (1 + N p): intercept, lag 1, ..., lag p
  Eigen::MatrixXd y;  // T_eff x N
};

inline Design build_design(const Eigen::MatrixXd& series, int p) {
  validate_lags(p);
  const auto T = series.rows();
  const auto N = series.cols();
  if (T <= p + 1)
    throw DataError("time-varying VAR: sample too short for " +
                    std::to_string(p) + " lags");
  Design d;
  const auto Te = T - p;
  d.x.resize(Te, 1 + N * p);
  d.y = series.bottomRows(Te);
  for (Eigen::Index t = 0; t < Te; ++t) {
    d.x(t, 0) = 1.0;
    for (int l = 1; l <= p; ++l)
      d.x.row(t).segment(1 + N * (l - 1), N) = series.row(t + p - l);
  }
  return d;
}

// ---------------------------------------------------------------------------
// Kernel weights.

// Gaussian kernel values w_k = phi((k - t) / H) for k = 0..T-1, optionally
// rescaled so they sum to the kernel's effective sample size
// (sum w)^2 / sum w^2 rather than to sum w.
inline Eigen::VectorXd kernel_weights(Eigen::Index T, double bandwidth,
                                      Eigen::Index t, bool ess_normalize) {
  if (!(bandwidth > 0.0))
    throw ConfigError("kernel bandwidth must be positive");
  Eigen::VectorXd w(T);
  const double inv = 1.0 / bandwidth;
  for (Eigen::Index k = 0; k < T; ++k) {
    const double u = (static_cast<double>(k - t)) * inv;
    w(k) = std::exp(-0.5 * u * u) / std::sqrt(2.0 * M_PI);
  }
  if (ess_normalize) {
    const double s1 = w.sum();
    const double s2 = w.squaredNorm();
    if (s2 > 0.0) w *= s1 / s2;  // now sum(w) = s1^2 / s2 = ESS
  }
  return w;
}

// ---------------------------------------------------------------------------
// Prior.

struct Prior {
  Eigen::MatrixXd b0;    // m x N
  Eigen::MatrixXd xi0;   // m x m prior precision scale
  double alpha0 = 0.0;
  Eigen::MatrixXd gamma0;  // N x N
};

// Residual variances of univariate AR(p) regressions (with intercept),
// used to scale the prior.
inline Eigen::VectorXd ar_residual_variances(const Eigen::MatrixXd& series,
                                             int p) {
  validate_lags(p);
  const auto T = series.rows();
  const auto N = series.cols();
  if (T <= 2 * p + 2)
    throw DataError("time-varying VAR: sample too short to scale the prior");
  Eigen::VectorXd out(N);
  const auto Te = T - p;
  for (Eigen::Index j = 0; j < N; ++j) {
    Eigen::MatrixXd x(Te, p + 1);
    Eigen::VectorXd y(Te);
    for (Eigen::Index t = 0; t < Te; ++t) {
      x(t, 0) = 1.0;
      for (int l = 1; l <= p; ++l) x(t, l) = series(t + p - l, j);
      y(t) = series(t + p, j);
    }
    Eigen::VectorXd beta =
        (x.transpose() * x).ldlt().solve(x.transpose() * y);
    const double rss = (y - x * beta).squaredNorm();
    const auto dof = Te - (p + 1);
    out(j) = rss / static_cast<double>(dof > 0 ? dof : 1);
    if (!(out(j) > 0.0)) out(j) = 1e-12;
  }
  return out;
}

// Minnesota-style prior: coefficients shrink to zero except the own first
// lag (0.1); prior precision tightens quadratically with the lag and scales
// with the regressor's own residual variance; the intercept is loose.
inline Prior minnesota_prior(Eigen::Index N, int p,
                             const Eigen::VectorXd& sigma2, double phi,
                             double kappa) {
  validate_lags(p);
  if (sigma2.size() != N)
    throw ConfigError("prior scale vector length mismatch");
  if (!(phi > 0.0) || !(kappa > 0.0))
    throw ConfigError("prior tightness parameters must be positive");
  Prior prior;
  const auto m = 1 + N * p;
  prior.b0 = Eigen::MatrixXd::Zero(m, N);
  for (Eigen::Index j = 0; j < N; ++j) prior.b0(1 + j, j) = 0.1;
  Eigen::VectorXd diag(m);
  diag(0) = 1.0 / ((phi * kappa) * (phi * kappa));
  for (int l = 1; l <= p; ++l)
    for (Eigen::Index j = 0; j < N; ++j)
      diag(1 + N * (l - 1) + j) = static_cast<double>(l) *
                                  static_cast<double>(l) * sigma2(j) /
                                  (phi * phi);
  prior.xi0 = diag.asDiagonal();
  prior.alpha0 = static_cast<double>(N) + 2.0;
  prior.gamma0 = (prior.alpha0 - static_cast<double>(N) - 1.0) *
                 sigma2.asDiagonal().toDenseMatrix();
  return prior;
}

// ---------------------------------------------------------------------------
// Posterior.

struct Posterior {
  Eigen::MatrixXd b_mean;  // m x N
  Eigen::MatrixXd xi;      // m x m posterior precision scale
  double alpha = 0.0;
  Eigen::MatrixXd gamma;   // N x N
  Eigen::Index n_vars = 0;
  int n_lags = 0;
};

inline Posterior qbll_posterior(const Eigen::MatrixXd& x,
                                const Eigen::MatrixXd& y, const Prior& prior,
                                const Eigen::VectorXd& rho, int p) {
  if (x.rows() != y.rows()) throw ConfigError("design/outcome row mismatch");
  if (rho.size() != x.rows())
    throw ConfigError("weight vector length mismatch");
  const auto m = x.cols();
  const auto N = y.cols();
  if (prior.b0.rows() != m || prior.b0.cols() != N ||
      prior.xi0.rows() != m || prior.xi0.cols() != m)
    throw ConfigError("prior dimensions do not match the design");

  Posterior post;
  post.n_vars = N;
  post.n_lags = p;
  post.xi = prior.xi0 + x.transpose() * rho.asDiagonal() * x;
  Eigen::LLT<Eigen::MatrixXd> llt(post.xi);
  if (llt.info() != Eigen::Success) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(post.xi);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    throw NumericalError(
        "posterior precision is not positive definite (condition number " +
        format_double(lo != 0.0 ? std::abs(hi / lo)
                                : std::numeric_limits<double>::infinity()) +
        ")");
  }
  Eigen::MatrixXd rhs =
      prior.xi0 * prior.b0 + x.transpose() * rho.asDiagonal() * y;
  post.b_mean = llt.solve(rhs);
  post.alpha = prior.alpha0 + rho.sum();
  post.gamma = prior.gamma0 + y.transpose() * rho.asDiagonal() * y +
               prior.b0.transpose() * prior.xi0 * prior.b0 -
               post.b_mean.transpose() * post.xi * post.b_mean;
  post.gamma = 0.5 * (post.gamma + post.gamma.transpose()).eval();
  return post;
}

// Posterior mean of the innovation covariance.
inline Eigen::MatrixXd posterior_mean_sigma(const Posterior& post) {
  const double denom = post.alpha - static_cast<double>(post.n_vars) - 1.0;
  if (!(denom > 0.0))
    throw NumericalError(
        "posterior degrees of freedom too small for a covariance mean");
  return post.gamma / denom;
}

struct Draw {
  Eigen::MatrixXd b;      // m x N
  Eigen::MatrixXd sigma;  // N x N
};

// One joint draw: sigma from the inverse Wishart via the Bartlett
// decomposition, then coefficients from the matrix normal given sigma.
inline Draw sample_posterior(const Posterior& post, rng::Stream& rng) {
  const auto N = post.gamma.rows();
  const auto m = post.b_mean.rows();

  Eigen::LLT<Eigen::MatrixXd> gamma_llt(post.gamma);
  if (gamma_llt.info() != Eigen::Success)
    throw NumericalError("posterior scale matrix is not positive definite");
  Eigen::MatrixXd lg = gamma_llt.matrixL();

  // Bartlett: A lower triangular, A_ii^2 ~ chi^2(alpha - i), off-diagonals
  // standard normal; then sigma = Lg A^{-T} A^{-1} Lg'.
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(N, N);
  for (Eigen::Index i = 0; i < N; ++i) {
    const double df = post.alpha - static_cast<double>(i);
    if (!(df > 0.0))
      throw NumericalError("posterior degrees of freedom too small to draw");
    a(i, i) = std::sqrt(rng.chi_squared(df));
    for (Eigen::Index j = 0; j < i; ++j) a(i, j) = rng.normal();
  }
  // c = A^{-1} Lg', so sigma = c' c.
  Eigen::MatrixXd c = a.triangularView<Eigen::Lower>().solve(
      Eigen::MatrixXd(lg.transpose()));
  Draw draw;
  draw.sigma = c.transpose() * c;

  Eigen::LLT<Eigen::MatrixXd> xi_llt(post.xi);
  if (xi_llt.info() != Eigen::Success)
    throw NumericalError("posterior precision is not positive definite");
  Eigen::MatrixXd z(m, N);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < N; ++j) z(i, j) = rng.normal();
  Eigen::LLT<Eigen::MatrixXd> sig_llt(draw.sigma);
  if (sig_llt.info() != Eigen::Success)
    throw NumericalError("drawn covariance is not positive definite");
  // vec(B - B~) ~ N(0, sigma (x) xi^{-1}): B = B~ + Lxi^{-T} Z Ls'.
  Eigen::MatrixXd lxi = xi_llt.matrixL();
  Eigen::MatrixXd t =
      lxi.transpose().triangularView<Eigen::Upper>().solve(z);
  draw.b = post.b_mean + t * Eigen::MatrixXd(sig_llt.matrixL()).transpose();
  return draw;
}

// ---------------------------------------------------------------------------
// Moving-average representation and stability.

// Lag matrices Phi_l (N x N) from stacked coefficients: column j of B holds
// equation j, rows 1 + N(l-1) .. 1 + Nl - 1 hold lag l.
inline std::vector<Eigen::MatrixXd> lag_matrices(const Eigen::MatrixXd& b,
                                                 Eigen::Index N, int p) {
  if (b.rows() != 1 + N * p || b.cols() != N)
    throw ConfigError("coefficient matrix shape does not match lag order");
  std::vector<Eigen::MatrixXd> phi;
  phi.reserve(static_cast<std::size_t>(p));
  for (int l = 1; l <= p; ++l)
    phi.push_back(b.middleRows(1 + N * (l - 1), N).transpose());
  return phi;
}

// Moving-average weights alpha(0..h_max): alpha(0) = I,
// alpha(h) = sum_{l=1}^{min(h,p)} Phi_l alpha(h-l).
inline std::vector<Eigen::MatrixXd> var_to_vma(const Eigen::MatrixXd& b,
                                               Eigen::Index N, int p,
                                               int h_max) {
  auto phi = lag_matrices(b, N, p);
  std::vector<Eigen::MatrixXd> alpha;
  alpha.reserve(static_cast<std::size_t>(h_max) + 1);
  alpha.push_back(Eigen::MatrixXd::Identity(N, N));
  for (int h = 1; h <= h_max; ++h) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(N, N);
    for (int l = 1; l <= std::min(h, p); ++l)
      a.noalias() += phi[static_cast<std::size_t>(l - 1)] *
                     alpha[static_cast<std::size_t>(h - l)];
    alpha.push_back(std::move(a));
  }
  return alpha;
}

inline double companion_spectral_radius(const Eigen::MatrixXd& b,
                                        Eigen::Index N, int p) {
  auto phi = lag_matrices(b, N, p);
  const auto dim = N * p;
  Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(dim, dim);
  for (int l = 0; l < p; ++l)
    comp.block(0, N * l, N, N) = phi[static_cast<std::size_t>(l)];
  if (p > 1)
    comp.block(N, 0, N * (p - 1), N * (p - 1))
        .setIdentity();
  Eigen::EigenSolver<Eigen::MatrixXd> eig(comp, /*computeEigenvectors=*/false);
  return eig.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace repometrics::tvpvar
