#pragma once

// Frequency-domain connectedness: discrete transfer functions of a VAR's
// moving-average representation, forecast-error variance decompositions
// restricted to frequency bands (persistent vs transitory), row
// normalization, and the network summary used as the global dealer factor.
//
// The decomposition treats innovations through their variances only (the
// covariance is diagonalized first), so for shock k and responder j
//   theta_band(j, k) = sigma_kk * sum_{w in band} |Psi_jk(w)|^2 / D_j,
//   D_j = sum_{w in grid} sum_k sigma_kk |Psi_jk(w)|^2,
// which makes rows sum to one across bands and columns by construction and
// is invariant to rescaling the covariance.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "common.hpp"

namespace repometrics::connect {

// ---------------------------------------------------------------------------
// Transfer function on the Fourier grid w_j = 2 pi j / grid, j = 0..grid-1.
// Moving-average terms beyond the grid length would alias and are ignored;
// missing terms count as zero.

struct Transfer {
  std::vector<Eigen::MatrixXd> re, im;  // grid entries, each N x N
  int grid = 0;
};

inline Transfer transfer_function(const std::vector<Eigen::MatrixXd>& vma,
                                  int grid) {
  if (vma.empty()) throw ConfigError("transfer function: empty input");
  if (grid < 2) throw ConfigError("transfer function: grid too small");
  const auto N = vma[0].rows();
  Transfer tf;
  tf.grid = grid;
  tf.re.assign(static_cast<std::size_t>(grid), Eigen::MatrixXd::Zero(N, N));
  tf.im.assign(static_cast<std::size_t>(grid), Eigen::MatrixXd::Zero(N, N));
  const std::size_t n_terms =
      std::min(vma.size(), static_cast<std::size_t>(grid));
  for (int j = 0; j < grid; ++j) {
    const double w = 2.0 * M_PI * j / grid;
    auto& re = tf.re[static_cast<std::size_t>(j)];
    auto& im = tf.im[static_cast<std::size_t>(j)];
    for (std::size_t h = 0; h < n_terms; ++h) {
      const double angle = w * static_cast<double>(h);
      re.noalias() += std::cos(angle) * vma[h];
      im.noalias() -= std::sin(angle) * vma[h];
    }
  }
  return tf;
}

// ---------------------------------------------------------------------------
// Frequency bands. A grid index j maps to folded frequency
// min(w_j, 2 pi - w_j); indices with folded frequency below 2 pi / period_cut
// (cycles longer than period_cut periods, including frequency zero) are
// persistent, the rest transitory.

struct BandIndices {
  std::vector<int> persistent;
  std::vector<int> transitory;
};

inline BandIndices make_band_indices(int grid, double period_cut = 20.0) {
  if (grid < 2) throw ConfigError("band partition: grid too small");
  if (!(period_cut > 2.0))
    throw ConfigError("band partition: period cutoff must exceed 2");
  BandIndices out;
  const double threshold = 2.0 * M_PI / period_cut;
  for (int j = 0; j < grid; ++j) {
    const double w = 2.0 * M_PI * j / grid;
    const double folded = std::min(w, 2.0 * M_PI - w);
    if (folded < threshold)
      out.persistent.push_back(j);
    else
      out.transitory.push_back(j);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Band-restricted variance decomposition.

// One N x N matrix per requested band; entry (j, k) is the share of
// responder j's grid-total forecast-error variance attributed to shock k
// within the band. Rows with zero total variance become NaN.
inline std::vector<Eigen::MatrixXd> band_fevd(
    const Transfer& tf, const Eigen::MatrixXd& sigma,
    const std::vector<std::vector<int>>& bands) {
  const auto N = sigma.rows();
  if (sigma.cols() != N) throw ConfigError("covariance must be square");
  if (tf.re.empty() || tf.re[0].rows() != N)
    throw ConfigError("transfer/covariance dimension mismatch");

  // Power per (j, k) accumulated per grid point: sigma_kk |Psi_jk|^2.
  Eigen::VectorXd denom = Eigen::VectorXd::Zero(N);
  std::vector<Eigen::MatrixXd> out;
  out.reserve(bands.size());

  std::vector<Eigen::MatrixXd> power(
      static_cast<std::size_t>(tf.grid));
  for (int j = 0; j < tf.grid; ++j) {
    const auto& re = tf.re[static_cast<std::size_t>(j)];
    const auto& im = tf.im[static_cast<std::size_t>(j)];
    Eigen::MatrixXd p = re.cwiseProduct(re) + im.cwiseProduct(im);
    for (Eigen::Index k = 0; k < N; ++k) p.col(k) *= sigma(k, k);
    denom += p.rowwise().sum();
    power[static_cast<std::size_t>(j)] = std::move(p);
  }

  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& band : bands) {
    Eigen::MatrixXd theta = Eigen::MatrixXd::Zero(N, N);
    for (int j : band) {
      if (j < 0 || j >= tf.grid)
        throw ConfigError("band index outside the frequency grid");
      theta += power[static_cast<std::size_t>(j)];
    }
    for (Eigen::Index r = 0; r < N; ++r) {
      if (denom(r) > 0.0)
        theta.row(r) /= denom(r);
      else
        theta.row(r).setConstant(nan);
    }
    out.push_back(std::move(theta));
  }
  return out;
}

// Rescale so each row sums to one across all bands and columns; rows whose
// total is zero (or not finite) become NaN.
inline void row_normalize(std::vector<Eigen::MatrixXd>& thetas) {
  if (thetas.empty()) return;
  const auto N = thetas[0].rows();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (Eigen::Index r = 0; r < N; ++r) {
    double total = 0.0;
    for (const auto& th : thetas) total += th.row(r).sum();
    if (std::isfinite(total) && total > 0.0) {
      for (auto& th : thetas) th.row(r) /= total;
    } else {
      for (auto& th : thetas) th.row(r).setConstant(nan);
    }
  }
}

// ---------------------------------------------------------------------------
// Network summary: within one band, the share of system-wide variance that
// dealer rows receive from selected dealer columns other than themselves.

inline double global_dealer_factor(const std::vector<Eigen::MatrixXd>& thetas,
                                   std::size_t band,
                                   const std::vector<int>& dealer_rows,
                                   const std::vector<int>& selected_cols) {
  if (band >= thetas.size())
    throw ConfigError("global factor: band index out of range");
  if (selected_cols.empty()) return 0.0;
  const auto& th = thetas[band];
  double numerator = 0.0;
  for (int j : dealer_rows) {
    for (int k : selected_cols) {
      if (j == k) continue;
      numerator += th(j, k);
    }
  }
  double denominator = 0.0;
  for (const auto& t : thetas) denominator += t.sum();
  return numerator / denominator;
}

// Smallest set of the largest units whose cumulative volume share reaches
// `coverage`; returns indices in ascending order.
inline std::vector<int> select_dealers(const std::vector<double>& volumes,
                                       double coverage) {
  if (!(coverage > 0.0) || coverage > 1.0)
    throw ConfigError("coverage must lie in (0, 1]");
  double total = 0.0;
  for (double v : volumes) {
    if (v < 0.0) throw DataError("select_dealers: negative volume");
    total += v;
  }
  if (!(total > 0.0)) throw DataError("select_dealers: no volume");
  std::vector<int> order(volumes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (volumes[static_cast<std::size_t>(a)] !=
        volumes[static_cast<std::size_t>(b)])
      return volumes[static_cast<std::size_t>(a)] >
             volumes[static_cast<std::size_t>(b)];
    return a < b;
  });
  std::vector<int> picked;
  double cum = 0.0;
  for (int idx : order) {
    picked.push_back(idx);
    cum += volumes[static_cast<std::size_t>(idx)];
    if (cum >= coverage * total - 1e-12) break;
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

}  // namespace repometrics::connect
