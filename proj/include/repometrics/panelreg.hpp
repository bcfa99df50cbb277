#pragma once

// Panel regression engine: multi-way fixed-effect absorption by iterative
// demeaning, OLS/2SLS with first-stage diagnostics, and cluster-robust /
// Driscoll-Kraay covariance. Canned presets for the dyad-level impact,
// mispricing, and daily-liquidity regressions live in presets.hpp-style
// helpers further down once their input frames exist.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "common.hpp"

namespace repometrics::panelreg {

// ---------------------------------------------------------------------------
// Column-oriented data frame: named numeric columns plus named categorical
// (integer-coded) columns for FE factors, clusters, and time keys.

class Frame {
 public:
  std::size_t rows() const { return n_; }

  void add_num(const std::string& name, std::vector<double> col) {
    check_size(col.size());
    num_[name] = std::move(col);
  }
  void add_cat(const std::string& name, std::vector<std::int64_t> col) {
    check_size(col.size());
    cat_[name] = std::move(col);
  }

  bool has_num(const std::string& name) const { return num_.count(name) > 0; }
  bool has_cat(const std::string& name) const { return cat_.count(name) > 0; }

  const std::vector<double>& num(const std::string& name) const {
    auto it = num_.find(name);
    if (it == num_.end())
      throw ConfigError("missing numeric column '" + name + "'");
    return it->second;
  }
  const std::vector<std::int64_t>& cat(const std::string& name) const {
    auto it = cat_.find(name);
    if (it == cat_.end())
      throw ConfigError("missing categorical column '" + name + "'");
    return it->second;
  }

  std::vector<std::string> num_names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : num_) out.push_back(k);
    return out;
  }

  Frame select(const std::vector<std::size_t>& keep) const {
    Frame out;
    out.n_ = keep.size();
    out.sized_ = true;
    for (const auto& [k, v] : num_) {
      std::vector<double> col(keep.size());
      for (std::size_t i = 0; i < keep.size(); ++i) col[i] = v[keep[i]];
      out.num_[k] = std::move(col);
    }
    for (const auto& [k, v] : cat_) {
      std::vector<std::int64_t> col(keep.size());
      for (std::size_t i = 0; i < keep.size(); ++i) col[i] = v[keep[i]];
      out.cat_[k] = std::move(col);
    }
    return out;
  }

 private:
  void check_size(std::size_t m) {
    if (!sized_) {
      n_ = m;
      sized_ = true;
    } else if (m != n_) {
      throw ConfigError("column length mismatch: " + std::to_string(m) +
                        " vs " + std::to_string(n_));
    }
  }

  std::size_t n_ = 0;
  bool sized_ = false;
  std::map<std::string, std::vector<double>> num_;
  std::map<std::string, std::vector<std::int64_t>> cat_;
};

// Interaction of categorical columns, e.g. {"nondealer","week"}. Parsed from
// "nondealer*week" in string form.
struct FactorSpec {
  std::vector<std::string> keys;

  static FactorSpec parse(const std::string& text) {
    FactorSpec f;
    std::size_t start = 0;
    while (start <= text.size()) {
      const auto star = text.find('*', start);
      const auto end = star == std::string::npos ? text.size() : star;
      if (end > start) f.keys.push_back(text.substr(start, end - start));
      if (star == std::string::npos) break;
      start = star + 1;
    }
    if (f.keys.empty()) throw ConfigError("empty fixed-effect spec");
    return f;
  }

  std::string label() const {
    std::string s;
    for (std::size_t i = 0; i < keys.size(); ++i) {
      if (i) s += '*';
      s += keys[i];
    }
    return s;
  }
};

struct VcovSpec {
  enum class Kind { none, robust, clustered, driscoll_kraay };
  Kind kind = Kind::robust;
  std::string cluster;  // categorical column, for clustered
  std::string time;     // categorical column, for driscoll_kraay
  int lag = 20;

  static VcovSpec none() { return {Kind::none, "", "", 0}; }
  static VcovSpec robust() { return {Kind::robust, "", "", 0}; }
  static VcovSpec clustered_on(std::string key) {
    return {Kind::clustered, std::move(key), "", 0};
  }
  static VcovSpec dk(std::string time_key, int lag) {
    return {Kind::driscoll_kraay, "", std::move(time_key), lag};
  }
};

struct RegressionSpec {
  std::string dependent;
  std::vector<std::string> regressors;   // all right-hand-side slopes
  std::vector<std::string> endogenous;   // subset of regressors
  std::vector<std::string> instruments;  // excluded instruments
  std::vector<FactorSpec> absorb;
  bool intercept = true;  // ignored when absorb is nonempty (FE demean kills it)
  VcovSpec vcov = VcovSpec::robust();
  double weak_f_threshold = 10.0;
  bool drop_collinear = false;  // drop redundant columns instead of erroring
};

struct RegressionResult {
  std::vector<std::string> terms;
  Eigen::VectorXd coef;
  Eigen::MatrixXd vcov;
  double r2 = std::numeric_limits<double>::quiet_NaN();  // within-R2 when FE
  std::size_t n_obs = 0;
  std::size_t n_dropped_missing = 0;
  std::size_t n_dropped_singleton = 0;
  std::size_t df_absorbed = 0;
  std::size_t n_clusters = 0;
  std::vector<double> first_stage_F;  // per endogenous regressor
  std::vector<std::string> dropped_columns;
  std::vector<std::string> warnings;

  double se(std::size_t i) const { return std::sqrt(vcov(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i))); }
  double tstat(std::size_t i) const { return coef(static_cast<Eigen::Index>(i)) / se(i); }
  // Two-sided normal p-value.
  double pvalue(std::size_t i) const {
    return std::erfc(std::abs(tstat(i)) / std::sqrt(2.0));
  }
  std::optional<std::size_t> term_index(const std::string& name) const {
    for (std::size_t i = 0; i < terms.size(); ++i)
      if (terms[i] == name) return i;
    return std::nullopt;
  }
};

// ---------------------------------------------------------------------------
// Factor utilities.

// Densifies an interaction of categorical columns into codes 0..L-1.
inline std::vector<std::int64_t> combine_factors(const Frame& frame,
                                                 const FactorSpec& spec) {
  const std::size_t n = frame.rows();
  std::vector<const std::vector<std::int64_t>*> cols;
  for (const auto& key : spec.keys) cols.push_back(&frame.cat(key));
  std::map<std::vector<std::int64_t>, std::int64_t> dict;
  std::vector<std::int64_t> codes(n);
  std::vector<std::int64_t> tuple(cols.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) tuple[j] = (*cols[j])[i];
    auto [it, inserted] =
        dict.emplace(tuple, static_cast<std::int64_t>(dict.size()));
    codes[i] = it->second;
  }
  return codes;
}

inline std::int64_t level_count(const std::vector<std::int64_t>& codes) {
  std::int64_t mx = -1;
  for (auto c : codes) mx = std::max(mx, c);
  return mx + 1;
}

// Rows that are singletons within any factor are dropped iteratively until a
// fixed point (dropping for one factor can create singletons in another).
inline std::vector<std::size_t> nonsingleton_rows(
    const std::vector<std::vector<std::int64_t>>& factors, std::size_t n,
    std::size_t* n_dropped) {
  std::vector<char> keep(n, 1);
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& codes : factors) {
      std::map<std::int64_t, std::size_t> count;
      for (std::size_t i = 0; i < n; ++i)
        if (keep[i]) ++count[codes[i]];
      for (std::size_t i = 0; i < n; ++i) {
        if (keep[i] && count[codes[i]] == 1) {
          keep[i] = 0;
          changed = true;
        }
      }
    }
  }
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < n; ++i)
    if (keep[i]) rows.push_back(i);
  if (n_dropped) *n_dropped = n - rows.size();
  return rows;
}

struct AbsorbInfo {
  std::size_t iterations = 0;
  double max_cell_mean = 0.0;
  std::size_t df_absorbed = 0;
};

// Iterative within-transformation of every column of M over the factor list.
// Converged when the largest group mean across factors and columns is below
// tol relative to the column's scale, so columns keep their native units
// (a tolerance on raw means would sit below roundoff for large-valued
// columns). df bookkeeping uses the standard count: levels of the first
// factor plus (levels - 1) for each further factor.
inline AbsorbInfo absorb_fe(Eigen::MatrixXd& M,
                            const std::vector<std::vector<std::int64_t>>& factors,
                            double tol = 1e-10, std::size_t max_iter = 1000) {
  AbsorbInfo info;
  if (factors.empty()) return info;
  const auto n = static_cast<std::size_t>(M.rows());
  for (const auto& codes : factors)
    if (codes.size() != n)
      throw ConfigError("factor length does not match data rows");

  std::vector<std::int64_t> levels;
  for (const auto& codes : factors) levels.push_back(level_count(codes));
  for (std::size_t f = 0; f < factors.size(); ++f)
    info.df_absorbed += static_cast<std::size_t>(levels[f]) - (f > 0 ? 1 : 0);

  const auto k = M.cols();
  const Eigen::ArrayXd scale =
      M.cwiseAbs().colwise().maxCoeff().transpose().array().max(1.0);
  for (std::size_t iter = 1; iter <= max_iter; ++iter) {
    for (std::size_t f = 0; f < factors.size(); ++f) {
      const auto& codes = factors[f];
      Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(levels[f], k);
      Eigen::VectorXd cnt = Eigen::VectorXd::Zero(levels[f]);
      for (std::size_t i = 0; i < n; ++i) {
        sums.row(codes[i]) += M.row(static_cast<Eigen::Index>(i));
        cnt(codes[i]) += 1.0;
      }
      for (Eigen::Index g = 0; g < sums.rows(); ++g)
        if (cnt(g) > 0) sums.row(g) /= cnt(g);
      for (std::size_t i = 0; i < n; ++i)
        M.row(static_cast<Eigen::Index>(i)) -= sums.row(codes[i]);
    }
    // Convergence: all group means near zero for every factor.
    double worst = 0.0;
    for (std::size_t f = 0; f < factors.size(); ++f) {
      const auto& codes = factors[f];
      Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(levels[f], k);
      Eigen::VectorXd cnt = Eigen::VectorXd::Zero(levels[f]);
      for (std::size_t i = 0; i < n; ++i) {
        sums.row(codes[i]) += M.row(static_cast<Eigen::Index>(i));
        cnt(codes[i]) += 1.0;
      }
      for (Eigen::Index g = 0; g < sums.rows(); ++g)
        if (cnt(g) > 0)
          worst = std::max(
              worst, (sums.row(g).transpose().array().abs() / (cnt(g) * scale))
                         .maxCoeff());
    }
    info.iterations = iter;
    info.max_cell_mean = worst;
    if (worst < tol) return info;
  }
  throw NumericalError(
      "fixed-effect absorption did not converge; max cell mean = " +
      format_double(info.max_cell_mean) + " after " +
      std::to_string(max_iter) + " sweeps");
}

// ---------------------------------------------------------------------------
// Least squares with rank handling.

struct LsqResult {
  Eigen::VectorXd coef;               // full length; dropped columns get 0
  std::vector<std::size_t> dropped;   // column indices found redundant
};

inline LsqResult lsq(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                     bool drop_collinear,
                     const std::vector<std::string>* names = nullptr) {
  // Equilibrate columns to unit norm before factorizing so the rank decision
  // reflects the geometry of the design, not the units of its columns: a
  // well-identified O(0.1) regressor must not be called redundant merely for
  // sitting next to one measured in billions.
  Eigen::VectorXd scale(X.cols());
  for (Eigen::Index c = 0; c < X.cols(); ++c) {
    const double nrm = X.col(c).norm();
    scale(c) = nrm > 0.0 ? 1.0 / nrm : 1.0;
  }
  const Eigen::MatrixXd Xs = X * scale.asDiagonal();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xs);
  qr.setThreshold(1e-10);
  const auto rank = qr.rank();
  LsqResult out;
  if (rank == X.cols()) {
    out.coef = scale.asDiagonal() * qr.solve(y);
    return out;
  }
  std::vector<std::size_t> dropped;
  const auto& perm = qr.colsPermutation().indices();
  for (Eigen::Index i = rank; i < X.cols(); ++i)
    dropped.push_back(static_cast<std::size_t>(perm(i)));
  std::sort(dropped.begin(), dropped.end());
  if (!drop_collinear) {
    std::string msg = "singular design; redundant columns:";
    for (auto c : dropped)
      msg += ' ' + (names && c < names->size() ? (*names)[c]
                                               : "#" + std::to_string(c));
    throw NumericalError(msg);
  }
  // Re-solve on the kept columns (still equilibrated), then unscale.
  std::vector<std::size_t> kept;
  for (std::size_t c = 0; c < static_cast<std::size_t>(X.cols()); ++c)
    if (!std::binary_search(dropped.begin(), dropped.end(), c))
      kept.push_back(c);
  Eigen::MatrixXd Xk(Xs.rows(), static_cast<Eigen::Index>(kept.size()));
  for (std::size_t j = 0; j < kept.size(); ++j)
    Xk.col(static_cast<Eigen::Index>(j)) =
        Xs.col(static_cast<Eigen::Index>(kept[j]));
  Eigen::VectorXd beta_k = Xk.colPivHouseholderQr().solve(y);
  out.coef = Eigen::VectorXd::Zero(X.cols());
  for (std::size_t j = 0; j < kept.size(); ++j)
    out.coef(static_cast<Eigen::Index>(kept[j])) =
        beta_k(static_cast<Eigen::Index>(j)) *
        scale(static_cast<Eigen::Index>(kept[j]));
  out.dropped = std::move(dropped);
  return out;
}

// ---------------------------------------------------------------------------
// Covariance estimators. `scores` holds rows X̂_i * e_i; `bread` is
// (X̂'X̂)^{-1}.

// Cluster sandwich with small-sample factor G/(G-1) * (N-1)/(N-K).
inline Eigen::MatrixXd vcov_clustered(const Eigen::MatrixXd& bread,
                                      const Eigen::MatrixXd& scores,
                                      const std::vector<std::int64_t>& clusters,
                                      std::size_t k_params,
                                      std::size_t* n_clusters_out = nullptr) {
  const auto n = static_cast<std::size_t>(scores.rows());
  if (clusters.size() != n)
    throw ConfigError("cluster key length does not match observations");
  std::map<std::int64_t, Eigen::RowVectorXd> sums;
  for (std::size_t i = 0; i < n; ++i) {
    auto [it, inserted] = sums.try_emplace(
        clusters[i], Eigen::RowVectorXd::Zero(scores.cols()));
    it->second += scores.row(static_cast<Eigen::Index>(i));
  }
  const auto G = sums.size();
  if (G < 2) throw DataError("clustered vcov needs >= 2 clusters");
  if (n_clusters_out) *n_clusters_out = G;
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(scores.cols(), scores.cols());
  for (const auto& [g, s] : sums) meat += s.transpose() * s;
  const double nn = static_cast<double>(n);
  const double gg = static_cast<double>(G);
  const double kk = static_cast<double>(k_params);
  const double c = gg / (gg - 1.0) * (nn - 1.0) / (nn - kk);
  return c * bread * meat * bread;
}

// Heteroskedasticity-robust: the degenerate clustering where every
// observation is its own cluster.
inline Eigen::MatrixXd vcov_robust(const Eigen::MatrixXd& bread,
                                   const Eigen::MatrixXd& scores,
                                   std::size_t k_params) {
  std::vector<std::int64_t> ids(static_cast<std::size_t>(scores.rows()));
  std::iota(ids.begin(), ids.end(), 0);
  return vcov_clustered(bread, scores, ids, k_params);
}

// Driscoll-Kraay: Bartlett-weighted autocovariances of the cross-sectionally
// summed scores h_t. No small-sample factor, so lag 0 is exactly the plain
// sandwich over the summed scores.
inline Eigen::MatrixXd vcov_driscoll_kraay(const Eigen::MatrixXd& bread,
                                           const Eigen::MatrixXd& scores,
                                           const std::vector<std::int64_t>& time,
                                           int lag) {
  const auto n = static_cast<std::size_t>(scores.rows());
  if (time.size() != n)
    throw ConfigError("time key length does not match observations");
  std::set<std::int64_t> uniq(time.begin(), time.end());
  std::vector<std::int64_t> order(uniq.begin(), uniq.end());
  const auto T = order.size();
  if (static_cast<std::size_t>(lag) >= T || lag < 0)
    throw ConfigError("driscoll_kraay lag must satisfy 0 <= lag < T (lag=" +
                      std::to_string(lag) + ", T=" + std::to_string(T) + ")");
  std::map<std::int64_t, std::size_t> pos;
  for (std::size_t t = 0; t < T; ++t) pos[order[t]] = t;
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(T),
                                            scores.cols());
  for (std::size_t i = 0; i < n; ++i)
    H.row(static_cast<Eigen::Index>(pos[time[i]])) +=
        scores.row(static_cast<Eigen::Index>(i));
  Eigen::MatrixXd S = H.transpose() * H;  // lag 0 term
  for (int l = 1; l <= lag; ++l) {
    const double w = 1.0 - static_cast<double>(l) / (lag + 1.0);
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(scores.cols(), scores.cols());
    for (std::size_t t = static_cast<std::size_t>(l); t < T; ++t)
      G += H.row(static_cast<Eigen::Index>(t)).transpose() *
           H.row(static_cast<Eigen::Index>(t - static_cast<std::size_t>(l)));
    S += w * (G + G.transpose());
  }
  return bread * S * bread;
}

// ---------------------------------------------------------------------------
// 2SLS / OLS driver.

inline RegressionResult tsls(const RegressionSpec& spec, const Frame& frame) {
  for (const auto& e : spec.endogenous)
    if (std::find(spec.regressors.begin(), spec.regressors.end(), e) ==
        spec.regressors.end())
      throw ConfigError("endogenous column '" + e + "' not in regressors");
  if (!spec.endogenous.empty() &&
      spec.instruments.size() < spec.endogenous.size())
    throw ConfigError("under-identified: " +
                      std::to_string(spec.instruments.size()) +
                      " instruments for " +
                      std::to_string(spec.endogenous.size()) +
                      " endogenous regressors");

  // Assemble used columns; listwise-delete rows with non-finite values.
  std::vector<std::string> used = {spec.dependent};
  used.insert(used.end(), spec.regressors.begin(), spec.regressors.end());
  used.insert(used.end(), spec.instruments.begin(), spec.instruments.end());
  const std::size_t n_all = frame.rows();
  std::vector<std::size_t> rows;
  rows.reserve(n_all);
  for (std::size_t i = 0; i < n_all; ++i) {
    bool ok = true;
    for (const auto& c : used)
      if (!std::isfinite(frame.num(c)[i])) {
        ok = false;
        break;
      }
    if (ok) rows.push_back(i);
  }
  RegressionResult res;
  res.n_dropped_missing = n_all - rows.size();

  // Factor codes on the retained rows; singleton groups dropped.
  Frame sub = frame.select(rows);
  std::vector<std::vector<std::int64_t>> factors;
  for (const auto& f : spec.absorb)
    factors.push_back(combine_factors(sub, f));
  if (!factors.empty()) {
    std::size_t n_singleton = 0;
    auto keep = nonsingleton_rows(factors, sub.rows(), &n_singleton);
    if (n_singleton > 0) {
      sub = sub.select(keep);
      factors.clear();
      for (const auto& f : spec.absorb)
        factors.push_back(combine_factors(sub, f));
      res.n_dropped_singleton = n_singleton;
    }
  }
  const std::size_t n = sub.rows();
  if (n == 0) throw DataError("no usable observations after filtering");

  const bool with_intercept = spec.absorb.empty() && spec.intercept;
  const std::size_t k_slopes = spec.regressors.size();
  const std::size_t k = k_slopes + (with_intercept ? 1 : 0);
  if (k == 0) throw ConfigError("regression has no right-hand-side columns");

  // Columns: ordered [regressors..., intercept?]; Z = [exogenous...,
  // instruments..., intercept?].
  Eigen::VectorXd y(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i)
    y(static_cast<Eigen::Index>(i)) = sub.num(spec.dependent)[i];

  Eigen::MatrixXd X(static_cast<Eigen::Index>(n),
                    static_cast<Eigen::Index>(k));
  for (std::size_t j = 0; j < k_slopes; ++j)
    for (std::size_t i = 0; i < n; ++i)
      X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          sub.num(spec.regressors[j])[i];
  if (with_intercept) X.col(static_cast<Eigen::Index>(k_slopes)).setOnes();

  std::vector<std::size_t> endo_idx;
  for (const auto& e : spec.endogenous) {
    const auto it =
        std::find(spec.regressors.begin(), spec.regressors.end(), e);
    endo_idx.push_back(
        static_cast<std::size_t>(it - spec.regressors.begin()));
  }

  const std::size_t n_inst = spec.instruments.size();
  const std::size_t kz = k - endo_idx.size() + n_inst;
  Eigen::MatrixXd Z(static_cast<Eigen::Index>(n),
                    static_cast<Eigen::Index>(kz));
  {
    Eigen::Index zc = 0;
    for (std::size_t j = 0; j < k_slopes; ++j) {
      if (std::find(endo_idx.begin(), endo_idx.end(), j) != endo_idx.end())
        continue;
      Z.col(zc++) = X.col(static_cast<Eigen::Index>(j));
    }
    for (const auto& name : spec.instruments) {
      for (std::size_t i = 0; i < n; ++i)
        Z(static_cast<Eigen::Index>(i), zc) = sub.num(name)[i];
      ++zc;
    }
    if (with_intercept) Z.col(zc) = X.col(static_cast<Eigen::Index>(k_slopes));
  }

  // Demean y, X, Z jointly over the absorbed factors.
  AbsorbInfo absorb_info;
  if (!factors.empty()) {
    Eigen::MatrixXd all(static_cast<Eigen::Index>(n),
                        1 + X.cols() + Z.cols());
    all << y, X, Z;
    absorb_info = absorb_fe(all, factors);
    y = all.col(0);
    X = all.middleCols(1, X.cols());
    Z = all.rightCols(Z.cols());
  }
  res.df_absorbed = absorb_info.df_absorbed;

  // First stage: endogenous columns projected on Z.
  Eigen::MatrixXd Xhat = X;
  if (!endo_idx.empty()) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> zqr(Z);
    zqr.setThreshold(1e-10);
    if (zqr.rank() < Z.cols()) {
      if (!spec.drop_collinear)
        throw NumericalError("singular instrument matrix in first stage");
    }
    for (auto j : endo_idx) {
      const Eigen::VectorXd xj = X.col(static_cast<Eigen::Index>(j));
      const Eigen::VectorXd gamma = zqr.solve(xj);
      const Eigen::VectorXd fitted = Z * gamma;
      Xhat.col(static_cast<Eigen::Index>(j)) = fitted;
      // Partial F of the excluded instruments: compare against the
      // projection on the included (exogenous) columns only.
      const Eigen::Index n_incl = Z.cols() - static_cast<Eigen::Index>(n_inst);
      Eigen::MatrixXd Zr(Z.rows(), n_incl);
      {
        const Eigen::Index n_exog =
            n_incl - (with_intercept ? 1 : 0);
        if (n_exog > 0) Zr.leftCols(n_exog) = Z.leftCols(n_exog);
        if (with_intercept) Zr.col(n_incl - 1) = Z.col(Z.cols() - 1);
      }
      double rss_u = (xj - fitted).squaredNorm();
      double rss_r;
      if (Zr.cols() > 0) {
        Eigen::VectorXd gr = Zr.colPivHouseholderQr().solve(xj);
        rss_r = (xj - Zr * gr).squaredNorm();
      } else {
        rss_r = xj.squaredNorm();
      }
      const double df_u =
          static_cast<double>(n) - static_cast<double>(Z.cols()) -
          static_cast<double>(absorb_info.df_absorbed);
      const double q = static_cast<double>(n_inst);
      const double F = ((rss_r - rss_u) / q) / (rss_u / df_u);
      res.first_stage_F.push_back(F);
      if (F < spec.weak_f_threshold)
        res.warnings.push_back(
            "weak first stage for '" + spec.regressors[j] +
            "': F = " + format_double(F) + " < " +
            format_double(spec.weak_f_threshold));
    }
  }

  // Names for diagnostics.
  std::vector<std::string> names = spec.regressors;
  if (with_intercept) names.push_back("(intercept)");

  auto solved = lsq(Xhat, y, spec.drop_collinear, &names);
  if (!solved.dropped.empty())
    for (auto c : solved.dropped) res.dropped_columns.push_back(names[c]);

  const Eigen::VectorXd resid = y - X * solved.coef;

  // Sandwich pieces. Keep only non-dropped columns in the bread/meat, then
  // scatter back so the reported covariance aligns with `terms`.
  std::vector<std::size_t> kept;
  for (std::size_t c = 0; c < k; ++c)
    if (std::find(solved.dropped.begin(), solved.dropped.end(), c) ==
        solved.dropped.end())
      kept.push_back(c);
  Eigen::MatrixXd Xh(static_cast<Eigen::Index>(n),
                     static_cast<Eigen::Index>(kept.size()));
  for (std::size_t j = 0; j < kept.size(); ++j)
    Xh.col(static_cast<Eigen::Index>(j)) =
        Xhat.col(static_cast<Eigen::Index>(kept[j]));

  const Eigen::MatrixXd xtx = Xh.transpose() * Xh;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(xtx);
  if (ldlt.info() != Eigen::Success)
    throw NumericalError("X'X not positive definite");
  const Eigen::MatrixXd bread =
      ldlt.solve(Eigen::MatrixXd::Identity(xtx.rows(), xtx.cols()));

  Eigen::MatrixXd scores(static_cast<Eigen::Index>(n),
                         static_cast<Eigen::Index>(kept.size()));
  for (std::size_t i = 0; i < n; ++i)
    scores.row(static_cast<Eigen::Index>(i)) =
        Xh.row(static_cast<Eigen::Index>(i)) *
        resid(static_cast<Eigen::Index>(i));

  const std::size_t k_total = kept.size() + absorb_info.df_absorbed;
  Eigen::MatrixXd V;
  switch (spec.vcov.kind) {
    case VcovSpec::Kind::none: {
      const double dof =
          static_cast<double>(n) - static_cast<double>(k_total);
      const double s2 = resid.squaredNorm() / std::max(dof, 1.0);
      V = s2 * bread;
      break;
    }
    case VcovSpec::Kind::robust:
      V = vcov_robust(bread, scores, k_total);
      break;
    case VcovSpec::Kind::clustered: {
      const auto& cl = sub.cat(spec.vcov.cluster);
      V = vcov_clustered(bread, scores, cl, k_total, &res.n_clusters);
      break;
    }
    case VcovSpec::Kind::driscoll_kraay: {
      const auto& tm = sub.cat(spec.vcov.time);
      V = vcov_driscoll_kraay(bread, scores, tm, spec.vcov.lag);
      break;
    }
  }

  // Scatter back to full coefficient order.
  res.terms = names;
  res.coef = solved.coef;
  res.vcov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k),
                                   static_cast<Eigen::Index>(k));
  for (std::size_t a = 0; a < kept.size(); ++a)
    for (std::size_t b = 0; b < kept.size(); ++b)
      res.vcov(static_cast<Eigen::Index>(kept[a]),
               static_cast<Eigen::Index>(kept[b])) =
          V(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));

  const double tss = (y.array() - (factors.empty() && with_intercept
                                       ? y.mean()
                                       : 0.0))
                         .matrix()
                         .squaredNorm();
  res.r2 = tss > 0 ? 1.0 - resid.squaredNorm() / tss : 0.0;
  res.n_obs = n;
  return res;
}

inline RegressionResult ols(const RegressionSpec& spec_in, const Frame& frame) {
  RegressionSpec spec = spec_in;
  spec.endogenous.clear();
  spec.instruments.clear();
  return tsls(spec, frame);
}

}  // namespace repometrics::panelreg
