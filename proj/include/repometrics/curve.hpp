#pragma once

// Daily yield curves by penalized cubic B-spline regression, bond-level
// mispricing (quoted yield minus fitted curve), and the market-wide noise
// measure (per-date RMS of mispricings).
//
// The spline is clamped cubic with knots at the distinct quote maturities
// (duplicate maturities are averaged into one data row), giving m + 2 basis
// functions for m knots. Coefficients solve (N'N + lambda * Omega) c = N'y
// where Omega integrates squared second derivatives exactly (two-point
// Gauss-Legendre per knot span; the integrand is piecewise quadratic).
// lambda is chosen by generalized cross-validation over a log grid.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "common.hpp"
#include "datamodel.hpp"

namespace repometrics::curve {

// ---------------------------------------------------------------------------
// Maturity buckets (years). Bonds under three years are excluded.

enum class Bucket { short_term = 0, medium_term = 1, long_term = 2 };

inline const char* bucket_name(Bucket b) {
  switch (b) {
    case Bucket::short_term: return "short";
    case Bucket::medium_term: return "medium";
    default: return "long";
  }
}

inline std::optional<Bucket> assign_bucket(double maturity_years) {
  if (maturity_years < 3.0) return std::nullopt;
  if (maturity_years < 8.0) return Bucket::short_term;
  if (maturity_years < 20.0) return Bucket::medium_term;
  return Bucket::long_term;
}

// ---------------------------------------------------------------------------
// Clamped cubic B-spline basis.

class BSplineBasis {
 public:
  // `knots` must be strictly increasing with at least two entries.
  explicit BSplineBasis(std::vector<double> knots) : distinct_(std::move(knots)) {
    if (distinct_.size() < 2)
      throw ConfigError("spline basis needs at least two distinct knots");
    for (std::size_t i = 1; i < distinct_.size(); ++i)
      if (!(distinct_[i] > distinct_[i - 1]))
        throw ConfigError("spline knots must be strictly increasing");
    // Clamped: boundary knots repeated degree + 1 = 4 times.
    aug_.assign(4, distinct_.front());
    for (std::size_t i = 1; i + 1 < distinct_.size(); ++i)
      aug_.push_back(distinct_[i]);
    aug_.insert(aug_.end(), 4, distinct_.back());
  }

  int size() const { return static_cast<int>(aug_.size()) - 4; }
  double min() const { return distinct_.front(); }
  double max() const { return distinct_.back(); }
  const std::vector<double>& knots() const { return distinct_; }

  // Row of basis values N_i(x), i in [0, size).
  void eval(double x, Eigen::VectorXd& row) const {
    row.setZero(size());
    for (int i = 0; i < size(); ++i) row(i) = value(i, 4, x);
  }

  // Row of second derivatives N_i''(x).
  void eval_second(double x, Eigen::VectorXd& row) const {
    row.setZero(size());
    for (int i = 0; i < size(); ++i) row(i) = second(i, x);
  }

  // Omega(i, j) = integral of N_i'' N_j'' over the knot range; exact via
  // two-point Gauss-Legendre on each span (piecewise quadratic integrand).
  Eigen::MatrixXd penalty() const {
    const int n = size();
    Eigen::MatrixXd omega = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd row(n);
    const double c = 0.5 / std::sqrt(3.0);
    for (std::size_t s = 0; s + 1 < distinct_.size(); ++s) {
      const double a = distinct_[s], b = distinct_[s + 1];
      const double mid = 0.5 * (a + b), half = b - a;
      const double nodes[2] = {mid - c * half, mid + c * half};
      for (double x : nodes) {
        eval_second(x, row);
        omega.noalias() += (0.5 * half) * row * row.transpose();
      }
    }
    return omega;
  }

 private:
  // Cox-de Boor with 0/0 treated as 0; the right boundary is closed.
  double value(int i, int k, double x) const {
    const auto t = [&](int j) { return aug_[static_cast<std::size_t>(j)]; };
    if (k == 1) {
      if (t(i) <= x && x < t(i + 1)) return 1.0;
      if (x == max() && t(i + 1) == max() && t(i) < t(i + 1)) return 1.0;
      return 0.0;
    }
    double out = 0.0;
    const double d1 = t(i + k - 1) - t(i);
    if (d1 > 0.0) out += (x - t(i)) / d1 * value(i, k - 1, x);
    const double d2 = t(i + k) - t(i + 1);
    if (d2 > 0.0) out += (t(i + k) - x) / d2 * value(i + 1, k - 1, x);
    return out;
  }

  double second(int i, double x) const {
    const auto t = [&](int j) { return aug_[static_cast<std::size_t>(j)]; };
    // B''_{i,4} = 3 [ B'_{i,3} / (t_{i+3} - t_i) - B'_{i+1,3} / (t_{i+4} - t_{i+1}) ]
    // with B'_{j,3} = 2 [ B_{j,2} / (t_{j+2} - t_j) - B_{j+1,2} / (t_{j+3} - t_{j+1}) ].
    const auto dprime = [&](int j) {
      double out = 0.0;
      const double d1 = t(j + 2) - t(j);
      if (d1 > 0.0) out += value(j, 2, x) / d1;
      const double d2 = t(j + 3) - t(j + 1);
      if (d2 > 0.0) out -= value(j + 1, 2, x) / d2;
      return 2.0 * out;
    };
    double out = 0.0;
    const double d1 = t(i + 3) - t(i);
    if (d1 > 0.0) out += dprime(i) / d1;
    const double d2 = t(i + 4) - t(i + 1);
    if (d2 > 0.0) out -= dprime(i + 1) / d2;
    return 3.0 * out;
  }

  std::vector<double> distinct_;
  std::vector<double> aug_;
};

// ---------------------------------------------------------------------------
// Penalized fit.

struct FitConfig {
  double min_maturity = 3.0;  // years; shorter quotes are excluded
  int min_quotes = 6;
  int min_buckets = 3;
  std::optional<double> lambda;  // fixed penalty; otherwise GCV selects
  double log10_min = -8.0;
  double log10_max = 8.0;
  double log10_step = 0.5;
  bool leave_one_out = false;
};

class CurveFit {
 public:
  CurveFit(BSplineBasis basis, Eigen::VectorXd coef, double lambda, double gcv,
           double edf, int n_quotes)
      : basis_(std::move(basis)),
        coef_(std::move(coef)),
        lambda_(lambda),
        gcv_(gcv),
        edf_(edf),
        n_quotes_(n_quotes) {}

  double operator()(double maturity) const {
    if (maturity < basis_.min() || maturity > basis_.max())
      throw DataError("curve evaluation refused: maturity " +
                      format_double(maturity) + " outside fitted range [" +
                      format_double(basis_.min()) + ", " +
                      format_double(basis_.max()) + "]");
    Eigen::VectorXd row;
    basis_.eval(maturity, row);
    return row.dot(coef_);
  }

  double lambda() const { return lambda_; }
  double gcv() const { return gcv_; }
  double edf() const { return edf_; }
  int n_quotes() const { return n_quotes_; }
  double min_maturity() const { return basis_.min(); }
  double max_maturity() const { return basis_.max(); }

 private:
  BSplineBasis basis_;
  Eigen::VectorXd coef_;
  double lambda_;
  double gcv_;
  double edf_;
  int n_quotes_;
};

namespace detail {

struct Collapsed {
  std::vector<double> maturity;  // strictly increasing
  std::vector<double> yield;     // duplicate maturities averaged
};

inline Collapsed collapse_duplicates(const std::vector<double>& maturity,
                                     const std::vector<double>& yield) {
  std::map<double, std::pair<double, int>> acc;
  for (std::size_t i = 0; i < maturity.size(); ++i) {
    auto& a = acc[maturity[i]];
    a.first += yield[i];
    a.second += 1;
  }
  Collapsed out;
  for (const auto& [m, a] : acc) {
    out.maturity.push_back(m);
    out.yield.push_back(a.first / a.second);
  }
  return out;
}

struct Solved {
  Eigen::VectorXd coef;
  double rss = 0.0;
  double edf = 0.0;
  double gcv = std::numeric_limits<double>::infinity();
};

inline Solved solve_penalized(const Eigen::MatrixXd& design,
                              const Eigen::VectorXd& y,
                              const Eigen::MatrixXd& omega, double lambda) {
  const auto n = design.rows();
  Eigen::MatrixXd ntn = design.transpose() * design;
  Eigen::MatrixXd a = ntn + lambda * omega;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  if (ldlt.info() != Eigen::Success)
    throw NumericalError("curve fit: penalized normal equations not solvable");
  Solved s;
  s.coef = ldlt.solve(design.transpose() * y);
  Eigen::VectorXd resid = y - design * s.coef;
  s.rss = resid.squaredNorm();
  s.edf = ldlt.solve(ntn).trace();
  const double denom = static_cast<double>(n) - s.edf;
  if (denom > 1e-8)
    s.gcv = static_cast<double>(n) * s.rss / (denom * denom);
  return s;
}

}  // namespace detail

// Fits one curve from quote maturities (years) and yields. Quotes shorter
// than `min_maturity` are dropped first; the remainder must have at least
// `min_quotes` quotes covering at least `min_buckets` maturity buckets.
inline CurveFit fit_curve(const std::vector<double>& maturity,
                          const std::vector<double>& yield,
                          const FitConfig& config = {}) {
  if (maturity.size() != yield.size())
    throw ConfigError("fit_curve: maturity/yield length mismatch");
  std::vector<double> m, y;
  for (std::size_t i = 0; i < maturity.size(); ++i) {
    if (maturity[i] < config.min_maturity) continue;
    if (!std::isfinite(maturity[i]) || !std::isfinite(yield[i]))
      throw DataError("fit_curve: non-finite quote");
    m.push_back(maturity[i]);
    y.push_back(yield[i]);
  }
  if (static_cast<int>(m.size()) < config.min_quotes)
    throw DataError("curve fit refused: " + std::to_string(m.size()) +
                    " usable quote(s), need at least " +
                    std::to_string(config.min_quotes));
  std::vector<char> seen(3, 0);
  for (double mi : m)
    if (auto b = assign_bucket(mi)) seen[static_cast<std::size_t>(*b)] = 1;
  const int n_buckets = seen[0] + seen[1] + seen[2];
  if (n_buckets < config.min_buckets)
    throw DataError("curve fit refused: quotes cover " +
                    std::to_string(n_buckets) + " maturity bucket(s), need " +
                    std::to_string(config.min_buckets));

  auto data = detail::collapse_duplicates(m, y);
  BSplineBasis basis(data.maturity);
  const auto n = static_cast<Eigen::Index>(data.maturity.size());
  Eigen::MatrixXd design(n, basis.size());
  {
    Eigen::VectorXd row;
    for (Eigen::Index i = 0; i < n; ++i) {
      basis.eval(data.maturity[static_cast<std::size_t>(i)], row);
      design.row(i) = row;
    }
  }
  Eigen::VectorXd yy(n);
  for (Eigen::Index i = 0; i < n; ++i)
    yy(i) = data.yield[static_cast<std::size_t>(i)];
  Eigen::MatrixXd omega = basis.penalty();

  double best_lambda;
  detail::Solved best;
  if (config.lambda) {
    best_lambda = *config.lambda;
    if (!(best_lambda > 0.0))
      throw ConfigError("curve penalty must be positive");
    best = detail::solve_penalized(design, yy, omega, best_lambda);
  } else {
    best_lambda = std::numeric_limits<double>::quiet_NaN();
    for (double p = config.log10_min; p <= config.log10_max + 1e-12;
         p += config.log10_step) {
      const double lambda = std::pow(10.0, p);
      auto s = detail::solve_penalized(design, yy, omega, lambda);
      if (s.gcv < best.gcv) {
        best = s;
        best_lambda = lambda;
      }
    }
    if (!std::isfinite(best_lambda))
      throw NumericalError("curve fit: no penalty value gave a finite "
                           "cross-validation score");
  }
  return CurveFit(std::move(basis), std::move(best.coef), best_lambda,
                  best.gcv, best.edf, static_cast<int>(m.size()));
}

// Mispricing of one quote against a fitted curve.
inline double mispricing(const CurveFit& fit, double maturity, double yield) {
  return yield - fit(maturity);
}

// Root-mean-square of finite mispricings; NaN when none.
inline double noise_rms(const std::vector<double>& mispricings) {
  double ss = 0.0;
  int n = 0;
  for (double e : mispricings) {
    if (!std::isfinite(e)) continue;
    ss += e * e;
    ++n;
  }
  return n > 0 ? std::sqrt(ss / n) : std::numeric_limits<double>::quiet_NaN();
}

// ---------------------------------------------------------------------------
// Daily driver over a bond quote table.

struct MispricingRow {
  std::int32_t isin = 0;
  double maturity = 0.0;
  double yield = 0.0;
  double mispricing = std::numeric_limits<double>::quiet_NaN();
  Bucket bucket = Bucket::short_term;
};

struct CurveDay {
  std::int32_t date = 0;
  bool fitted = false;
  std::string refusal;  // reason when not fitted
  double lambda = std::numeric_limits<double>::quiet_NaN();
  double edf = std::numeric_limits<double>::quiet_NaN();
  double noise = std::numeric_limits<double>::quiet_NaN();
  int n_quotes = 0;
  std::vector<MispricingRow> rows;
};

inline std::vector<CurveDay> run_daily_curves(const datamodel::BondData& bonds,
                                              const FitConfig& config = {}) {
  std::map<std::int32_t, std::vector<const BondQuote*>> by_date;
  for (const auto& q : bonds.records) by_date[q.date].push_back(&q);

  std::vector<CurveDay> out;
  for (const auto& [date, quotes] : by_date) {
    CurveDay day;
    day.date = date;
    std::vector<double> m, y;
    for (const auto* q : quotes) {
      m.push_back(q->residual_maturity);
      y.push_back(q->yield);
    }
    try {
      auto fit = fit_curve(m, y, config);
      day.fitted = true;
      day.lambda = fit.lambda();
      day.edf = fit.edf();
      day.n_quotes = fit.n_quotes();
      std::vector<double> errors;
      for (const auto* q : quotes) {
        auto bucket = assign_bucket(q->residual_maturity);
        if (!bucket) continue;  // below the measured range
        MispricingRow row;
        row.isin = q->isin;
        row.maturity = q->residual_maturity;
        row.yield = q->yield;
        row.bucket = *bucket;
        if (config.leave_one_out) {
          // Refit without this quote; boundary quotes whose maturity leaves
          // the refitted range stay NaN.
          std::vector<double> m2, y2;
          for (const auto* p : quotes) {
            if (p == q) continue;
            m2.push_back(p->residual_maturity);
            y2.push_back(p->yield);
          }
          try {
            auto refit = fit_curve(m2, y2, config);
            row.mispricing = mispricing(refit, q->residual_maturity, q->yield);
          } catch (const DataError&) {
            // refused refit or extrapolation: leave NaN
          }
        } else {
          row.mispricing = mispricing(fit, q->residual_maturity, q->yield);
        }
        errors.push_back(row.mispricing);
        day.rows.push_back(row);
      }
      day.noise = noise_rms(errors);
    } catch (const DataError& e) {
      day.fitted = false;
      day.refusal = e.what();
    }
    out.push_back(std::move(day));
  }
  return out;
}

}  // namespace repometrics::curve
