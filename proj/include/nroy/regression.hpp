#pragma once

// Stepwise linear + quadratic regression emulator. Inputs are mapped to
// [-1,1] so odd and even polynomial terms are close to orthogonal. Terms are
// grown and pruned by AIC, then pruned further by BIC.

#include <nroy/core.hpp>
#include <nroy/gp.hpp>

#include <Eigen/QR>

#include <cmath>
#include <string>
#include <vector>

namespace nroy {

struct Term {
  enum class Kind { Intercept, Linear, Quadratic, Interaction };
  Kind kind = Kind::Intercept;
  int i = -1;
  int j = -1;

  double eval(const Vector& u) const {
    switch (kind) {
      case Kind::Intercept: return 1.0;
      case Kind::Linear: return u[i];
      case Kind::Quadratic: return u[i] * u[i];
      case Kind::Interaction: return u[i] * u[j];
    }
    return 0.0;
  }

  std::string label(const std::vector<std::string>& names) const {
    switch (kind) {
      case Kind::Intercept: return "1";
      case Kind::Linear: return names.at(static_cast<std::size_t>(i));
      case Kind::Quadratic: return names.at(static_cast<std::size_t>(i)) + "^2";
      case Kind::Interaction:
        return names.at(static_cast<std::size_t>(i)) + "*" + names.at(static_cast<std::size_t>(j));
    }
    return "?";
  }

  bool operator==(const Term&) const = default;
};

/// Intercept, then all linear, all pure quadratic and (optionally) all
/// pairwise interaction terms. Term indices in stepwise ties refer to this
/// order.
inline std::vector<Term> candidate_terms(std::size_t k, bool interactions) {
  std::vector<Term> t{{Term::Kind::Intercept}};
  for (int a = 0; a < static_cast<int>(k); ++a) t.push_back({Term::Kind::Linear, a});
  for (int a = 0; a < static_cast<int>(k); ++a) t.push_back({Term::Kind::Quadratic, a});
  if (interactions)
    for (int a = 0; a < static_cast<int>(k); ++a)
      for (int b = a + 1; b < static_cast<int>(k); ++b) t.push_back({Term::Kind::Interaction, a, b});
  return t;
}

inline double aic(double rss, std::size_t n, std::size_t p) {
  const double dn = static_cast<double>(n);
  return dn * std::log(rss / dn) + 2.0 * static_cast<double>(p);
}

inline double bic(double rss, std::size_t n, std::size_t p) {
  const double dn = static_cast<double>(n);
  return dn * std::log(rss / dn) + static_cast<double>(p) * std::log(dn);
}

struct RegOptions {
  std::size_t max_terms = 40;
  bool interactions = true;
};

/// One metric's least-squares fit over a fixed term list.
class RegressionFit {
 public:
  RegressionFit() = default;

  RegressionFit(std::vector<Term> terms, Vector coefficients, double s2, Matrix xtx_inv, std::size_t n)
      : terms_(std::move(terms)), coef_(std::move(coefficients)), s2_(s2), xtx_inv_(std::move(xtx_inv)), n_(n) {}

  /// OLS on the given terms; the design matrix must have full column rank.
  static RegressionFit ols(const Matrix& unit_inputs, const Vector& y, std::vector<Term> terms) {
    const Matrix x = design_matrix(unit_inputs, terms);
    Eigen::ColPivHouseholderQR<Matrix> qr(x);
    if (qr.rank() < x.cols()) throw FitError("regression design matrix is rank deficient");
    const Vector coef = qr.solve(y);
    double rss = (y - x * coef).squaredNorm();
    if (rss <= 1e-20 * y.squaredNorm()) rss = 0.0;  // exact fit up to round-off
    const auto n = static_cast<std::size_t>(x.rows());
    const auto p = static_cast<std::size_t>(x.cols());
    const double s2 = n > p ? rss / static_cast<double>(n - p) : 0.0;
    const Matrix xtx = x.transpose() * x;
    return {std::move(terms), coef, s2, xtx.ldlt().solve(Matrix::Identity(xtx.rows(), xtx.cols())), n};
  }

  static Matrix design_matrix(const Matrix& unit_inputs, const std::vector<Term>& terms) {
    Matrix x(unit_inputs.rows(), static_cast<Eigen::Index>(terms.size()));
    for (Eigen::Index r = 0; r < unit_inputs.rows(); ++r) {
      const Vector u = unit_inputs.row(r).transpose();
      for (std::size_t c = 0; c < terms.size(); ++c) x(r, static_cast<Eigen::Index>(c)) = terms[c].eval(u);
    }
    return x;
  }

  Vector features(const Vector& u) const {
    Vector f(static_cast<Eigen::Index>(terms_.size()));
    for (std::size_t c = 0; c < terms_.size(); ++c) f[static_cast<Eigen::Index>(c)] = terms_[c].eval(u);
    return f;
  }

  /// Leverage term x0^T (X^T X)^{-1} x0.
  double leverage(const Vector& u) const {
    const Vector f = features(u);
    return std::max(0.0, f.dot(xtx_inv_ * f));
  }

  /// Mean and predictive variance for a new observation: s^2 (1 + leverage).
  Gaussian predict(const Vector& u) const { return {features(u).dot(coef_), s2_ * (1.0 + leverage(u))}; }

  const std::vector<Term>& terms() const { return terms_; }
  const Vector& coefficients() const { return coef_; }
  double residual_variance() const { return s2_; }
  const Matrix& xtx_inverse() const { return xtx_inv_; }
  std::size_t observations() const { return n_; }

 private:
  std::vector<Term> terms_;
  Vector coef_;
  double s2_ = 0.0;
  Matrix xtx_inv_;
  std::size_t n_ = 0;
};

namespace detail {

// Residual sum of squares of an OLS fit via QR, or -1 when rank deficient.
inline double rss_of(const Matrix& x, const Vector& y) {
  Eigen::ColPivHouseholderQR<Matrix> qr(x);
  if (qr.rank() < x.cols()) return -1.0;
  return (y - x * qr.solve(y)).squaredNorm();
}

inline Matrix select_columns(const Matrix& all, const std::vector<std::size_t>& idx) {
  Matrix x(all.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t c = 0; c < idx.size(); ++c) x.col(static_cast<Eigen::Index>(c)) = all.col(static_cast<Eigen::Index>(idx[c]));
  return x;
}

}  // namespace detail

/// Trace of one stepwise search, kept for diagnostics and tests.
struct StepwiseTrace {
  std::vector<std::size_t> after_aic;  // candidate indices
  std::vector<std::size_t> after_bic;
};

/// Stepwise selection for a single response.
///
/// Phase 1 repeatedly applies the single add-or-remove move with the lowest
/// AIC while it strictly improves AIC. Additions are allowed only while at
/// least one residual degree of freedom remains and the model stays under
/// max_terms. Phase 2 removes terms one at a time while BIC strictly
/// improves. Ties go to the lowest candidate index. The intercept is always
/// kept.
///
/// RSS is floored at 1e-20 times the total sum of squares in both criteria,
/// so that round-off on exact fits cannot pay for extra terms.
inline RegressionFit stepwise_select(const Matrix& unit_inputs, const Vector& y, const RegOptions& opts,
                                     StepwiseTrace* trace = nullptr) {
  const auto n = static_cast<std::size_t>(y.size());
  if (n < 3) throw FitError("stepwise regression needs at least three observations");
  const auto cands = candidate_terms(static_cast<std::size_t>(unit_inputs.cols()), opts.interactions);
  const Matrix all = RegressionFit::design_matrix(unit_inputs, cands);

  const double tss = (y.array() - y.mean()).square().sum();
  const double floor = 1e-20 * std::max(tss, y.squaredNorm()) + 1e-300;
  auto crit = [&](double rss, std::size_t p, bool use_bic) {
    const double r = std::max(rss, floor);
    return use_bic ? bic(r, n, p) : aic(r, n, p);
  };

  std::vector<std::size_t> sel{0};
  std::vector<bool> in(cands.size(), false);
  in[0] = true;
  double cur_rss = detail::rss_of(detail::select_columns(all, sel), y);
  double cur = crit(cur_rss, 1, false);

  // Phase 1: forward-backward by AIC.
  for (;;) {
    double best = cur;
    std::size_t best_idx = 0;
    bool best_add = false;
    double best_rss = cur_rss;

    // Additions via projection onto the orthogonal complement of the model.
    const Matrix xs = detail::select_columns(all, sel);
    Eigen::HouseholderQR<Matrix> qr(xs);
    const Matrix q = qr.householderQ() * Matrix::Identity(xs.rows(), xs.cols());
    const Vector resid = y - q * (q.transpose() * y);
    const bool room = sel.size() + 1 <= opts.max_terms && n >= sel.size() + 2;

    for (std::size_t c = 1; c < cands.size(); ++c) {
      double rss = 0.0;
      std::size_t p = 0;
      if (in[c]) {
        std::vector<std::size_t> s;
        for (auto t : sel)
          if (t != c) s.push_back(t);
        rss = detail::rss_of(detail::select_columns(all, s), y);
        p = s.size();
      } else {
        if (!room) continue;
        const Vector z = all.col(static_cast<Eigen::Index>(c));
        const Vector zp = z - q * (q.transpose() * z);
        const double zz = zp.squaredNorm();
        if (!(zz > 1e-10 * std::max(z.squaredNorm(), 1e-300))) continue;  // collinear with the model
        const double proj = resid.dot(zp);
        rss = std::max(0.0, resid.squaredNorm() - proj * proj / zz);
        p = sel.size() + 1;
      }
      if (rss < 0.0) continue;
      const double v = crit(rss, p, false);
      if (v < best) {
        best = v;
        best_idx = c;
        best_add = !in[c];
        best_rss = rss;
      }
    }
    if (best_idx == 0) break;
    if (best_add) {
      sel.push_back(best_idx);
      std::sort(sel.begin(), sel.end());
      in[best_idx] = true;
    } else {
      sel.erase(std::find(sel.begin(), sel.end(), best_idx));
      in[best_idx] = false;
    }
    cur = best;
    cur_rss = best_rss;
  }
  if (trace) trace->after_aic = sel;

  // Phase 2: backward elimination by BIC.
  cur_rss = detail::rss_of(detail::select_columns(all, sel), y);
  cur = crit(cur_rss, sel.size(), true);
  for (;;) {
    double best = cur;
    std::size_t best_idx = 0;
    for (std::size_t c : sel) {
      if (c == 0) continue;
      std::vector<std::size_t> s;
      for (auto t : sel)
        if (t != c) s.push_back(t);
      const double rss = detail::rss_of(detail::select_columns(all, s), y);
      if (rss < 0.0) continue;
      const double v = crit(rss, s.size(), true);
      if (v < best) {
        best = v;
        best_idx = c;
      }
    }
    if (best_idx == 0) break;
    sel.erase(std::find(sel.begin(), sel.end(), best_idx));
    cur = best;
  }
  if (trace) trace->after_bic = sel;

  std::vector<Term> terms;
  for (auto c : sel) terms.push_back(cands[c]);
  return RegressionFit::ols(unit_inputs, y, std::move(terms));
}

/// Per-metric stepwise regression emulator bound to a ParameterSpace.
class RegModel {
 public:
  RegModel(ParameterSpace space, std::vector<RegressionFit> fits) : space_(std::move(space)), fits_(std::move(fits)) {
    if (fits_.empty()) throw ArgumentError("regression model needs at least one metric");
  }

  static RegModel fit(const Ensemble& ens, const ParameterSpace& space, const RegOptions& opts = {}) {
    const Matrix x = detail::training_inputs(ens, space, nullptr);
    if (x.rows() < 3) throw FitError("stepwise regression needs at least three completed runs");
    std::vector<RegressionFit> fits;
    for (std::size_t m = 0; m < ens.metric_count(); ++m) {
      Vector y(x.rows());
      Eigen::Index row = 0;
      for (const auto& r : ens)
        if (r.completed()) y[row++] = r.metrics()[static_cast<Eigen::Index>(m)];
      fits.push_back(stepwise_select(x, y, opts));
    }
    return RegModel(space, std::move(fits));
  }

  const ParameterSpace& space() const { return space_; }
  std::size_t metric_count() const { return fits_.size(); }
  const RegressionFit& fit_for(std::size_t m) const { return fits_[m]; }

  std::vector<Gaussian> predict(const Point& theta) const {
    const Vector u = space_.to_unit(theta);
    std::vector<Gaussian> out;
    out.reserve(fits_.size());
    for (const auto& f : fits_) out.push_back(f.predict(u));
    return out;
  }

 private:
  ParameterSpace space_;
  std::vector<RegressionFit> fits_;
};

inline RegModel stepwise_fit(const Ensemble& ens, const ParameterSpace& space, std::size_t max_terms = 40,
                             bool interactions = true) {
  return RegModel::fit(ens, space, {max_terms, interactions});
}

inline std::vector<Gaussian> reg_predict(const RegModel& model, const Point& theta) { return model.predict(theta); }

}  // namespace nroy
