#pragma once

// Gaussian-process emulator: one independent zero-mean GP per metric on
// standardised targets, squared-exponential covariance with a lengthscale per
// input (inputs mapped to [-1,1]), hyperparameters by maximum marginal
// likelihood.

#include <nroy/core.hpp>
#include <nroy/design.hpp>
#include <nroy/optimize.hpp>

#include <Eigen/Cholesky>
#include <nlohmann/json.hpp>

#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

namespace nroy {

struct Gaussian {
  double mean = 0.0;
  double variance = 0.0;
};

struct GpHyperparams {
  Vector lengthscales;
  double signal_variance = 1.0;
  double nugget = 1e-8;

  void validate() const {
    if (lengthscales.size() == 0) throw ArgumentError("GP needs at least one lengthscale");
    for (Eigen::Index j = 0; j < lengthscales.size(); ++j)
      if (!(lengthscales[j] > 0)) throw ArgumentError("GP lengthscales must be positive");
    if (!(signal_variance > 0)) throw ArgumentError("GP signal variance must be positive");
    if (!(nugget >= 0)) throw ArgumentError("GP nugget must be nonnegative");
  }
};

/// y -> (y - mean) / scale. A zero scale marks a metric whose training values
/// were all equal; it then predicts that constant with zero variance.
struct TargetTransform {
  double mean = 0.0;
  double scale = 1.0;

  static TargetTransform from(const Vector& y) {
    TargetTransform t;
    t.mean = y.mean();
    const double ss = (y.array() - t.mean).square().sum();
    const double sd = y.size() > 1 ? std::sqrt(ss / static_cast<double>(y.size() - 1)) : 0.0;
    t.scale = sd > 1e-12 * std::max(1.0, std::abs(t.mean)) ? sd : 0.0;
    return t;
  }

  bool constant() const { return scale == 0.0; }
  double standardize(double y) const { return constant() ? 0.0 : (y - mean) / scale; }
  double unstandardize(double z) const { return mean + scale * z; }
  Gaussian unstandardize(const Gaussian& g) const { return {unstandardize(g.mean), scale * scale * g.variance}; }
};

inline double se_kernel(const Vector& a, const Vector& b, const GpHyperparams& h) {
  const double r2 = ((a - b).array() / h.lengthscales.array()).square().sum();
  return h.signal_variance * std::exp(-0.5 * r2);
}

/// Single-output GP in standardised units over inputs in [-1,1]^k.
class GaussianProcess {
 public:
  /// Empty when the covariance matrix is not numerically positive definite.
  static std::optional<GaussianProcess> build(Matrix inputs, Vector targets, GpHyperparams h) {
    GaussianProcess gp;
    gp.x_ = std::move(inputs);
    gp.y_ = std::move(targets);
    gp.h_ = std::move(h);
    const Eigen::Index n = gp.x_.rows();
    Matrix k(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      k(i, i) = gp.h_.signal_variance + gp.h_.nugget;
      for (Eigen::Index j = i + 1; j < n; ++j)
        k(i, j) = k(j, i) = se_kernel(gp.x_.row(i).transpose(), gp.x_.row(j).transpose(), gp.h_);
    }
    gp.llt_.compute(k);
    if (gp.llt_.info() != Eigen::Success) return std::nullopt;
    const auto diag = gp.llt_.matrixLLT().diagonal();
    for (Eigen::Index i = 0; i < n; ++i)
      if (!(diag[i] > 0) || !std::isfinite(diag[i])) return std::nullopt;
    gp.alpha_ = gp.llt_.solve(gp.y_);
    if (!gp.alpha_.allFinite()) return std::nullopt;
    const double logdet = 2.0 * diag.array().log().sum();
    gp.lml_ = -0.5 * gp.y_.dot(gp.alpha_) - 0.5 * logdet -
              0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
    return gp;
  }

  const Matrix& inputs() const { return x_; }
  const Vector& targets() const { return y_; }
  const GpHyperparams& hyperparams() const { return h_; }
  double log_marginal_likelihood() const { return lml_; }
  Eigen::Index size() const { return x_.rows(); }

  /// k(X, u). The nugget belongs to the kernel at coincident inputs, so a
  /// training input gets the same covariance row as in K.
  Vector cross_covariance(const Vector& u) const {
    Vector k(x_.rows());
    for (Eigen::Index i = 0; i < x_.rows(); ++i) {
      k[i] = se_kernel(x_.row(i).transpose(), u, h_);
      if (x_.row(i).transpose() == u) k[i] += h_.nugget;
    }
    return k;
  }

  bool is_training_input(const Vector& u) const {
    for (Eigen::Index i = 0; i < x_.rows(); ++i)
      if (x_.row(i).transpose() == u) return true;
    return false;
  }

  /// L^{-1} k(X, u), where K = L L^T.
  Vector whiten(const Vector& cross) const { return llt_.matrixL().solve(cross); }
  Matrix whiten_all(const Matrix& cross) const { return llt_.matrixL().solve(cross); }

  /// Latent posterior at u. Round-off negatives down to -1e-10 clamp to zero.
  Gaussian predict(const Vector& u) const {
    const Vector k = cross_covariance(u);
    const Vector w = whiten(k);
    const double prior = h_.signal_variance + (is_training_input(u) ? h_.nugget : 0.0);
    double var = prior - w.squaredNorm();
    if (var < 0.0) {
      if (var < -1e-10) throw NumericalError("GP posterior variance is negative beyond round-off");
      var = 0.0;
    }
    return {k.dot(alpha_), var};
  }

  /// Same hyperparameters, one more observation.
  std::optional<GaussianProcess> with_observation(const Vector& u, double y) const {
    Matrix x(x_.rows() + 1, x_.cols());
    x << x_, u.transpose();
    Vector t(y_.size() + 1);
    t << y_, y;
    return build(std::move(x), std::move(t), h_);
  }

 private:
  Matrix x_;
  Vector y_;
  GpHyperparams h_;
  Eigen::LLT<Matrix> llt_;
  Vector alpha_;
  double lml_ = -kInf;
};

struct GpFitOptions {
  std::size_t restarts = 8;
  std::uint64_t seed = 0;
  double nugget = 1e-8;
  double max_nugget = 1e-4;
  double min_lengthscale = 1e-2;
  double max_lengthscale = 10.0;
  double min_signal_variance = 1e-4;
  double max_signal_variance = 1e2;
  std::size_t max_evals = 400;
};

/// Outcome of the likelihood search for one metric.
struct GpFitReport {
  std::vector<double> start_lml;  // at each restart's initial point
  double best_lml = -kInf;
  int nugget_escalations = 0;
};

namespace detail {

inline Matrix training_inputs(const Ensemble& ens, const ParameterSpace& space, std::vector<std::size_t>* rows) {
  std::vector<Vector> us;
  for (std::size_t i = 0; i < ens.size(); ++i) {
    if (!ens[i].completed()) continue;
    us.push_back(space.to_unit(ens[i].theta));
    if (rows) rows->push_back(i);
  }
  Matrix x(static_cast<Eigen::Index>(us.size()), static_cast<Eigen::Index>(space.dim()));
  for (std::size_t i = 0; i < us.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = us[i].transpose();
  return x;
}

// Log-parameter vector (log l_1..log l_k, log sigma^2) clamped to the box.
inline GpHyperparams decode(const Vector& z, const GpFitOptions& o, double nugget) {
  const Eigen::Index k = z.size() - 1;
  GpHyperparams h;
  h.lengthscales.resize(k);
  for (Eigen::Index j = 0; j < k; ++j)
    h.lengthscales[j] = std::exp(std::clamp(z[j], std::log(o.min_lengthscale), std::log(o.max_lengthscale)));
  h.signal_variance = std::exp(std::clamp(z[k], std::log(o.min_signal_variance), std::log(o.max_signal_variance)));
  h.nugget = nugget;
  return h;
}

inline double lml_at(const Matrix& x, const Vector& y, const GpHyperparams& h) {
  auto gp = GaussianProcess::build(x, y, h);
  return gp ? gp->log_marginal_likelihood() : -kInf;
}

}  // namespace detail

/// Multi-metric GP emulator bound to a ParameterSpace.
class GpModel {
 public:
  struct Output {
    GaussianProcess gp;
    TargetTransform transform;
    GpFitReport report;
  };

  GpModel(ParameterSpace space, std::vector<Output> outputs) : space_(std::move(space)), outputs_(std::move(outputs)) {
    if (outputs_.empty()) throw ArgumentError("GP model needs at least one metric");
  }

  /// Independent maximum-likelihood fits per metric. Each restart runs
  /// Nelder-Mead on log-hyperparameters; the first restart starts from unit
  /// lengthscales and unit signal variance, the rest from random points in
  /// the search box. If no restart yields a positive definite covariance the
  /// nugget is raised tenfold, up to max_nugget.
  static GpModel fit(const Ensemble& ens, const ParameterSpace& space, const GpFitOptions& opts = {}) {
    const Matrix x = detail::training_inputs(ens, space, nullptr);
    if (x.rows() < 2) throw FitError("GP fit needs at least two completed runs");
    const std::size_t metrics = ens.metric_count();
    const auto k = static_cast<Eigen::Index>(space.dim());

    std::vector<Output> outputs;
    for (std::size_t m = 0; m < metrics; ++m) {
      Vector raw(x.rows());
      Eigen::Index row = 0;
      for (const auto& r : ens)
        if (r.completed()) raw[row++] = r.metrics()[static_cast<Eigen::Index>(m)];
      const auto tf = TargetTransform::from(raw);
      Vector y(raw.size());
      for (Eigen::Index i = 0; i < raw.size(); ++i) y[i] = tf.standardize(raw[i]);

      GpFitReport report;
      std::optional<GaussianProcess> best;
      for (double nugget = opts.nugget;; nugget *= 10.0) {
        if (tf.constant()) {
          GpHyperparams h{Vector::Ones(k), 1.0, nugget};
          best = GaussianProcess::build(x, y, h);
          if (best) report.best_lml = best->log_marginal_likelihood();
        } else {
          Rng rng(opts.seed + 7919 * m);
          const std::size_t restarts = std::max<std::size_t>(1, opts.restarts);
          for (std::size_t r = 0; r < restarts; ++r) {
            Vector z0(k + 1);
            if (r == 0) {
              z0.setZero();
            } else {
              const double llo = std::log(opts.min_lengthscale), lhi = std::log(opts.max_lengthscale);
              for (Eigen::Index j = 0; j < k; ++j) z0[j] = llo + (lhi - llo) * uniform01(rng);
              const double slo = std::log(opts.min_signal_variance), shi = std::log(opts.max_signal_variance);
              z0[k] = slo + (shi - slo) * uniform01(rng);
            }
            report.start_lml.push_back(detail::lml_at(x, y, detail::decode(z0, opts, nugget)));
            auto objective = [&](const Vector& z) { return -detail::lml_at(x, y, detail::decode(z, opts, nugget)); };
            NelderMeadOptions nm;
            nm.max_evals = opts.max_evals;
            const auto res = nelder_mead(objective, z0, nm);
            if (std::isfinite(res.f) && -res.f > report.best_lml) {
              report.best_lml = -res.f;
              best = GaussianProcess::build(x, y, detail::decode(res.x, opts, nugget));
            }
          }
        }
        if (best) break;
        if (nugget * 10.0 > opts.max_nugget * (1.0 + 1e-9))
          throw FitError("GP covariance for metric " + std::to_string(m) +
                         " is singular even with nugget " + std::to_string(nugget));
        ++report.nugget_escalations;
        report.start_lml.clear();
        report.best_lml = -kInf;
      }
      outputs.push_back({std::move(*best), tf, std::move(report)});
    }
    return GpModel(space, std::move(outputs));
  }

  /// Rebuild from stored training data and hyperparameters.
  static GpModel from_parts(const ParameterSpace& space, const Matrix& unit_inputs, const Matrix& raw_targets,
                            const std::vector<GpHyperparams>& hyper, const std::vector<TargetTransform>& tfs) {
    if (static_cast<std::size_t>(raw_targets.cols()) != hyper.size() || hyper.size() != tfs.size())
      throw DimensionError("GP parts disagree on the number of metrics");
    std::vector<Output> outputs;
    for (std::size_t m = 0; m < hyper.size(); ++m) {
      hyper[m].validate();
      Vector y(raw_targets.rows());
      for (Eigen::Index i = 0; i < y.size(); ++i) y[i] = tfs[m].standardize(raw_targets(i, static_cast<Eigen::Index>(m)));
      auto gp = GaussianProcess::build(unit_inputs, y, hyper[m]);
      if (!gp) throw FitError("stored GP for metric " + std::to_string(m) + " is not positive definite");
      outputs.push_back({std::move(*gp), tfs[m], {}});
    }
    return GpModel(space, std::move(outputs));
  }

  const ParameterSpace& space() const { return space_; }
  std::size_t metric_count() const { return outputs_.size(); }
  const Output& output(std::size_t m) const { return outputs_[m]; }
  Eigen::Index training_size() const { return outputs_.front().gp.size(); }

  /// Per-metric predictive mean and latent variance in raw output units.
  std::vector<Gaussian> predict(const Point& theta) const {
    const Vector u = space_.to_unit(theta);
    std::vector<Gaussian> out;
    out.reserve(outputs_.size());
    for (const auto& o : outputs_) out.push_back(o.transform.unstandardize(o.gp.predict(u)));
    return out;
  }

  /// Condition on an extra (theta, metrics) pair with hyperparameters and
  /// target transforms held fixed.
  GpModel conditioned(const Point& theta, const MetricVector& metrics) const {
    if (static_cast<std::size_t>(metrics.size()) != metric_count())
      throw DimensionError("conditioning metrics have the wrong length");
    const Vector u = space_.to_unit(theta);
    std::vector<Output> outs;
    for (std::size_t m = 0; m < outputs_.size(); ++m) {
      const auto& o = outputs_[m];
      auto gp = o.gp.with_observation(u, o.transform.standardize(metrics[static_cast<Eigen::Index>(m)]));
      if (!gp) throw FitError("conditioning point makes the covariance singular for metric " + std::to_string(m));
      outs.push_back({std::move(*gp), o.transform, o.report});
    }
    return GpModel(space_, std::move(outs));
  }

 private:
  ParameterSpace space_;
  std::vector<Output> outputs_;
};

inline GpModel gp_fit(const Ensemble& ens, const ParameterSpace& space, std::size_t restarts = 8,
                      std::uint64_t seed = 0) {
  GpFitOptions o;
  o.restarts = restarts;
  o.seed = seed;
  return GpModel::fit(ens, space, o);
}

inline std::vector<Gaussian> gp_predict(const GpModel& model, const Point& theta) { return model.predict(theta); }

}  // namespace nroy
