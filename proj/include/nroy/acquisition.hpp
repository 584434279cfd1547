#pragma once

// Entropy of the plausibility surface and sequential design by expected
// entropy reduction.
//
// For a GP emulator with fixed hyperparameters, observing y* at a candidate c
// updates every reference point r in closed form:
//   mean_r' = mean_r + cov(r, c) / sqrt(v_c + nugget) * z,  z ~ N(0, 1)
//   var_r'  = var_r  - cov(r, c)^2 / (v_c + nugget)
// so the expectation over y* reduces to an average over standard normal
// draws, shared by every candidate.

#include <nroy/core.hpp>
#include <nroy/design.hpp>
#include <nroy/gp.hpp>
#include <nroy/history_match.hpp>
#include <nroy/simulators.hpp>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

namespace nroy {

/// Binary entropy in nats, with 0 log 0 = 0.
inline double entropy(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError("entropy needs p in [0,1]");
  double h = 0.0;
  if (p > 0.0) h -= p * std::log(p);
  if (p < 1.0) h -= (1.0 - p) * std::log1p(-p);
  return h;
}

struct EntropyEstimate {
  std::vector<Point> reference;
  std::vector<double> entropies;
  double mean = 0.0;
};

inline EntropyEstimate mean_entropy(const PlausibilityField& field, const std::vector<Point>& reference) {
  if (reference.empty()) throw ArgumentError("mean_entropy needs a nonempty reference set");
  EntropyEstimate est;
  est.reference = reference;
  est.entropies.reserve(reference.size());
  double sum = 0.0;
  for (const auto& p : reference) {
    const double h = entropy(field.probability(p));
    est.entropies.push_back(h);
    sum += h;
  }
  est.mean = sum / static_cast<double>(reference.size());
  return est;
}

/// Regular grid of per_dim^k cell centres.
inline std::vector<Point> grid_points(const ParameterSpace& space, std::size_t per_dim) {
  if (per_dim < 1) throw ArgumentError("grid needs at least one point per dimension");
  const std::size_t k = space.dim();
  std::size_t total = 1;
  for (std::size_t j = 0; j < k; ++j) {
    if (total > 10'000'000 / per_dim) throw ArgumentError("grid too large");
    total *= per_dim;
  }
  std::vector<Point> pts;
  pts.reserve(total);
  std::vector<std::size_t> idx(k, 0);
  for (std::size_t n = 0; n < total; ++n) {
    Vector c(k);
    for (std::size_t j = 0; j < k; ++j) c[j] = (static_cast<double>(idx[j]) + 0.5) / static_cast<double>(per_dim);
    pts.push_back(space.from_cube(c));
    for (std::size_t j = 0; j < k; ++j) {
      if (++idx[j] < per_dim) break;
      idx[j] = 0;
    }
  }
  return pts;
}

/// Precomputed state for scoring many candidates against one GP field.
class EntropyLookahead {
 public:
  EntropyLookahead(const PlausibilityField& field, std::vector<Point> reference, std::size_t mc_draws,
                   std::uint64_t seed)
      : field_(field), reference_(std::move(reference)) {
    gp_ = std::get_if<GpModel>(field_.emulator.get());
    if (!gp_) throw UnsupportedEmulator("expected-entropy lookahead needs a GP emulator");
    if (reference_.empty()) throw ArgumentError("lookahead needs a nonempty reference set");
    if (mc_draws < 1) throw ArgumentError("lookahead needs at least one Monte Carlo draw");
    if (field_.criterion.size() != gp_->metric_count()) throw DimensionError("criterion and emulator disagree");

    const auto R = static_cast<Eigen::Index>(reference_.size());
    ref_unit_.resize(R, static_cast<Eigen::Index>(gp_->space().dim()));
    for (Eigen::Index r = 0; r < R; ++r) ref_unit_.row(r) = gp_->space().to_unit(reference_[static_cast<std::size_t>(r)]).transpose();

    for (std::size_t m = 0; m < gp_->metric_count(); ++m) {
      const auto& out = gp_->output(m);
      if (!field_.criterion[m].constrained()) continue;
      MetricState ms;
      ms.index = m;
      ms.mean.resize(R);
      ms.var.resize(R);
      Matrix cross(out.gp.size(), R);
      for (Eigen::Index r = 0; r < R; ++r) {
        const Vector u = ref_unit_.row(r).transpose();
        const auto g = out.gp.predict(u);
        ms.mean[r] = g.mean;
        ms.var[r] = g.variance;
        cross.col(r) = out.gp.cross_covariance(u);
      }
      ms.whitened = out.gp.whiten_all(cross);
      metrics_.push_back(std::move(ms));
    }

    // Antithetic pairs keep the sample mean of z at exactly zero.
    Rng rng(seed);
    std::normal_distribution<double> normal;
    draws_.resize(static_cast<Eigen::Index>(mc_draws), static_cast<Eigen::Index>(std::max<std::size_t>(1, metrics_.size())));
    for (Eigen::Index d = 0; d < draws_.rows(); d += 2)
      for (Eigen::Index m = 0; m < draws_.cols(); ++m) {
        const double z = normal(rng);
        draws_(d, m) = z;
        if (d + 1 < draws_.rows()) draws_(d + 1, m) = -z;
      }

    base_p_.resize(R);
    current_ = 0.0;
    for (Eigen::Index r = 0; r < R; ++r) {
      base_p_[r] = probability_at(r);
      current_ += entropy(base_p_[r]);
    }
    current_ /= static_cast<double>(R);
  }

  /// Mean entropy of the current field over the reference set.
  double current() const { return current_; }

  const std::vector<Point>& reference() const { return reference_; }

  /// Monte Carlo estimate of the mean entropy after observing the simulator
  /// at `candidate`, hyperparameters fixed.
  double expected(const Point& candidate) const {
    const auto R = static_cast<Eigen::Index>(reference_.size());
    const Vector uc = gp_->space().to_unit(candidate);

    std::vector<Vector> shift(metrics_.size()), new_var(metrics_.size());
    std::vector<bool> touched(static_cast<std::size_t>(R), false);
    for (std::size_t i = 0; i < metrics_.size(); ++i) {
      const auto& ms = metrics_[i];
      const auto& gp = gp_->output(ms.index).gp;
      const auto& h = gp.hyperparams();
      const Vector w = gp.whiten(gp.cross_covariance(uc));
      const double vc = gp.predict(uc).variance;
      const double s = vc + h.nugget;
      Vector cov(R);
      for (Eigen::Index r = 0; r < R; ++r) cov[r] = se_kernel(ref_unit_.row(r).transpose(), uc, h);
      cov.noalias() -= ms.whitened.transpose() * w;
      shift[i] = cov / std::sqrt(s);
      new_var[i] = (ms.var.array() - cov.array().square() / s).max(0.0).matrix();
      for (Eigen::Index r = 0; r < R; ++r)
        if (shift[i][r] * shift[i][r] > 1e-14 * std::max(ms.var[r], 1e-300)) touched[static_cast<std::size_t>(r)] = true;
    }

    double total = 0.0;
    for (Eigen::Index r = 0; r < R; ++r) {
      if (!touched[static_cast<std::size_t>(r)]) {
        total += entropy(base_p_[r]) * static_cast<double>(draws_.rows());
        continue;
      }
      for (Eigen::Index d = 0; d < draws_.rows(); ++d) {
        double p = 1.0;
        for (std::size_t i = 0; i < metrics_.size(); ++i) {
          const auto& ms = metrics_[i];
          const auto& tf = gp_->output(ms.index).transform;
          const double mean = tf.unstandardize(ms.mean[r] + shift[i][r] * draws_(d, static_cast<Eigen::Index>(i)));
          const double var = tf.scale * tf.scale * new_var[i][r];
          const double pm = interval_probability(mean, var, field_.criterion[ms.index]);
          p = field_.combine == Combine::Product ? p * pm : std::min(p, pm);
        }
        total += entropy(p);
      }
    }
    return total / (static_cast<double>(R) * static_cast<double>(draws_.rows()));
  }

 private:
  struct MetricState {
    std::size_t index = 0;
    Vector mean;      // standardised posterior mean at reference points
    Vector var;       // standardised posterior variance
    Matrix whitened;  // L^{-1} k(X, reference)
  };

  double probability_at(Eigen::Index r) const {
    double p = 1.0;
    for (const auto& ms : metrics_) {
      const auto& tf = gp_->output(ms.index).transform;
      const double pm = interval_probability(tf.unstandardize(ms.mean[r]), tf.scale * tf.scale * ms.var[r],
                                             field_.criterion[ms.index]);
      p = field_.combine == Combine::Product ? p * pm : std::min(p, pm);
    }
    return p;
  }

  PlausibilityField field_;
  const GpModel* gp_ = nullptr;
  std::vector<Point> reference_;
  Matrix ref_unit_;
  std::vector<MetricState> metrics_;
  Matrix draws_;
  Vector base_p_;
  double current_ = 0.0;
};

inline double expected_entropy_if_added(const PlausibilityField& field, const Point& candidate,
                                        const std::vector<Point>& reference, std::size_t mc_draws,
                                        std::uint64_t seed) {
  return EntropyLookahead(field, reference, mc_draws, seed).expected(candidate);
}

struct BatchSelection {
  std::vector<Point> points;
  std::vector<double> trace;  // expected mean entropy after each pick
};

/// Greedy batch: take the candidate with the lowest expected mean entropy,
/// pretend the simulator returned the emulator mean there, repeat.
inline BatchSelection select_batch(const PlausibilityField& field, const std::vector<Point>& candidates,
                                   std::size_t d, const std::vector<Point>& reference, std::size_t mc_draws,
                                   std::uint64_t seed) {
  if (d < 1) throw ArgumentError("select_batch needs d >= 1");
  std::vector<Point> pool;
  {
    std::set<std::vector<double>> seen;
    for (const auto& c : candidates)
      if (seen.insert({c.data(), c.data() + c.size()}).second) pool.push_back(c);
  }
  if (pool.size() < d) throw ArgumentError("select_batch needs at least d distinct candidates");
  if (!std::holds_alternative<GpModel>(*field.emulator))
    throw UnsupportedEmulator("batch selection needs a GP emulator");

  BatchSelection out;
  std::vector<bool> taken(pool.size(), false);
  auto model = std::make_shared<const Emulator>(*field.emulator);
  for (std::size_t step = 0; step < d; ++step) {
    PlausibilityField current(model, field.criterion, field.p_low, field.p_high, field.combine);
    const EntropyLookahead look(current, reference, mc_draws, seed);
    std::size_t best = pool.size();
    double best_v = kInf;
    for (std::size_t c = 0; c < pool.size(); ++c) {
      if (taken[c]) continue;
      const double v = look.expected(pool[c]);
      if (v < best_v) {
        best_v = v;
        best = c;
      }
    }
    taken[best] = true;
    out.points.push_back(pool[best]);
    out.trace.push_back(best_v);
    if (step + 1 < d) {
      const auto& gp = std::get<GpModel>(*model);
      const auto pred = gp.predict(pool[best]);
      MetricVector mean(static_cast<Eigen::Index>(pred.size()));
      for (std::size_t m = 0; m < pred.size(); ++m) mean[static_cast<Eigen::Index>(m)] = pred[m].mean;
      model = std::make_shared<const Emulator>(gp.conditioned(pool[best], mean));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sequential design loop
// ---------------------------------------------------------------------------

/// The first `corners` vertices of the box (binary order) plus its centre.
inline std::vector<Point> corners_plus_center(const ParameterSpace& space, std::size_t corners) {
  const std::size_t k = space.dim();
  if (k >= 63 || corners > (std::size_t{1} << k)) throw ArgumentError("not enough corners in the box");
  std::vector<Point> pts;
  for (std::size_t c = 0; c < corners; ++c) {
    Vector cube(k);
    for (std::size_t j = 0; j < k; ++j) cube[j] = (c >> j) & 1U ? 1.0 : 0.0;
    pts.push_back(space.from_cube(cube));
  }
  pts.push_back(space.midpoint());
  return pts;
}

struct SequentialOptions {
  GpFitOptions gp;
  std::size_t candidates = 1024;
  std::size_t mc_draws = 256;
  std::size_t batch = 1;
  double p_low = 0.01;
  double p_high = 0.99;
  Combine combine = Combine::Product;
  std::size_t workers = 1;
};

struct SequentialResult {
  Ensemble ensemble;
  std::vector<double> expected_trace;  // predicted mean entropy after each pick
  std::vector<double> realised;        // mean entropy after each refit
};

/// Adds points `batch` at a time by expected-entropy minimisation until the
/// ensemble holds `total_runs` records. The GP hyperparameters are refitted
/// after every round of simulator runs.
inline SequentialResult sequential_design(const Simulator& sim, const PlausibilityCriterion& crit, Ensemble initial,
                                          std::size_t total_runs, const std::vector<Point>& reference,
                                          const SequentialOptions& opts, std::uint64_t seed) {
  SequentialResult res;
  res.ensemble = std::move(initial);
  const auto& space = sim.space();
  int round = res.ensemble.last_wave();
  while (res.ensemble.size() < total_runs) {
    GpFitOptions go = opts.gp;
    go.seed = seed + 1000003ULL * static_cast<std::uint64_t>(round);
    auto emu = std::make_shared<const Emulator>(GpModel::fit(res.ensemble, space, go));
    PlausibilityField field(emu, crit, opts.p_low, opts.p_high, opts.combine);
    res.realised.push_back(mean_entropy(field, reference).mean);

    std::vector<Point> cands;
    for (auto& p : uniform_sample(space, opts.candidates, seed + 7 * static_cast<std::uint64_t>(round) + 1).points)
      if (!res.ensemble.contains(p)) cands.push_back(std::move(p));
    const std::size_t d = std::min(opts.batch, total_runs - res.ensemble.size());
    const auto pick = select_batch(field, cands, d, reference, opts.mc_draws, seed + 31 * static_cast<std::uint64_t>(round));
    res.expected_trace.insert(res.expected_trace.end(), pick.trace.begin(), pick.trace.end());
    ++round;
    run_into(res.ensemble, sim, pick.points, round, opts.workers);
  }
  return res;
}

/// Fraction of grid points where the emulator verdict (p >= 1/2) disagrees
/// with the true plausibility.
inline double misclassification_rate(const PlausibilityField& field, const std::vector<Point>& grid,
                                     const std::function<bool(const Point&)>& truth) {
  std::size_t wrong = 0;
  for (const auto& p : grid)
    if ((field.probability(p) >= 0.5) != truth(p)) ++wrong;
  return static_cast<double>(wrong) / static_cast<double>(grid.size());
}

}  // namespace nroy
