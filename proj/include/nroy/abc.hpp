#pragma once

// Rejection ABC with a uniform prior over the parameter box and an indicator
// kernel 1(rho(observed, simulated) <= epsilon).

#include <nroy/core.hpp>
#include <nroy/design.hpp>
#include <nroy/simulators.hpp>

#include <algorithm>
#include <cmath>
#include <variant>
#include <vector>

namespace nroy {

/// Largest amount by which any constrained metric falls outside its
/// interval. Zero exactly when the run is plausible, so epsilon = 0 turns
/// ABC into history matching.
struct MaxIntervalViolation {
  PlausibilityCriterion criterion;

  double operator()(const MetricVector& m) const {
    if (static_cast<std::size_t>(m.size()) != criterion.size()) throw DimensionError("metric count mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < criterion.size(); ++i) {
      const auto& iv = criterion[i];
      if (!iv.constrained()) continue;
      const double v = m[static_cast<Eigen::Index>(i)];
      worst = std::max({worst, iv.lower - v, v - iv.upper});
    }
    return worst;
  }
};

/// sqrt(sum_i w_i (m_i - target_i)^2)
struct WeightedEuclidean {
  Vector targets;
  Vector weights;

  double operator()(const MetricVector& m) const {
    if (m.size() != targets.size()) throw DimensionError("metric count mismatch");
    return std::sqrt((weights.array() * (m - targets).array().square()).sum());
  }
};

using AbcDistance = std::variant<MaxIntervalViolation, WeightedEuclidean>;

/// Epsilon set to the empirical q-quantile of the completed-run distances.
struct QuantileRule {
  double q = 0.01;
};

using AbcTolerance = std::variant<double, QuantileRule>;

struct AbcConfig {
  AbcDistance distance;
  AbcTolerance tolerance = 0.0;
  std::size_t budget = 1000;
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  void validate() const {
    if (budget < 1) throw ArgumentError("ABC budget must be at least 1");
    if (const auto* w = std::get_if<WeightedEuclidean>(&distance)) {
      if (w->weights.size() != w->targets.size()) throw DimensionError("ABC weights and targets differ in length");
      for (Eigen::Index i = 0; i < w->weights.size(); ++i)
        if (!(w->weights[i] > 0)) throw ArgumentError("ABC weights must be positive");
    }
    if (const auto* eps = std::get_if<double>(&tolerance)) {
      if (!(*eps >= 0)) throw ArgumentError("ABC tolerance must be nonnegative");
    } else {
      const double q = std::get<QuantileRule>(tolerance).q;
      if (!(q > 0 && q < 1)) throw ArgumentError("ABC quantile must lie in (0,1)");
    }
  }
};

inline double abc_distance(const AbcDistance& d, const MetricVector& m) {
  return std::visit([&](const auto& f) { return f(m); }, d);
}

struct AbcResult {
  std::vector<Point> accepted;
  Ensemble all;
  double epsilon_used = 0.0;
  std::vector<double> distances;  // NaN for runs that did not complete
  std::vector<bool> accepted_mask;
  std::string diagnostic;
};

/// Draws `budget` points uniformly, runs each once and keeps the completed
/// runs within epsilon. Failed runs use up budget but are never accepted.
inline AbcResult rejection_abc(const Simulator& sim, const ParameterSpace& space, const AbcConfig& cfg) {
  cfg.validate();
  const auto draws = uniform_sample(space, cfg.budget, cfg.seed).points;
  AbcResult res;
  run_into(res.all, sim, draws, 0, cfg.workers);

  std::vector<double> finite;
  for (const auto& r : res.all) {
    const double d = r.completed() ? abc_distance(cfg.distance, r.metrics()) : std::nan("");
    res.distances.push_back(d);
    if (r.completed()) finite.push_back(d);
  }
  res.accepted_mask.assign(res.all.size(), false);
  if (finite.empty()) {
    res.epsilon_used = std::nan("");
    res.diagnostic = "all " + std::to_string(res.all.size()) + " simulator runs failed";
    return res;
  }

  if (const auto* eps = std::get_if<double>(&cfg.tolerance)) {
    res.epsilon_used = *eps;
  } else {
    const double q = std::get<QuantileRule>(cfg.tolerance).q;
    std::sort(finite.begin(), finite.end());
    const auto keep = static_cast<std::size_t>(std::ceil(q * static_cast<double>(finite.size())));
    res.epsilon_used = finite[std::max<std::size_t>(keep, 1) - 1];
  }

  for (std::size_t i = 0; i < res.all.size(); ++i) {
    if (res.all[i].completed() && res.distances[i] <= res.epsilon_used) {
      res.accepted_mask[i] = true;
      res.accepted.push_back(res.all[i].theta);
    }
  }
  return res;
}

}  // namespace nroy
