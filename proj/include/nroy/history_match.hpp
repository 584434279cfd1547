#pragma once

// Plausibility probability p(theta), three-way classification, NROY
// estimation and the sequential history-matching wave loop.

#include <nroy/core.hpp>
#include <nroy/design.hpp>
#include <nroy/gp.hpp>
#include <nroy/regression.hpp>
#include <nroy/simulators.hpp>

#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <string>
#include <variant>
#include <vector>

namespace nroy {

/// A "perfect emulator": the true response with zero predictive variance.
struct ExactEmulator {
  ParameterSpace space;
  std::function<MetricVector(const Point&)> response;

  std::vector<Gaussian> predict(const Point& theta) const {
    const MetricVector m = response(theta);
    std::vector<Gaussian> out;
    for (Eigen::Index i = 0; i < m.size(); ++i) out.push_back({m[i], 0.0});
    return out;
  }
};

using Emulator = std::variant<GpModel, RegModel, ExactEmulator>;

inline std::vector<Gaussian> predict(const Emulator& e, const Point& theta) {
  return std::visit([&](const auto& model) { return model.predict(theta); }, e);
}

inline const ParameterSpace& emulator_space(const Emulator& e) {
  return std::visit(
      [](const auto& model) -> const ParameterSpace& {
        if constexpr (std::is_same_v<std::decay_t<decltype(model)>, ExactEmulator>)
          return model.space;
        else
          return model.space();
      },
      e);
}

enum class Combine { Product, Min };

enum class Classification { RuledOut, Uncertain, Plausible };

inline std::string to_string(Classification c) {
  switch (c) {
    case Classification::RuledOut: return "ruled_out";
    case Classification::Uncertain: return "uncertain";
    case Classification::Plausible: return "plausible";
  }
  return "unknown";
}

/// Standard normal CDF.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// P(lower <= Y <= upper) for Y ~ N(mean, variance). Zero variance reduces to
/// the indicator of mean in [lower, upper].
inline double interval_probability(double mean, double variance, const Interval& iv) {
  if (!(variance > 0.0)) return iv.contains(mean) ? 1.0 : 0.0;
  const double sd = std::sqrt(variance);
  const double a = (iv.lower - mean) / sd;
  const double b = (iv.upper - mean) / sd;
  // Difference of upper tails when both ends sit above the mean, to avoid
  // cancellation in 1 - 1.
  const double p = a > 0.0 ? normal_cdf(-a) - normal_cdf(-b) : normal_cdf(b) - normal_cdf(a);
  return std::clamp(p, 0.0, 1.0);
}

/// Joint probability over the constrained metrics.
inline double plausibility(const std::vector<Gaussian>& pred, const PlausibilityCriterion& crit,
                           Combine combine = Combine::Product) {
  if (pred.size() != crit.size())
    throw DimensionError("emulator predicts " + std::to_string(pred.size()) + " metrics, criterion has " +
                         std::to_string(crit.size()));
  double p = 1.0;
  for (std::size_t m = 0; m < crit.size(); ++m) {
    if (!crit[m].constrained()) continue;
    const double pm = interval_probability(pred[m].mean, pred[m].variance, crit[m]);
    p = combine == Combine::Product ? p * pm : std::min(p, pm);
  }
  return p;
}

inline Classification classify_probability(double p, double p_low, double p_high) {
  if (p < p_low) return Classification::RuledOut;
  if (p > p_high) return Classification::Plausible;
  return Classification::Uncertain;
}

struct PlausibilityField {
  std::shared_ptr<const Emulator> emulator;
  PlausibilityCriterion criterion;
  double p_low = 0.01;
  double p_high = 0.99;
  Combine combine = Combine::Product;

  PlausibilityField(std::shared_ptr<const Emulator> e, PlausibilityCriterion c, double lo = 0.01, double hi = 0.99,
                    Combine comb = Combine::Product)
      : emulator(std::move(e)), criterion(std::move(c)), p_low(lo), p_high(hi), combine(comb) {
    if (!emulator) throw ArgumentError("plausibility field needs an emulator");
    if (!(0.0 < p_low && p_low < p_high && p_high < 1.0))
      throw ArgumentError("classification thresholds need 0 < p_low < p_high < 1");
  }

  const ParameterSpace& space() const { return emulator_space(*emulator); }
  double probability(const Point& theta) const { return plausibility(predict(*emulator, theta), criterion, combine); }
};

inline double plaus_prob(const PlausibilityField& field, const Point& theta) { return field.probability(theta); }

inline Classification classify(const PlausibilityField& field, const Point& theta) {
  return classify_probability(field.probability(theta), field.p_low, field.p_high);
}

// ---------------------------------------------------------------------------
// Waves
// ---------------------------------------------------------------------------

enum class EmulatorKind { GP, Regression };

/// Which records feed the emulator refit at the end of a wave.
enum class RefreshPolicy {
  All,          // every completed record
  PreviousNroy  // only records the outgoing emulator did not rule out
};

struct NroyEstimate {
  std::vector<Point> sample;
  std::vector<double> probability;
  std::vector<Classification> classes;

  double fraction_not_ruled_out() const {
    if (classes.empty()) return 1.0;
    const auto kept = std::count_if(classes.begin(), classes.end(),
                                    [](Classification c) { return c != Classification::RuledOut; });
    return static_cast<double>(kept) / static_cast<double>(classes.size());
  }
};

inline NroyEstimate estimate_nroy(const PlausibilityField& field, const std::vector<Point>& sample) {
  NroyEstimate est;
  est.sample = sample;
  for (const auto& p : sample) {
    const double prob = field.probability(p);
    est.probability.push_back(prob);
    est.classes.push_back(classify_probability(prob, field.p_low, field.p_high));
  }
  return est;
}

struct WaveOptions {
  EmulatorKind emulator = EmulatorKind::GP;
  GpFitOptions gp;
  RegOptions regression;
  FilterOptions filter;  // n_target is overridden by the wave budget
  RefreshPolicy refresh = RefreshPolicy::All;
  double p_low = 0.01;
  double p_high = 0.99;
  Combine combine = Combine::Product;
  std::size_t nroy_samples = 1000;
  std::size_t workers = 1;
};

struct WaveSummary {
  int wave = 0;
  std::size_t draws = 0;
  std::size_t proposed = 0;
  std::size_t completed = 0;
  std::size_t plausible = 0;
  double filter_acceptance = 0.0;  // emulator-accepted / candidates drawn
  double acceptance_rate = 0.0;    // simulated-plausible / emulator-accepted
  double nroy_fraction = 1.0;
};

struct WaveState {
  int wave = 0;
  ParameterSpace space;
  Ensemble ensemble;
  std::shared_ptr<const Emulator> emulator;  // fitted on records with wave_index <= wave
  NroyEstimate nroy;
  std::vector<double> acceptance_rates;
  std::vector<WaveSummary> history;
};

inline WaveState initial_wave_state(const ParameterSpace& space, Ensemble ensemble) {
  WaveState s;
  s.space = space;
  s.wave = ensemble.last_wave();
  s.ensemble = std::move(ensemble);
  return s;
}

/// Builds the wave's emulator, or returns null when there is too little
/// completed data, in which case nothing can be ruled out yet.
inline std::shared_ptr<const Emulator> fit_emulator(const Ensemble& ens, const ParameterSpace& space,
                                                    const WaveOptions& opts) {
  const std::size_t need = opts.emulator == EmulatorKind::GP ? 2 : 3;
  if (ens.completed_count() < need) return nullptr;
  if (opts.emulator == EmulatorKind::GP) return std::make_shared<const Emulator>(GpModel::fit(ens, space, opts.gp));
  return std::make_shared<const Emulator>(RegModel::fit(ens, space, opts.regression));
}

/// One history-matching wave against schedule[state.wave]:
///  (a) emulator on the data so far (refit if the state has none),
///  (b) filtered design of `budget` points with p(theta) >= threshold,
///  (c) simulator runs, (d) records appended with wave index + 1,
///  (e) emulator refresh, NROY estimate and acceptance rate.
inline WaveState run_wave(WaveState state, const WaveSchedule& schedule, const Simulator& sim, std::size_t budget,
                          const WaveOptions& opts, std::uint64_t seed) {
  if (state.wave < 0 || static_cast<std::size_t>(state.wave) >= schedule.size())
    throw ArgumentError("wave index " + std::to_string(state.wave) + " is past the end of the schedule");
  if (budget < 1) throw ArgumentError("wave budget must be positive");
  const PlausibilityCriterion& crit = schedule[static_cast<std::size_t>(state.wave)];
  if (crit.size() != sim.metric_count()) throw DimensionError("criterion and simulator disagree on metric count");

  if (!state.emulator) state.emulator = fit_emulator(state.ensemble, state.space, opts);

  FilterOptions fo = opts.filter;
  fo.n_target = budget;
  PlausibilityPredictor predictor;
  std::optional<PlausibilityField> field;
  if (state.emulator) {
    field.emplace(state.emulator, crit, opts.p_low, opts.p_high, opts.combine);
    predictor = [&](const Point& p) { return field->probability(p); };
  } else {
    predictor = [](const Point&) { return 1.0; };
  }

  Design design;
  try {
    design = filtered_design(state.space, predictor, fo, seed);
  } catch (const EmptyPlausibleSet& e) {
    throw EmptyPlausibleSet("wave " + std::to_string(state.wave + 1) + ": " + e.what(), e.draws);
  }

  std::vector<Point> fresh;
  for (auto& p : design.points)
    if (!state.ensemble.contains(p)) fresh.push_back(std::move(p));
  const int next_wave = state.wave + 1;
  const std::size_t before = state.ensemble.size();
  run_into(state.ensemble, sim, fresh, next_wave, opts.workers);

  WaveSummary sum;
  sum.wave = next_wave;
  sum.draws = design.draws;
  sum.proposed = fresh.size();
  sum.filter_acceptance = design.acceptance_rate;
  for (std::size_t i = before; i < state.ensemble.size(); ++i) {
    const auto& r = state.ensemble[i];
    if (r.completed()) ++sum.completed;
    if (is_plausible(r, crit)) ++sum.plausible;
  }
  sum.acceptance_rate = fresh.empty() ? 0.0 : static_cast<double>(sum.plausible) / static_cast<double>(fresh.size());

  // Refresh the emulator for the next wave.
  Ensemble training;
  if (opts.refresh == RefreshPolicy::PreviousNroy && field) {
    for (const auto& r : state.ensemble)
      if (r.completed() && field->probability(r.theta) >= opts.p_low) training.append(r);
  } else {
    training = state.ensemble;
  }
  auto refreshed = fit_emulator(training, state.space, opts);
  if (refreshed) state.emulator = std::move(refreshed);

  const auto sample = uniform_sample(state.space, opts.nroy_samples, seed ^ 0x9e3779b97f4a7c15ULL).points;
  if (state.emulator) {
    state.nroy = estimate_nroy(PlausibilityField(state.emulator, crit, opts.p_low, opts.p_high, opts.combine), sample);
  } else {
    state.nroy = NroyEstimate{sample, std::vector<double>(sample.size(), 1.0),
                              std::vector<Classification>(sample.size(), Classification::Uncertain)};
  }
  sum.nroy_fraction = state.nroy.fraction_not_ruled_out();

  state.wave = next_wave;
  state.acceptance_rates.push_back(sum.acceptance_rate);
  state.history.push_back(sum);
  return state;
}

}  // namespace nroy
