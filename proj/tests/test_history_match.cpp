#include <nroy/design.hpp>
#include <nroy/history_match.hpp>
#include <nroy/simulators.hpp>

#include <gtest/gtest.h>

#include <random>

using namespace nroy;

namespace {

// Independent standard normal CDF via erf.
double phi(double x) { return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))); }

std::shared_ptr<const Emulator> fixed_emulator(double mean) {
  const ParameterSpace s({{"x", 0.0, 1.0}});
  return std::make_shared<const Emulator>(ExactEmulator{s, [=](const Point&) { return MetricVector::Constant(1, mean); }});
}

std::vector<Gaussian> stub(double mean, double var) { return {{mean, var}}; }

std::shared_ptr<const Emulator> two_box_oracle() {
  return std::make_shared<const Emulator>(ExactEmulator{two_box_space(), [](const Point& p) { return two_box_equilibrium(p); }});
}

}  // namespace

TEST(Plausibility, ErfExample) {
  const PlausibilityCriterion c({{0.0, 1.0}});
  EXPECT_NEAR(plausibility(stub(0.5, 0.25), c), 0.682689492137, 1e-10);
}

TEST(Plausibility, DegenerateVariance) {
  const PlausibilityCriterion c({{0.0, 1.0}});
  EXPECT_EQ(plausibility(stub(0.5, 0.0), c), 1.0);
  EXPECT_EQ(plausibility(stub(1.0, 0.0), c), 1.0);
  EXPECT_EQ(plausibility(stub(1.5, 0.0), c), 0.0);
  EXPECT_NEAR(plausibility(stub(0.5, 1e-30), c), 1.0, 1e-12);
  EXPECT_NEAR(plausibility(stub(1.5, 1e-30), c), 0.0, 1e-12);
}

TEST(Plausibility, ProductAndMinRules) {
  const PlausibilityCriterion c({{0.0, kInf}, {-kInf, 0.0}});
  const std::vector<Gaussian> pred{{0.0, 1.0}, {0.0, 4.0}};
  EXPECT_NEAR(plausibility(pred, c, Combine::Product), 0.25, 1e-15);
  EXPECT_NEAR(plausibility(pred, c, Combine::Min), 0.5, 1e-15);
}

TEST(Plausibility, UnconstrainedMetricsIgnored) {
  const PlausibilityCriterion c({{0.0, 1.0}, {}});
  const std::vector<Gaussian> pred{{0.5, 0.0}, {1e9, 1.0}};
  EXPECT_EQ(plausibility(pred, c), 1.0);
  EXPECT_THROW(plausibility(stub(0.5, 1.0), c), DimensionError);
}

TEST(Plausibility, MatchesErfOracleOnRandomInputs) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> mu(-5, 5), sd(0.01, 3), lo(-4, 4), width(0.01, 5);
  for (int t = 0; t < 10000; ++t) {
    const double m = mu(rng), s = sd(rng), a = lo(rng), b = a + width(rng);
    const double expected = phi((b - m) / s) - phi((a - m) / s);
    EXPECT_NEAR(plausibility(stub(m, s * s), PlausibilityCriterion({{a, b}})), expected, 1e-10);
  }
}

TEST(Plausibility, InUnitIntervalAndMonotoneUnderWidening) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-3, 3), g(0, 2), sd(0, 2);
  for (int t = 0; t < 5000; ++t) {
    const double a = u(rng), b = a + 0.01 + g(rng);
    const std::vector<Gaussian> pred{{u(rng) * 2, std::pow(sd(rng), 2)}};
    const double p1 = plausibility(pred, PlausibilityCriterion({{a, b}}));
    const double p2 = plausibility(pred, PlausibilityCriterion({{a - g(rng), b + g(rng)}}));
    EXPECT_GE(p1, 0.0);
    EXPECT_LE(p1, 1.0);
    EXPECT_GE(p2, p1 - 1e-15);
  }
}

TEST(Classify, StrictThresholds) {
  EXPECT_EQ(classify_probability(0.001, 0.01, 0.99), Classification::RuledOut);
  EXPECT_EQ(classify_probability(0.5, 0.01, 0.99), Classification::Uncertain);
  EXPECT_EQ(classify_probability(0.999, 0.01, 0.99), Classification::Plausible);
  EXPECT_EQ(classify_probability(0.99, 0.01, 0.99), Classification::Uncertain);
  EXPECT_EQ(classify_probability(0.01, 0.01, 0.99), Classification::Uncertain);
}

TEST(PlausibilityField, ThresholdValidation) {
  const auto e = fixed_emulator(0.5);
  const PlausibilityCriterion c({{0.0, 1.0}});
  EXPECT_THROW(PlausibilityField(e, c, 0.5, 0.5), ArgumentError);
  EXPECT_THROW(PlausibilityField(e, c, 0.0, 0.9), ArgumentError);
  EXPECT_THROW(PlausibilityField(e, c, 0.1, 1.0), ArgumentError);
  EXPECT_THROW(PlausibilityField(nullptr, c), ArgumentError);
  const PlausibilityField f(e, c);
  EXPECT_EQ(classify(f, Point::Constant(1, 0.2)), Classification::Plausible);
}

TEST(PlausibilityField, OracleReproducesGridRegion) {
  const PlausibilityField f(two_box_oracle(), two_box_criterion());
  const int n = 200;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      Point p(2);
      p << 1.0 + (i + 0.5) / n, 30.0 + 20.0 * (j + 0.5) / n;
      const double t = 288.0 + (3.0 + 5.35 * std::log(2.0) * p[0]) / (1.0 + (p[1] - 40.0) / 100.0);
      const bool truth = t >= 294.5 && t <= 295.5;
      EXPECT_EQ(classify(f, p), truth ? Classification::Plausible : Classification::RuledOut);
    }
}

TEST(PlausibilityField, WellFittedGpRarelyRulesOutTruth) {
  Ensemble e;
  run_into(e, make_two_box_simulator(), maximin_lhs(two_box_space(), 30, 1).points, 0);
  const auto gp = std::make_shared<const Emulator>(gp_fit(e, two_box_space(), 8, 0));
  const PlausibilityField f(gp, two_box_criterion());
  int plausible = 0, ruled_out = 0;
  const int n = 100;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      Point p(2);
      p << 1.0 + (i + 0.5) / n, 30.0 + 20.0 * (j + 0.5) / n;
      if (!is_plausible(two_box_equilibrium(p), two_box_criterion())) continue;
      ++plausible;
      if (classify(f, p) == Classification::RuledOut) ++ruled_out;
    }
  ASSERT_GT(plausible, 0);
  EXPECT_LE(static_cast<double>(ruled_out) / plausible, 0.02);
}

TEST(RunWave, TwoBoxAcceptanceAfterOneWave) {
  const auto sim = make_two_box_simulator();
  Ensemble init;
  run_into(init, sim, maximin_lhs(two_box_space(), 30, 3).points, 0);
  auto state = initial_wave_state(two_box_space(), init);
  const WaveSchedule schedule({two_box_criterion()});
  WaveOptions o;
  o.gp.restarts = 4;
  o.nroy_samples = 500;
  state = run_wave(state, schedule, sim, 20, o, 7);
  EXPECT_EQ(state.wave, 1);
  ASSERT_EQ(state.acceptance_rates.size(), 1u);
  EXPECT_GE(state.acceptance_rates[0], 0.6);
  EXPECT_EQ(state.ensemble.size(), 50u);
  for (std::size_t i = 30; i < 50; ++i) EXPECT_EQ(state.ensemble[i].wave, 1);
  EXPECT_LT(state.history[0].nroy_fraction, 1.0);
}

TEST(RunWave, RepeatedCriterionDoesNotResurrectRuledOutTruth) {
  const auto sim = make_two_box_simulator();
  const auto crit = two_box_criterion();
  Ensemble init;
  run_into(init, sim, maximin_lhs(two_box_space(), 20, 5).points, 0);
  auto state = initial_wave_state(two_box_space(), init);
  const WaveSchedule schedule({crit, crit});
  WaveOptions o;
  o.gp.restarts = 4;
  o.nroy_samples = 10;
  state = run_wave(state, schedule, sim, 15, o, 1);
  const PlausibilityField f1(state.emulator, crit);
  state = run_wave(state, schedule, sim, 15, o, 2);
  const PlausibilityField f2(state.emulator, crit);
  int cells = 0, flipped = 0;
  const int n = 60;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      Point p(2);
      p << 1.0 + (i + 0.5) / n, 30.0 + 20.0 * (j + 0.5) / n;
      if (!is_plausible(two_box_equilibrium(p), crit)) continue;
      ++cells;
      if (classify(f1, p) == Classification::RuledOut && classify(f2, p) == Classification::Plausible) ++flipped;
    }
  EXPECT_GE(1.0 - static_cast<double>(flipped) / cells, 0.98);
}

TEST(RunWave, AlwaysFailingSimulator) {
  const SimulatorSpec spec{two_box_space(), {"T_surface"}, true};
  const Simulator broken(spec, [](const Point&) -> Outcome { return Failed{"exit"}; });
  auto state = initial_wave_state(two_box_space(), Ensemble{});
  const WaveSchedule schedule({two_box_criterion()});
  WaveOptions o;
  o.nroy_samples = 10;
  state = run_wave(state, schedule, broken, 10, o, 3);
  EXPECT_EQ(state.acceptance_rates.at(0), 0.0);
  EXPECT_EQ(state.history[0].plausible, 0u);
  EXPECT_EQ(state.ensemble.size(), 10u);
  EXPECT_EQ(state.ensemble.completed_count(), 0u);
}

TEST(RunWave, EmptyPlausibleSetCarriesWaveContext) {
  const auto sim = make_two_box_simulator();
  Ensemble init;
  run_into(init, sim, maximin_lhs(two_box_space(), 15, 3).points, 0);
  auto state = initial_wave_state(two_box_space(), init);
  // Far above anything the surrogate can produce.
  const WaveSchedule schedule({PlausibilityCriterion({{400.0, 401.0}})});
  WaveOptions o;
  o.gp.restarts = 2;
  o.filter.max_draws = 2000;
  try {
    run_wave(state, schedule, sim, 10, o, 1);
    FAIL() << "expected EmptyPlausibleSet";
  } catch (const EmptyPlausibleSet& e) {
    EXPECT_NE(std::string(e.what()).find("wave 1"), std::string::npos);
  }
}

TEST(RunWave, PastEndOfSchedule) {
  auto state = initial_wave_state(two_box_space(), Ensemble{});
  state.wave = 1;
  EXPECT_THROW(run_wave(state, WaveSchedule({two_box_criterion()}), make_two_box_simulator(), 5, {}, 0), ArgumentError);
}

TEST(RunWave, RegressionEmulatorAndRestrictedRefresh) {
  const auto sim = make_two_box_simulator();
  Ensemble init;
  run_into(init, sim, maximin_lhs(two_box_space(), 30, 9).points, 0);
  auto state = initial_wave_state(two_box_space(), init);
  WaveOptions o;
  o.emulator = EmulatorKind::Regression;
  o.refresh = RefreshPolicy::PreviousNroy;
  o.nroy_samples = 100;
  state = run_wave(state, WaveSchedule({two_box_criterion()}), sim, 10, o, 4);
  EXPECT_TRUE(std::holds_alternative<RegModel>(*state.emulator));
  EXPECT_EQ(state.ensemble.size(), 40u);
}
