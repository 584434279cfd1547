// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <nroy/nroy.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

using namespace nroy;
namespace fs = std::filesystem;

namespace {

struct Outcome_ {
  bool pass = false;
  std::string detail;
};

// Brute-force surrogate response, written out independently of the library.
double two_box_truth(double gamma, double d) {
  return 288.0 + (3.0 + 5.35 * std::log(2.0) * gamma) / (1.0 + (d - 40.0) / 100.0);
}

bool truly_plausible(const Point& p) {
  const double t = two_box_truth(p[0], p[1]);
  return t >= 294.5 && t <= 295.5;
}

double phi(double x) { return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))); }

std::vector<Point> midpoint_grid(int n) {
  std::vector<Point> g;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      Point p(2);
      p << 1.0 + (i + 0.5) / n, 30.0 + 20.0 * (j + 0.5) / n;
      g.push_back(p);
    }
  return g;
}

std::string fmt(const char* f, double a, double b = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

double misclassified_on_grid(const std::shared_ptr<const Emulator>& emu) {
  const PlausibilityField field(emu, two_box_criterion());
  return misclassification_rate(field, midpoint_grid(100), truly_plausible);
}

Outcome_ oracle_equivalence() {
  const auto oracle = std::make_shared<const Emulator>(
      ExactEmulator{two_box_space(), [](const Point& p) { return two_box_equilibrium(p); }});
  const PlausibilityField field(oracle, two_box_criterion());
  std::size_t wrong = 0, cells = 0;
  for (const auto& p : midpoint_grid(500)) {
    const auto c = classify(field, p);
    if (c != (truly_plausible(p) ? Classification::Plausible : Classification::RuledOut)) ++wrong;
    ++cells;
  }
  return {wrong == 0, std::to_string(wrong) + " of " + std::to_string(cells) + " cells misclassified"};
}

Outcome_ abc_equals_history_matching() {
  AbcConfig cfg{MaxIntervalViolation{two_box_criterion()}};
  cfg.budget = 1000;
  cfg.seed = 2024;
  const auto res = rejection_abc(make_two_box_simulator(), two_box_space(), cfg);
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < res.all.size(); ++i)
    if (static_cast<bool>(res.accepted_mask[i]) != truly_plausible(res.all[i].theta)) ++mismatches;
  const bool sizes = res.all.size() == 1000;
  return {sizes && mismatches == 0, std::to_string(mismatches) + " set differences over " + std::to_string(res.all.size()) + " draws"};
}

Outcome_ abc_acceptance_fraction() {
  AbcConfig cfg{MaxIntervalViolation{two_box_criterion()}};
  cfg.budget = 1000;
  cfg.seed = 7;
  const auto res = rejection_abc(make_two_box_simulator(), two_box_space(), cfg);
  const double frac = static_cast<double>(res.accepted.size()) / 1000.0;
  return {std::abs(frac - 0.21) <= 0.04, fmt("acceptance fraction %.3f (target 0.21 +/- 0.04)", frac)};
}

Outcome_ plausibility_correctness() {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> mu(-5, 5), sd(0.01, 3), lo(-4, 4), width(0.01, 5);
  double worst = 0.0;
  for (int t = 0; t < 10000; ++t) {
    const double m = mu(rng), s = sd(rng), a = lo(rng), b = a + width(rng);
    const double expected = phi((b - m) / s) - phi((a - m) / s);
    const double got = plausibility({{m, s * s}}, PlausibilityCriterion({{a, b}}));
    worst = std::max(worst, std::abs(got - expected));
  }
  const double h = std::abs(entropy(0.5) - std::log(2.0));
  return {worst <= 1e-10 && h <= 1e-12, fmt("max |p - oracle| = %.2e, |H(0.5) - ln2| = %.2e", worst, h)};
}

Outcome_ gp_soundness() {
  const auto space = two_box_space();
  const auto sim = make_two_box_simulator();
  Ensemble ens;
  run_into(ens, sim, maximin_lhs(space, 15, 8).points, 0);
  const auto model = gp_fit(ens, space, 8, 0);

  double interp = 0.0;
  for (const auto& r : ens) interp = std::max(interp, std::abs(model.predict(r.theta)[0].mean - r.metrics()[0]));

  const auto& o = model.output(0);
  const double prior = o.gp.hyperparams().signal_variance * o.transform.scale * o.transform.scale;
  std::size_t above_prior = 0;
  for (const auto& p : uniform_sample(space, 1000, 1).points)
    if (model.predict(p)[0].variance > prior) ++above_prior;

  GpModel grown = model;
  for (const auto& p : uniform_sample(space, 5, 99).points) grown = grown.conditioned(p, two_box_equilibrium(p));
  std::size_t increased = 0;
  for (const auto& p : uniform_sample(space, 100, 2).points)
    if (grown.predict(p)[0].variance > model.predict(p)[0].variance + 1e-12) ++increased;

  return {interp <= 1e-6 && above_prior == 0 && increased == 0,
          fmt("max interpolation error %.2e K, ", interp) + std::to_string(above_prior) + " points above prior, " +
              std::to_string(increased) + " variance increases"};
}

Outcome_ mlh_emulator_matching() {
  int good = 0;
  std::string rates;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Ensemble ens;
    run_into(ens, make_two_box_simulator(), maximin_lhs(two_box_space(), 30, seed).points, 0);
    const double r = misclassified_on_grid(std::make_shared<const Emulator>(gp_fit(ens, two_box_space(), 8, seed)));
    if (r <= 0.02) ++good;
    rates += fmt("%.4f ", r);
  }
  return {good >= 8, std::to_string(good) + "/10 seeds <= 2% (rates " + rates + ")"};
}

Outcome_ sequential_design_superiority() {
  const auto space = two_box_space();
  const auto sim = make_two_box_simulator();
  const auto reference = grid_points(space, 30);
  int wins = 0;
  std::string pairs;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Ensemble mlh;
    run_into(mlh, sim, maximin_lhs(space, 30, seed).points, 0);
    const double r_mlh = misclassified_on_grid(std::make_shared<const Emulator>(gp_fit(mlh, space, 8, seed)));

    Ensemble init;
    run_into(init, sim, corners_plus_center(space, 3), 0);
    SequentialOptions o;
    o.gp.restarts = 8;
    o.candidates = 256;
    o.mc_draws = 64;
    const auto res = sequential_design(sim, two_box_criterion(), init, 10, reference, o, seed);
    const double r_seq = misclassified_on_grid(std::make_shared<const Emulator>(gp_fit(res.ensemble, space, 8, seed)));
    if (r_seq <= r_mlh) ++wins;
    pairs += fmt("%.4f/%.4f ", r_seq, r_mlh);
  }
  return {wins >= 8, std::to_string(wins) + "/10 seeds (entropy-10/mlh-30: " + pairs + ")"};
}

Outcome_ wave_loop_improvement() {
  const auto space = two_box_space();
  const auto sim = make_two_box_simulator();
  const WaveSchedule schedule({two_box_criterion(), two_box_criterion()});
  // 4-point start; the filter keeps every candidate not ruled out.
  WaveOptions o;
  o.gp.restarts = 4;
  o.nroy_samples = 200;
  o.filter.threshold = 0.01;
  int good = 0;
  std::string rates;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Ensemble init;
    run_into(init, sim, maximin_lhs(space, 4, seed).points, 0);
    auto state = initial_wave_state(space, init);
    state = run_wave(std::move(state), schedule, sim, 20, o, 100 + seed);
    state = run_wave(std::move(state), schedule, sim, 20, o, 200 + seed);
    const double r1 = state.acceptance_rates.at(0), r2 = state.acceptance_rates.at(1);
    if (r2 > r1 && r2 >= 0.6) ++good;
    rates += fmt("%.2f->%.2f ", r1, r2);
  }
  return {good >= 8, std::to_string(good) + "/10 seeds improve to >= 0.6 (" + rates + ")"};
}

Outcome_ stepwise_recovery() {
  // Noise-free quadratic truth in two inputs.
  const ParameterSpace s2({{"x1", -1.0, 1.0}, {"x2", -1.0, 1.0}});
  Ensemble ens;
  for (const auto& p : uniform_sample(s2, 50, 1).points)
    ens.append({p, Completed{Vector::Constant(1, 2.0 + 3.0 * p[0] - p[1] * p[1])}, 0});
  const auto model = stepwise_fit(ens, s2);
  const auto& f = model.fit_for(0);
  const std::vector<Term> want{{Term::Kind::Intercept}, {Term::Kind::Linear, 0}, {Term::Kind::Quadratic, 1}};
  const std::vector<double> coef{2.0, 3.0, -1.0};
  bool exact = f.terms().size() == want.size();
  double coef_err = 0.0;
  for (std::size_t i = 0; exact && i < want.size(); ++i) {
    const auto it = std::find(f.terms().begin(), f.terms().end(), want[i]);
    if (it == f.terms().end()) {
      exact = false;
      break;
    }
    coef_err = std::max(coef_err, std::abs(f.coefficients()[it - f.terms().begin()] - coef[i]));
  }

  // Pure noise: no true signal, 100 points, one input.
  const ParameterSpace s1({{"x", -1.0, 1.0}});
  int intercept_only = 0;
  for (std::uint64_t rep = 0; rep < 100; ++rep) {
    std::mt19937_64 rng(1000 + rep);
    std::normal_distribution<double> noise(0.0, 1.0);
    Ensemble e;
    for (const auto& p : uniform_sample(s1, 100, 5000 + rep).points)
      e.append({p, Completed{Vector::Constant(1, noise(rng))}, 0});
    if (stepwise_fit(e, s1).fit_for(0).terms().size() == 1) ++intercept_only;
  }
  return {exact && coef_err <= 1e-8 && intercept_only >= 95,
          std::string(exact ? "exact term set" : "wrong term set") + fmt(", max coefficient error %.2e, ", coef_err) +
              std::to_string(intercept_only) + "/100 noise replicates intercept-only"};
}

Outcome_ transient_agreement() {
  double worst = 0.0;
  bool all_completed = true;
  for (const auto& p : midpoint_grid(20)) {
    const auto out = two_box_transient(p);
    if (!std::holds_alternative<Completed>(out)) {
      all_completed = false;
      continue;
    }
    worst = std::max(worst, std::abs(std::get<Completed>(out).metrics[0] - two_box_truth(p[0], p[1])));
  }
  return {all_completed && worst <= 1e-3, fmt("max |Euler - analytic| = %.2e K over 400 points", worst)};
}

#ifdef NROY_CLI_PATH
int run_cli(const std::string& args) {
  const int status = std::system((std::string(NROY_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome_ manifest_determinism() {
  const std::string study = std::string(NROY_STUDY_DIR) + "/two_box.json";
  const auto root = fs::temp_directory_path() / ("nroy_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  std::vector<std::pair<std::string, std::string>> cmds{
      {"design", ""}, {"run", ""}, {"fit", ""}, {"match", ""}, {"acquire", ""}, {"abc", ""}, {"report", "--oracle"}};
  std::size_t compared = 0;
  std::string failures;
  for (const auto& [cmd, extra] : cmds) {
    const auto a = root / (cmd + "_a"), b = root / (cmd + "_b");
    if (run_cli(cmd + " " + extra + " --config " + study + " --out " + a.string()) != 0 ||
        run_cli(cmd + " --config " + (a / "manifest.json").string() + " --out " + b.string()) != 0) {
      failures += cmd + "(exit) ";
      continue;
    }
    const auto outputs = json::parse(slurp(a / "manifest.json")).at("outputs");
    for (const auto& [key, file] : outputs.items()) {
      const auto name = file.get<std::string>();
      ++compared;
      if (slurp(a / name) != slurp(b / name)) failures += cmd + ":" + name + " ";
    }
  }
  fs::remove_all(root);
  return {failures.empty() && compared > 0,
          std::to_string(compared) + " output files compared" + (failures.empty() ? "" : ", differing: " + failures)};
}
#else
Outcome_ manifest_determinism() { return {false, "built without the command-line tool"}; }
#endif

struct Criterion {
  int id;
  const char* name;
  double limit_s;
  std::function<Outcome_()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "oracle equivalence on a 500x500 grid", 10, oracle_equivalence},
      {2, "indicator ABC equals history matching", 5, abc_equals_history_matching},
      {3, "ABC acceptance fraction", 5, abc_acceptance_fraction},
      {4, "p(theta) against erf oracle", 1, plausibility_correctness},
      {5, "GP soundness", 30, gp_soundness},
      {6, "30-point MLH emulator matching", 120, mlh_emulator_matching},
      {7, "entropy design beats 30-point MLH", 600, sequential_design_superiority},
      {8, "wave-loop acceptance improvement", 300, wave_loop_improvement},
      {9, "stepwise recovery", 60, stepwise_recovery},
      {10, "transient/analytic agreement", 30, transient_agreement},
      {11, "manifest replay determinism", 600, manifest_determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome_ o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.limit_s;
    const bool pass = o.pass && in_time;
    if (!pass) ++failed;
    std::printf("[%s] criterion %2d: %s: %s (%.2f s, limit %.0f s%s)\n", pass ? "PASS" : "FAIL", c.id, c.name,
                o.detail.c_str(), secs, c.limit_s, in_time ? "" : ", too slow");
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
