// nroy: command-line front end for history matching studies.
//
//   nroy <design|run|fit|predict|match|acquire|abc|report> --config study.json --out DIR [options]
//
// Every subcommand writes DIR/manifest.json next to its outputs. Passing a
// manifest back as --config replays the run with the same effective study.

#include <nroy/nroy.hpp>

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace nroy;

namespace {

constexpr const char* kVersion = "0.1.0";
constexpr int kSchemaVersion = 1;

// ---------------------------------------------------------------------------
// JSON helpers
// ---------------------------------------------------------------------------

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ArgumentError("'" + path + "' is not valid JSON: " + e.what());
  }
}

const json& section(const json& study, const char* key) {
  static const json empty = json::object();
  if (!study.contains(key)) return empty;
  const auto& s = study.at(key);
  if (!s.is_object()) throw ArgumentError(std::string("'") + key + "' must be an object");
  return s;
}

void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : obj.items())
    if (!ok.count(k)) throw ArgumentError("unknown key '" + k + "' in " + where);
}

template <class T>
T get_or(const json& obj, const char* key, T fallback) {
  if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ArgumentError(std::string("'") + key + "' has the wrong type");
  }
}

std::size_t count_or(const json& obj, const char* key, std::size_t fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0)
    throw ArgumentError(std::string("'") + key + "' must be a nonnegative integer");
  return v.get<std::size_t>();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
}

Ensemble read_ensemble_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open '" + path + "'");
  return read_ensemble(in);
}

std::optional<std::size_t> env_count(const char* name) {
  const char* v = std::getenv(name);
  if (!v || !*v) return std::nullopt;
  char* end = nullptr;
  const long long n = std::strtoll(v, &end, 10);
  if (*end || n < 1) throw ArgumentError(std::string(name) + " must be a positive integer");
  return static_cast<std::size_t>(n);
}

// ---------------------------------------------------------------------------
// Study
// ---------------------------------------------------------------------------

struct Study {
  json doc;  // effective configuration, recorded in the manifest
  std::string name;
  ParameterSpace space;
  std::vector<std::string> metrics;
  std::optional<WaveSchedule> schedule;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

void validate_top_level(const json& doc) {
  if (!doc.is_object()) throw ArgumentError("study must be a JSON object");
  check_keys(doc, "study",
             {"schema_version", "name", "parameters", "metrics", "waves", "simulator", "seed", "workers", "design",
              "emulator", "match", "acquire", "abc", "report"});
  const int version = get_or(doc, "schema_version", kSchemaVersion);
  if (version != kSchemaVersion)
    throw ArgumentError("unsupported schema_version " + std::to_string(version) + " (expected " +
                        std::to_string(kSchemaVersion) + ")");
  check_keys(section(doc, "simulator"), "simulator", {"kind", "command", "timeout_s", "two_box"});
  check_keys(section(doc, "design"), "design", {"generator", "n", "restarts"});
  check_keys(section(doc, "emulator"), "emulator",
             {"kind", "restarts", "nugget", "max_evals", "max_terms", "interactions"});
  check_keys(section(doc, "match"), "match",
             {"budget", "threshold", "batch", "max_draws", "candidates", "p_low", "p_high", "combine", "refresh",
              "nroy_samples"});
  check_keys(section(doc, "acquire"), "acquire",
             {"initial", "total_runs", "batch", "candidates", "mc_draws", "reference_per_dim"});
  check_keys(section(doc, "abc"), "abc", {"budget", "distance", "wave", "targets", "weights", "epsilon", "quantile"});
  check_keys(section(doc, "report"), "report", {"x", "y", "nx", "ny", "wave"});
}

std::string simulator_kind(const json& doc) {
  const auto kind = get_or<std::string>(section(doc, "simulator"), "kind", "two_box_equilibrium");
  if (kind != "two_box_equilibrium" && kind != "two_box_transient" && kind != "external")
    throw ArgumentError("unknown simulator kind '" + kind + "'");
  return kind;
}

Study load_study(json doc) {
  validate_top_level(doc);
  Study s;
  const bool builtin = simulator_kind(doc) != "external";
  if (!doc.contains("parameters")) {
    if (!builtin) throw ArgumentError("external simulators need 'parameters'");
    doc["parameters"] = to_json(two_box_space());
  }
  if (!doc.contains("metrics")) {
    if (!builtin) throw ArgumentError("external simulators need 'metrics'");
    doc["metrics"] = {"T_surface"};
  }
  s.name = get_or<std::string>(doc, "name", "study");
  s.space = space_from_json(doc.at("parameters"));
  s.metrics = get_or<std::vector<std::string>>(doc, "metrics", {});
  if (s.metrics.empty()) throw ArgumentError("study declares no metrics");
  if (builtin && (!(s.space == two_box_space()) || s.metrics != std::vector<std::string>{"T_surface"}))
    throw ArgumentError("two-box simulators take GAMMA in [1,2] and DTcrit_conv in [30,50] with metric T_surface");
  if (doc.contains("waves")) {
    if (!doc.at("waves").is_array() || doc.at("waves").empty()) throw ArgumentError("'waves' must be a nonempty array");
    std::vector<PlausibilityCriterion> cs;
    for (const auto& w : doc.at("waves")) cs.push_back(criterion_from_json(w, s.metrics));
    s.schedule.emplace(std::move(cs));
  }
  s.seed = get_or<std::uint64_t>(doc, "seed", 0);
  s.workers = std::max<std::size_t>(1, count_or(doc, "workers", 1));
  if (const auto t = env_count("NROY_TIMEOUT")) doc["simulator"]["timeout_s"] = static_cast<double>(*t);
  s.doc = std::move(doc);
  return s;
}

const WaveSchedule& require_schedule(const Study& s) {
  if (!s.schedule) throw ArgumentError("study has no 'waves'");
  return *s.schedule;
}

TwoBoxConfig two_box_config(const json& sim) {
  TwoBoxConfig c;
  if (!sim.contains("two_box")) return c;
  const auto& t = sim.at("two_box");
  check_keys(t, "simulator.two_box", {"F0", "a", "lambda0", "Tref", "k_mix", "Cs", "Cd", "dt", "n_steps"});
  c.F0 = get_or(t, "F0", c.F0);
  c.a = get_or(t, "a", c.a);
  c.lambda0 = get_or(t, "lambda0", c.lambda0);
  c.Tref = get_or(t, "Tref", c.Tref);
  c.k_mix = get_or(t, "k_mix", c.k_mix);
  c.Cs = get_or(t, "Cs", c.Cs);
  c.Cd = get_or(t, "Cd", c.Cd);
  c.dt = get_or(t, "dt", c.dt);
  c.n_steps = count_or(t, "n_steps", c.n_steps);
  c.validate();
  return c;
}

Simulator make_simulator(const Study& s) {
  const auto& sim = section(s.doc, "simulator");
  const auto kind = simulator_kind(s.doc);
  if (kind == "external") {
    const auto cmd = get_or<std::string>(sim, "command", "");
    if (cmd.empty()) throw ArgumentError("external simulator needs a 'command'");
    const double timeout = get_or(sim, "timeout_s", 60.0);
    return external_simulator(cmd, {s.space, s.metrics, true}, timeout);
  }
  return make_two_box_simulator(two_box_config(sim), kind == "two_box_transient");
}

Design make_design(const Study& s) {
  const auto& d = section(s.doc, "design");
  const auto gen = get_or<std::string>(d, "generator", "maximin_lhs");
  const std::size_t n = count_or(d, "n", 30);
  if (gen == "maximin_lhs") {
    MaximinOptions o;
    o.restarts = count_or(d, "restarts", o.restarts);
    return maximin_lhs(s.space, n, s.seed, o);
  }
  if (gen == "sobol") return sobol_sample(s.space, n, s.seed);
  if (gen == "uniform") return uniform_sample(s.space, n, s.seed);
  throw ArgumentError("unknown design generator '" + gen + "'");
}

GpFitOptions gp_options(const Study& s) {
  const auto& e = section(s.doc, "emulator");
  GpFitOptions o;
  o.restarts = count_or(e, "restarts", o.restarts);
  o.nugget = get_or(e, "nugget", o.nugget);
  o.max_evals = count_or(e, "max_evals", o.max_evals);
  o.seed = s.seed;
  if (!(o.nugget >= 0)) throw ArgumentError("emulator nugget must be nonnegative");
  return o;
}

RegOptions reg_options(const Study& s) {
  const auto& e = section(s.doc, "emulator");
  RegOptions o;
  o.max_terms = count_or(e, "max_terms", o.max_terms);
  o.interactions = get_or(e, "interactions", o.interactions);
  return o;
}

EmulatorKind emulator_kind(const Study& s) {
  const auto k = get_or<std::string>(section(s.doc, "emulator"), "kind", "gp");
  if (k == "gp") return EmulatorKind::GP;
  if (k == "regression") return EmulatorKind::Regression;
  throw ArgumentError("unknown emulator kind '" + k + "'");
}

Combine parse_combine(const std::string& c) {
  if (c == "product") return Combine::Product;
  if (c == "min") return Combine::Min;
  throw ArgumentError("combine must be 'product' or 'min'");
}

Emulator fit_any(const Study& s, const Ensemble& ens) {
  if (emulator_kind(s) == EmulatorKind::GP) return GpModel::fit(ens, s.space, gp_options(s));
  return RegModel::fit(ens, s.space, reg_options(s));
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

struct Context {
  std::string command;
  Study study;
  fs::path out;
  json inputs = json::object();
  json manifest = json::object();
  std::size_t workers = 1;
};

std::string input_path(Context& ctx, const std::string& key, const std::string& flag_value) {
  std::string path = flag_value;
  if (path.empty() && ctx.inputs.contains(key)) path = ctx.inputs.at(key).get<std::string>();
  if (!path.empty()) ctx.inputs[key] = fs::absolute(path).lexically_normal().string();
  return path;
}

void add_output(Context& ctx, const std::string& key, const std::string& file, const std::string& text) {
  write_text(ctx.out / file, text);
  ctx.manifest["outputs"][key] = file;
}

void write_manifest(Context& ctx, const std::string& status) {
  json m;
  m["tool"] = "nroy";
  m["version"] = kVersion;
  m["command"] = ctx.command;
  m["status"] = status;
  m["study_name"] = ctx.study.name;
  m["study"] = ctx.study.doc;
  m["seed"] = ctx.study.seed;
  m["workers"] = ctx.workers;
  m["inputs"] = ctx.inputs;
  if (!ctx.manifest.contains("outputs")) ctx.manifest["outputs"] = json::object();
  for (const auto& [k, v] : ctx.manifest.items()) m[k] = v;
  write_text(ctx.out / "manifest.json", m.dump(2) + "\n");
}

std::string dump_model(const Emulator& e) { return emulator_to_json(e).dump(2) + "\n"; }

json summary_to_json(const WaveSummary& w) {
  return {{"wave", w.wave},
          {"draws", w.draws},
          {"proposed", w.proposed},
          {"completed", w.completed},
          {"plausible", w.plausible},
          {"filter_acceptance", w.filter_acceptance},
          {"acceptance_rate", w.acceptance_rate},
          {"nroy_fraction", w.nroy_fraction}};
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

struct Flags {
  std::string design, ensemble, model, points;
  std::vector<std::string> theta;
  std::optional<std::size_t> n, budget, nx, ny, wave;
  std::optional<std::uint64_t> seed;
  std::optional<double> epsilon, quantile;
  std::string x, y;
  bool oracle = false;
};

Ensemble run_design(Context& ctx, const Simulator& sim) {
  const auto pts = make_design(ctx.study).points;
  Ensemble ens;
  run_into(ens, sim, pts, 0, ctx.workers);
  return ens;
}

void cmd_design(Context& ctx) {
  const auto d = make_design(ctx.study);
  ctx.manifest["design"] = {{"generator", to_string(d.generator)},
                            {"points", d.points.size()},
                            {"min_distance", d.points.size() > 1 ? min_pairwise_distance(d.points, ctx.study.space) : 0.0}};
  add_output(ctx, "ensemble", "ensemble.jsonl", ensemble_to_jsonl(design_to_ensemble(d.points)));
}

void cmd_run(Context& ctx, const Flags& f) {
  const auto sim = make_simulator(ctx.study);
  Ensemble ens;
  const auto design_path = input_path(ctx, "design", f.design);
  if (!design_path.empty()) {
    const auto pending = read_ensemble_file(design_path);
    std::vector<Point> pts;
    for (const auto& r : pending) pts.push_back(r.theta);
    run_into(ens, sim, pts, pending.last_wave(), ctx.workers);
  } else {
    ens = run_design(ctx, sim);
  }
  ctx.manifest["runs"] = {{"total", ens.size()}, {"completed", ens.completed_count()}};
  add_output(ctx, "ensemble", "ensemble.jsonl", ensemble_to_jsonl(ens));
}

void cmd_fit(Context& ctx, const Flags& f) {
  Ensemble ens;
  const auto path = input_path(ctx, "ensemble", f.ensemble);
  if (!path.empty())
    ens = read_ensemble_file(path);
  else
    ens = run_design(ctx, make_simulator(ctx.study));
  const auto model = fit_any(ctx.study, ens);
  add_output(ctx, "ensemble", "ensemble.jsonl", ensemble_to_jsonl(ens));
  add_output(ctx, "model", "model.json", dump_model(model));
}

std::vector<Point> read_points(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open '" + path + "'");
  std::vector<Point> pts;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ArgumentError("bad point line in '" + path + "': " + e.what());
    }
    pts.push_back(vector_from_json(j.is_object() ? j.at("theta") : j));
  }
  return pts;
}

Point parse_theta(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ArgumentError("--theta expects comma-separated numbers, got '" + text + "'");
    }
  }
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

void cmd_predict(Context& ctx, const Flags& f) {
  const auto model_path = input_path(ctx, "model", f.model);
  if (model_path.empty()) throw ArgumentError("predict needs --model");
  const auto emu = std::make_shared<const Emulator>(emulator_from_json(read_json_file(model_path)));
  std::vector<Point> pts;
  const auto points_path = input_path(ctx, "points", f.points);
  if (!points_path.empty()) pts = read_points(points_path);
  std::vector<std::string> thetas = f.theta;
  if (thetas.empty() && ctx.inputs.contains("theta")) thetas = ctx.inputs.at("theta").get<std::vector<std::string>>();
  if (!thetas.empty()) ctx.inputs["theta"] = thetas;
  for (const auto& t : thetas) pts.push_back(parse_theta(t));
  if (pts.empty()) throw ArgumentError("predict needs --points or --theta");

  std::optional<PlausibilityField> field;
  if (ctx.study.schedule) field.emplace(emu, ctx.study.schedule->back());
  std::ostringstream os;
  for (const auto& p : pts) {
    const auto g = predict(*emu, p);
    json row;
    row["theta"] = to_json(p);
    json mean = json::array(), var = json::array();
    for (const auto& x : g) {
      mean.push_back(x.mean);
      var.push_back(x.variance);
    }
    row["mean"] = mean;
    row["variance"] = var;
    if (field) {
      const double prob = field->probability(p);
      row["probability"] = prob;
      row["class"] = to_string(classify_probability(prob, field->p_low, field->p_high));
    }
    os << row.dump() << '\n';
  }
  add_output(ctx, "predictions", "predictions.jsonl", os.str());
}

WaveOptions wave_options(const Study& s, std::size_t workers) {
  const auto& m = section(s.doc, "match");
  WaveOptions o;
  o.emulator = emulator_kind(s);
  o.gp = gp_options(s);
  o.regression = reg_options(s);
  o.filter.threshold = get_or(m, "threshold", o.filter.threshold);
  o.filter.batch = count_or(m, "batch", o.filter.batch);
  o.filter.max_draws = count_or(m, "max_draws", o.filter.max_draws);
  const auto cand = get_or<std::string>(m, "candidates", "uniform");
  if (cand == "uniform")
    o.filter.source = CandidateSource::Uniform;
  else if (cand == "sobol")
    o.filter.source = CandidateSource::Sobol;
  else
    throw ArgumentError("match.candidates must be 'uniform' or 'sobol'");
  o.p_low = get_or(m, "p_low", o.p_low);
  o.p_high = get_or(m, "p_high", o.p_high);
  o.combine = parse_combine(get_or<std::string>(m, "combine", "product"));
  const auto refresh = get_or<std::string>(m, "refresh", "all");
  if (refresh == "all")
    o.refresh = RefreshPolicy::All;
  else if (refresh == "previous_nroy")
    o.refresh = RefreshPolicy::PreviousNroy;
  else
    throw ArgumentError("match.refresh must be 'all' or 'previous_nroy'");
  o.nroy_samples = count_or(m, "nroy_samples", o.nroy_samples);
  o.workers = workers;
  if (!(0.0 < o.p_low && o.p_low < o.p_high && o.p_high < 1.0))
    throw ArgumentError("match thresholds need 0 < p_low < p_high < 1");
  return o;
}

std::string nroy_jsonl(const NroyEstimate& est) {
  std::ostringstream os;
  for (std::size_t i = 0; i < est.sample.size(); ++i)
    os << json{{"theta", to_json(est.sample[i])}, {"probability", est.probability[i]}, {"class", to_string(est.classes[i])}}.dump()
       << '\n';
  return os.str();
}

int cmd_match(Context& ctx) {
  const auto& schedule = require_schedule(ctx.study);
  const auto sim = make_simulator(ctx.study);
  const auto budget = count_or(section(ctx.study.doc, "match"), "budget", 20);
  if (budget < 1) throw ArgumentError("match.budget must be positive");
  const auto opts = wave_options(ctx.study, ctx.workers);

  auto state = initial_wave_state(ctx.study.space, run_design(ctx, sim));
  json waves = json::array();
  int code = 0;
  std::string status = "ok";
  try {
    for (std::size_t w = 0; w < schedule.size(); ++w) {
      state = run_wave(std::move(state), schedule, sim, budget, opts, ctx.study.seed + 1000 * (w + 1));
      waves.push_back(summary_to_json(state.history.back()));
    }
  } catch (const EmptyPlausibleSet& e) {
    std::cerr << "nroy: " << e.what() << '\n';
    status = "empty_plausible_set";
    ctx.manifest["error"] = e.what();
    code = 3;
  }
  ctx.manifest["waves"] = waves;
  ctx.manifest["acceptance_rates"] = state.acceptance_rates;
  add_output(ctx, "ensemble", "ensemble.jsonl", ensemble_to_jsonl(state.ensemble));
  if (state.emulator && !std::holds_alternative<ExactEmulator>(*state.emulator))
    add_output(ctx, "model", "model.json", dump_model(*state.emulator));
  if (!state.nroy.sample.empty()) add_output(ctx, "nroy", "nroy.jsonl", nroy_jsonl(state.nroy));
  ctx.manifest["status_detail"] = status;
  return code;
}

void cmd_acquire(Context& ctx) {
  const auto& schedule = require_schedule(ctx.study);
  const auto& a = section(ctx.study.doc, "acquire");
  const auto sim = make_simulator(ctx.study);
  const auto initial_kind = get_or<std::string>(a, "initial", "corners_plus_center");
  Ensemble init;
  if (initial_kind == "corners_plus_center") {
    const std::size_t k = ctx.study.space.dim();
    const std::size_t corners = k < 62 ? std::min(k + 1, std::size_t{1} << k) : k + 1;
    run_into(init, sim, corners_plus_center(ctx.study.space, corners), 0, ctx.workers);
  } else if (initial_kind == "design") {
    init = run_design(ctx, sim);
  } else {
    throw ArgumentError("acquire.initial must be 'corners_plus_center' or 'design'");
  }
  const std::size_t total = count_or(a, "total_runs", 10);
  if (total < init.size()) throw ArgumentError("acquire.total_runs is smaller than the initial design");
  SequentialOptions o;
  o.gp = gp_options(ctx.study);
  o.candidates = count_or(a, "candidates", o.candidates);
  o.mc_draws = count_or(a, "mc_draws", o.mc_draws);
  o.batch = std::max<std::size_t>(1, count_or(a, "batch", o.batch));
  o.workers = ctx.workers;
  const auto reference = grid_points(ctx.study.space, count_or(a, "reference_per_dim", 30));
  const auto res = sequential_design(sim, schedule.back(), init, total, reference, o, ctx.study.seed);

  json chosen = json::array();
  for (std::size_t i = init.size(); i < res.ensemble.size(); ++i) chosen.push_back(to_json(res.ensemble[i].theta));
  ctx.manifest["acquisition"] = {{"initial_runs", init.size()}, {"total_runs", res.ensemble.size()}};
  add_output(ctx, "ensemble", "ensemble.jsonl", ensemble_to_jsonl(res.ensemble));
  add_output(ctx, "acquisition", "acquisition.json",
             json{{"chosen", chosen}, {"expected_entropy", res.expected_trace}, {"mean_entropy", res.realised}}.dump(2) +
                 "\n");
  add_output(ctx, "model", "model.json", dump_model(GpModel::fit(res.ensemble, ctx.study.space, gp_options(ctx.study))));
}

void cmd_abc(Context& ctx) {
  const auto& a = section(ctx.study.doc, "abc");
  const auto sim = make_simulator(ctx.study);
  AbcConfig cfg{MaxIntervalViolation{PlausibilityCriterion({{0.0, 1.0}})}};
  const auto distance = get_or<std::string>(a, "distance", "interval");
  if (distance == "interval") {
    const auto& schedule = require_schedule(ctx.study);
    const std::size_t w = count_or(a, "wave", schedule.size() - 1);
    if (w >= schedule.size()) throw ArgumentError("abc.wave is past the end of 'waves'");
    cfg.distance = MaxIntervalViolation{schedule[w]};
  } else if (distance == "euclidean") {
    const auto targets = get_or<std::vector<double>>(a, "targets", {});
    auto weights = get_or<std::vector<double>>(a, "weights", std::vector<double>(targets.size(), 1.0));
    if (targets.size() != ctx.study.metrics.size()) throw ArgumentError("abc.targets needs one value per metric");
    cfg.distance = WeightedEuclidean{Eigen::Map<const Vector>(targets.data(), static_cast<Eigen::Index>(targets.size())),
                                     Eigen::Map<const Vector>(weights.data(), static_cast<Eigen::Index>(weights.size()))};
  } else {
    throw ArgumentError("abc.distance must be 'interval' or 'euclidean'");
  }
  if (a.contains("quantile") && a.contains("epsilon")) throw ArgumentError("abc takes either epsilon or quantile, not both");
  if (a.contains("quantile"))
    cfg.tolerance = QuantileRule{get_or(a, "quantile", 0.01)};
  else
    cfg.tolerance = get_or(a, "epsilon", 0.0);
  cfg.budget = count_or(a, "budget", 1000);
  cfg.seed = ctx.study.seed;
  cfg.workers = ctx.workers;

  const auto res = rejection_abc(sim, ctx.study.space, cfg);
  Ensemble accepted;
  for (std::size_t i = 0; i < res.all.size(); ++i)
    if (res.accepted_mask[i]) accepted.append(res.all[i]);
  json summary{{"draws", res.all.size()},
               {"completed", res.all.completed_count()},
               {"accepted", res.accepted.size()},
               {"acceptance_fraction", static_cast<double>(res.accepted.size()) / static_cast<double>(res.all.size())}};
  summary["epsilon_used"] = std::isfinite(res.epsilon_used) ? json(res.epsilon_used) : json(nullptr);
  if (!res.diagnostic.empty()) {
    summary["diagnostic"] = res.diagnostic;
    std::cerr << "nroy: " << res.diagnostic << '\n';
  }
  ctx.manifest["abc"] = summary;
  add_output(ctx, "ensemble", "ensemble.jsonl", ensemble_to_jsonl(res.all));
  add_output(ctx, "accepted", "accepted.jsonl", ensemble_to_jsonl(accepted));
}

std::size_t param_index(const ParameterSpace& s, const std::string& name, std::size_t fallback) {
  if (name.empty()) return fallback;
  return s.index_of(name);
}

void cmd_report(Context& ctx, const Flags& f) {
  const auto& schedule = require_schedule(ctx.study);
  const auto& r = section(ctx.study.doc, "report");
  auto& doc_report = ctx.study.doc["report"];
  if (f.nx) doc_report["nx"] = *f.nx;
  if (f.ny) doc_report["ny"] = *f.ny;
  if (!f.x.empty()) doc_report["x"] = f.x;
  if (!f.y.empty()) doc_report["y"] = f.y;
  if (f.wave) doc_report["wave"] = *f.wave;
  const std::size_t nx = count_or(r, "nx", 100), ny = count_or(r, "ny", 100);
  const std::size_t w = count_or(r, "wave", schedule.size() - 1);
  if (w >= schedule.size()) throw ArgumentError("report wave is past the end of 'waves'");
  if (ctx.study.space.dim() < 2) throw ArgumentError("report needs at least two parameters");
  const std::size_t xi = param_index(ctx.study.space, get_or<std::string>(r, "x", ""), 0);
  const std::size_t yi = param_index(ctx.study.space, get_or<std::string>(r, "y", ""), 1);

  bool oracle = f.oracle || get_or(ctx.inputs, "oracle", false);
  std::shared_ptr<const Emulator> emu;
  std::vector<Point> overlay;
  const auto ens_path = input_path(ctx, "ensemble", f.ensemble);
  const auto model_path = input_path(ctx, "model", f.model);
  if (!ens_path.empty())
    for (const auto& rec : read_ensemble_file(ens_path)) overlay.push_back(rec.theta);
  if (oracle) {
    ctx.inputs["oracle"] = true;
    if (simulator_kind(ctx.study.doc) == "external") throw ArgumentError("--oracle needs a built-in simulator");
    const auto cfg = two_box_config(section(ctx.study.doc, "simulator"));
    emu = std::make_shared<const Emulator>(
        ExactEmulator{ctx.study.space, [cfg](const Point& p) { return two_box_equilibrium(p, cfg); }});
  } else if (!model_path.empty()) {
    emu = std::make_shared<const Emulator>(emulator_from_json(read_json_file(model_path)));
  } else if (!ens_path.empty()) {
    emu = std::make_shared<const Emulator>(fit_any(ctx.study, read_ensemble_file(ens_path)));
  } else {
    throw ArgumentError("report needs --oracle, --model or --ensemble");
  }
  const auto& m = section(ctx.study.doc, "match");
  const PlausibilityField field(emu, schedule[w], get_or(m, "p_low", 0.01), get_or(m, "p_high", 0.99),
                                parse_combine(get_or<std::string>(m, "combine", "product")));
  const auto grid = slice_grid(field, xi, yi, nx, ny);
  std::ostringstream csv, prob, ent;
  write_grid_csv(csv, grid, ctx.study.space);
  write_heatmap_svg(prob, grid, ctx.study.space, SurfaceKind::Probability, overlay);
  write_heatmap_svg(ent, grid, ctx.study.space, SurfaceKind::Entropy, overlay);
  add_output(ctx, "grid", "grid.csv", csv.str());
  add_output(ctx, "surface", "surface.svg", prob.str());
  add_output(ctx, "entropy", "entropy.svg", ent.str());
  std::size_t counts[3] = {0, 0, 0};
  for (auto c : grid.classes) ++counts[static_cast<int>(c)];
  ctx.manifest["report"] = {{"cells", grid.classes.size()},
                            {"ruled_out", counts[0]},
                            {"uncertain", counts[1]},
                            {"plausible", counts[2]}};
}

// Applies command-line overrides to the effective study so that a replay
// from the manifest sees them.
void apply_overrides(json& doc, const std::string& cmd, const Flags& f) {
  if (f.seed) doc["seed"] = *f.seed;
  if (f.n) doc["design"]["n"] = *f.n;
  if (f.budget) {
    if (cmd == "abc")
      doc["abc"]["budget"] = *f.budget;
    else
      doc["match"]["budget"] = *f.budget;
  }
  if (f.epsilon) {
    doc["abc"].erase("quantile");
    doc["abc"]["epsilon"] = *f.epsilon;
  }
  if (f.quantile) {
    doc["abc"].erase("epsilon");
    doc["abc"]["quantile"] = *f.quantile;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"History matching, emulation and rejection ABC for deterministic simulators"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::string config, out;
  std::optional<std::size_t> workers;
  Flags f;

  auto common = [&](CLI::App* sub, bool config_required = true) {
    auto* c = sub->add_option("--config", config, "study JSON or a manifest to replay");
    if (config_required) c->required();
    sub->add_option("--out", out, "output directory")->required();
    sub->add_option("--workers", workers, "concurrent simulator runs");
    sub->add_option("--seed", f.seed, "override the study seed");
  };

  auto* design = app.add_subcommand("design", "space-filling design written as pending records");
  common(design);
  design->add_option("--n", f.n, "design size");

  auto* run = app.add_subcommand("run", "run the simulator on a design");
  common(run);
  run->add_option("--design", f.design, "pending ensemble to run (default: generate from the study)");
  run->add_option("--n", f.n, "design size when generating");

  auto* fit = app.add_subcommand("fit", "fit an emulator");
  common(fit);
  fit->add_option("--ensemble", f.ensemble, "training ensemble (default: run the study design)");
  fit->add_option("--n", f.n, "design size when generating");

  auto* pred = app.add_subcommand("predict", "emulator predictions at points");
  common(pred, false);
  pred->add_option("--model", f.model, "model JSON");
  pred->add_option("--points", f.points, "JSON lines with theta arrays");
  pred->add_option("--theta", f.theta, "comma-separated point, repeatable");

  auto* match = app.add_subcommand("match", "iterated history matching waves");
  common(match);
  match->add_option("--budget", f.budget, "runs per wave");
  match->add_option("--n", f.n, "initial design size");

  auto* acquire = app.add_subcommand("acquire", "sequential design by expected entropy reduction");
  common(acquire);

  auto* abc = app.add_subcommand("abc", "rejection ABC");
  common(abc);
  abc->add_option("--budget", f.budget, "simulator runs");
  auto* eps = abc->add_option("--epsilon", f.epsilon, "fixed tolerance");
  abc->add_option("--quantile", f.quantile, "tolerance as a distance quantile")->excludes(eps);

  auto* report = app.add_subcommand("report", "CSV grid and SVG heatmaps of p(theta) and entropy");
  common(report);
  report->add_option("--model", f.model, "model JSON");
  report->add_option("--ensemble", f.ensemble, "ensemble to overlay (and fit when no model is given)");
  report->add_flag("--oracle", f.oracle, "use the exact simulator response");
  report->add_option("--x", f.x, "parameter on the horizontal axis");
  report->add_option("--y", f.y, "parameter on the vertical axis");
  report->add_option("--nx", f.nx, "cells along x");
  report->add_option("--ny", f.ny, "cells along y");
  report->add_option("--wave", f.wave, "criterion index in 'waves'");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  Context ctx;
  ctx.command = app.get_subcommands().front()->get_name();
  try {
    json doc = json::object();
    if (!config.empty()) {
      doc = read_json_file(config);
      if (doc.is_object() && doc.value("tool", "") == "nroy" && doc.contains("study")) {
        const auto replayed = doc.value("command", "");
        if (replayed != ctx.command)
          throw ArgumentError("manifest records '" + replayed + "', not '" + ctx.command + "'");
        ctx.inputs = doc.value("inputs", json::object());
        doc = doc.at("study");
      }
    }
    apply_overrides(doc, ctx.command, f);
    ctx.study = load_study(std::move(doc));
    ctx.workers = ctx.study.workers;
    if (const auto w = env_count("NROY_WORKERS")) ctx.workers = *w;
    if (workers) ctx.workers = std::max<std::size_t>(1, *workers);
    ctx.out = out;
    fs::create_directories(ctx.out);

    int code = 0;
    if (ctx.command == "design") cmd_design(ctx);
    else if (ctx.command == "run") cmd_run(ctx, f);
    else if (ctx.command == "fit") cmd_fit(ctx, f);
    else if (ctx.command == "predict") cmd_predict(ctx, f);
    else if (ctx.command == "match") code = cmd_match(ctx);
    else if (ctx.command == "acquire") cmd_acquire(ctx);
    else if (ctx.command == "abc") cmd_abc(ctx);
    else if (ctx.command == "report") cmd_report(ctx, f);
    write_manifest(ctx, code == 0 ? "ok" : "empty_plausible_set");
    return code;
  } catch (const EmptyPlausibleSet& e) {
    std::cerr << "nroy: " << e.what() << '\n';
    return 3;
  } catch (const ArgumentError& e) {
    std::cerr << "nroy: " << e.what() << '\n';
    return 2;
  } catch (const DimensionError& e) {
    std::cerr << "nroy: " << e.what() << '\n';
    return 2;
  } catch (const DomainError& e) {
    std::cerr << "nroy: " << e.what() << '\n';
    return 2;
  } catch (const json::exception& e) {
    std::cerr << "nroy: malformed configuration: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "nroy: " << e.what() << '\n';
    return 1;
  }
}
