#pragma once

// JSON persistence: ensembles as JSON lines, emulator models, criteria and
// parameter spaces.

#include <nroy/core.hpp>
#include <nroy/gp.hpp>
#include <nroy/history_match.hpp>
#include <nroy/regression.hpp>

#include <nlohmann/json.hpp>

#include <istream>
#include <ostream>
#include <sstream>
#include <string>

namespace nroy {

using json = nlohmann::json;

inline json to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Vector vector_from_json(const json& j) {
  if (!j.is_array()) throw ArgumentError("expected a JSON array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ArgumentError("expected a JSON array of numbers");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

inline json to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(to_json(Vector(m.row(r).transpose())));
  return rows;
}

inline Matrix matrix_from_json(const json& j, Eigen::Index cols) {
  if (!j.is_array()) throw ArgumentError("expected a JSON array of rows");
  Matrix m(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    const Vector row = vector_from_json(j[r]);
    if (row.size() != cols) throw DimensionError("matrix row has the wrong length");
    m.row(static_cast<Eigen::Index>(r)) = row.transpose();
  }
  return m;
}

// ---------------------------------------------------------------------------
// Ensemble JSON lines
// ---------------------------------------------------------------------------

inline json record_to_json(const Record& r) {
  json j;
  j["theta"] = to_json(r.theta);
  if (r.completed()) {
    j["status"] = "completed";
    j["metrics"] = to_json(r.metrics());
  } else if (r.failed()) {
    j["status"] = "failed";
    j["metrics"] = json::array();
    j["reason"] = std::get<Failed>(r.outcome).reason;
  } else {
    j["status"] = "pending";
    j["metrics"] = json::array();
  }
  j["wave"] = r.wave;
  return j;
}

inline Record record_from_json(const json& j) {
  if (!j.is_object() || !j.contains("theta") || !j.contains("status"))
    throw ArgumentError("ensemble record needs theta and status");
  Record r;
  r.theta = vector_from_json(j.at("theta"));
  r.wave = j.value("wave", 0);
  const auto status = j.at("status").get<std::string>();
  if (status == "completed") {
    r.outcome = Completed{vector_from_json(j.at("metrics"))};
  } else if (status == "failed") {
    r.outcome = Failed{j.value("reason", std::string("unknown"))};
  } else if (status == "pending") {
    r.outcome = Pending{};
  } else {
    throw ArgumentError("unknown record status '" + status + "'");
  }
  return r;
}

inline void write_ensemble(std::ostream& os, const Ensemble& ens) {
  for (const auto& r : ens) os << record_to_json(r).dump() << '\n';
}

inline std::string ensemble_to_jsonl(const Ensemble& ens) {
  std::ostringstream os;
  write_ensemble(os, ens);
  return os.str();
}

inline Ensemble read_ensemble(std::istream& is) {
  Ensemble ens;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      ens.append(record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ArgumentError("ensemble line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return ens;
}

/// Pending records for a design.
inline Ensemble design_to_ensemble(const std::vector<Point>& pts, int wave = 0) {
  Ensemble ens;
  for (const auto& p : pts) ens.append({p, Pending{}, wave});
  return ens;
}

// ---------------------------------------------------------------------------
// Parameter spaces and criteria
// ---------------------------------------------------------------------------

inline json to_json(const ParameterSpace& s) {
  json arr = json::array();
  for (const auto& p : s.params()) arr.push_back({{"name", p.name}, {"lower", p.lower}, {"upper", p.upper}});
  return arr;
}

inline ParameterSpace space_from_json(const json& j) {
  if (!j.is_array()) throw ArgumentError("parameters must be an array");
  std::vector<Parameter> ps;
  for (const auto& e : j) ps.push_back({e.at("name").get<std::string>(), e.at("lower").get<double>(), e.at("upper").get<double>()});
  return ParameterSpace(std::move(ps));
}

namespace detail {

inline json bound_to_json(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline double bound_from_json(const json& j, double if_null) {
  if (j.is_null()) return if_null;
  if (!j.is_number()) throw ArgumentError("criterion bounds must be numbers or null");
  return j.get<double>();
}

}  // namespace detail

/// {"metric": [lower, upper]} with null for an open end; metrics left out
/// are unconstrained.
inline json criterion_to_json(const PlausibilityCriterion& c, const std::vector<std::string>& metrics) {
  json j = json::object();
  for (std::size_t m = 0; m < c.size(); ++m)
    if (c[m].constrained()) j[metrics.at(m)] = {detail::bound_to_json(c[m].lower), detail::bound_to_json(c[m].upper)};
  return j;
}

inline PlausibilityCriterion criterion_from_json(const json& j, const std::vector<std::string>& metrics) {
  if (!j.is_object()) throw ArgumentError("criterion must be an object keyed by metric name");
  std::vector<Interval> ivs(metrics.size());
  for (const auto& [name, bounds] : j.items()) {
    const auto it = std::find(metrics.begin(), metrics.end(), name);
    if (it == metrics.end()) throw ArgumentError("criterion names unknown metric '" + name + "'");
    if (!bounds.is_array() || bounds.size() != 2) throw ArgumentError("criterion for '" + name + "' needs [lower, upper]");
    ivs[static_cast<std::size_t>(it - metrics.begin())] = {detail::bound_from_json(bounds[0], -kInf),
                                                           detail::bound_from_json(bounds[1], kInf)};
  }
  return PlausibilityCriterion(std::move(ivs));
}

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

inline json to_json(const GpModel& model) {
  json j;
  j["kind"] = "gp";
  j["parameters"] = to_json(model.space());
  const Eigen::Index n = model.training_size();
  j["inputs"] = to_json(model.output(0).gp.inputs());
  Matrix targets(n, static_cast<Eigen::Index>(model.metric_count()));
  json metrics = json::array();
  for (std::size_t m = 0; m < model.metric_count(); ++m) {
    const auto& o = model.output(m);
    for (Eigen::Index i = 0; i < n; ++i) targets(i, static_cast<Eigen::Index>(m)) = o.transform.unstandardize(o.gp.targets()[i]);
    const auto& h = o.gp.hyperparams();
    metrics.push_back({{"lengthscales", to_json(h.lengthscales)},
                       {"signal_variance", h.signal_variance},
                       {"nugget", h.nugget},
                       {"transform", {{"mean", o.transform.mean}, {"scale", o.transform.scale}}},
                       {"log_marginal_likelihood", o.gp.log_marginal_likelihood()}});
  }
  j["targets"] = to_json(targets);
  j["metrics"] = metrics;
  return j;
}

inline GpModel gp_from_json(const json& j) {
  const auto space = space_from_json(j.at("parameters"));
  const Matrix inputs = matrix_from_json(j.at("inputs"), static_cast<Eigen::Index>(space.dim()));
  const auto& ms = j.at("metrics");
  const Matrix targets = matrix_from_json(j.at("targets"), static_cast<Eigen::Index>(ms.size()));
  std::vector<GpHyperparams> hyper;
  std::vector<TargetTransform> tfs;
  for (const auto& m : ms) {
    hyper.push_back({vector_from_json(m.at("lengthscales")), m.at("signal_variance").get<double>(), m.at("nugget").get<double>()});
    tfs.push_back({m.at("transform").at("mean").get<double>(), m.at("transform").at("scale").get<double>()});
  }
  return GpModel::from_parts(space, inputs, targets, hyper, tfs);
}

namespace detail {

inline std::string term_kind_name(Term::Kind k) {
  switch (k) {
    case Term::Kind::Intercept: return "intercept";
    case Term::Kind::Linear: return "linear";
    case Term::Kind::Quadratic: return "quadratic";
    case Term::Kind::Interaction: return "interaction";
  }
  return "?";
}

inline Term::Kind term_kind_from(const std::string& s) {
  if (s == "intercept") return Term::Kind::Intercept;
  if (s == "linear") return Term::Kind::Linear;
  if (s == "quadratic") return Term::Kind::Quadratic;
  if (s == "interaction") return Term::Kind::Interaction;
  throw ArgumentError("unknown regression term '" + s + "'");
}

}  // namespace detail

inline json to_json(const RegModel& model) {
  json j;
  j["kind"] = "regression";
  j["parameters"] = to_json(model.space());
  json metrics = json::array();
  const auto names = model.space().names();
  for (std::size_t m = 0; m < model.metric_count(); ++m) {
    const auto& f = model.fit_for(m);
    json terms = json::array();
    for (const auto& t : f.terms())
      terms.push_back({{"kind", detail::term_kind_name(t.kind)}, {"i", t.i}, {"j", t.j}, {"label", t.label(names)}});
    metrics.push_back({{"terms", terms},
                       {"coefficients", to_json(f.coefficients())},
                       {"residual_variance", f.residual_variance()},
                       {"xtx_inverse", to_json(f.xtx_inverse())},
                       {"observations", f.observations()}});
  }
  j["metrics"] = metrics;
  return j;
}

inline RegModel reg_from_json(const json& j) {
  auto space = space_from_json(j.at("parameters"));
  std::vector<RegressionFit> fits;
  for (const auto& m : j.at("metrics")) {
    std::vector<Term> terms;
    for (const auto& t : m.at("terms"))
      terms.push_back({detail::term_kind_from(t.at("kind").get<std::string>()), t.at("i").get<int>(), t.at("j").get<int>()});
    const auto p = static_cast<Eigen::Index>(terms.size());
    fits.emplace_back(std::move(terms), vector_from_json(m.at("coefficients")), m.at("residual_variance").get<double>(),
                      matrix_from_json(m.at("xtx_inverse"), p), m.at("observations").get<std::size_t>());
  }
  return RegModel(std::move(space), std::move(fits));
}

inline json emulator_to_json(const Emulator& e) {
  if (const auto* gp = std::get_if<GpModel>(&e)) return to_json(*gp);
  if (const auto* reg = std::get_if<RegModel>(&e)) return to_json(*reg);
  throw UnsupportedEmulator("exact emulators are not serialisable");
}

inline Emulator emulator_from_json(const json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "gp") return gp_from_json(j);
  if (kind == "regression") return reg_from_json(j);
  throw ArgumentError("unknown model kind '" + kind + "'");
}

}  // namespace nroy
