#pragma once

// Domain types shared by every part of the toolkit: parameter boxes, metric
// vectors, ensembles of simulator runs and interval plausibility criteria.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace nroy {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
  using Error::Error;
};

struct DomainError : Error {
  using Error::Error;
};

struct ArgumentError : Error {
  using Error::Error;
};

struct FitError : Error {
  using Error::Error;
};

struct NumericalError : Error {
  using Error::Error;
};

struct UnsupportedEmulator : Error {
  using Error::Error;
};

// Raised when a filtered search exhausts its candidate budget without
// accepting anything: the emulator believes the plausible set is empty.
struct EmptyPlausibleSet : Error {
  EmptyPlausibleSet(const std::string& what, std::size_t draws)
      : Error(what), draws(draws) {}
  std::size_t draws;
};

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Raw parameter coordinates, in the units of the owning ParameterSpace.
using Point = Eigen::VectorXd;

// One value per declared output metric.
using MetricVector = Eigen::VectorXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// ParameterSpace
// ---------------------------------------------------------------------------

struct Parameter {
  std::string name;
  double lower = 0.0;
  double upper = 1.0;
};

/// Rectangular prior region. Every point handed to an emulator goes through
/// to_unit() first so that lower bounds land on -1 and upper bounds on +1.
class ParameterSpace {
 public:
  ParameterSpace() = default;

  explicit ParameterSpace(std::vector<Parameter> params) : params_(std::move(params)) {
    if (params_.empty()) throw ArgumentError("parameter space needs at least one parameter");
    std::set<std::string> seen;
    for (const auto& p : params_) {
      if (p.name.empty()) throw ArgumentError("parameter names must be non-empty");
      if (!seen.insert(p.name).second) throw ArgumentError("duplicate parameter name '" + p.name + "'");
      if (!std::isfinite(p.lower) || !std::isfinite(p.upper) || !(p.lower < p.upper))
        throw ArgumentError("parameter '" + p.name + "' needs finite bounds with lower < upper");
    }
  }

  std::size_t dim() const { return params_.size(); }
  const std::vector<Parameter>& params() const { return params_; }
  const Parameter& operator[](std::size_t j) const { return params_[j]; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.name);
    return out;
  }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t j = 0; j < params_.size(); ++j)
      if (params_[j].name == name) return j;
    throw ArgumentError("unknown parameter '" + name + "'");
  }

  bool contains(const Point& p) const {
    if (static_cast<std::size_t>(p.size()) != dim()) return false;
    for (std::size_t j = 0; j < dim(); ++j)
      if (!(p[j] >= params_[j].lower && p[j] <= params_[j].upper)) return false;
    return true;
  }

  Point midpoint() const {
    Point m(dim());
    for (std::size_t j = 0; j < dim(); ++j) m[j] = 0.5 * (params_[j].lower + params_[j].upper);
    return m;
  }

  /// Affine map of the box onto [-1,1]^k.
  Vector to_unit(const Point& p) const {
    check_dim(p);
    if (!contains(p)) throw DomainError("point lies outside the parameter space");
    return to_unit_unchecked(p);
  }

  Vector to_unit_unchecked(const Point& p) const {
    Vector u(dim());
    for (std::size_t j = 0; j < dim(); ++j) {
      const auto& par = params_[j];
      u[j] = 2.0 * (p[j] - par.lower) / (par.upper - par.lower) - 1.0;
    }
    return u;
  }

  Point from_unit(const Vector& u) const {
    check_dim(u);
    Point p(dim());
    for (std::size_t j = 0; j < dim(); ++j) {
      const auto& par = params_[j];
      p[j] = par.lower + 0.5 * (u[j] + 1.0) * (par.upper - par.lower);
    }
    return p;
  }

  /// Map from the unit cube [0,1]^k, the natural output of samplers.
  Point from_cube(const Vector& c) const {
    check_dim(c);
    Point p(dim());
    for (std::size_t j = 0; j < dim(); ++j) {
      const auto& par = params_[j];
      p[j] = std::clamp(par.lower + c[j] * (par.upper - par.lower), par.lower, par.upper);
    }
    return p;
  }

  bool operator==(const ParameterSpace& o) const {
    if (params_.size() != o.params_.size()) return false;
    for (std::size_t j = 0; j < params_.size(); ++j)
      if (params_[j].name != o.params_[j].name || params_[j].lower != o.params_[j].lower ||
          params_[j].upper != o.params_[j].upper)
        return false;
    return true;
  }

 private:
  void check_dim(const Vector& v) const {
    if (static_cast<std::size_t>(v.size()) != dim())
      throw DimensionError("point has " + std::to_string(v.size()) + " coordinates, space has " +
                           std::to_string(dim()));
  }

  std::vector<Parameter> params_;
};

inline Vector map_to_unit(const Point& p, const ParameterSpace& space) { return space.to_unit(p); }
inline Point map_from_unit(const Vector& u, const ParameterSpace& space) { return space.from_unit(u); }

// ---------------------------------------------------------------------------
// Plausibility criteria
// ---------------------------------------------------------------------------

/// Closed interval; either end may be infinite.
struct Interval {
  double lower = -kInf;
  double upper = kInf;

  bool constrained() const { return std::isfinite(lower) || std::isfinite(upper); }
  bool contains(double v) const { return v >= lower && v <= upper; }
  bool contains(const Interval& o) const { return lower <= o.lower && o.upper <= upper; }
  bool operator==(const Interval&) const = default;
};

class PlausibilityCriterion {
 public:
  PlausibilityCriterion() = default;

  explicit PlausibilityCriterion(std::vector<Interval> intervals) : intervals_(std::move(intervals)) {
    bool any = false;
    for (std::size_t m = 0; m < intervals_.size(); ++m) {
      const auto& iv = intervals_[m];
      if (std::isnan(iv.lower) || std::isnan(iv.upper))
        throw ArgumentError("criterion bound for metric " + std::to_string(m) + " is NaN");
      if (iv.constrained()) {
        any = true;
        if (!(iv.lower < iv.upper))
          throw ArgumentError("criterion for metric " + std::to_string(m) + " needs lower < upper");
      }
    }
    if (!any) throw ArgumentError("a plausibility criterion must constrain at least one metric");
  }

  std::size_t size() const { return intervals_.size(); }
  const Interval& operator[](std::size_t m) const { return intervals_[m]; }
  const std::vector<Interval>& intervals() const { return intervals_; }

  /// True when every interval of `inner` sits inside the matching one here.
  bool contains(const PlausibilityCriterion& inner) const {
    if (inner.size() != size()) return false;
    for (std::size_t m = 0; m < size(); ++m)
      if (!intervals_[m].contains(inner.intervals_[m])) return false;
    return true;
  }

  bool operator==(const PlausibilityCriterion&) const = default;

 private:
  std::vector<Interval> intervals_;
};

inline bool is_plausible(const MetricVector& metrics, const PlausibilityCriterion& crit) {
  if (static_cast<std::size_t>(metrics.size()) != crit.size())
    throw DimensionError("metric vector has " + std::to_string(metrics.size()) + " entries, criterion has " +
                         std::to_string(crit.size()));
  for (std::size_t m = 0; m < crit.size(); ++m) {
    const auto& iv = crit[m];
    if (iv.constrained() && !iv.contains(metrics[m])) return false;
  }
  return true;
}

/// Criteria for successive waves; each one nested inside its predecessor.
class WaveSchedule {
 public:
  WaveSchedule() = default;

  explicit WaveSchedule(std::vector<PlausibilityCriterion> criteria) : criteria_(std::move(criteria)) {
    if (criteria_.empty()) throw ArgumentError("wave schedule needs at least one criterion");
    for (std::size_t i = 1; i < criteria_.size(); ++i) {
      if (criteria_[i].size() != criteria_[0].size())
        throw DimensionError("wave criteria disagree on the number of metrics");
      if (!criteria_[i - 1].contains(criteria_[i]))
        throw ArgumentError("wave " + std::to_string(i + 1) + " criterion is not nested inside wave " +
                            std::to_string(i));
    }
  }

  std::size_t size() const { return criteria_.size(); }
  const PlausibilityCriterion& operator[](std::size_t i) const { return criteria_[i]; }
  const PlausibilityCriterion& back() const { return criteria_.back(); }
  const std::vector<PlausibilityCriterion>& criteria() const { return criteria_; }

 private:
  std::vector<PlausibilityCriterion> criteria_;
};

// ---------------------------------------------------------------------------
// Ensembles
// ---------------------------------------------------------------------------

struct Completed {
  MetricVector metrics;
};

struct Failed {
  std::string reason;
};

// A design point that has not been run yet.
struct Pending {};

using Outcome = std::variant<Completed, Failed, Pending>;

struct Record {
  Point theta;
  Outcome outcome;
  int wave = 0;

  bool completed() const { return std::holds_alternative<Completed>(outcome); }
  bool failed() const { return std::holds_alternative<Failed>(outcome); }
  bool pending() const { return std::holds_alternative<Pending>(outcome); }
  const MetricVector& metrics() const { return std::get<Completed>(outcome).metrics; }
};

/// Failed and pending runs are never plausible.
inline bool is_plausible(const Record& r, const PlausibilityCriterion& crit) {
  return r.completed() && is_plausible(r.metrics(), crit);
}

inline Outcome make_completed(MetricVector m) {
  for (Eigen::Index i = 0; i < m.size(); ++i)
    if (!std::isfinite(m[i])) return Failed{"nonfinite"};
  return Completed{std::move(m)};
}

/// Ordered record list. Points are pairwise distinct and wave tags never
/// decrease; both are enforced on append.
class Ensemble {
 public:
  Ensemble() = default;

  const std::vector<Record>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const Record& operator[](std::size_t i) const { return records_[i]; }
  auto begin() const { return records_.begin(); }
  auto end() const { return records_.end(); }

  bool contains(const Point& p) const { return keys_.count(key(p)) != 0; }

  int last_wave() const { return records_.empty() ? 0 : records_.back().wave; }

  void append(Record r) {
    if (!records_.empty()) {
      if (r.theta.size() != records_.front().theta.size())
        throw DimensionError("record dimension differs from the ensemble's");
      if (r.wave < records_.back().wave) throw ArgumentError("wave index must be nondecreasing");
    }
    if (r.wave < 0) throw ArgumentError("wave index must be nonnegative");
    if (r.completed()) {
      const auto& m = r.metrics();
      if (metric_count_ && static_cast<std::size_t>(m.size()) != *metric_count_)
        throw DimensionError("record has " + std::to_string(m.size()) + " metrics, ensemble has " +
                             std::to_string(*metric_count_));
      for (Eigen::Index i = 0; i < m.size(); ++i)
        if (!std::isfinite(m[i])) throw ArgumentError("completed record carries a non-finite metric");
      metric_count_ = static_cast<std::size_t>(m.size());
    }
    if (!keys_.insert(key(r.theta)).second) throw ArgumentError("duplicate design point");
    records_.push_back(std::move(r));
  }

  /// Number of metrics, known once a completed record is present.
  std::size_t metric_count() const { return metric_count_.value_or(0); }

  std::size_t completed_count() const {
    return static_cast<std::size_t>(
        std::count_if(records_.begin(), records_.end(), [](const Record& r) { return r.completed(); }));
  }

  std::vector<Point> points() const {
    std::vector<Point> out;
    out.reserve(records_.size());
    for (const auto& r : records_) out.push_back(r.theta);
    return out;
  }

 private:
  static std::vector<double> key(const Point& p) { return {p.data(), p.data() + p.size()}; }

  std::vector<Record> records_;
  std::set<std::vector<double>> keys_;
  std::optional<std::size_t> metric_count_;
};

}  // namespace nroy
