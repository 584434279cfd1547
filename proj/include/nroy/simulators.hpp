#pragma once

// Simulator abstraction plus the built-in two-box energy-balance surrogate and
// a subprocess adapter for external models.

#include <nroy/core.hpp>

#include <nlohmann/json.hpp>

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace nroy {

struct SimulatorSpec {
  ParameterSpace input_space;
  std::vector<std::string> metric_names;
  bool deterministic = true;

  void validate() const {
    if (metric_names.empty()) throw ArgumentError("simulator declares no metrics");
    std::set<std::string> seen;
    for (const auto& m : metric_names)
      if (!seen.insert(m).second) throw ArgumentError("duplicate metric name '" + m + "'");
  }
};

/// f: Theta -> MetricVector, or a Failed outcome.
class Simulator {
 public:
  using Fn = std::function<Outcome(const Point&)>;

  Simulator(SimulatorSpec spec, Fn fn) : spec_(std::move(spec)), fn_(std::move(fn)) { spec_.validate(); }

  const SimulatorSpec& spec() const { return spec_; }
  const ParameterSpace& space() const { return spec_.input_space; }
  std::size_t metric_count() const { return spec_.metric_names.size(); }

  Outcome operator()(const Point& theta) const {
    Outcome out = fn_(theta);
    if (auto* c = std::get_if<Completed>(&out)) {
      if (static_cast<std::size_t>(c->metrics.size()) != metric_count()) return Failed{"protocol"};
      for (Eigen::Index i = 0; i < c->metrics.size(); ++i)
        if (!std::isfinite(c->metrics[i])) return Failed{"nonfinite"};
    }
    return out;
  }

 private:
  SimulatorSpec spec_;
  Fn fn_;
};

/// Evaluates every point, up to `workers` at a time. Output order matches
/// input order whatever the scheduling.
inline std::vector<Outcome> evaluate_batch(const Simulator& sim, const std::vector<Point>& points,
                                           std::size_t workers = 1) {
  std::vector<Outcome> out(points.size());
  if (workers <= 1 || points.size() <= 1) {
    for (std::size_t i = 0; i < points.size(); ++i) out[i] = sim(points[i]);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, points.size()); ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < points.size(); i = next++) out[i] = sim(points[i]);
    });
  for (auto& t : pool) t.join();
  return out;
}

/// Runs `points` and appends them to `ensemble` tagged with `wave`.
inline void run_into(Ensemble& ensemble, const Simulator& sim, const std::vector<Point>& points, int wave,
                     std::size_t workers = 1) {
  auto outcomes = evaluate_batch(sim, points, workers);
  for (std::size_t i = 0; i < points.size(); ++i) ensemble.append({points[i], std::move(outcomes[i]), wave});
}

// ---------------------------------------------------------------------------
// Two-box energy-balance surrogate
// ---------------------------------------------------------------------------
//
// Surface box Ts and deep box Td:
//   Cs dTs/dt = F(gamma) - lambda(d) (Ts - Tref) - k_mix (Ts - Td)
//   Cd dTd/dt = k_mix (Ts - Td)
// with F(gamma) = F0 + a*gamma and lambda(d) = lambda0 (1 + (d - 40)/100).
// At equilibrium Td = Ts and Ts = Tref + F/lambda.

struct TwoBoxConfig {
  double F0 = 3.0;
  double a = 5.35 * 0.69314718055994530942;  // 5.35 ln 2
  double lambda0 = 1.0;
  double Tref = 288.0;
  double k_mix = 0.5;
  double Cs = 1.0e8;
  double Cd = 1.0e9;
  double dt = 1.0e6;
  std::size_t n_steps = 40000;

  double forcing(double gamma) const { return F0 + a * gamma; }
  double feedback(double d) const { return lambda0 * (1.0 + (d - 40.0) / 100.0); }

  void validate() const {
    if (!(F0 > 0 && a > 0 && lambda0 > 0 && Tref > 0 && Cs > 0 && Cd > 0 && dt > 0))
      throw ArgumentError("two-box coefficients must be strictly positive");
    if (!(k_mix >= 0)) throw ArgumentError("two-box k_mix must be nonnegative");
    if (!(feedback(30.0) > 0 && feedback(50.0) > 0)) throw ArgumentError("two-box feedback must stay positive");
  }
};

/// GAMMA on [1,2] and DTcrit_conv on [30,50], in that order.
inline ParameterSpace two_box_space() {
  return ParameterSpace({{"GAMMA", 1.0, 2.0}, {"DTcrit_conv", 30.0, 50.0}});
}

inline PlausibilityCriterion two_box_criterion() { return PlausibilityCriterion({{294.5, 295.5}}); }

inline void check_two_box_domain(const Point& theta) {
  if (theta.size() != 2) throw DimensionError("two-box simulator takes (gamma, d)");
  if (!two_box_space().contains(theta)) throw DomainError("two-box parameters outside [1,2]x[30,50]");
}

inline MetricVector two_box_equilibrium(const Point& theta, const TwoBoxConfig& cfg = {}) {
  check_two_box_domain(theta);
  MetricVector m(1);
  m[0] = cfg.Tref + cfg.forcing(theta[0]) / cfg.feedback(theta[1]);
  return m;
}

struct TwoBoxState {
  double Ts = 0.0;
  double Td = 0.0;
  bool diverged = false;
};

/// Forward-Euler spin-up from Ts = Td = Tref.
inline TwoBoxState two_box_integrate(const Point& theta, const TwoBoxConfig& cfg = {}) {
  check_two_box_domain(theta);
  const double F = cfg.forcing(theta[0]);
  const double lam = cfg.feedback(theta[1]);
  TwoBoxState s{cfg.Tref, cfg.Tref, false};
  for (std::size_t i = 0; i < cfg.n_steps; ++i) {
    const double flux = cfg.k_mix * (s.Ts - s.Td);
    const double dTs = (F - lam * (s.Ts - cfg.Tref) - flux) / cfg.Cs;
    const double dTd = flux / cfg.Cd;
    s.Ts += cfg.dt * dTs;
    s.Td += cfg.dt * dTd;
    if (!(std::abs(s.Ts) <= 1.0e4)) {
      s.diverged = true;
      break;
    }
  }
  return s;
}

inline Outcome two_box_transient(const Point& theta, const TwoBoxConfig& cfg = {}) {
  const auto s = two_box_integrate(theta, cfg);
  if (s.diverged) return Failed{"diverged"};
  MetricVector m(1);
  m[0] = s.Ts;
  return Completed{m};
}

inline Simulator make_two_box_simulator(TwoBoxConfig cfg = {}, bool transient = false) {
  cfg.validate();
  SimulatorSpec spec{two_box_space(), {"T_surface"}, true};
  if (transient) return Simulator(spec, [cfg](const Point& p) { return two_box_transient(p, cfg); });
  return Simulator(spec, [cfg](const Point& p) -> Outcome { return Completed{two_box_equilibrium(p, cfg)}; });
}

// ---------------------------------------------------------------------------
// External simulators
// ---------------------------------------------------------------------------
//
// The child is started through /bin/sh -c <command>. It receives one JSON
// object {"theta": [...]} on stdin (followed by EOF) and must print one JSON
// object, either {"metrics": [...]} or {"error": "..."}, on stdout.

namespace detail {

inline bool write_all(int fd, const std::string& data) {
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t w = ::write(fd, data.data() + off, data.size() - off);
    if (w < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    off += static_cast<std::size_t>(w);
  }
  return true;
}

struct ChildResult {
  std::string out;
  int status = 0;
  bool timed_out = false;
  bool spawn_failed = false;
};

inline ChildResult run_child(const std::string& command, const std::string& input, double timeout_s) {
  ChildResult res;
  int in_pipe[2], out_pipe[2];
  if (::pipe(in_pipe) != 0) {
    res.spawn_failed = true;
    return res;
  }
  if (::pipe(out_pipe) != 0) {
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    res.spawn_failed = true;
    return res;
  }
  const pid_t pid = ::fork();
  if (pid < 0) {
    for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) ::close(fd);
    res.spawn_failed = true;
    return res;
  }
  if (pid == 0) {
    ::setpgid(0, 0);
    ::dup2(in_pipe[0], STDIN_FILENO);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) ::close(fd);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);

  // A child that never reads its input must not block us.
  ::signal(SIGPIPE, SIG_IGN);
  write_all(in_pipe[1], input);
  ::close(in_pipe[1]);

  const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_s);
  char buf[4096];
  for (;;) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) {
      res.timed_out = true;
      break;
    }
    pollfd pfd{out_pipe[0], POLLIN, 0};
    const int rc = ::poll(&pfd, 1, static_cast<int>(left.count()));
    if (rc < 0 && errno == EINTR) continue;
    if (rc == 0) {
      res.timed_out = true;
      break;
    }
    const ssize_t n = ::read(out_pipe[0], buf, sizeof buf);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    res.out.append(buf, static_cast<std::size_t>(n));
  }
  ::close(out_pipe[0]);
  if (res.timed_out) ::kill(-pid, SIGKILL);

  // The child may close stdout before exiting; give it until the deadline.
  for (;;) {
    const pid_t w = ::waitpid(pid, &res.status, res.timed_out ? 0 : WNOHANG);
    if (w == pid) break;
    if (w < 0 && errno != EINTR) break;
    if (std::chrono::steady_clock::now() >= deadline) {
      res.timed_out = true;
      ::kill(-pid, SIGKILL);
      ::waitpid(pid, &res.status, 0);
      break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }
  return res;
}

}  // namespace detail

inline Outcome parse_simulator_reply(const std::string& text, std::size_t metric_count) {
  nlohmann::json reply;
  try {
    reply = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    return Failed{"protocol"};
  }
  if (!reply.is_object()) return Failed{"protocol"};
  if (reply.contains("error")) {
    const auto& e = reply["error"];
    return Failed{e.is_string() ? e.get<std::string>() : e.dump()};
  }
  if (!reply.contains("metrics") || !reply["metrics"].is_array()) return Failed{"protocol"};
  const auto& arr = reply["metrics"];
  if (arr.size() != metric_count) return Failed{"protocol"};
  MetricVector m(static_cast<Eigen::Index>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_number()) return Failed{"protocol"};
    m[static_cast<Eigen::Index>(i)] = arr[i].get<double>();
  }
  return make_completed(std::move(m));
}

inline Simulator external_simulator(std::string command, SimulatorSpec spec, double timeout_s = 60.0) {
  if (!(timeout_s > 0)) throw ArgumentError("external simulator timeout must be positive");
  const std::size_t metrics = spec.metric_names.size();
  return Simulator(std::move(spec), [command = std::move(command), timeout_s, metrics](const Point& theta) -> Outcome {
    nlohmann::json req;
    req["theta"] = std::vector<double>(theta.data(), theta.data() + theta.size());
    const auto res = detail::run_child(command, req.dump() + "\n", timeout_s);
    if (res.spawn_failed) return Failed{"spawn"};
    if (res.timed_out) return Failed{"timeout"};
    if (!WIFEXITED(res.status) || WEXITSTATUS(res.status) != 0) return Failed{"exit"};
    return parse_simulator_reply(res.out, metrics);
  });
}

}  // namespace nroy
