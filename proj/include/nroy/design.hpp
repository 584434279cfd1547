#pragma once

// Space-filling and emulator-filtered designs over a ParameterSpace.

#include <nroy/core.hpp>

#include <boost/random/sobol.hpp>

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace nroy {

using Rng = std::mt19937_64;

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

enum class Generator { MaximinLHS, Sobol, UniformRandom, Filtered };

inline std::string to_string(Generator g) {
  switch (g) {
    case Generator::MaximinLHS: return "maximin_lhs";
    case Generator::Sobol: return "sobol";
    case Generator::UniformRandom: return "uniform";
    case Generator::Filtered: return "filtered";
  }
  return "unknown";
}

struct Design {
  std::vector<Point> points;
  Generator generator = Generator::UniformRandom;
  std::uint64_t seed = 0;
  // Filtered designs only.
  std::size_t draws = 0;
  double acceptance_rate = 1.0;
};

namespace detail {

// Points expressed in [-1,1]^k, one per row.
inline Matrix unit_rows(const std::vector<Point>& pts, const ParameterSpace& space) {
  Matrix u(static_cast<Eigen::Index>(pts.size()), static_cast<Eigen::Index>(space.dim()));
  for (std::size_t i = 0; i < pts.size(); ++i) u.row(static_cast<Eigen::Index>(i)) = space.to_unit_unchecked(pts[i]);
  return u;
}

// Latin hypercube in [0,1]^k held as stratum permutations plus jitter so that
// swaps keep each coordinate inside its stratum.
struct LhsState {
  std::vector<std::vector<std::size_t>> strata;  // [dim][row]
  std::vector<std::vector<double>> jitter;       // [dim][row]

  double cube(std::size_t row, std::size_t j) const {
    const double n = static_cast<double>(strata[j].size());
    return (static_cast<double>(strata[j][row]) + jitter[j][row]) / n;
  }
};

inline LhsState random_lhs_state(std::size_t n, std::size_t k, Rng& rng) {
  LhsState s;
  s.strata.resize(k);
  s.jitter.resize(k);
  for (std::size_t j = 0; j < k; ++j) {
    s.strata[j].resize(n);
    std::iota(s.strata[j].begin(), s.strata[j].end(), std::size_t{0});
    std::shuffle(s.strata[j].begin(), s.strata[j].end(), rng);
    s.jitter[j].resize(n);
    for (auto& u : s.jitter[j]) u = uniform01(rng);
  }
  return s;
}

inline std::vector<Point> lhs_points(const LhsState& s, const ParameterSpace& space) {
  const std::size_t n = s.strata.front().size();
  std::vector<Point> pts(n, Point(space.dim()));
  for (std::size_t i = 0; i < n; ++i) {
    Vector c(space.dim());
    for (std::size_t j = 0; j < space.dim(); ++j) c[j] = s.cube(i, j);
    pts[i] = space.from_cube(c);
  }
  return pts;
}

inline Matrix pairwise_distances(const Matrix& u) {
  const Eigen::Index n = u.rows();
  Matrix d = Matrix::Zero(n, n);
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = a + 1; b < n; ++b) d(a, b) = d(b, a) = (u.row(a) - u.row(b)).norm();
  return d;
}

// Smallest off-diagonal entry and the pair attaining it.
inline double min_distance(const Matrix& d, Eigen::Index* ia = nullptr, Eigen::Index* ib = nullptr) {
  double best = kInf;
  for (Eigen::Index a = 0; a < d.rows(); ++a)
    for (Eigen::Index b = a + 1; b < d.rows(); ++b)
      if (d(a, b) < best) {
        best = d(a, b);
        if (ia) *ia = a;
        if (ib) *ib = b;
      }
  return best;
}

}  // namespace detail

/// Minimum pairwise Euclidean distance after mapping to [-1,1]^k.
inline double min_pairwise_distance(const std::vector<Point>& pts, const ParameterSpace& space) {
  return detail::min_distance(detail::pairwise_distances(detail::unit_rows(pts, space)));
}

/// Plain random Latin hypercube; also the first restart of maximin_lhs.
inline Design latin_hypercube(const ParameterSpace& space, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw ArgumentError("latin hypercube needs n >= 1");
  Rng rng(seed);
  auto state = detail::random_lhs_state(n, space.dim(), rng);
  return {detail::lhs_points(state, space), Generator::MaximinLHS, seed};
}

struct MaximinOptions {
  std::size_t restarts = 10;
  // Swap attempts per restart; 0 picks 20*n (at least 200).
  std::size_t iterations = 0;
};

/// Maximin Latin hypercube: random restarts, each improved by coordinate
/// swaps between rows that only ever increase the minimum pairwise distance.
/// Swaps move whole strata, so every restart stays a Latin hypercube.
inline Design maximin_lhs(const ParameterSpace& space, std::size_t n, std::uint64_t seed,
                          MaximinOptions opts = {}) {
  if (n < 2) throw ArgumentError("maximin_lhs needs n >= 2");
  const std::size_t k = space.dim();
  const std::size_t restarts = std::max<std::size_t>(1, opts.restarts);
  const std::size_t iters = opts.iterations ? opts.iterations : std::max<std::size_t>(200, 20 * n);

  // Restart 0 shares its stream with latin_hypercube(space, n, seed).
  Rng rng(seed);
  std::vector<Point> best_pts;
  double best_min = -1.0;

  for (std::size_t r = 0; r < restarts; ++r) {
    auto state = detail::random_lhs_state(n, k, rng);
    Matrix u = detail::unit_rows(detail::lhs_points(state, space), space);
    Matrix d = detail::pairwise_distances(u);
    const auto ni = static_cast<Eigen::Index>(n);

    // Nearest-neighbour distance per row; the design's minimum is their min.
    Vector row_min(ni);
    auto recompute_row_min = [&](Eigen::Index row) {
      double m = kInf;
      for (Eigen::Index o = 0; o < ni; ++o)
        if (o != row) m = std::min(m, d(row, o));
      row_min[row] = m;
    };
    for (Eigen::Index i = 0; i < ni; ++i) recompute_row_min(i);

    auto unit_coord = [&](std::size_t row, std::size_t j) { return 2.0 * state.cube(row, j) - 1.0; };

    auto swap_coord = [&](std::size_t a, std::size_t b, std::size_t j) {
      std::swap(state.strata[j][a], state.strata[j][b]);
      std::swap(state.jitter[j][a], state.jitter[j][b]);
      const auto ea = static_cast<Eigen::Index>(a), eb = static_cast<Eigen::Index>(b);
      const auto ej = static_cast<Eigen::Index>(j);
      u(ea, ej) = unit_coord(a, j);
      u(eb, ej) = unit_coord(b, j);
      Vector old_a = d.row(ea).transpose(), old_b = d.row(eb).transpose();
      for (Eigen::Index o = 0; o < ni; ++o) {
        if (o != ea) d(ea, o) = d(o, ea) = (u.row(ea) - u.row(o)).norm();
        if (o != eb) d(eb, o) = d(o, eb) = (u.row(eb) - u.row(o)).norm();
      }
      for (Eigen::Index o = 0; o < ni; ++o) {
        if (o == ea || o == eb) continue;
        // A row whose nearest neighbour was a or b may have moved away.
        if (old_a[o] <= row_min[o] || old_b[o] <= row_min[o])
          recompute_row_min(o);
        else
          row_min[o] = std::min({row_min[o], d(o, ea), d(o, eb)});
      }
      recompute_row_min(ea);
      recompute_row_min(eb);
    };

    auto critical_row = [&] {
      Eigen::Index arg = 0;
      const double m = row_min.minCoeff(&arg);
      return std::pair{m, arg};
    };

    auto [cur, crit] = critical_row();
    for (std::size_t it = 0; it < iters; ++it) {
      // Move either endpoint of the critical pair.
      Eigen::Index end = crit;
      if (uniform01(rng) < 0.5) {
        for (Eigen::Index o = 0; o < ni; ++o)
          if (o != crit && d(crit, o) == cur) {
            end = o;
            break;
          }
      }
      const auto a = static_cast<std::size_t>(end);
      std::size_t b = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n - 1));
      if (b >= a) ++b;
      const std::size_t j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(k)) % k;

      const Vector saved_min = row_min;
      swap_coord(a, b, j);
      const auto [next, next_crit] = critical_row();
      if (next > cur) {
        cur = next;
        crit = next_crit;
      } else {
        swap_coord(a, b, j);
        row_min = saved_min;
      }
    }

    if (cur > best_min) {
      best_min = cur;
      best_pts = detail::lhs_points(state, space);
    }
  }
  return {std::move(best_pts), Generator::MaximinLHS, seed};
}

inline Design uniform_sample(const ParameterSpace& space, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw ArgumentError("uniform_sample needs n >= 1");
  Rng rng(seed);
  std::vector<Point> pts;
  pts.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Vector c(space.dim());
    for (std::size_t j = 0; j < space.dim(); ++j) c[j] = uniform01(rng);
    pts.push_back(space.from_cube(c));
  }
  return {std::move(pts), Generator::UniformRandom, seed};
}

/// Sobol points; `seed` selects how many leading points are skipped.
inline Design sobol_sample(const ParameterSpace& space, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw ArgumentError("sobol_sample needs n >= 1");
  boost::random::sobol gen(space.dim());
  gen.seed(static_cast<boost::uint64_t>(seed) * space.dim());
  std::vector<Point> pts;
  pts.reserve(n);
  const double scale = 1.0 / (static_cast<double>(gen.max()) + 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    Vector c(space.dim());
    for (std::size_t j = 0; j < space.dim(); ++j) c[j] = static_cast<double>(gen()) * scale;
    pts.push_back(space.from_cube(c));
  }
  return {std::move(pts), Generator::Sobol, seed};
}

using PlausibilityPredictor = std::function<double(const Point&)>;

enum class CandidateSource { Uniform, Sobol };

struct FilterOptions {
  double threshold = 0.5;
  std::size_t n_target = 100;
  std::size_t batch = 256;
  std::size_t max_draws = 100000;
  CandidateSource source = CandidateSource::Uniform;
};

/// Draws candidates in batches and keeps those whose predicted plausibility
/// reaches the threshold, in draw order, until n_target are accepted or
/// max_draws candidates have been examined. Throws EmptyPlausibleSet when
/// nothing at all was accepted.
inline Design filtered_design(const ParameterSpace& space, const PlausibilityPredictor& predictor,
                              const FilterOptions& opts, std::uint64_t seed) {
  if (!(opts.threshold > 0.0 && opts.threshold < 1.0)) throw ArgumentError("threshold must lie in (0,1)");
  if (opts.n_target < 1 || opts.batch < 1 || opts.max_draws < 1)
    throw ArgumentError("filtered_design needs positive n_target, batch and max_draws");

  Design out;
  out.generator = Generator::Filtered;
  out.seed = seed;

  Rng rng(seed);
  boost::random::sobol sobol(space.dim());
  const double sobol_scale = 1.0 / (static_cast<double>(sobol.max()) + 1.0);

  while (out.points.size() < opts.n_target && out.draws < opts.max_draws) {
    const std::size_t m = std::min(opts.batch, opts.max_draws - out.draws);
    std::vector<Point> cand;
    cand.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
      Vector c(space.dim());
      for (std::size_t j = 0; j < space.dim(); ++j)
        c[j] = opts.source == CandidateSource::Sobol ? static_cast<double>(sobol()) * sobol_scale : uniform01(rng);
      cand.push_back(space.from_cube(c));
    }
    for (const auto& p : cand) {
      ++out.draws;
      const double prob = predictor(p);
      if (!(prob >= 0.0 && prob <= 1.0)) throw DomainError("predictor returned a value outside [0,1]");
      if (prob >= opts.threshold) {
        out.points.push_back(p);
        if (out.points.size() == opts.n_target) break;
      }
    }
  }
  if (out.points.empty())
    throw EmptyPlausibleSet("no candidate predicted plausible after " + std::to_string(out.draws) + " draws",
                            out.draws);
  out.acceptance_rate = static_cast<double>(out.points.size()) / static_cast<double>(out.draws);
  return out;
}

}  // namespace nroy
