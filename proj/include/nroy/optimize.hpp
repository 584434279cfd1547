#pragma once

// Derivative-free Nelder-Mead minimisation for the small hyperparameter
// searches in the emulators.

#include <nroy/core.hpp>

#include <algorithm>
#include <functional>
#include <numeric>
#include <vector>

namespace nroy {

struct NelderMeadOptions {
  std::size_t max_evals = 500;
  double initial_step = 0.5;
  double f_tol = 1e-9;
  double x_tol = 1e-7;
};

struct MinimizeResult {
  Vector x;
  double f = kInf;
  std::size_t evals = 0;
};

/// Standard reflection/expansion/contraction/shrink scheme. The returned
/// value is never worse than f(x0).
inline MinimizeResult nelder_mead(const std::function<double(const Vector&)>& f, const Vector& x0,
                                  const NelderMeadOptions& opts = {}) {
  const Eigen::Index n = x0.size();
  std::vector<Vector> simplex(static_cast<std::size_t>(n + 1), x0);
  std::vector<double> fv(static_cast<std::size_t>(n + 1));
  std::size_t evals = 0;
  auto eval = [&](const Vector& x) {
    ++evals;
    const double v = f(x);
    return std::isnan(v) ? kInf : v;
  };

  fv[0] = eval(x0);
  for (Eigen::Index i = 0; i < n; ++i) {
    simplex[static_cast<std::size_t>(i + 1)][i] += opts.initial_step;
    fv[static_cast<std::size_t>(i + 1)] = eval(simplex[static_cast<std::size_t>(i + 1)]);
  }

  std::vector<std::size_t> order(simplex.size());
  while (evals < opts.max_evals) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
    const std::size_t best = order.front(), worst = order.back(), second = order[order.size() - 2];

    double spread = 0.0;
    for (const auto& v : simplex) spread = std::max(spread, (v - simplex[best]).lpNorm<Eigen::Infinity>());
    if (std::isfinite(fv[worst]) && std::abs(fv[worst] - fv[best]) <= opts.f_tol * (1.0 + std::abs(fv[best])) &&
        spread <= opts.x_tol)
      break;

    Vector centroid = Vector::Zero(n);
    for (std::size_t i = 0; i < simplex.size(); ++i)
      if (i != worst) centroid += simplex[i];
    centroid /= static_cast<double>(n);

    const Vector xr = centroid + (centroid - simplex[worst]);
    const double fr = eval(xr);
    if (fr < fv[best]) {
      const Vector xe = centroid + 2.0 * (centroid - simplex[worst]);
      const double fe = eval(xe);
      if (fe < fr) {
        simplex[worst] = xe;
        fv[worst] = fe;
      } else {
        simplex[worst] = xr;
        fv[worst] = fr;
      }
      continue;
    }
    if (fr < fv[second]) {
      simplex[worst] = xr;
      fv[worst] = fr;
      continue;
    }
    const bool outside = fr < fv[worst];
    const Vector xc = outside ? Vector(centroid + 0.5 * (xr - centroid)) : Vector(centroid + 0.5 * (simplex[worst] - centroid));
    const double fc = eval(xc);
    if (fc < (outside ? fr : fv[worst])) {
      simplex[worst] = xc;
      fv[worst] = fc;
      continue;
    }
    for (std::size_t i = 0; i < simplex.size(); ++i) {
      if (i == best) continue;
      simplex[i] = simplex[best] + 0.5 * (simplex[i] - simplex[best]);
      fv[i] = eval(simplex[i]);
    }
  }

  const auto it = std::min_element(fv.begin(), fv.end());
  const auto i = static_cast<std::size_t>(it - fv.begin());
  return {simplex[i], fv[i], evals};
}

}  // namespace nroy
