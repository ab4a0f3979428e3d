#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "pgmm/errors.hpp"
#include "pgmm/moment_model.hpp"
#include "pgmm/rng.hpp"

namespace pgmm {

struct OptimizerConfig {
  int multi_starts = 5;
  int max_iterations = 10000;
  double tolerance = 1e-8;
  std::uint64_t start_seed = 0x5eed5eedULL;  // fixes the Latin-hypercube start layout
  bool force_derivative_free = false;        // Nelder-Mead even for smooth models
};

struct OptimResult {
  Eigen::VectorXd x;
  double value = 0.0;
  bool converged = false;
  int iterations = 0;
};

using Objective = std::function<double(const Eigen::VectorXd&)>;

namespace detail {

inline Eigen::VectorXd clamp_to_box(Eigen::VectorXd x, const ParamBox& box) {
  for (Eigen::Index j = 0; j < x.size(); ++j) x[j] = std::clamp(x[j], box.lo[j], box.hi[j]);
  return x;
}

// Box-Latin starting layout: one point per stratum along every coordinate,
// strata assignment shuffled per coordinate.
inline std::vector<Eigen::VectorXd> latin_starts(const ParamBox& box, int n, std::uint64_t seed) {
  Rng rng(seed);
  const Eigen::Index k = box.dim();
  std::vector<std::vector<int>> perm(static_cast<std::size_t>(k));
  for (Eigen::Index j = 0; j < k; ++j) {
    auto& p = perm[static_cast<std::size_t>(j)];
    p.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
    for (int i = n - 1; i > 0; --i)
      std::swap(p[static_cast<std::size_t>(i)],
                p[static_cast<std::size_t>(rng.next_u64() % static_cast<std::uint64_t>(i + 1))]);
  }
  std::vector<Eigen::VectorXd> starts;
  starts.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd x(k);
    for (Eigen::Index j = 0; j < k; ++j) {
      const double stratum = (perm[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] + 0.5) /
                             static_cast<double>(n);
      x[j] = box.lo[j] + stratum * (box.hi[j] - box.lo[j]);
    }
    starts.push_back(std::move(x));
  }
  return starts;
}

inline Eigen::VectorXd numeric_gradient(const Objective& f, const Eigen::VectorXd& x,
                                        const ParamBox& box, double fx) {
  (void)fx;
  Eigen::VectorXd g(x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    double h = 1e-7 * (1.0 + std::abs(x[j]));
    Eigen::VectorXd xp = x, xm = x;
    xp[j] = std::min(x[j] + h, box.hi[j]);
    xm[j] = std::max(x[j] - h, box.lo[j]);
    const double denom = xp[j] - xm[j];
    g[j] = denom > 0.0 ? (f(xp) - f(xm)) / denom : 0.0;
  }
  return g;
}

}  // namespace detail

/// Projected BFGS with Armijo backtracking; gradients by central differences.
inline OptimResult minimize_bfgs(const Objective& f, Eigen::VectorXd x0, const ParamBox& box,
                                 const OptimizerConfig& cfg) {
  const Eigen::Index k = box.dim();
  Eigen::VectorXd x = detail::clamp_to_box(std::move(x0), box);
  double fx = f(x);
  Eigen::MatrixXd h_inv = Eigen::MatrixXd::Identity(k, k);
  Eigen::VectorXd g = detail::numeric_gradient(f, x, box, fx);
  OptimResult res;
  int it = 0;
  for (; it < cfg.max_iterations; ++it) {
    Eigen::VectorXd dir = -(h_inv * g);
    if (dir.dot(g) >= 0.0) dir = -g;  // reset on loss of descent
    double step = 1.0;
    Eigen::VectorXd xn;
    double fn = fx;
    bool moved = false;
    for (int ls = 0; ls < 40; ++ls) {
      xn = detail::clamp_to_box(x + step * dir, box);
      fn = f(xn);
      if (fn <= fx + 1e-4 * g.dot(xn - x)) {
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (!moved || !(fn < fx)) break;
    const Eigen::VectorXd gn = detail::numeric_gradient(f, xn, box, fn);
    const Eigen::VectorXd s = xn - x;
    const Eigen::VectorXd y = gn - g;
    const double sy = s.dot(y);
    if (sy > 1e-12) {
      const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(k, k);
      const Eigen::MatrixXd v = eye - (s * y.transpose()) / sy;
      h_inv = v * h_inv * v.transpose() + (s * s.transpose()) / sy;
    } else {
      h_inv.setIdentity();
    }
    const double step_size = (xn - x).lpNorm<Eigen::Infinity>();
    x = xn;
    fx = fn;
    g = gn;
    // parameter-space termination: quit once accepted steps fall below tol
    if (step_size <= cfg.tolerance * (1.0 + x.lpNorm<Eigen::Infinity>())) {
      res.converged = true;
      ++it;
      break;
    }
  }
  if (!res.converged && it < cfg.max_iterations) res.converged = true;  // stalled at a flat point
  res.x = std::move(x);
  res.value = fx;
  res.iterations = it;
  return res;
}

/// Nelder-Mead with box clamping (reflection 1, expansion 2, contraction 1/2, shrink 1/2).
inline OptimResult minimize_nelder_mead(const Objective& f, Eigen::VectorXd x0, const ParamBox& box,
                                        const OptimizerConfig& cfg) {
  const Eigen::Index k = box.dim();
  const auto n = static_cast<std::size_t>(k) + 1;
  std::vector<Eigen::VectorXd> pts(n);
  std::vector<double> vals(n);
  pts[0] = detail::clamp_to_box(std::move(x0), box);
  vals[0] = f(pts[0]);
  for (Eigen::Index j = 0; j < k; ++j) {
    Eigen::VectorXd p = pts[0];
    const double h = 0.05 * (box.hi[j] - box.lo[j]);
    p[j] = (p[j] + h <= box.hi[j]) ? p[j] + h : p[j] - h;
    pts[static_cast<std::size_t>(j) + 1] = p;
    vals[static_cast<std::size_t>(j) + 1] = f(p);
  }
  std::vector<std::size_t> order(n);
  OptimResult res;
  int it = 0;
  for (; it < cfg.max_iterations; ++it) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
    const std::size_t best = order.front(), worst = order.back(), second = order[n - 2];
    // simplex-size termination in parameter space
    double spread = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      spread = std::max(spread, (pts[i] - pts[best]).lpNorm<Eigen::Infinity>());
    if (spread <= cfg.tolerance * (1.0 + pts[best].lpNorm<Eigen::Infinity>())) {
      res.converged = true;
      break;
    }
    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(k);
    for (std::size_t i = 0; i < n; ++i)
      if (i != worst) centroid += pts[i];
    centroid /= static_cast<double>(k);
    auto try_point = [&](double coef) {
      return detail::clamp_to_box(centroid + coef * (centroid - pts[worst]), box);
    };
    const Eigen::VectorXd xr = try_point(1.0);
    const double fr = f(xr);
    if (fr < vals[best]) {
      const Eigen::VectorXd xe = try_point(2.0);
      const double fe = f(xe);
      if (fe < fr) { pts[worst] = xe; vals[worst] = fe; }
      else { pts[worst] = xr; vals[worst] = fr; }
    } else if (fr < vals[second]) {
      pts[worst] = xr;
      vals[worst] = fr;
    } else {
      const Eigen::VectorXd xc = try_point(fr < vals[worst] ? 0.5 : -0.5);
      const double fc = f(xc);
      if (fc < std::min(fr, vals[worst])) {
        pts[worst] = xc;
        vals[worst] = fc;
      } else {
        for (std::size_t i = 0; i < n; ++i) {
          if (i == best) continue;
          pts[i] = detail::clamp_to_box(pts[best] + 0.5 * (pts[i] - pts[best]), box);
          vals[i] = f(pts[i]);
        }
      }
    }
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (vals[i] < vals[best]) best = i;
  res.x = pts[best];
  res.value = vals[best];
  res.iterations = it;
  return res;
}

/// Multi-start minimization over the box. Ties resolved toward the
/// lexicographically smallest point so concurrent fan-out merges deterministically.
inline OptimResult minimize_multistart(const Objective& f, const ParamBox& box, bool smooth,
                                       const OptimizerConfig& cfg,
                                       const Eigen::VectorXd* extra_start = nullptr) {
  std::vector<Eigen::VectorXd> starts = detail::latin_starts(box, cfg.multi_starts, cfg.start_seed);
  if (extra_start != nullptr) starts.push_back(detail::clamp_to_box(*extra_start, box));
  OptimResult best;
  bool have = false;
  bool any_converged = false;
  for (const auto& s : starts) {
    OptimResult r = (smooth && !cfg.force_derivative_free) ? minimize_bfgs(f, s, box, cfg)
                                                           : minimize_nelder_mead(f, s, box, cfg);
    // polish BFGS solutions with a short simplex pass; cheap and guards
    // against premature curvature resets near the box boundary
    if (smooth && !cfg.force_derivative_free) {
      OptimizerConfig polish = cfg;
      polish.max_iterations = std::min(cfg.max_iterations, 500);
      OptimResult p = minimize_nelder_mead(f, r.x, box, polish);
      if (p.value < r.value) { p.converged = p.converged || r.converged; r = p; }
    }
    any_converged = any_converged || r.converged;
    const bool better =
        !have || r.value < best.value ||
        (r.value == best.value &&
         std::lexicographical_compare(r.x.data(), r.x.data() + r.x.size(), best.x.data(),
                                      best.x.data() + best.x.size()));
    if (better) { best = r; have = true; }
  }
  if (!have) throw NumericalError("minimize_multistart: no start produced a value");
  best.converged = any_converged;
  return best;
}

}  // namespace pgmm
