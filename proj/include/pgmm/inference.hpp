#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pgmm/errors.hpp"
#include "pgmm/kde.hpp"
#include "pgmm/moment_model.hpp"
#include "pgmm/parallel.hpp"
#include "pgmm/sampler.hpp"
#include "pgmm/stats.hpp"

namespace pgmm {

enum class IntervalMethod { kHpd, kQuantile, kLocal, kT3Union, kT4Union };

inline const char* to_string(IntervalMethod m) {
  switch (m) {
    case IntervalMethod::kHpd: return "hpd";
    case IntervalMethod::kQuantile: return "quantile";
    case IntervalMethod::kLocal: return "local";
    case IntervalMethod::kT3Union: return "t3_union";
    case IntervalMethod::kT4Union: return "t4_union";
  }
  return "?";
}

struct IntervalEstimate {
  double lo = 0.0;
  double hi = 0.0;
  double level = 0.0;  // 1 - alpha
  IntervalMethod method = IntervalMethod::kQuantile;
  int mu_grid_size = 0;  // 0 when inapplicable

  // per-mu breakdown for union constructions; grid points whose conditional
  // chain could not initialize are skipped (the stand-in for the density
  // threshold on p_T(mu)) and listed here
  std::vector<Eigen::VectorXd> grid;
  std::vector<std::pair<double, double>> per_mu;
  std::vector<int> skipped;
};

/// Shortest window over the sorted draws containing ceil((1-alpha) n) points;
/// ties broken toward the smallest left endpoint.
inline std::pair<double, double> hpd_interval(const Eigen::VectorXd& samples, double alpha) {
  const auto n = static_cast<std::size_t>(samples.size());
  if (n < 100) throw ContractError("hpd_interval: need at least 100 samples");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ContractError("hpd_interval: alpha outside (0,1)");
  std::vector<double> x(samples.data(), samples.data() + samples.size());
  std::sort(x.begin(), x.end());
  const auto m = static_cast<std::size_t>(std::ceil((1.0 - alpha) * static_cast<double>(n)));
  if (m < 1 || m > n) throw ContractError("hpd_interval: required mass not attainable");
  std::size_t best = 0;
  double best_width = x[m - 1] - x[0];
  for (std::size_t i = 1; i + m <= n; ++i) {
    const double w = x[i + m - 1] - x[i];
    if (w < best_width) {  // strict: ties keep the smallest left endpoint
      best_width = w;
      best = i;
    }
  }
  return {x[best], x[best + m - 1]};
}

/// Highest quasi-posterior density region PR_T(alpha) over theta draws,
/// thresholded on a kernel estimate of the marginal p_T(theta).
struct HpdRegion {
  double density_threshold = 0.0;
  std::vector<Eigen::Index> member_draws;
  double level = 0.0;
  bool degenerate = false;
  Eigen::VectorXd degenerate_point;
  std::shared_ptr<KernelDensity> kde;

  bool contains(const Eigen::VectorXd& theta) const {
    if (degenerate) return (theta - degenerate_point).lpNorm<Eigen::Infinity>() <= 1e-12;
    return kde->density(theta) >= density_threshold;
  }
};

inline HpdRegion hpd_region(const Eigen::MatrixXd& theta_draws, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ContractError("hpd_region: alpha outside (0,1)");
  HpdRegion region;
  region.level = 1.0 - alpha;
  auto kde = std::make_shared<KernelDensity>(theta_draws);
  if (kde->degenerate()) {
    region.degenerate = true;
    region.degenerate_point = theta_draws.row(0).transpose();
    region.density_threshold = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < theta_draws.rows(); ++i) region.member_draws.push_back(i);
    return region;
  }
  region.kde = kde;
  const Eigen::VectorXd dens = kde->density_at_points();
  // type-1 (order statistic) alpha-quantile of the density values
  std::vector<double> sorted(dens.data(), dens.data() + dens.size());
  std::sort(sorted.begin(), sorted.end());
  const auto cut = static_cast<std::size_t>(
      std::min<double>(std::floor(alpha * static_cast<double>(sorted.size())),
                       static_cast<double>(sorted.size() - 1)));
  region.density_threshold = sorted[cut];
  for (Eigen::Index i = 0; i < dens.size(); ++i)
    if (dens[i] >= region.density_threshold) region.member_draws.push_back(i);
  return region;
}

inline HpdRegion hpd_region(const PosteriorDraws& draws, double alpha) {
  return hpd_region(draws.theta_draws, alpha);
}

/// Theorem-3 interval: empirical alpha/2 and 1-alpha/2 quantiles of eta'theta
/// from a conditional chain at a single fixed mu.
inline IntervalEstimate posterior_quantile_interval(const PosteriorDraws& cond_draws,
                                                    const Eigen::VectorXd& eta, double alpha) {
  if (eta.size() != cond_draws.theta_draws.cols())
    throw ContractError("posterior_quantile_interval: eta dimension mismatch");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw ContractError("posterior_quantile_interval: alpha outside (0,1)");
  const Eigen::VectorXd proj = cond_draws.theta_draws * eta;
  IntervalEstimate est;
  est.lo = sample_quantile(proj, alpha / 2.0);
  est.hi = sample_quantile(proj, 1.0 - alpha / 2.0);
  est.level = 1.0 - alpha;
  est.method = IntervalMethod::kQuantile;
  return est;
}

/// Theorem-4 interval: J_T^-1 = T Cov(theta draws); half-width
/// z_{1-alpha/2} sqrt(eta' J_T^-1 Jtilde J_T^-1 eta / T) around the posterior mean.
inline IntervalEstimate t4_interval(const PosteriorDraws& cond_draws, const Eigen::VectorXd& eta,
                                    double alpha, const Eigen::MatrixXd& j_tilde_omega_w,
                                    Eigen::Index T) {
  const Eigen::Index k = cond_draws.theta_draws.cols();
  if (eta.size() != k) throw ContractError("t4_interval: eta dimension mismatch");
  if (j_tilde_omega_w.rows() != k || j_tilde_omega_w.cols() != k)
    throw ContractError("t4_interval: J_tilde must be k x k");
  const Eigen::Index n = cond_draws.theta_draws.rows();
  const Eigen::RowVectorXd mean = cond_draws.theta_draws.colwise().mean();
  const Eigen::MatrixXd centered = cond_draws.theta_draws.rowwise() - mean;
  Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
  Eigen::MatrixXd j_inv = static_cast<double>(T) * cov;  // Jhat_T^-1
  Eigen::LLT<Eigen::MatrixXd> llt(j_inv);
  if (llt.info() != Eigen::Success)
    throw NumericalError("t4_interval: chain covariance is singular");
  const Eigen::VectorXd v = j_inv * eta;
  const double var = v.dot(j_tilde_omega_w * v) / static_cast<double>(T);
  if (!(var >= 0.0)) throw NumericalError("t4_interval: negative variance estimate");
  const double z = normal_quantile(1.0 - alpha / 2.0);
  IntervalEstimate est;
  const double center = mean * eta;
  est.lo = center - z * std::sqrt(var);
  est.hi = center + z * std::sqrt(var);
  est.level = 1.0 - alpha;
  est.method = IntervalMethod::kT4Union;
  return est;
}

enum class PerMuMethod { kT3, kT4 };

/// Union-of-intervals inference over a mu support grid: a conditional chain per
/// grid point (seed = base XOR grid index), per-mu interval, envelope of all.
inline IntervalEstimate union_interval(const MomentEval& eval, const WeightingScheme& scheme,
                                       const ThetaPrior& theta_prior,
                                       const std::vector<Eigen::VectorXd>& mu_grid,
                                       const Eigen::VectorXd& eta, double alpha,
                                       PerMuMethod per_mu_method, const ChainConfig& cfg,
                                       int workers = 1) {
  if (mu_grid.empty()) throw ContractError("union_interval: empty mu grid");
  IntervalEstimate est;
  est.level = 1.0 - alpha;
  est.method = per_mu_method == PerMuMethod::kT3 ? IntervalMethod::kT3Union : IntervalMethod::kT4Union;
  est.mu_grid_size = static_cast<int>(mu_grid.size());
  est.grid = mu_grid;
  est.per_mu.resize(mu_grid.size());
  std::vector<std::string> failures(mu_grid.size());
  std::vector<int8_t> skipped(mu_grid.size(), 0);

  parallel_for(mu_grid.size(), workers, [&](std::size_t i) {
    ChainConfig local = cfg;
    local.seed = cfg.seed ^ static_cast<std::uint64_t>(i);
    try {
      const PosteriorDraws draws = sample_conditional_theta(eval, scheme, theta_prior, mu_grid[i], local);
      IntervalEstimate one;
      if (per_mu_method == PerMuMethod::kT3) {
        one = posterior_quantile_interval(draws, eta, alpha);
      } else {
        const Eigen::VectorXd theta_bar = draws.theta_draws.colwise().mean().transpose();
        const Eigen::MatrixXd g =
            numerical_jacobian(eval, theta_bar, default_jacobian_step(eval.model(), eval.T()));
        Eigen::VectorXd m;
        Eigen::MatrixXd omega;
        eval.mbar_omega(theta_bar, m, omega);
        omega.diagonal().array() += default_ridge(omega);
        Eigen::MatrixXd w;
        if (std::holds_alternative<FixedMatrix>(scheme)) w = std::get<FixedMatrix>(scheme).W;
        else if (std::holds_alternative<PluginAtPoint>(scheme)) w = std::get<PluginAtPoint>(scheme).W;
        else {
          Eigen::LLT<Eigen::MatrixXd> llt(omega);
          if (llt.info() != Eigen::Success) throw NumericalError("union_interval: Omega singular");
          w = llt.solve(Eigen::MatrixXd::Identity(omega.rows(), omega.cols()));
        }
        const Eigen::MatrixXd j_tilde = g.transpose() * w * omega * w * g;
        one = t4_interval(draws, eta, alpha, j_tilde, eval.T());
      }
      est.per_mu[i] = {one.lo, one.hi};
    } catch (const InitializationError&) {
      skipped[i] = 1;  // no finite-posterior point at this mu: outside the screen
    } catch (const std::exception& e) {
      failures[i] = e.what();
    }
  });

  bool any = false;
  for (std::size_t i = 0; i < mu_grid.size(); ++i) {
    if (!failures[i].empty()) {
      std::ostringstream os;
      os << "union_interval: conditional chain failed at grid point " << i << " (mu = [";
      for (Eigen::Index j = 0; j < mu_grid[i].size(); ++j)
        os << (j ? ", " : "") << mu_grid[i][j];
      os << "]): " << failures[i];
      throw NumericalError(os.str());
    }
    if (skipped[i]) {
      est.skipped.push_back(static_cast<int>(i));
      continue;
    }
    if (!any) {
      est.lo = est.per_mu[i].first;
      est.hi = est.per_mu[i].second;
      any = true;
    } else {
      est.lo = std::min(est.lo, est.per_mu[i].first);
      est.hi = std::max(est.hi, est.per_mu[i].second);
    }
  }
  if (!any)
    throw InitializationError("union_interval: every grid point failed to initialize");
  return est;
}

/// Auto mu-grid on the support set: box faces/corners (capped) plus center,
/// ellipse axis extremes plus center, or (for Gaussian families) the nine
/// componentwise prior-quantile points. Pattern is part of the reported output.
inline std::vector<Eigen::VectorXd> auto_mu_grid(const MuPrior& prior) {
  std::vector<Eigen::VectorXd> grid;
  if (std::holds_alternative<GaussianPrior>(prior) ||
      std::holds_alternative<GaussianLocalPrior>(prior)) {
    const Eigen::MatrixXd cov = prior_covariance(prior);
    const Eigen::VectorXd mean = prior_mean(prior);
    for (int g = 1; g <= 9; ++g) {
      const double z = normal_quantile(g / 10.0);
      grid.push_back(mean + z * cov.diagonal().array().sqrt().matrix());
    }
    return grid;
  }
  if (std::holds_alternative<UniformBoxPrior>(prior)) {
    const auto& p = std::get<UniformBoxPrior>(prior);
    const Eigen::Index q = p.lo.size();
    const Eigen::VectorXd center = 0.5 * (p.lo + p.hi);
    grid.push_back(center);
    for (Eigen::Index j = 0; j < q; ++j) {  // 2q face midpoints
      Eigen::VectorXd lo_face = center, hi_face = center;
      lo_face[j] = p.lo[j];
      hi_face[j] = p.hi[j];
      grid.push_back(lo_face);
      grid.push_back(hi_face);
    }
    const std::uint64_t corners = (q >= 30) ? 64 : std::min<std::uint64_t>(64, 1ULL << q);
    for (std::uint64_t mask = 0; mask < corners; ++mask) {
      Eigen::VectorXd c(q);
      for (Eigen::Index j = 0; j < q; ++j) c[j] = (mask >> j) & 1 ? p.hi[j] : p.lo[j];
      grid.push_back(c);
    }
  } else if (std::holds_alternative<UniformEllipsePrior>(prior)) {
    const auto& p = std::get<UniformEllipsePrior>(prior);
    const Eigen::Index q = p.S.rows();
    grid.push_back(Eigen::VectorXd::Zero(q));
    const Eigen::MatrixXd l = p.llt.matrixL();
    const double r = std::sqrt(p.radius2);
    for (Eigen::Index j = 0; j < q; ++j) {
      grid.push_back(r * l.col(j));
      grid.push_back(-r * l.col(j));
    }
  } else {
    throw ContractError("auto_mu_grid: no automatic grid for a dogmatic prior");
  }
  return grid;
}

}  // namespace pgmm
