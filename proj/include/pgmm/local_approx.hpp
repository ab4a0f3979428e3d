#pragma once

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "pgmm/errors.hpp"
#include "pgmm/moment_model.hpp"
#include "pgmm/optimize.hpp"
#include "pgmm/stats.hpp"

namespace pgmm {

/// Misspecification-adjusted weighting matrix
///   A_hat = Omega^-1 - Omega^-1 [Lambda^-1 + Omega^-1]^-1 Omega^-1,
/// computed as a Cholesky solve of (Omega + Lambda), to which it is identical
/// by the Woodbury identity and far better conditioned. The three-inverse form
/// lives only in the tests as a cross-check oracle.
inline Eigen::MatrixXd compute_a_hat(const Eigen::MatrixXd& omega_hat, const Eigen::MatrixXd& lambda) {
  if (omega_hat.rows() != omega_hat.cols() || lambda.rows() != lambda.cols() ||
      omega_hat.rows() != lambda.rows())
    throw ContractError("compute_a_hat: dimension mismatch");
  Eigen::MatrixXd sum = omega_hat + lambda;
  sum = 0.5 * (sum + sum.transpose());
  Eigen::LLT<Eigen::MatrixXd> llt(sum);
  if (llt.info() != Eigen::Success)
    throw NumericalError("compute_a_hat: Omega + Lambda not positive definite");
  Eigen::MatrixXd a = llt.solve(Eigen::MatrixXd::Identity(sum.rows(), sum.cols()));
  return 0.5 * (a + a.transpose());
}

/// Quasi-posterior Gaussian approximation around the A-weighted GMM estimate:
/// theta | data ~ N(theta_hat, V/T) with V = (G' A G)^-1, and the sandwich
/// sampling variance V_bar = V G' A Omega A G V of theta_hat itself.
struct LocalApprox {
  Eigen::VectorXd theta_hat;
  Eigen::MatrixXd V;      // quasi-posterior variance scale
  Eigen::MatrixXd V_bar;  // sandwich variance scale, V_bar <= V
  Eigen::MatrixXd A_hat;
  Eigen::MatrixXd G_hat;
  Eigen::Index T = 0;
};

/// argmin over the box of (mbar(theta) - mu0)' A_{T,theta} (mbar(theta) - mu0),
/// A recomputed from Omega_hat(theta) at each theta (continuous updating).
inline Eigen::VectorXd gmm_estimate(const MomentEval& eval, const Eigen::MatrixXd& lambda,
                                    const Eigen::VectorXd& mu0, const OptimizerConfig& opt_cfg = {},
                                    bool freeze_weight_at = false,
                                    const Eigen::VectorXd* freeze_theta = nullptr) {
  const MomentModel& model = eval.model();
  if (mu0.size() != model.q()) throw ContractError("gmm_estimate: mu0 dimension != q");
  if (lambda.rows() != model.q()) throw ContractError("gmm_estimate: lambda dimension != q");

  Eigen::MatrixXd frozen_sum;  // Omega(theta_freeze) + Lambda, when requested
  if (freeze_weight_at) {
    Eigen::VectorXd m;
    Eigen::MatrixXd omega;
    eval.mbar_omega(freeze_theta ? *freeze_theta : model.theta_box().center(), m, omega);
    omega.diagonal().array() += default_ridge(omega);
    frozen_sum = omega + lambda;
  }

  auto objective = [&](const Eigen::VectorXd& theta) -> double {
    Eigen::VectorXd m;
    Eigen::MatrixXd omega;
    try {
      eval.mbar_omega(theta, m, omega);
    } catch (const EvaluationError&) {
      return std::numeric_limits<double>::infinity();
    }
    const Eigen::VectorXd r = m - mu0;
    Eigen::MatrixXd sum;
    if (freeze_weight_at) {
      sum = frozen_sum;
    } else {
      omega.diagonal().array() += default_ridge(omega);
      sum = omega + lambda;
    }
    Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (sum + sum.transpose()));
    if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
    return r.dot(llt.solve(r));
  };

  OptimResult res = minimize_multistart(objective, model.theta_box(), model.smooth(), opt_cfg);
  if (!std::isfinite(res.value))
    throw NumericalError("gmm_estimate: objective not finite at any start");
  if (!res.converged)
    throw NumericalError("gmm_estimate: optimizer hit the iteration budget; best value " +
                         std::to_string(res.value));
  return res.x;
}

inline LocalApprox gaussian_approx(const MomentEval& eval, const Eigen::MatrixXd& lambda,
                                   const Eigen::VectorXd& mu0, const Eigen::VectorXd& theta_hat) {
  const MomentModel& model = eval.model();
  if (mu0.size() != model.q()) throw ContractError("gaussian_approx: mu0 dimension != q");
  LocalApprox out;
  out.theta_hat = theta_hat;
  out.T = eval.T();
  out.G_hat = numerical_jacobian(eval, theta_hat, default_jacobian_step(model, eval.T()));
  Eigen::VectorXd m;
  Eigen::MatrixXd omega;
  eval.mbar_omega(theta_hat, m, omega);
  omega.diagonal().array() += default_ridge(omega);
  out.A_hat = compute_a_hat(omega, lambda);
  const Eigen::MatrixXd gag = out.G_hat.transpose() * out.A_hat * out.G_hat;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(0.5 * (gag + gag.transpose()),
                                        Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double smin = svd.singularValues().minCoeff();
  const double smax = svd.singularValues().maxCoeff();
  if (!(smin > smax * 1e-13))
    throw NumericalError("gaussian_approx: G'AG numerically singular (smallest singular value " +
                         std::to_string(smin) + ")");
  out.V = svd.solve(Eigen::MatrixXd::Identity(model.k(), model.k()));
  out.V = 0.5 * (out.V + out.V.transpose());
  const Eigen::MatrixXd inner = out.G_hat.transpose() * out.A_hat * omega * out.A_hat * out.G_hat;
  out.V_bar = out.V * inner * out.V;
  out.V_bar = 0.5 * (out.V_bar + out.V_bar.transpose());
  return out;
}

inline LocalApprox gaussian_approx(const MomentModel& model, const Dataset& data,
                                   const Eigen::MatrixXd& lambda, const Eigen::VectorXd& mu0,
                                   const Eigen::VectorXd& theta_hat) {
  return gaussian_approx(*model.make_eval(data), lambda, mu0, theta_hat);
}

/// eta' theta_hat +- z_{1-alpha/2} sqrt(eta' V eta / T); the quasi-posterior
/// variance V, not the sandwich V_bar.
inline std::pair<double, double> local_interval(const LocalApprox& approx,
                                                const Eigen::VectorXd& direction, double alpha) {
  if (direction.size() != approx.theta_hat.size())
    throw ContractError("local_interval: direction dimension mismatch");
  if (direction.norm() == 0.0) throw ContractError("local_interval: direction must be nonzero");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ContractError("local_interval: alpha outside (0,1)");
  const double center = direction.dot(approx.theta_hat);
  const double z = normal_quantile(1.0 - alpha / 2.0);
  const double hw =
      z * std::sqrt(direction.dot(approx.V * direction) / static_cast<double>(approx.T));
  return {center - hw, center + hw};
}

}  // namespace pgmm
