#pragma once

#include <variant>

#include <Eigen/Dense>

#include "pgmm/errors.hpp"
#include "pgmm/moment_model.hpp"
#include "pgmm/priors.hpp"

namespace pgmm {

// W = ridged Omega_hat(theta)^-1, refactorized at every theta.
struct ContinuousUpdating {};

struct FixedMatrix {
  Eigen::MatrixXd W;
};

// W = ridged Omega_hat(theta_ref)^-1, cached at construction.
struct PluginAtPoint {
  Eigen::VectorXd theta_ref;
  Eigen::MatrixXd W;
};

using WeightingScheme = std::variant<ContinuousUpdating, FixedMatrix, PluginAtPoint>;

inline FixedMatrix make_fixed_weighting(Eigen::MatrixXd w) {
  Eigen::LLT<Eigen::MatrixXd> llt(w);
  if (llt.info() != Eigen::Success)
    throw ContractError("FixedMatrix weighting: W must be symmetric positive definite");
  return FixedMatrix{std::move(w)};
}

inline PluginAtPoint make_plugin_weighting(const MomentEval& eval, const Eigen::VectorXd& theta_ref) {
  if (!eval.model().theta_box().contains(theta_ref))
    throw ContractError("PluginAtPoint: theta_ref outside the parameter box");
  Eigen::VectorXd m;
  Eigen::MatrixXd omega;
  eval.mbar_omega(theta_ref, m, omega);
  omega.diagonal().array() += default_ridge(omega);
  Eigen::LLT<Eigen::MatrixXd> llt(omega);
  if (llt.info() != Eigen::Success)
    throw NumericalError("PluginAtPoint: Omega_hat(theta_ref) not invertible after ridge");
  return PluginAtPoint{theta_ref,
                       llt.solve(Eigen::MatrixXd::Identity(omega.rows(), omega.cols()))};
}

namespace detail {

// r' W r for the scheme at hand; all q x q solves go through Cholesky on the
// ridged matrix, no explicit inverse.
inline double weighted_square(const MomentEval& eval, const WeightingScheme& scheme,
                              const Eigen::VectorXd& theta, const Eigen::VectorXd& mbar,
                              const Eigen::VectorXd& r) {
  if (std::holds_alternative<ContinuousUpdating>(scheme)) {
    Eigen::VectorXd m;
    Eigen::MatrixXd omega;
    eval.mbar_omega(theta, m, omega);
    omega.diagonal().array() += default_ridge(omega);
    Eigen::LLT<Eigen::MatrixXd> llt(omega);
    if (llt.info() != Eigen::Success)
      throw NumericalError("q_criterion: Omega_hat(theta) not invertible after ridge");
    return r.dot(llt.solve(r));
  }
  const Eigen::MatrixXd& w = std::holds_alternative<FixedMatrix>(scheme)
                                 ? std::get<FixedMatrix>(scheme).W
                                 : std::get<PluginAtPoint>(scheme).W;
  (void)mbar;
  return r.dot(w * r);
}

}  // namespace detail

/// Q_T(theta, mu) = -T (mbar(theta) - mu)' W (mbar(theta) - mu)  <= 0.
inline double q_criterion(const MomentEval& eval, const WeightingScheme& scheme,
                          const Eigen::VectorXd& theta, const Eigen::VectorXd& mu) {
  if (!eval.model().theta_box().contains(theta))
    throw ContractError("q_criterion: theta outside the parameter box");
  const Eigen::VectorXd mbar = eval.mbar(theta);
  const Eigen::VectorXd r = mbar - mu;
  return -static_cast<double>(eval.T()) * detail::weighted_square(eval, scheme, theta, mbar, r);
}

inline double q_criterion(const MomentModel& model, const Dataset& data, const WeightingScheme& scheme,
                          const Eigen::VectorXd& theta, const Eigen::VectorXd& mu) {
  return q_criterion(*model.make_eval(data), scheme, theta, mu);
}

/// log[ exp(Q_T/2) pi(theta) pi(mu) ], -inf outside either support or the box.
inline double log_quasi_posterior(const MomentEval& eval, const WeightingScheme& scheme,
                                  const ThetaPrior& theta_prior, const MuPrior& mu_prior,
                                  const Eigen::VectorXd& theta, const Eigen::VectorXd& mu) {
  const double lp_theta = log_density(theta_prior, theta, eval.model().theta_box());
  if (lp_theta == kNegInf) return kNegInf;
  const double lp_mu = log_density(mu_prior, mu);
  if (lp_mu == kNegInf) return kNegInf;
  return 0.5 * q_criterion(eval, scheme, theta, mu) + lp_theta + lp_mu;
}

inline double log_quasi_posterior(const MomentModel& model, const Dataset& data,
                                  const WeightingScheme& scheme, const ThetaPrior& theta_prior,
                                  const MuPrior& mu_prior, const Eigen::VectorXd& theta,
                                  const Eigen::VectorXd& mu) {
  return log_quasi_posterior(*model.make_eval(data), scheme, theta_prior, mu_prior, theta, mu);
}

/// Conditional target at fixed mu: log[ exp(Q_T/2) pi(theta) ].
inline double log_conditional_posterior(const MomentEval& eval, const WeightingScheme& scheme,
                                        const ThetaPrior& theta_prior, const Eigen::VectorXd& theta,
                                        const Eigen::VectorXd& mu_fixed) {
  const double lp_theta = log_density(theta_prior, theta, eval.model().theta_box());
  if (lp_theta == kNegInf) return kNegInf;
  return 0.5 * q_criterion(eval, scheme, theta, mu_fixed) + lp_theta;
}

}  // namespace pgmm
