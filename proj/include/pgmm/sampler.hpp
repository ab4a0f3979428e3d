#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "pgmm/criterion.hpp"
#include "pgmm/errors.hpp"
#include "pgmm/local_approx.hpp"
#include "pgmm/moment_model.hpp"
#include "pgmm/priors.hpp"
#include "pgmm/rng.hpp"
#include "pgmm/stats.hpp"

namespace pgmm {

struct ChainConfig {
  int n_draws = 50000;   // retained draws
  int burn_in = 10000;   // adaptation iterations, discarded
  int thin = 5;          // retain every thin-th post-burn-in state
  std::uint64_t seed = 0;
  std::optional<Eigen::VectorXd> init_theta;  // nullopt = "auto"
  std::optional<Eigen::VectorXd> init_mu;     // nullopt = "prior-mean"
  double target_accept = 0.234;
  int adapt_window = 50;

  void validate() const {
    if (n_draws < 1) throw ContractError("ChainConfig: n_draws must be positive");
    if (burn_in < 0) throw ContractError("ChainConfig: burn_in must be nonnegative");
    if (thin < 1) throw ContractError("ChainConfig: thin must be >= 1");
    if (!(target_accept > 0.0 && target_accept < 1.0))
      throw ContractError("ChainConfig: target_accept outside (0,1)");
    if (adapt_window < 1) throw ContractError("ChainConfig: adapt_window must be positive");
  }
};

struct SamplerDiagnostics {
  double accept_rate_theta = 0.0;
  double accept_rate_mu = 0.0;
  double step_scale_theta = 0.0;  // frozen post-adaptation multiplier
  double step_scale_mu = 0.0;
  bool stuck_warning = false;
  int rejected_numerical = 0;     // proposals rejected because weighting broke down
  Eigen::VectorXd r_hat_theta;    // split-chain PSRF per theta coordinate
};

struct PosteriorDraws {
  Eigen::MatrixXd theta_draws;  // n x k
  Eigen::MatrixXd mu_draws;     // n x q
  Eigen::VectorXd log_post;     // n
  double accept_rate = 0.0;     // across all block updates post burn-in
  std::uint64_t seed = 0;
  SamplerDiagnostics diagnostics;

  Eigen::Index n() const { return theta_draws.rows(); }
};

namespace detail {

template <typename LogPost>
double safe_log_post(const LogPost& f, const Eigen::VectorXd& theta, const Eigen::VectorXd& mu,
                     int* numerical_rejects) {
  try {
    return f(theta, mu);
  } catch (const NumericalError&) {
    if (numerical_rejects != nullptr) ++(*numerical_rejects);
    return kNegInf;
  }
}

// Per-block proposal scales seeded from prior spread: theta from the box width
// (or Gaussian prior sd), mu from the prior sd.
inline Eigen::VectorXd theta_proposal_scales(const MomentModel& model, const ThetaPrior& prior) {
  Eigen::VectorXd s = model.theta_box().width() / 20.0;
  if (std::holds_alternative<GaussianPrior>(prior)) {
    const auto& g = std::get<GaussianPrior>(prior);
    for (Eigen::Index j = 0; j < s.size(); ++j)
      s[j] = std::min(s[j], std::sqrt(g.cov(j, j)) / 5.0);
  }
  return s;
}

inline Eigen::VectorXd mu_proposal_scales(const MuPrior& prior) {
  const Eigen::MatrixXd cov = prior_covariance(prior);
  Eigen::VectorXd s = cov.diagonal().array().sqrt().matrix() / 5.0;
  for (Eigen::Index j = 0; j < s.size(); ++j)
    if (!(s[j] > 0.0)) s[j] = 1e-3;
  return s;
}

class BlockState {
 public:
  explicit BlockState(double target, int window) : target_(target), window_(window) {}

  double scale() const { return std::exp(log_s_); }

  void adapt(bool accepted) {
    ++updates_;
    const double gain = 1.0 / (1.0 + static_cast<double>(updates_) / window_);
    log_s_ += gain * ((accepted ? 1.0 : 0.0) - target_);
    log_s_ = std::clamp(log_s_, -15.0, 15.0);
    window_accepts_ += accepted ? 1 : 0;
    ++window_count_;
    if (window_count_ >= window_) {
      stuck_ = stuck_ || (window_accepts_ == 0);
      window_accepts_ = 0;
      window_count_ = 0;
    }
  }

  void record(bool accepted) {
    ++post_count_;
    post_accepts_ += accepted ? 1 : 0;
  }

  bool stuck() const { return stuck_; }
  double accept_rate() const {
    return post_count_ > 0 ? static_cast<double>(post_accepts_) / post_count_ : 0.0;
  }
  long post_count() const { return post_count_; }
  long post_accepts() const { return post_accepts_; }

 private:
  double target_;
  int window_;
  double log_s_ = 0.0;
  long updates_ = 0;
  int window_accepts_ = 0;
  int window_count_ = 0;
  bool stuck_ = false;
  long post_accepts_ = 0;
  long post_count_ = 0;
};

}  // namespace detail

/// Component-blocked adaptive random-walk Metropolis on the joint (theta, mu)
/// state. Step scales follow Robbins-Monro during burn-in only, so retained
/// draws come from an exactly Markov chain. A Dogmatic mu prior removes the mu
/// block and holds mu at mu0.
inline PosteriorDraws sample_joint(const MomentEval& eval, const WeightingScheme& scheme,
                                   const ThetaPrior& theta_prior, const MuPrior& mu_prior,
                                   const ChainConfig& cfg) {
  cfg.validate();
  const MomentModel& model = eval.model();
  const Eigen::Index k = model.k();
  const Eigen::Index q = dimension(mu_prior);
  if (q != model.q()) throw ContractError("sample_joint: mu prior dimension != model q");
  const bool dogmatic = is_dogmatic(mu_prior);

  Rng rng(cfg.seed);
  auto log_post_fn = [&](const Eigen::VectorXd& th, const Eigen::VectorXd& mu) {
    return log_quasi_posterior(eval, scheme, theta_prior, mu_prior, th, mu);
  };

  // --- initial point -------------------------------------------------------
  Eigen::VectorXd theta;
  if (cfg.init_theta.has_value()) {
    theta = *cfg.init_theta;
    if (theta.size() != k) throw ContractError("sample_joint: init_theta has wrong dimension");
  } else if (model.smooth()) {
    Eigen::MatrixXd lambda = prior_covariance(mu_prior) * static_cast<double>(eval.T());
    if (!(lambda.diagonal().array() > 0.0).all())
      lambda.diagonal().array() += 1e-8;
    try {
      theta = gmm_estimate(eval, lambda, prior_mean(mu_prior));
    } catch (const NumericalError&) {
      theta = model.theta_box().center();
    }
  } else {
    theta = model.theta_box().center();
  }
  Eigen::VectorXd mu;
  if (cfg.init_mu.has_value()) {
    mu = *cfg.init_mu;
    if (mu.size() != q) throw ContractError("sample_joint: init_mu has wrong dimension");
  } else {
    mu = prior_mean(mu_prior);
  }

  SamplerDiagnostics diag;
  double lp = detail::safe_log_post(log_post_fn, theta, mu, &diag.rejected_numerical);
  if (lp == kNegInf) {
    bool found = false;
    for (int attempt = 0; attempt < 1000 && !found; ++attempt) {
      Eigen::VectorXd th(k);
      for (Eigen::Index j = 0; j < k; ++j)
        th[j] = rng.uniform(model.theta_box().lo[j], model.theta_box().hi[j]);
      Eigen::VectorXd m = dogmatic ? mu : sample(mu_prior, rng);
      const double cand = detail::safe_log_post(log_post_fn, th, m, &diag.rejected_numerical);
      if (cand > kNegInf) {
        theta = th;
        mu = m;
        lp = cand;
        found = true;
      }
    }
    if (!found)
      throw InitializationError(
          "sample_joint: no finite log-posterior point found after 1000 prior/box draws");
  }

  // --- chain ---------------------------------------------------------------
  const Eigen::VectorXd sc_theta = detail::theta_proposal_scales(model, theta_prior);
  const Eigen::VectorXd sc_mu = dogmatic ? Eigen::VectorXd() : detail::mu_proposal_scales(mu_prior);
  detail::BlockState bs_theta(cfg.target_accept, cfg.adapt_window);
  detail::BlockState bs_mu(cfg.target_accept, cfg.adapt_window);

  PosteriorDraws out;
  out.seed = cfg.seed;
  out.theta_draws.resize(cfg.n_draws, k);
  out.mu_draws.resize(cfg.n_draws, q);
  out.log_post.resize(cfg.n_draws);

  const long total = static_cast<long>(cfg.burn_in) + static_cast<long>(cfg.n_draws) * cfg.thin;
  int retained = 0;
  for (long it = 0; it < total; ++it) {
    const bool adapting = it < cfg.burn_in;

    {  // theta block
      Eigen::VectorXd prop = theta;
      const double s = bs_theta.scale();
      for (Eigen::Index j = 0; j < k; ++j) prop[j] += s * sc_theta[j] * rng.normal();
      const double lp_prop = detail::safe_log_post(log_post_fn, prop, mu, &diag.rejected_numerical);
      const bool accept = std::log(rng.uniform()) < lp_prop - lp;
      if (accept) {
        theta = prop;
        lp = lp_prop;
      }
      if (adapting) bs_theta.adapt(accept); else bs_theta.record(accept);
    }

    if (!dogmatic) {  // mu block
      Eigen::VectorXd prop = mu;
      const double s = bs_mu.scale();
      for (Eigen::Index j = 0; j < q; ++j) prop[j] += s * sc_mu[j] * rng.normal();
      const double lp_prop = detail::safe_log_post(log_post_fn, theta, prop, &diag.rejected_numerical);
      const bool accept = std::log(rng.uniform()) < lp_prop - lp;
      if (accept) {
        mu = prop;
        lp = lp_prop;
      }
      if (adapting) bs_mu.adapt(accept); else bs_mu.record(accept);
    }

    if (!adapting && ((it - cfg.burn_in) % cfg.thin == cfg.thin - 1)) {
      out.theta_draws.row(retained) = theta;
      out.mu_draws.row(retained) = mu;
      out.log_post[retained] = lp;
      ++retained;
    }
  }

  diag.accept_rate_theta = bs_theta.accept_rate();
  diag.accept_rate_mu = dogmatic ? 0.0 : bs_mu.accept_rate();
  diag.step_scale_theta = bs_theta.scale();
  diag.step_scale_mu = dogmatic ? 0.0 : bs_mu.scale();
  diag.stuck_warning = bs_theta.stuck() || (!dogmatic && bs_mu.stuck());
  diag.r_hat_theta.resize(k);
  for (Eigen::Index j = 0; j < k; ++j) diag.r_hat_theta[j] = split_rhat(out.theta_draws.col(j));
  const long props = bs_theta.post_count() + bs_mu.post_count();
  const long accs = bs_theta.post_accepts() + bs_mu.post_accepts();
  out.accept_rate = props > 0 ? static_cast<double>(accs) / props : 0.0;
  out.diagnostics = std::move(diag);
  return out;
}

inline PosteriorDraws sample_joint(const MomentModel& model, const Dataset& data,
                                   const WeightingScheme& scheme, const ThetaPrior& theta_prior,
                                   const MuPrior& mu_prior, const ChainConfig& cfg) {
  return sample_joint(*model.make_eval(data), scheme, theta_prior, mu_prior, cfg);
}

/// theta chain at fixed mu (the mu block removed); mu columns are constant.
inline PosteriorDraws sample_conditional_theta(const MomentEval& eval, const WeightingScheme& scheme,
                                               const ThetaPrior& theta_prior,
                                               const Eigen::VectorXd& mu_fixed,
                                               const ChainConfig& cfg) {
  if (mu_fixed.size() != eval.model().q())
    throw ContractError("sample_conditional_theta: mu_fixed dimension != q");
  return sample_joint(eval, scheme, theta_prior, MuPrior(DogmaticPrior{mu_fixed}), cfg);
}

inline PosteriorDraws sample_conditional_theta(const MomentModel& model, const Dataset& data,
                                               const WeightingScheme& scheme,
                                               const ThetaPrior& theta_prior,
                                               const Eigen::VectorXd& mu_fixed,
                                               const ChainConfig& cfg) {
  return sample_conditional_theta(*model.make_eval(data), scheme, theta_prior, mu_fixed, cfg);
}

}  // namespace pgmm
