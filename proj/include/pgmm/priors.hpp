#pragma once

#include <cmath>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "pgmm/dataset.hpp"
#include "pgmm/errors.hpp"
#include "pgmm/moment_model.hpp"
#include "pgmm/rng.hpp"
#include "pgmm/stats.hpp"

namespace pgmm {

namespace detail {

inline Eigen::LLT<Eigen::MatrixXd> checked_llt(const Eigen::MatrixXd& s, const char* what) {
  if (s.rows() != s.cols()) throw ContractError(std::string(what) + ": matrix not square");
  Eigen::LLT<Eigen::MatrixXd> llt(s);
  if (llt.info() != Eigen::Success)
    throw ContractError(std::string(what) + ": covariance not positive definite");
  return llt;
}

inline double log_det_from_llt(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

// log volume of the q-ball of radius r
inline double log_ball_volume(Eigen::Index q, double r) {
  const double qd = static_cast<double>(q);
  return 0.5 * qd * std::log(M_PI) - std::lgamma(0.5 * qd + 1.0) + qd * std::log(r);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// mu prior families
// ---------------------------------------------------------------------------

/// Point mass at mu0. Kept as its own family so the sampler can hold mu fixed
/// exactly instead of degenerating a zero-covariance Gaussian.
struct DogmaticPrior {
  Eigen::VectorXd mu0;
};

struct GaussianPrior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  Eigen::LLT<Eigen::MatrixXd> llt;
  double log_det;

  GaussianPrior(Eigen::VectorXd m, Eigen::MatrixXd c)
      : mean(std::move(m)), cov(std::move(c)), llt(detail::checked_llt(cov, "GaussianPrior")) {
    if (mean.size() != cov.rows()) throw ContractError("GaussianPrior: mean/cov dimension mismatch");
    log_det = detail::log_det_from_llt(llt);
  }
};

/// N(mu0, Lambda/T): the local-misspecification prior.
struct GaussianLocalPrior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd lambda;
  Eigen::Index T;
  GaussianPrior scaled;

  GaussianLocalPrior(Eigen::VectorXd m, Eigen::MatrixXd lam, Eigen::Index sample_size)
      : mean(m),
        lambda(std::move(lam)),
        T(sample_size),
        scaled(std::move(m), lambda / static_cast<double>(sample_size)) {
    if (T < 1) throw ContractError("GaussianLocalPrior: T must be positive");
  }
};

struct UniformBoxPrior {
  Eigen::VectorXd lo, hi;

  UniformBoxPrior(Eigen::VectorXd l, Eigen::VectorXd h) : lo(std::move(l)), hi(std::move(h)) {
    if (lo.size() != hi.size()) throw ContractError("UniformBoxPrior: lo/hi dimension mismatch");
    if (!((lo.array() < hi.array()).all())) throw ContractError("UniformBoxPrior: need lo < hi");
  }

  double log_density_const() const { return -((hi - lo).array().log().sum()); }
};

/// Uniform on {S^(1/2) c : c'c <= radius2}, i.e. {x : x' S^-1 x <= radius2}.
struct UniformEllipsePrior {
  Eigen::MatrixXd S;
  double radius2;
  Eigen::LLT<Eigen::MatrixXd> llt;
  double log_density_const;

  UniformEllipsePrior(Eigen::MatrixXd shape, double r2)
      : S(std::move(shape)), radius2(r2), llt(detail::checked_llt(S, "UniformEllipsePrior")) {
    if (!(radius2 > 0.0)) throw ContractError("UniformEllipsePrior: radius2 must be positive");
    // volume = ball(q, sqrt(r2)) * sqrt(det S)
    log_density_const = -(detail::log_ball_volume(S.rows(), std::sqrt(radius2)) +
                          0.5 * detail::log_det_from_llt(llt));
  }
};

using MuPrior =
    std::variant<DogmaticPrior, GaussianPrior, GaussianLocalPrior, UniformBoxPrior, UniformEllipsePrior>;

// ---------------------------------------------------------------------------
// theta prior families
// ---------------------------------------------------------------------------

struct FlatOnBoxPrior {};  // uses the model's Theta box; proper because the box is finite

using ThetaPrior = std::variant<FlatOnBoxPrior, GaussianPrior>;

// ---------------------------------------------------------------------------
// log densities (with exact normalizing constants)
// ---------------------------------------------------------------------------

inline double log_density(const GaussianPrior& p, const Eigen::VectorXd& x) {
  if (x.size() != p.mean.size()) throw ContractError("log_density: dimension mismatch");
  const Eigen::VectorXd d = x - p.mean;
  const double quad = d.dot(p.llt.solve(d));
  return -0.5 * (static_cast<double>(x.size()) * kLog2Pi + p.log_det + quad);
}

inline double log_density(const MuPrior& prior, const Eigen::VectorXd& x) {
  return std::visit(
      [&](const auto& p) -> double {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, DogmaticPrior>) {
          if (x.size() != p.mu0.size()) throw ContractError("log_density: dimension mismatch");
          return (x == p.mu0) ? 0.0 : kNegInf;  // point-mass convention for conditioning
        } else if constexpr (std::is_same_v<P, GaussianPrior>) {
          return log_density(p, x);
        } else if constexpr (std::is_same_v<P, GaussianLocalPrior>) {
          return log_density(p.scaled, x);
        } else if constexpr (std::is_same_v<P, UniformBoxPrior>) {
          if (x.size() != p.lo.size()) throw ContractError("log_density: dimension mismatch");
          const bool inside = (x.array() >= p.lo.array()).all() && (x.array() <= p.hi.array()).all();
          return inside ? p.log_density_const() : kNegInf;
        } else {
          static_assert(std::is_same_v<P, UniformEllipsePrior>);
          if (x.size() != p.S.rows()) throw ContractError("log_density: dimension mismatch");
          const double q = x.dot(p.llt.solve(x));
          return q <= p.radius2 ? p.log_density_const : kNegInf;
        }
      },
      prior);
}

inline double log_density(const ThetaPrior& prior, const Eigen::VectorXd& theta, const ParamBox& box) {
  if (!box.contains(theta)) return kNegInf;
  return std::visit(
      [&](const auto& p) -> double {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, FlatOnBoxPrior>) {
          return -box.width().array().log().sum();
        } else {
          return log_density(p, theta);
        }
      },
      prior);
}

// ---------------------------------------------------------------------------
// sampling
// ---------------------------------------------------------------------------

inline Eigen::VectorXd sample(const MuPrior& prior, Rng& rng) {
  return std::visit(
      [&](const auto& p) -> Eigen::VectorXd {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, DogmaticPrior>) {
          return p.mu0;
        } else if constexpr (std::is_same_v<P, GaussianPrior>) {
          return p.mean + p.llt.matrixL() * rng.normal_vector(p.mean.size());
        } else if constexpr (std::is_same_v<P, GaussianLocalPrior>) {
          return p.scaled.mean + p.scaled.llt.matrixL() * rng.normal_vector(p.mean.size());
        } else if constexpr (std::is_same_v<P, UniformBoxPrior>) {
          Eigen::VectorXd x(p.lo.size());
          for (Eigen::Index j = 0; j < x.size(); ++j) x[j] = rng.uniform(p.lo[j], p.hi[j]);
          return x;
        } else {
          static_assert(std::is_same_v<P, UniformEllipsePrior>);
          // uniform on the ball via direction * r * U^(1/q), then the shape map
          const Eigen::Index q = p.S.rows();
          Eigen::VectorXd z = rng.normal_vector(q);
          const double r = std::sqrt(p.radius2) *
                           std::pow(rng.uniform(), 1.0 / static_cast<double>(q)) / z.norm();
          return p.llt.matrixL() * (r * z);
        }
      },
      prior);
}

// ---------------------------------------------------------------------------
// structural helpers
// ---------------------------------------------------------------------------

inline Eigen::Index dimension(const MuPrior& prior) {
  return std::visit(
      [](const auto& p) -> Eigen::Index {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, DogmaticPrior>) return p.mu0.size();
        else if constexpr (std::is_same_v<P, GaussianPrior>) return p.mean.size();
        else if constexpr (std::is_same_v<P, GaussianLocalPrior>) return p.mean.size();
        else if constexpr (std::is_same_v<P, UniformBoxPrior>) return p.lo.size();
        else return p.S.rows();
      },
      prior);
}

inline bool is_dogmatic(const MuPrior& prior) { return std::holds_alternative<DogmaticPrior>(prior); }

inline Eigen::VectorXd prior_mean(const MuPrior& prior) {
  return std::visit(
      [](const auto& p) -> Eigen::VectorXd {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, DogmaticPrior>) return p.mu0;
        else if constexpr (std::is_same_v<P, GaussianPrior>) return p.mean;
        else if constexpr (std::is_same_v<P, GaussianLocalPrior>) return p.mean;
        else if constexpr (std::is_same_v<P, UniformBoxPrior>) return Eigen::VectorXd(0.5 * (p.lo + p.hi));
        else return Eigen::VectorXd::Zero(p.S.rows());
      },
      prior);
}

/// Family covariance (exact for each family; Dogmatic returns zero).
inline Eigen::MatrixXd prior_covariance(const MuPrior& prior) {
  return std::visit(
      [](const auto& p) -> Eigen::MatrixXd {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, DogmaticPrior>) {
          return Eigen::MatrixXd::Zero(p.mu0.size(), p.mu0.size());
        } else if constexpr (std::is_same_v<P, GaussianPrior>) {
          return p.cov;
        } else if constexpr (std::is_same_v<P, GaussianLocalPrior>) {
          return p.scaled.cov;
        } else if constexpr (std::is_same_v<P, UniformBoxPrior>) {
          return ((p.hi - p.lo).array().square() / 12.0).matrix().asDiagonal();
        } else {
          static_assert(std::is_same_v<P, UniformEllipsePrior>);
          // Var of uniform on {x: x'S^-1 x <= r^2} is S * r^2/(q+2)
          return p.S * (p.radius2 / (static_cast<double>(p.S.rows()) + 2.0));
        }
      },
      prior);
}

// ---------------------------------------------------------------------------
// data-driven prior builders
// ---------------------------------------------------------------------------

enum class PriorShape { kGaussian, kUniform };

/// mu ~ N(0, c * Sigma_T Omega_d Sigma_T') with Sigma_T = T^-1 sum w_t w_t',
/// or the matching uniform-on-ellipse with radius2 = chi2_{0.68}(q). The
/// stacked vector w_t follows the model's moment ordering: the columns listed
/// in `w_cols` prefixed by a constant when `intercept` is set.
inline MuPrior build_linear_iv_prior(const Dataset& data, const std::vector<std::string>& w_cols,
                                     bool intercept, const Eigen::VectorXd& omega_d_diag, double c,
                                     PriorShape shape) {
  if (!(c > 0.0))
    throw ContractError("build_linear_iv_prior: scale c must be > 0 (dogmatic case is its own family)");
  const Eigen::Index q = static_cast<Eigen::Index>(w_cols.size()) + (intercept ? 1 : 0);
  if (omega_d_diag.size() != q)
    throw ContractError("build_linear_iv_prior: omega_d diagonal has wrong dimension");
  if (!(omega_d_diag.array() > 0.0).all())
    throw ContractError("build_linear_iv_prior: omega_d diagonal must be positive");
  Eigen::MatrixXd w(data.T(), q);
  Eigen::Index col = 0;
  if (intercept) w.col(col++).setOnes();
  for (const auto& name : w_cols) w.col(col++) = data.column(name);
  const Eigen::MatrixXd sigma_t = w.transpose() * w / static_cast<double>(data.T());
  Eigen::MatrixXd cov = c * sigma_t * omega_d_diag.asDiagonal() * sigma_t.transpose();
  cov = 0.5 * (cov + cov.transpose());
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success)
    throw ContractError("build_linear_iv_prior: Sigma_T Omega_d Sigma_T' is singular");
  if (shape == PriorShape::kGaussian) return GaussianPrior(Eigen::VectorXd::Zero(q), cov);
  return UniformEllipsePrior(cov, chi2_quantile(0.68, static_cast<double>(q)));
}

/// delta_tau bound for IVQR moments: componentwise max over gamma in
/// {-cap, +cap} of |T^-1 sum w_t (tau - 1{eps_t + D_t*gamma <= 0})|, with
/// w_t = (1, D_t, controls_t'). Pilot residuals eps_t are an explicit input.
inline Eigen::VectorXd ivqr_delta_bound(const Dataset& data, double tau,
                                        const Eigen::VectorXd& residuals,
                                        const std::string& instrument_col,
                                        const std::vector<std::string>& control_cols,
                                        double gamma_cap) {
  if (!(tau > 0.0 && tau < 1.0)) throw ContractError("ivqr_delta_bound: tau must be in (0,1)");
  if (!(gamma_cap > 0.0)) throw ContractError("ivqr_delta_bound: gamma_cap must be positive");
  if (residuals.size() != data.T())
    throw ContractError("ivqr_delta_bound: residuals length != T");
  const Eigen::Index q = 2 + static_cast<Eigen::Index>(control_cols.size());
  Eigen::MatrixXd w(data.T(), q);
  w.col(0).setOnes();
  w.col(1) = data.column(instrument_col);
  for (std::size_t j = 0; j < control_cols.size(); ++j)
    w.col(2 + static_cast<Eigen::Index>(j)) = data.column(control_cols[j]);
  Eigen::VectorXd delta = Eigen::VectorXd::Zero(q);
  const double caps[2] = {-std::abs(gamma_cap), std::abs(gamma_cap)};
  for (double gam : caps) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(q);
    for (Eigen::Index t = 0; t < data.T(); ++t) {
      const double ind = (residuals[t] + w(t, 1) * gam <= 0.0) ? 1.0 : 0.0;
      acc += w.row(t).transpose() * (tau - ind);
    }
    acc /= static_cast<double>(data.T());
    delta = delta.cwiseMax(acc.cwiseAbs());
  }
  return delta;
}

/// Gaussian(0, diag(c*delta/3)^2) or UniformBox(+-c*delta/3); c = 0 is Dogmatic(0).
inline MuPrior build_ivqr_delta_prior(const Dataset& data, double tau, const Eigen::VectorXd& residuals,
                                      const std::string& instrument_col,
                                      const std::vector<std::string>& control_cols, double gamma_cap,
                                      double c, PriorShape shape) {
  if (c < 0.0) throw ContractError("build_ivqr_delta_prior: c must be nonnegative");
  const Eigen::VectorXd delta =
      ivqr_delta_bound(data, tau, residuals, instrument_col, control_cols, gamma_cap);
  if (c == 0.0) return DogmaticPrior{Eigen::VectorXd::Zero(delta.size())};
  const Eigen::VectorXd half = c * delta / 3.0;
  if (!(half.array() > 0.0).all())
    throw ContractError("build_ivqr_delta_prior: delta_tau has a zero component; prior undefined");
  if (shape == PriorShape::kGaussian)
    return GaussianPrior(Eigen::VectorXd::Zero(delta.size()),
                         Eigen::MatrixXd(half.array().square().matrix().asDiagonal()));
  return UniformBoxPrior(-half, half);
}

}  // namespace pgmm
