#pragma once

#include <cmath>
#include <memory>
#include <string>

#include <Eigen/Dense>

#include "pgmm/dataset.hpp"
#include "pgmm/errors.hpp"

namespace pgmm {

/// Rectangular parameter support. Always finite so flat priors stay proper.
struct ParamBox {
  Eigen::VectorXd lo, hi;

  ParamBox() = default;
  ParamBox(Eigen::VectorXd l, Eigen::VectorXd h) : lo(std::move(l)), hi(std::move(h)) {
    if (lo.size() != hi.size()) throw ContractError("ParamBox: lo/hi dimension mismatch");
    for (Eigen::Index j = 0; j < lo.size(); ++j) {
      if (!std::isfinite(lo[j]) || !std::isfinite(hi[j]) || !(lo[j] < hi[j]))
        throw ContractError("ParamBox: bounds must be finite with lo < hi");
    }
  }

  Eigen::Index dim() const { return lo.size(); }

  bool contains(const Eigen::VectorXd& theta) const {
    if (theta.size() != lo.size()) return false;
    return (theta.array() >= lo.array()).all() && (theta.array() <= hi.array()).all();
  }

  Eigen::VectorXd center() const { return 0.5 * (lo + hi); }
  Eigen::VectorXd width() const { return hi - lo; }
};

class MomentEval;

/// Moment-function contract: g(z, theta) in R^q with q >= k, plus the parameter box.
class MomentModel {
 public:
  MomentModel(Eigen::Index k, Eigen::Index q, ParamBox box, bool smooth)
      : k_(k), q_(q), box_(std::move(box)), smooth_(smooth) {
    if (!(q_ >= k_ && k_ >= 1)) throw ContractError("MomentModel: need q >= k >= 1");
    if (box_.dim() != k_) throw ContractError("MomentModel: theta box dimension != k");
  }
  virtual ~MomentModel() = default;

  Eigen::Index k() const { return k_; }
  Eigen::Index q() const { return q_; }
  const ParamBox& theta_box() const { return box_; }
  bool smooth() const { return smooth_; }

  virtual Eigen::VectorXd evaluate(const Eigen::RowVectorXd& z, const Eigen::VectorXd& theta) const = 0;

  /// Bind to a dataset, producing a thread-safe evaluator. Built-in models
  /// override make_eval with sufficient-statistic fast paths.
  virtual std::unique_ptr<MomentEval> make_eval(const Dataset& data) const;

 private:
  Eigen::Index k_, q_;
  ParamBox box_;
  bool smooth_;
};

/// Evaluator bound to one (model, data) pair; immutable after construction.
class MomentEval {
 public:
  explicit MomentEval(const MomentModel& model, Eigen::Index T) : model_(model), T_(T) {}
  virtual ~MomentEval() = default;

  const MomentModel& model() const { return model_; }
  Eigen::Index T() const { return T_; }

  /// Sample moments (1/T) sum_t g(Z_t, theta).
  virtual Eigen::VectorXd mbar(const Eigen::VectorXd& theta) const = 0;

  /// Sample moments together with the raw (un-ridged) covariance of the
  /// per-observation moment contributions.
  virtual void mbar_omega(const Eigen::VectorXd& theta, Eigen::VectorXd& m,
                          Eigen::MatrixXd& omega) const = 0;

 protected:
  const MomentModel& model_;
  Eigen::Index T_;
};

namespace detail {

// Row-by-row fallback evaluator using MomentModel::evaluate.
class GenericEval final : public MomentEval {
 public:
  GenericEval(const MomentModel& model, const Dataset& data)
      : MomentEval(model, data.T()), data_(data) {}

  Eigen::VectorXd mbar(const Eigen::VectorXd& theta) const override {
    Eigen::VectorXd m = Eigen::VectorXd::Zero(model_.q());
    for (Eigen::Index t = 0; t < T_; ++t) {
      Eigen::VectorXd g = model_.evaluate(data_.rows().row(t), theta);
      if (!g.allFinite())
        throw EvaluationError("non-finite moment evaluation at row " + std::to_string(t));
      m += g;
    }
    return m / static_cast<double>(T_);
  }

  void mbar_omega(const Eigen::VectorXd& theta, Eigen::VectorXd& m,
                  Eigen::MatrixXd& omega) const override {
    const Eigen::Index q = model_.q();
    m.setZero(q);
    Eigen::MatrixXd gg = Eigen::MatrixXd::Zero(q, q);
    for (Eigen::Index t = 0; t < T_; ++t) {
      Eigen::VectorXd g = model_.evaluate(data_.rows().row(t), theta);
      if (!g.allFinite())
        throw EvaluationError("non-finite moment evaluation at row " + std::to_string(t));
      m += g;
      gg.noalias() += g * g.transpose();
    }
    m /= static_cast<double>(T_);
    omega = gg / static_cast<double>(T_) - m * m.transpose();
    omega = 0.5 * (omega + omega.transpose());
  }

 private:
  const Dataset& data_;
};

}  // namespace detail

inline std::unique_ptr<MomentEval> MomentModel::make_eval(const Dataset& data) const {
  return std::make_unique<detail::GenericEval>(*this, data);
}

inline Eigen::VectorXd sample_moments(const MomentEval& eval, const Eigen::VectorXd& theta) {
  return eval.mbar(theta);
}

inline Eigen::VectorXd sample_moments(const MomentModel& model, const Dataset& data,
                                      const Eigen::VectorXd& theta) {
  return model.make_eval(data)->mbar(theta);
}

/// (1/T) sum_t (g_t - mbar)(g_t - mbar)' + ridge * I.
inline Eigen::MatrixXd moment_covariance(const MomentEval& eval, const Eigen::VectorXd& theta,
                                         double ridge) {
  if (ridge < 0.0) throw ContractError("moment_covariance: ridge must be nonnegative");
  Eigen::VectorXd m;
  Eigen::MatrixXd omega;
  eval.mbar_omega(theta, m, omega);
  if (!omega.allFinite()) throw EvaluationError("moment_covariance: non-finite result");
  omega.diagonal().array() += ridge;
  return omega;
}

inline Eigen::MatrixXd moment_covariance(const MomentModel& model, const Dataset& data,
                                         const Eigen::VectorXd& theta, double ridge) {
  return moment_covariance(*model.make_eval(data), theta, ridge);
}

/// Default stabilizing ridge, 1e-8 * trace(omega)/q. Keeps CUE weighting
/// invertible when indicator moments collapse at extreme theta.
inline double default_ridge(const Eigen::MatrixXd& omega) {
  const double tr = omega.trace();
  return 1e-8 * std::max(tr, 0.0) / static_cast<double>(omega.rows());
}

/// Per-coordinate finite-difference base step. Non-smooth models get the
/// T^(-1/3) numerical-derivative bandwidth to average across indicator kinks.
inline double default_jacobian_step(const MomentModel& model, Eigen::Index T) {
  return model.smooth() ? 1e-5 : std::pow(static_cast<double>(T), -1.0 / 3.0);
}

/// Central-difference Jacobian of the sample moments, h_j = step * (1 + |theta_j|),
/// clamped so evaluation points stay inside the box.
inline Eigen::MatrixXd numerical_jacobian(const MomentEval& eval, const Eigen::VectorXd& theta,
                                          double step) {
  if (!(step > 0.0)) throw ContractError("numerical_jacobian: step must be positive");
  const auto& box = eval.model().theta_box();
  const Eigen::Index k = eval.model().k();
  Eigen::MatrixXd jac(eval.model().q(), k);
  for (Eigen::Index j = 0; j < k; ++j) {
    double h = step * (1.0 + std::abs(theta[j]));
    h = std::min(h, std::min(box.hi[j] - theta[j], theta[j] - box.lo[j]));
    Eigen::VectorXd tp = theta, tm = theta;
    if (h > 0.0) {
      tp[j] += h;
      tm[j] -= h;
      jac.col(j) = (eval.mbar(tp) - eval.mbar(tm)) / (2.0 * h);
    } else {
      // theta pinned to a box face: one-sided difference inward
      h = step * (1.0 + std::abs(theta[j]));
      if (theta[j] + h <= box.hi[j]) {
        tp[j] += h;
        jac.col(j) = (eval.mbar(tp) - eval.mbar(theta)) / h;
      } else {
        tm[j] -= h;
        jac.col(j) = (eval.mbar(theta) - eval.mbar(tm)) / h;
      }
    }
  }
  return jac;
}

inline Eigen::MatrixXd numerical_jacobian(const MomentModel& model, const Dataset& data,
                                          const Eigen::VectorXd& theta, double step) {
  return numerical_jacobian(*model.make_eval(data), theta, step);
}

}  // namespace pgmm
