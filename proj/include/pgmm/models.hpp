#pragma once

#include <cmath>
#include <memory>
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

inline Eigen::Index find_col(const std::vector<std::string>& names, const std::string& want) {
  for (std::size_t j = 0; j < names.size(); ++j)
    if (names[j] == want) return static_cast<Eigen::Index>(j);
  throw DataError("column '" + want + "' not found");
}

inline void check_distinct(const std::vector<std::string>& all, const char* what) {
  for (std::size_t i = 0; i < all.size(); ++i)
    for (std::size_t j = i + 1; j < all.size(); ++j)
      if (all[i] == all[j]) throw ContractError(std::string(what) + ": column '" + all[i] + "' used twice");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear IV model
// ---------------------------------------------------------------------------

struct LinearIvSpec {
  std::string outcome;
  std::vector<std::string> endogenous;
  std::vector<std::string> controls;
  std::vector<std::string> instruments;
  bool intercept = true;
  ParamBox theta_box;
};

/// g = (1?, instruments', controls')' (Y - [1?, endog', controls'] theta).
/// theta ordering: (alpha?, beta_endog..., beta_controls...).
class LinearIvModel final : public MomentModel {
 public:
  LinearIvModel(LinearIvSpec spec, const std::vector<std::string>& layout)
      : MomentModel(static_cast<Eigen::Index>(spec.endogenous.size() + spec.controls.size()) +
                        (spec.intercept ? 1 : 0),
                    static_cast<Eigen::Index>(spec.instruments.size() + spec.controls.size()) +
                        (spec.intercept ? 1 : 0),
                    spec.theta_box, /*smooth=*/true),
        spec_(std::move(spec)) {
    std::vector<std::string> all{spec_.outcome};
    all.insert(all.end(), spec_.endogenous.begin(), spec_.endogenous.end());
    all.insert(all.end(), spec_.controls.begin(), spec_.controls.end());
    all.insert(all.end(), spec_.instruments.begin(), spec_.instruments.end());
    detail::check_distinct(all, "LinearIvModel");
    y_idx_ = detail::find_col(layout, spec_.outcome);
    for (const auto& c : spec_.endogenous) x_idx_.push_back(detail::find_col(layout, c));
    for (const auto& c : spec_.controls) x_idx_.push_back(detail::find_col(layout, c));
    for (const auto& c : spec_.instruments) w_idx_.push_back(detail::find_col(layout, c));
    for (const auto& c : spec_.controls) w_idx_.push_back(detail::find_col(layout, c));
  }

  const LinearIvSpec& spec() const { return spec_; }

  Eigen::VectorXd evaluate(const Eigen::RowVectorXd& z, const Eigen::VectorXd& theta) const override {
    if (theta.size() != k()) throw ContractError("LinearIvModel::evaluate: theta dimension mismatch");
    double resid = z[y_idx_];
    Eigen::Index p = 0;
    if (spec_.intercept) resid -= theta[p++];
    for (auto idx : x_idx_) resid -= z[idx] * theta[p++];
    Eigen::VectorXd g(q());
    Eigen::Index r = 0;
    if (spec_.intercept) g[r++] = resid;
    for (auto idx : w_idx_) g[r++] = z[idx] * resid;
    return g;
  }

  /// T x k regressor design [1?, endog, controls].
  Eigen::MatrixXd design_x(const Dataset& data) const {
    Eigen::MatrixXd x(data.T(), k());
    Eigen::Index c = 0;
    if (spec_.intercept) x.col(c++).setOnes();
    for (const auto& name : spec_.endogenous) x.col(c++) = data.column(name);
    for (const auto& name : spec_.controls) x.col(c++) = data.column(name);
    return x;
  }

  /// T x q instrument design [1?, instruments, controls].
  Eigen::MatrixXd design_w(const Dataset& data) const {
    Eigen::MatrixXd w(data.T(), q());
    Eigen::Index c = 0;
    if (spec_.intercept) w.col(c++).setOnes();
    for (const auto& name : spec_.instruments) w.col(c++) = data.column(name);
    for (const auto& name : spec_.controls) w.col(c++) = data.column(name);
    return w;
  }

  std::unique_ptr<MomentEval> make_eval(const Dataset& data) const override;

 private:
  LinearIvSpec spec_;
  Eigen::Index y_idx_ = 0;
  std::vector<Eigen::Index> x_idx_;  // endogenous then controls
  std::vector<Eigen::Index> w_idx_;  // instruments then controls
};

namespace detail {

// Moments are affine in theta, g_t = a_t - sum_j theta_j c_{t,j} with
// a_t = w_t y_t and c_{t,j} = w_t x_{t,j}. Carrying the centered second-moment
// arrays makes mbar and Omega_hat exact closed forms, O(q^2 k^2) per call and
// independent of T.
class LinearIvEval final : public MomentEval {
 public:
  LinearIvEval(const LinearIvModel& model, const Dataset& data)
      : MomentEval(model, data.T()) {
    const Eigen::MatrixXd x = model.design_x(data);
    const Eigen::MatrixXd w = model.design_w(data);
    const Eigen::VectorXd y = data.column(model.spec().outcome);
    const auto T = static_cast<double>(data.T());
    const Eigen::Index q = model.q(), k = model.k();

    a_bar_ = (w.array().colwise() * y.array()).colwise().mean().transpose();
    c_bar_.resize(q, k);
    for (Eigen::Index j = 0; j < k; ++j)
      c_bar_.col(j) = (w.array().colwise() * x.col(j).array()).colwise().mean().transpose();

    Eigen::MatrixXd a_c(data.T(), q);  // centered a_t
    a_c = (w.array().colwise() * y.array()).matrix().rowwise() - a_bar_.transpose();
    std::vector<Eigen::MatrixXd> c_c(static_cast<std::size_t>(k));
    for (Eigen::Index j = 0; j < k; ++j)
      c_c[static_cast<std::size_t>(j)] =
          (w.array().colwise() * x.col(j).array()).matrix().rowwise() - c_bar_.col(j).transpose();

    s_aa_ = a_c.transpose() * a_c / T;
    s_ac_.resize(static_cast<std::size_t>(k));
    s_cc_.resize(static_cast<std::size_t>(k * k));
    for (Eigen::Index j = 0; j < k; ++j) {
      s_ac_[static_cast<std::size_t>(j)] = a_c.transpose() * c_c[static_cast<std::size_t>(j)] / T;
      for (Eigen::Index l = 0; l < k; ++l)
        s_cc_[static_cast<std::size_t>(j * k + l)] =
            c_c[static_cast<std::size_t>(j)].transpose() * c_c[static_cast<std::size_t>(l)] / T;
    }
  }

  Eigen::VectorXd mbar(const Eigen::VectorXd& theta) const override {
    return a_bar_ - c_bar_ * theta;
  }

  void mbar_omega(const Eigen::VectorXd& theta, Eigen::VectorXd& m,
                  Eigen::MatrixXd& omega) const override {
    const Eigen::Index k = model_.k();
    m = a_bar_ - c_bar_ * theta;
    omega = s_aa_;
    for (Eigen::Index j = 0; j < k; ++j) {
      const auto& sac = s_ac_[static_cast<std::size_t>(j)];
      omega.noalias() -= theta[j] * (sac + sac.transpose());
      for (Eigen::Index l = 0; l < k; ++l)
        omega.noalias() += theta[j] * theta[l] * s_cc_[static_cast<std::size_t>(j * k + l)];
    }
    omega = 0.5 * (omega + omega.transpose());
  }

 private:
  Eigen::VectorXd a_bar_;
  Eigen::MatrixXd c_bar_;  // q x k, column j = mean of w x_j
  Eigen::MatrixXd s_aa_;
  std::vector<Eigen::MatrixXd> s_ac_, s_cc_;
};

}  // namespace detail

inline std::unique_ptr<MomentEval> LinearIvModel::make_eval(const Dataset& data) const {
  return std::make_unique<detail::LinearIvEval>(*this, data);
}

/// Exactly-identified 2SLS / IV fit, theta = (W'X)^-1 W'Y. Used as the pilot
/// for delta_tau prior construction.
inline Eigen::VectorXd linear_iv_fit(const LinearIvModel& model, const Dataset& data) {
  const Eigen::MatrixXd x = model.design_x(data);
  const Eigen::MatrixXd w = model.design_w(data);
  const Eigen::VectorXd y = data.column(model.spec().outcome);
  const Eigen::MatrixXd wx = w.transpose() * x;
  const Eigen::VectorXd wy = w.transpose() * y;
  if (model.q() == model.k()) return wx.fullPivLu().solve(wy);
  // overidentified: one-step GMM with W = (w'w)^-1
  const Eigen::MatrixXd ww = w.transpose() * w;
  const Eigen::MatrixXd m = wx.transpose() * ww.llt().solve(wx);
  return m.llt().solve(wx.transpose() * ww.llt().solve(wy));
}

inline Eigen::VectorXd linear_iv_residuals(const LinearIvModel& model, const Dataset& data) {
  return data.column(model.spec().outcome) - model.design_x(data) * linear_iv_fit(model, data);
}

// ---------------------------------------------------------------------------
// IV quantile regression model
// ---------------------------------------------------------------------------

struct IvqrSpec {
  double tau = 0.5;
  std::string outcome;
  std::string treatment;
  std::vector<std::string> controls;
  std::string instrument;  // equals treatment when the treatment is exogenous
  ParamBox theta_box;
};

/// g_tau = (1, D, controls')' (tau - 1{Y <= alpha + treat*beta_X + controls' beta_W}).
/// theta ordering: (alpha, beta_X, beta_W...). Non-smooth: indicator moments.
class IvqrModel final : public MomentModel {
 public:
  IvqrModel(IvqrSpec spec, const std::vector<std::string>& layout)
      : MomentModel(2 + static_cast<Eigen::Index>(spec.controls.size()),
                    2 + static_cast<Eigen::Index>(spec.controls.size()), spec.theta_box,
                    /*smooth=*/false),
        spec_(std::move(spec)) {
    if (!(spec_.tau > 0.0 && spec_.tau < 1.0)) throw ContractError("IvqrModel: tau must be in (0,1)");
    std::vector<std::string> all{spec_.outcome, spec_.treatment};
    all.insert(all.end(), spec_.controls.begin(), spec_.controls.end());
    if (spec_.instrument != spec_.treatment) all.push_back(spec_.instrument);
    detail::check_distinct(all, "IvqrModel");
    y_idx_ = detail::find_col(layout, spec_.outcome);
    treat_idx_ = detail::find_col(layout, spec_.treatment);
    instr_idx_ = detail::find_col(layout, spec_.instrument);
    for (const auto& c : spec_.controls) ctrl_idx_.push_back(detail::find_col(layout, c));
  }

  const IvqrSpec& spec() const { return spec_; }
  double tau() const { return spec_.tau; }

  Eigen::VectorXd evaluate(const Eigen::RowVectorXd& z, const Eigen::VectorXd& theta) const override {
    if (theta.size() != k()) throw ContractError("IvqrModel::evaluate: theta dimension mismatch");
    double arg = theta[0] + z[treat_idx_] * theta[1];
    for (std::size_t j = 0; j < ctrl_idx_.size(); ++j)
      arg += z[ctrl_idx_[j]] * theta[2 + static_cast<Eigen::Index>(j)];
    const double u = spec_.tau - ((z[y_idx_] <= arg) ? 1.0 : 0.0);
    Eigen::VectorXd g(q());
    g[0] = u;
    g[1] = z[instr_idx_] * u;
    for (std::size_t j = 0; j < ctrl_idx_.size(); ++j)
      g[2 + static_cast<Eigen::Index>(j)] = z[ctrl_idx_[j]] * u;
    return g;
  }

  std::unique_ptr<MomentEval> make_eval(const Dataset& data) const override;

  /// Pilot linear-IV analog of the quantile model (same design, level equation).
  LinearIvModel linear_analog(const Dataset& data) const {
    LinearIvSpec s;
    s.outcome = spec_.outcome;
    s.endogenous = {spec_.treatment};
    s.controls = spec_.controls;
    s.instruments = {spec_.instrument};
    s.intercept = true;
    s.theta_box = theta_box();
    if (spec_.instrument == spec_.treatment) {
      // exogenous treatment: plain regression, instrument the treatment by itself
      s.instruments = {spec_.treatment};
      s.endogenous = {spec_.treatment};
    }
    return LinearIvModel(std::move(s), data.column_names());
  }

 private:
  IvqrSpec spec_;
  Eigen::Index y_idx_ = 0, treat_idx_ = 0, instr_idx_ = 0;
  std::vector<Eigen::Index> ctrl_idx_;
};

namespace detail {

// One pass per theta: u_t in {tau, tau-1}, so Omega_hat accumulates
// w w' u^2 directly.
class IvqrEval final : public MomentEval {
 public:
  IvqrEval(const IvqrModel& model, const Dataset& data)
      : MomentEval(model, data.T()), tau_(model.tau()) {
    const Eigen::Index q = model.q();
    w_.resize(data.T(), q);
    w_.col(0).setOnes();
    w_.col(1) = data.rows().col(detail::find_col(data.column_names(), model.spec().instrument));
    x_.resize(data.T(), model.k());
    x_.col(0).setOnes();
    x_.col(1) = data.rows().col(detail::find_col(data.column_names(), model.spec().treatment));
    for (std::size_t j = 0; j < model.spec().controls.size(); ++j) {
      const Eigen::VectorXd c =
          data.rows().col(detail::find_col(data.column_names(), model.spec().controls[j]));
      w_.col(2 + static_cast<Eigen::Index>(j)) = c;
      x_.col(2 + static_cast<Eigen::Index>(j)) = c;
    }
    y_ = data.column(model.spec().outcome);
  }

  Eigen::VectorXd mbar(const Eigen::VectorXd& theta) const override {
    const Eigen::Index q = model_.q();
    const Eigen::VectorXd arg = x_ * theta;
    Eigen::VectorXd m = Eigen::VectorXd::Zero(q);
    for (Eigen::Index t = 0; t < T_; ++t) {
      const double u = tau_ - ((y_[t] <= arg[t]) ? 1.0 : 0.0);
      for (Eigen::Index a = 0; a < q; ++a) m[a] += w_(t, a) * u;
    }
    return m / static_cast<double>(T_);
  }

  void mbar_omega(const Eigen::VectorXd& theta, Eigen::VectorXd& m,
                  Eigen::MatrixXd& omega) const override {
    const Eigen::Index q = model_.q();
    const Eigen::VectorXd arg = x_ * theta;
    m.setZero(q);
    omega.setZero(q, q);
    // u is two-valued, so accumulate w w' u^2 in the lower triangle directly
    for (Eigen::Index t = 0; t < T_; ++t) {
      const double u = tau_ - ((y_[t] <= arg[t]) ? 1.0 : 0.0);
      const double u2 = u * u;
      for (Eigen::Index a = 0; a < q; ++a) {
        const double wa = w_(t, a);
        m[a] += wa * u;
        for (Eigen::Index b = 0; b <= a; ++b) omega(a, b) += u2 * wa * w_(t, b);
      }
    }
    m /= static_cast<double>(T_);
    for (Eigen::Index a = 0; a < q; ++a)
      for (Eigen::Index b = 0; b <= a; ++b) {
        const double v = omega(a, b) / static_cast<double>(T_) - m[a] * m[b];
        omega(a, b) = v;
        omega(b, a) = v;
      }
  }

 private:
  double tau_;
  Eigen::MatrixXd w_, x_;
  Eigen::VectorXd y_;
};

}  // namespace detail

inline std::unique_ptr<MomentEval> IvqrModel::make_eval(const Dataset& data) const {
  return std::make_unique<detail::IvqrEval>(*this, data);
}

// ---------------------------------------------------------------------------
// Simulation designs
// ---------------------------------------------------------------------------

/// D log-normal, X = D + v, Y = X theta + D gamma + eps. Columns Y, X, D.
struct LinearIvLogNormalDgp {
  double theta_star = 0.0;
  double gamma = 0.0;
  Eigen::Index T = 0;
};

/// Y = alpha + X'beta + sigma(X) eps + gamma X3^2, sigma(X) = (1 + sum X_j)/5,
/// X_j log-normal. Columns Y, X1, X2, X3.
struct MedianRegLogNormalDgp {
  double alpha_star = 0.0;
  Eigen::Vector3d beta_star = Eigen::Vector3d::Zero();
  double gamma = 0.0;
  Eigen::Index T = 0;
};

/// Y = alpha + D beta + gamma D X + eps with D ~ Bernoulli(1/2) and X an
/// unobserved log-normal variable. Columns Y, D.
struct BernoulliTreatmentDgp {
  double alpha_star = 0.0;
  double beta_star = 0.0;
  double gamma = 0.0;
  Eigen::Index T = 0;
};

using DgpSpec = std::variant<LinearIvLogNormalDgp, MedianRegLogNormalDgp, BernoulliTreatmentDgp>;

// E[D^2] for log D ~ N(0,1) is exp(2). Hard-coded so the two-stage mu -> gamma
// map is deterministic rather than estimated.
constexpr double kLogNormalSecondMoment = 7.38905609893065;  // e^2

inline void validate(const DgpSpec& dgp) {
  std::visit(
      [](const auto& d) {
        if (d.T < 50) throw ContractError("DgpSpec: T must be at least 50");
        if (!std::isfinite(d.gamma)) throw ContractError("DgpSpec: gamma must be finite");
      },
      dgp);
}

inline Eigen::Index dgp_sample_size(const DgpSpec& dgp) {
  return std::visit([](const auto& d) { return d.T; }, dgp);
}

inline Eigen::Index dgp_param_dim(const DgpSpec& dgp) {
  if (std::holds_alternative<LinearIvLogNormalDgp>(dgp)) return 1;
  if (std::holds_alternative<MedianRegLogNormalDgp>(dgp)) return 4;
  return 2;
}

inline Dataset simulate(const DgpSpec& dgp, std::uint64_t seed) {
  validate(dgp);
  Rng rng(seed);
  return std::visit(
      [&](const auto& d) -> Dataset {
        using D = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<D, LinearIvLogNormalDgp>) {
          Eigen::MatrixXd rows(d.T, 3);
          for (Eigen::Index t = 0; t < d.T; ++t) {
            const double instr = std::exp(rng.normal());
            const double x = instr + rng.normal();
            const double y = x * d.theta_star + instr * d.gamma + rng.normal();
            rows(t, 0) = y;
            rows(t, 1) = x;
            rows(t, 2) = instr;
          }
          return Dataset(std::move(rows), {"Y", "X", "D"});
        } else if constexpr (std::is_same_v<D, MedianRegLogNormalDgp>) {
          Eigen::MatrixXd rows(d.T, 4);
          for (Eigen::Index t = 0; t < d.T; ++t) {
            const double x1 = std::exp(rng.normal());
            const double x2 = std::exp(rng.normal());
            const double x3 = std::exp(rng.normal());
            const double sigma = (1.0 + x1 + x2 + x3) / 5.0;
            const double y = d.alpha_star + x1 * d.beta_star[0] + x2 * d.beta_star[1] +
                             x3 * d.beta_star[2] + sigma * rng.normal() + d.gamma * x3 * x3;
            rows(t, 0) = y;
            rows(t, 1) = x1;
            rows(t, 2) = x2;
            rows(t, 3) = x3;
          }
          return Dataset(std::move(rows), {"Y", "X1", "X2", "X3"});
        } else {
          static_assert(std::is_same_v<D, BernoulliTreatmentDgp>);
          Eigen::MatrixXd rows(d.T, 2);
          for (Eigen::Index t = 0; t < d.T; ++t) {
            const double treat = static_cast<double>(rng.bernoulli());
            const double x_latent = std::exp(rng.normal());
            const double y =
                d.alpha_star + treat * d.beta_star + d.gamma * treat * x_latent + rng.normal();
            rows(t, 0) = y;
            rows(t, 1) = treat;
          }
          return Dataset(std::move(rows), {"Y", "D"});
        }
      },
      dgp);
}

/// Moment model matching each design. The linear design uses the single
/// no-intercept moment D(Y - X theta); the quantile designs are exactly
/// identified with self-instrumented regressors.
inline std::unique_ptr<MomentModel> dgp_model(const DgpSpec& dgp, double tau, const ParamBox& box) {
  return std::visit(
      [&](const auto& d) -> std::unique_ptr<MomentModel> {
        using D = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<D, LinearIvLogNormalDgp>) {
          LinearIvSpec s;
          s.outcome = "Y";
          s.endogenous = {"X"};
          s.instruments = {"D"};
          s.intercept = false;
          s.theta_box = box;
          return std::make_unique<LinearIvModel>(std::move(s),
                                                 std::vector<std::string>{"Y", "X", "D"});
        } else if constexpr (std::is_same_v<D, MedianRegLogNormalDgp>) {
          IvqrSpec s;
          s.tau = tau;
          s.outcome = "Y";
          s.treatment = "X1";
          s.controls = {"X2", "X3"};
          s.instrument = "X1";
          s.theta_box = box;
          return std::make_unique<IvqrModel>(std::move(s),
                                             std::vector<std::string>{"Y", "X1", "X2", "X3"});
        } else {
          IvqrSpec s;
          s.tau = tau;
          s.outcome = "Y";
          s.treatment = "D";
          s.controls = {};
          s.instrument = "D";
          s.theta_box = box;
          return std::make_unique<IvqrModel>(std::move(s), std::vector<std::string>{"Y", "D"});
        }
      },
      dgp);
}

/// The coverage target: coefficients of the gamma = 0 conditional tau-quantile.
/// MedianReg picks up the Phi^-1(tau)/5 heteroskedasticity shift on every
/// coordinate; the Bernoulli design shifts only the intercept (eps independent
/// of D); the linear design targets theta_star at any tau.
inline Eigen::VectorXd dgp_truth(const DgpSpec& dgp, double tau) {
  return std::visit(
      [&](const auto& d) -> Eigen::VectorXd {
        using D = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<D, LinearIvLogNormalDgp>) {
          Eigen::VectorXd t(1);
          t[0] = d.theta_star;
          return t;
        } else if constexpr (std::is_same_v<D, MedianRegLogNormalDgp>) {
          const double shift = normal_quantile(tau) / 5.0;
          Eigen::VectorXd t(4);
          t[0] = d.alpha_star + shift;
          t[1] = d.beta_star[0] + shift;
          t[2] = d.beta_star[1] + shift;
          t[3] = d.beta_star[2] + shift;
          return t;
        } else {
          Eigen::VectorXd t(2);
          t[0] = d.alpha_star + normal_quantile(tau);
          t[1] = d.beta_star;
          return t;
        }
      },
      dgp);
}

/// Two-stage map for the linear design: a drawn mu pins gamma = mu / E[D^2]
/// while theta(mu) stays at theta_star (m(theta) = (theta_star - theta) E[D^2]
/// + gamma E[D^2], so the moment shift is absorbed by gamma exactly).
inline double linear_gamma_for_mu(double mu) { return mu / kLogNormalSecondMoment; }

}  // namespace pgmm
