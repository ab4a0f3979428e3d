#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pgmm/coverage.hpp"
#include "pgmm/criterion.hpp"
#include "pgmm/dataset.hpp"
#include "pgmm/errors.hpp"
#include "pgmm/inference.hpp"
#include "pgmm/models.hpp"
#include "pgmm/parallel.hpp"
#include "pgmm/priors.hpp"
#include "pgmm/sampler.hpp"

namespace pgmm {

using nlohmann::json;

enum class JobKind { kSample, kLocalApprox, kUnionCi, kCoverageSim, kHpdSummary };

inline JobKind parse_job_kind(const std::string& s) {
  if (s == "sample") return JobKind::kSample;
  if (s == "local-approx") return JobKind::kLocalApprox;
  if (s == "union-ci") return JobKind::kUnionCi;
  if (s == "coverage-sim") return JobKind::kCoverageSim;
  if (s == "hpd-summary") return JobKind::kHpdSummary;
  throw ConfigError("unknown job kind '" + s + "'");
}

inline const char* to_string(JobKind k) {
  switch (k) {
    case JobKind::kSample: return "sample";
    case JobKind::kLocalApprox: return "local-approx";
    case JobKind::kUnionCi: return "union-ci";
    case JobKind::kCoverageSim: return "coverage-sim";
    case JobKind::kHpdSummary: return "hpd-summary";
  }
  return "?";
}

namespace cfg_detail {

inline Eigen::VectorXd parse_vector(const json& j, const std::string& field) {
  if (!j.is_array()) throw ConfigError("field '" + field + "' must be an array");
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError("field '" + field + "' must contain numbers");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

inline Eigen::MatrixXd parse_matrix(const json& j, const std::string& field) {
  if (!j.is_array() || j.empty()) throw ConfigError("field '" + field + "' must be a nonempty 2-d array");
  const std::size_t rows = j.size();
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  if (cols == 0) throw ConfigError("field '" + field + "' must be a 2-d array");
  Eigen::MatrixXd m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    if (!j[i].is_array() || j[i].size() != cols)
      throw ConfigError("field '" + field + "' has ragged rows");
    for (std::size_t c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = j[i][c].get<double>();
  }
  return m;
}

inline std::vector<std::string> parse_strings(const json& j, const std::string& field) {
  if (!j.is_array()) throw ConfigError("field '" + field + "' must be an array of strings");
  std::vector<std::string> out;
  for (const auto& e : j) {
    if (!e.is_string()) throw ConfigError("field '" + field + "' must contain strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

inline json vector_to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline json matrix_to_json(const Eigen::MatrixXd& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(i, c));
    a.push_back(row);
  }
  return a;
}

template <typename T>
T get_or(const json& j, const std::string& field, T fallback) {
  if (!j.contains(field)) return fallback;
  return j.at(field).get<T>();
}

inline const json& require(const json& j, const std::string& field, const std::string& where) {
  if (!j.contains(field)) throw ConfigError("missing field '" + field + "' in " + where);
  return j.at(field);
}

}  // namespace cfg_detail

inline ParamBox parse_theta_box(const json& j) {
  const Eigen::VectorXd lo = cfg_detail::parse_vector(cfg_detail::require(j, "lo", "theta_box"), "theta_box.lo");
  const Eigen::VectorXd hi = cfg_detail::parse_vector(cfg_detail::require(j, "hi", "theta_box"), "theta_box.hi");
  return ParamBox(lo, hi);
}

inline DgpSpec parse_dgp(const json& j) {
  const std::string family = cfg_detail::require(j, "family", "dgp").get<std::string>();
  const auto T = static_cast<Eigen::Index>(cfg_detail::require(j, "T", "dgp").get<long>());
  if (family == "linear_iv_lognormal") {
    LinearIvLogNormalDgp d;
    d.theta_star = cfg_detail::get_or(j, "theta_star", 0.0);
    d.gamma = cfg_detail::get_or(j, "gamma", 0.0);
    d.T = T;
    return d;
  }
  if (family == "median_reg_lognormal") {
    MedianRegLogNormalDgp d;
    d.alpha_star = cfg_detail::get_or(j, "alpha_star", 0.0);
    if (j.contains("beta_star")) {
      const Eigen::VectorXd b = cfg_detail::parse_vector(j.at("beta_star"), "dgp.beta_star");
      if (b.size() != 3) throw ConfigError("dgp.beta_star must have 3 entries");
      d.beta_star = b;
    }
    d.gamma = cfg_detail::get_or(j, "gamma", 0.0);
    d.T = T;
    return d;
  }
  if (family == "bernoulli_treatment") {
    BernoulliTreatmentDgp d;
    d.alpha_star = cfg_detail::get_or(j, "alpha_star", 0.0);
    d.beta_star = cfg_detail::get_or(j, "beta_star", 0.0);
    d.gamma = cfg_detail::get_or(j, "gamma", 0.0);
    d.T = T;
    return d;
  }
  throw ConfigError("unknown dgp family '" + family + "'");
}

inline json dgp_to_json(const DgpSpec& dgp) {
  return std::visit(
      [](const auto& d) -> json {
        using D = std::decay_t<decltype(d)>;
        json j;
        j["T"] = d.T;
        j["gamma"] = d.gamma;
        if constexpr (std::is_same_v<D, LinearIvLogNormalDgp>) {
          j["family"] = "linear_iv_lognormal";
          j["theta_star"] = d.theta_star;
        } else if constexpr (std::is_same_v<D, MedianRegLogNormalDgp>) {
          j["family"] = "median_reg_lognormal";
          j["alpha_star"] = d.alpha_star;
          j["beta_star"] = {d.beta_star[0], d.beta_star[1], d.beta_star[2]};
        } else {
          j["family"] = "bernoulli_treatment";
          j["alpha_star"] = d.alpha_star;
          j["beta_star"] = d.beta_star;
        }
        return j;
      },
      dgp);
}

inline std::shared_ptr<MomentModel> parse_model(const json& j, const Dataset& data,
                                                const std::optional<DgpSpec>& dgp) {
  const std::string type = cfg_detail::require(j, "type", "model").get<std::string>();
  if (type == "dgp-default") {
    if (!dgp.has_value()) throw ConfigError("model type 'dgp-default' requires a dgp data source");
    const double tau = cfg_detail::get_or(j, "tau", 0.5);
    ParamBox box = parse_theta_box(cfg_detail::require(j, "theta_box", "model"));
    return std::shared_ptr<MomentModel>(dgp_model(*dgp, tau, box).release());
  }
  if (type == "linear_iv") {
    LinearIvSpec s;
    s.outcome = cfg_detail::require(j, "outcome", "model").get<std::string>();
    if (j.contains("endogenous")) s.endogenous = cfg_detail::parse_strings(j.at("endogenous"), "model.endogenous");
    if (j.contains("controls")) s.controls = cfg_detail::parse_strings(j.at("controls"), "model.controls");
    if (j.contains("instruments")) s.instruments = cfg_detail::parse_strings(j.at("instruments"), "model.instruments");
    s.intercept = cfg_detail::get_or(j, "intercept", true);
    s.theta_box = parse_theta_box(cfg_detail::require(j, "theta_box", "model"));
    auto m = std::make_shared<LinearIvModel>(std::move(s), data.column_names());
    if (m->q() < m->k())
      throw ConfigError("model: q >= k required (got q=" + std::to_string(m->q()) +
                        ", k=" + std::to_string(m->k()) + ")");
    return m;
  }
  if (type == "ivqr") {
    IvqrSpec s;
    s.tau = cfg_detail::require(j, "tau", "model").get<double>();
    s.outcome = cfg_detail::require(j, "outcome", "model").get<std::string>();
    s.treatment = cfg_detail::require(j, "treatment", "model").get<std::string>();
    if (j.contains("controls")) s.controls = cfg_detail::parse_strings(j.at("controls"), "model.controls");
    s.instrument = cfg_detail::get_or<std::string>(j, "instrument", s.treatment);
    s.theta_box = parse_theta_box(cfg_detail::require(j, "theta_box", "model"));
    return std::make_shared<IvqrModel>(std::move(s), data.column_names());
  }
  throw ConfigError("unknown model type '" + type + "'");
}

inline MuPrior parse_mu_prior(const json& j, const Dataset* data, const MomentModel* model,
                              Eigen::Index q_expected, Eigen::Index T_override = 0) {
  const std::string family = cfg_detail::require(j, "family", "mu_prior").get<std::string>();
  MuPrior prior = [&]() -> MuPrior {
    if (family == "dogmatic")
      return DogmaticPrior{cfg_detail::parse_vector(cfg_detail::require(j, "mu0", "mu_prior"), "mu_prior.mu0")};
    if (family == "gaussian")
      return GaussianPrior(cfg_detail::parse_vector(cfg_detail::require(j, "mean", "mu_prior"), "mu_prior.mean"),
                           cfg_detail::parse_matrix(cfg_detail::require(j, "cov", "mu_prior"), "mu_prior.cov"));
    if (family == "gaussian_local") {
      const Eigen::Index T = data != nullptr ? data->T() : T_override;
      if (T <= 0) throw ConfigError("gaussian_local prior needs a dataset or dgp for T");
      Eigen::MatrixXd lambda = cfg_detail::parse_matrix(cfg_detail::require(j, "lambda", "mu_prior"), "mu_prior.lambda");
      Eigen::VectorXd mean = j.contains("mean")
                                 ? cfg_detail::parse_vector(j.at("mean"), "mu_prior.mean")
                                 : Eigen::VectorXd::Zero(lambda.rows());
      return GaussianLocalPrior(std::move(mean), std::move(lambda), T);
    }
    if (family == "uniform_box")
      return UniformBoxPrior(cfg_detail::parse_vector(cfg_detail::require(j, "lo", "mu_prior"), "mu_prior.lo"),
                             cfg_detail::parse_vector(cfg_detail::require(j, "hi", "mu_prior"), "mu_prior.hi"));
    if (family == "uniform_ellipse")
      return UniformEllipsePrior(cfg_detail::parse_matrix(cfg_detail::require(j, "S", "mu_prior"), "mu_prior.S"),
                                 cfg_detail::require(j, "radius2", "mu_prior").get<double>());
    if (family == "linear_iv_build") {
      if (data == nullptr) throw ConfigError("linear_iv_build prior needs a dataset");
      const auto cols = cfg_detail::parse_strings(cfg_detail::require(j, "columns", "mu_prior"), "mu_prior.columns");
      const bool intercept = cfg_detail::get_or(j, "intercept", true);
      const Eigen::VectorXd omega_d =
          cfg_detail::parse_vector(cfg_detail::require(j, "omega_d", "mu_prior"), "mu_prior.omega_d");
      const double c = cfg_detail::get_or(j, "c", 1.0);
      const std::string shape = cfg_detail::get_or<std::string>(j, "shape", "gaussian");
      return build_linear_iv_prior(*data, cols, intercept, omega_d, c,
                                   shape == "uniform" ? PriorShape::kUniform : PriorShape::kGaussian);
    }
    if (family == "ivqr_delta") {
      if (data == nullptr || model == nullptr)
        throw ConfigError("ivqr_delta prior needs a dataset and an ivqr model");
      const auto* ivqr = dynamic_cast<const IvqrModel*>(model);
      if (ivqr == nullptr) throw ConfigError("ivqr_delta prior requires an ivqr model");
      const double cap = cfg_detail::require(j, "gamma_cap", "mu_prior").get<double>();
      const double c = cfg_detail::get_or(j, "c", 1.0);
      const std::string shape = cfg_detail::get_or<std::string>(j, "shape", "gaussian");
      Eigen::VectorXd resid;
      if (j.contains("residuals_csv")) {
        const Dataset r = Dataset::from_csv(j.at("residuals_csv").get<std::string>());
        resid = r.rows().col(0);
      } else {
        resid = linear_iv_residuals(ivqr->linear_analog(*data), *data);  // pilot fit
      }
      return build_ivqr_delta_prior(*data, ivqr->tau(), resid, ivqr->spec().instrument,
                                    ivqr->spec().controls, cap, c,
                                    shape == "uniform" ? PriorShape::kUniform : PriorShape::kGaussian);
    }
    throw ConfigError("unknown mu prior family '" + family + "'");
  }();
  if (q_expected > 0 && dimension(prior) != q_expected)
    throw ConfigError("mu prior dimension " + std::to_string(dimension(prior)) +
                      " != model moment dimension " + std::to_string(q_expected));
  return prior;
}

inline ThetaPrior parse_theta_prior(const json& j, Eigen::Index k_expected) {
  const std::string family = cfg_detail::get_or<std::string>(j, "family", "flat");
  if (family == "flat") return FlatOnBoxPrior{};
  if (family == "gaussian") {
    GaussianPrior g(cfg_detail::parse_vector(cfg_detail::require(j, "mean", "theta_prior"), "theta_prior.mean"),
                    cfg_detail::parse_matrix(cfg_detail::require(j, "cov", "theta_prior"), "theta_prior.cov"));
    if (k_expected > 0 && g.mean.size() != k_expected)
      throw ConfigError("theta prior dimension != model k");
    return g;
  }
  throw ConfigError("unknown theta prior family '" + family + "'");
}

inline WeightingScheme parse_weighting(const json& j, const MomentEval* eval) {
  const std::string scheme = cfg_detail::get_or<std::string>(j, "scheme", "cue");
  if (scheme == "cue") return ContinuousUpdating{};
  if (scheme == "fixed")
    return make_fixed_weighting(cfg_detail::parse_matrix(cfg_detail::require(j, "W", "weighting"), "weighting.W"));
  if (scheme == "plugin") {
    if (eval == nullptr) throw ConfigError("plugin weighting needs a dataset");
    return make_plugin_weighting(*eval,
                                 cfg_detail::parse_vector(cfg_detail::require(j, "theta_ref", "weighting"), "weighting.theta_ref"));
  }
  throw ConfigError("unknown weighting scheme '" + scheme + "'");
}

inline ChainConfig parse_chain(const json& j, std::uint64_t seed) {
  ChainConfig c;
  c.n_draws = cfg_detail::get_or(j, "n_draws", 50000);
  c.burn_in = cfg_detail::get_or(j, "burn_in", 10000);
  c.thin = cfg_detail::get_or(j, "thin", 5);
  c.target_accept = cfg_detail::get_or(j, "target_accept", 0.234);
  c.adapt_window = cfg_detail::get_or(j, "adapt_window", 50);
  c.seed = seed;
  if (j.contains("init_theta") && !j.at("init_theta").is_string())
    c.init_theta = cfg_detail::parse_vector(j.at("init_theta"), "chain.init_theta");
  if (j.contains("init_mu") && !j.at("init_mu").is_string())
    c.init_mu = cfg_detail::parse_vector(j.at("init_mu"), "chain.init_mu");
  c.validate();
  return c;
}

inline json chain_to_json(const ChainConfig& c) {
  json j;
  j["n_draws"] = c.n_draws;
  j["burn_in"] = c.burn_in;
  j["thin"] = c.thin;
  j["target_accept"] = c.target_accept;
  j["adapt_window"] = c.adapt_window;
  j["seed"] = c.seed;
  j["init_theta"] = c.init_theta.has_value() ? cfg_detail::vector_to_json(*c.init_theta) : json("auto");
  j["init_mu"] = c.init_mu.has_value() ? cfg_detail::vector_to_json(*c.init_mu) : json("prior-mean");
  return j;
}

}  // namespace pgmm
