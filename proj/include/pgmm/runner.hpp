#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include "pgmm/config.hpp"

namespace pgmm {

// All job randomness flows from the single config seed through these streams.
namespace seeds {
inline std::uint64_t data(std::uint64_t s) { return Rng::splitmix(s ^ 0xDA7AULL); }
inline std::uint64_t chain(std::uint64_t s) { return Rng::splitmix(s ^ 0xC4A15ULL); }
inline std::uint64_t union_base(std::uint64_t s) { return Rng::splitmix(s ^ 0x171017ULL); }
inline std::uint64_t optimizer(std::uint64_t s) { return Rng::splitmix(s ^ 0x0B75ULL); }
}  // namespace seeds

namespace run_detail {

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + path);
  out << text;
}

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_draws_csv(const std::string& path, const PosteriorDraws& draws) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + path);
  out << "iteration";
  for (Eigen::Index j = 0; j < draws.theta_draws.cols(); ++j) out << ",theta_" << (j + 1);
  for (Eigen::Index j = 0; j < draws.mu_draws.cols(); ++j) out << ",mu_" << (j + 1);
  out << ",log_post\n";
  for (Eigen::Index i = 0; i < draws.n(); ++i) {
    out << (i + 1);
    for (Eigen::Index j = 0; j < draws.theta_draws.cols(); ++j)
      out << ',' << fmt_double(draws.theta_draws(i, j));
    for (Eigen::Index j = 0; j < draws.mu_draws.cols(); ++j)
      out << ',' << fmt_double(draws.mu_draws(i, j));
    out << ',' << fmt_double(draws.log_post[i]) << '\n';
  }
}

inline json draws_summary_json(const PosteriorDraws& draws, double alpha) {
  json s;
  const Eigen::Index k = draws.theta_draws.cols();
  json per_coord = json::array();
  for (Eigen::Index j = 0; j < k; ++j) {
    const Eigen::VectorXd col = draws.theta_draws.col(j);
    json c;
    c["mean"] = col.mean();
    c["sd"] = sample_sd(col);
    const auto [lo, hi] = hpd_interval(col, alpha);
    c["hpd"] = {{"lo", lo}, {"hi", hi}, {"level", 1.0 - alpha}};
    c["r_hat"] = draws.diagnostics.r_hat_theta[j];
    per_coord.push_back(c);
  }
  s["theta"] = per_coord;
  json mu_coord = json::array();
  for (Eigen::Index j = 0; j < draws.mu_draws.cols(); ++j) {
    const Eigen::VectorXd col = draws.mu_draws.col(j);
    mu_coord.push_back({{"mean", col.mean()}, {"sd", sample_sd(col)}});
  }
  s["mu"] = mu_coord;
  s["accept_rate"] = draws.accept_rate;
  s["accept_rate_theta"] = draws.diagnostics.accept_rate_theta;
  s["accept_rate_mu"] = draws.diagnostics.accept_rate_mu;
  s["stuck_warning"] = draws.diagnostics.stuck_warning;
  s["rejected_numerical"] = draws.diagnostics.rejected_numerical;
  s["n_draws"] = draws.n();
  s["seed"] = draws.seed;
  return s;
}

struct LoadedJob {
  JobKind job;
  std::uint64_t seed = 0;
  std::string out_dir;
  int workers = 1;
  double alpha = 0.05;
  std::optional<DgpSpec> dgp;
  std::shared_ptr<Dataset> data;
  std::shared_ptr<MomentModel> model;
  std::shared_ptr<MomentEval> eval;
  std::optional<MuPrior> mu_prior;
  ThetaPrior theta_prior = FlatOnBoxPrior{};
  std::optional<WeightingScheme> weighting;
  ChainConfig chain;
  json resolved;
};

inline LoadedJob load_job(const json& cfg, const std::string& out_override, int workers_override,
                          const std::optional<std::string>& job_override) {
  LoadedJob ctx;
  const std::string job_name =
      job_override.value_or(cfg_detail::require(cfg, "job", "config").get<std::string>());
  ctx.job = parse_job_kind(job_name);
  if (!cfg.contains("seed")) throw ConfigError("config requires a 'seed'");
  ctx.seed = cfg.at("seed").get<std::uint64_t>();
  ctx.out_dir = !out_override.empty() ? out_override : cfg_detail::get_or<std::string>(cfg, "out_dir", "pgmm_out");
  ctx.workers = workers_override > 0 ? workers_override : cfg_detail::get_or(cfg, "workers", default_workers());
  ctx.alpha = cfg_detail::get_or(cfg, "alpha", 0.05);
  if (!(ctx.alpha > 0.0 && ctx.alpha < 1.0)) throw ConfigError("alpha must be in (0,1)");

  ctx.resolved = cfg;
  ctx.resolved["job"] = job_name;
  ctx.resolved["out_dir"] = ctx.out_dir;
  ctx.resolved["workers"] = ctx.workers;
  ctx.resolved["alpha"] = ctx.alpha;

  // data source
  if (cfg.contains("data")) {
    const json& d = cfg.at("data");
    if (d.contains("csv")) {
      ctx.data = std::make_shared<Dataset>(Dataset::from_csv(d.at("csv").get<std::string>()));
    } else if (d.contains("dgp")) {
      ctx.dgp = parse_dgp(d.at("dgp"));
      const std::uint64_t ds = seeds::data(ctx.seed);
      ctx.data = std::make_shared<Dataset>(simulate(*ctx.dgp, ds));
      ctx.resolved["data"]["dgp"] = dgp_to_json(*ctx.dgp);
      ctx.resolved["data"]["simulation_seed"] = ds;
    } else {
      throw ConfigError("data section needs either 'csv' or 'dgp'");
    }
  } else if (cfg.contains("dgp")) {
    ctx.dgp = parse_dgp(cfg.at("dgp"));  // coverage-sim style: simulated per replication
    ctx.resolved["dgp"] = dgp_to_json(*ctx.dgp);
  }

  if (cfg.contains("model")) {
    if (ctx.data == nullptr) throw ConfigError("a model section requires a data section");
    ctx.model = parse_model(cfg.at("model"), *ctx.data, ctx.dgp);
    ctx.eval = std::shared_ptr<MomentEval>(ctx.model->make_eval(*ctx.data).release());
  }
  if (cfg.contains("mu_prior")) {
    ctx.mu_prior = parse_mu_prior(cfg.at("mu_prior"), ctx.data.get(), ctx.model.get(),
                                  ctx.model ? ctx.model->q() : 0,
                                  ctx.dgp ? dgp_sample_size(*ctx.dgp) : 0);
  }
  if (cfg.contains("theta_prior"))
    ctx.theta_prior = parse_theta_prior(cfg.at("theta_prior"), ctx.model ? ctx.model->k() : 0);
  if (cfg.contains("weighting"))
    ctx.weighting = parse_weighting(cfg.at("weighting"), ctx.eval.get());
  else
    ctx.weighting = ContinuousUpdating{};
  ctx.resolved["weighting"] = cfg.contains("weighting") ? cfg.at("weighting") : json{{"scheme", "cue"}};

  ctx.chain = parse_chain(cfg.contains("chain") ? cfg.at("chain") : json::object(), seeds::chain(ctx.seed));
  ctx.resolved["chain"] = chain_to_json(ctx.chain);
  return ctx;
}

inline Eigen::VectorXd resolve_eta(const json& cfg, Eigen::Index k) {
  if (cfg.contains("eta")) {
    Eigen::VectorXd eta = cfg_detail::parse_vector(cfg.at("eta"), "eta");
    if (eta.size() != k) throw ConfigError("eta dimension != model k");
    return eta;
  }
  return Eigen::VectorXd::Unit(k, 0);
}

inline Eigen::MatrixXd resolve_lambda(const json& jc, Eigen::Index q) {
  if (jc.contains("lambda")) return cfg_detail::parse_matrix(jc.at("lambda"), "lambda");
  const double s = cfg_detail::get_or(jc, "lambda_scale", 1.0);
  return s * Eigen::MatrixXd::Identity(q, q);
}

// ---------------------------------------------------------------------------
// individual jobs
// ---------------------------------------------------------------------------

inline void run_sample(LoadedJob& ctx, const json& cfg) {
  (void)cfg;
  if (!ctx.eval || !ctx.mu_prior) throw ConfigError("sample job needs model, data, and mu_prior");
  const PosteriorDraws draws =
      sample_joint(*ctx.eval, *ctx.weighting, ctx.theta_prior, *ctx.mu_prior, ctx.chain);
  write_draws_csv(ctx.out_dir + "/draws.csv", draws);
  json summary = draws_summary_json(draws, ctx.alpha);
  write_text(ctx.out_dir + "/summary.json", summary.dump(2) + "\n");
}

inline void run_local_approx(LoadedJob& ctx, const json& cfg) {
  if (!ctx.eval) throw ConfigError("local-approx job needs model and data");
  const json jl = cfg.contains("local") ? cfg.at("local") : json::object();
  const Eigen::MatrixXd lambda = resolve_lambda(jl, ctx.model->q());
  Eigen::VectorXd mu0 = jl.contains("mu0") ? cfg_detail::parse_vector(jl.at("mu0"), "local.mu0")
                                           : Eigen::VectorXd::Zero(ctx.model->q());
  OptimizerConfig opt;
  opt.start_seed = seeds::optimizer(ctx.seed);
  opt.multi_starts = cfg_detail::get_or(jl, "multi_starts", opt.multi_starts);
  opt.max_iterations = cfg_detail::get_or(jl, "max_iterations", opt.max_iterations);
  opt.tolerance = cfg_detail::get_or(jl, "tolerance", opt.tolerance);
  opt.force_derivative_free = cfg_detail::get_or(jl, "derivative_free", opt.force_derivative_free);
  // freeze_weighting: evaluate A at a fixed reference point instead of
  // continuously updating inside the optimizer (speed option)
  const bool freeze = cfg_detail::get_or(jl, "freeze_weighting", false);
  const Eigen::VectorXd theta_hat = gmm_estimate(*ctx.eval, lambda, mu0, opt, freeze);
  const LocalApprox approx = gaussian_approx(*ctx.eval, lambda, mu0, theta_hat);
  json out;
  out["theta_hat"] = cfg_detail::vector_to_json(approx.theta_hat);
  out["V"] = cfg_detail::matrix_to_json(approx.V);
  out["V_bar"] = cfg_detail::matrix_to_json(approx.V_bar);
  out["T"] = approx.T;
  json intervals = json::array();
  for (Eigen::Index j = 0; j < ctx.model->k(); ++j) {
    const auto [lo, hi] = local_interval(approx, Eigen::VectorXd::Unit(ctx.model->k(), j), ctx.alpha);
    intervals.push_back({{"coordinate", j + 1}, {"lo", lo}, {"hi", hi}, {"level", 1.0 - ctx.alpha}});
  }
  out["intervals"] = intervals;
  out["lambda"] = cfg_detail::matrix_to_json(lambda);
  out["mu0"] = cfg_detail::vector_to_json(mu0);
  write_text(ctx.out_dir + "/local_approx.json", out.dump(2) + "\n");
}

inline void run_union_ci(LoadedJob& ctx, const json& cfg) {
  if (!ctx.eval) throw ConfigError("union-ci job needs model and data");
  const json ju = cfg.contains("union") ? cfg.at("union") : json::object();
  std::vector<Eigen::VectorXd> grid;
  std::string grid_pattern = "user";
  if (!ju.contains("mu_grid") || (ju.at("mu_grid").is_string() && ju.at("mu_grid") == "auto")) {
    if (!ctx.mu_prior) throw ConfigError("union-ci auto grid needs a mu_prior with bounded support");
    grid = auto_mu_grid(*ctx.mu_prior);
    grid_pattern = "auto: support center + face midpoints + corners (capped at 64)";
  } else {
    for (const auto& row : ju.at("mu_grid"))
      grid.push_back(cfg_detail::parse_vector(row, "union.mu_grid"));
  }
  for (const auto& mu : grid)
    if (mu.size() != ctx.model->q()) throw ConfigError("union.mu_grid entry dimension != q");
  const std::string method_name = cfg_detail::get_or<std::string>(ju, "per_mu_method", "t3");
  const PerMuMethod method = method_name == "t4" ? PerMuMethod::kT4 : PerMuMethod::kT3;
  const Eigen::VectorXd eta = resolve_eta(cfg, ctx.model->k());
  ChainConfig chain = ctx.chain;
  chain.seed = seeds::union_base(ctx.seed);
  const IntervalEstimate est =
      union_interval(*ctx.eval, *ctx.weighting, ctx.theta_prior, grid, eta, ctx.alpha, method, chain,
                     ctx.workers);
  json out;
  out["method"] = to_string(est.method);
  out["level"] = est.level;
  out["lo"] = est.lo;
  out["hi"] = est.hi;
  out["eta"] = cfg_detail::vector_to_json(eta);
  out["mu_grid_size"] = est.mu_grid_size;
  out["grid_pattern"] = grid_pattern;
  out["base_chain_seed"] = chain.seed;
  json per_mu = json::array();
  for (std::size_t i = 0; i < est.grid.size(); ++i) {
    const bool was_skipped =
        std::find(est.skipped.begin(), est.skipped.end(), static_cast<int>(i)) != est.skipped.end();
    json entry = {{"mu", cfg_detail::vector_to_json(est.grid[i])},
                  {"chain_seed", chain.seed ^ static_cast<std::uint64_t>(i)},
                  {"skipped", was_skipped}};
    if (!was_skipped) {
      entry["lo"] = est.per_mu[i].first;
      entry["hi"] = est.per_mu[i].second;
    }
    per_mu.push_back(entry);
  }
  out["per_mu"] = per_mu;
  write_text(ctx.out_dir + "/union_ci.json", out.dump(2) + "\n");
}

inline void run_coverage(LoadedJob& ctx, const json& cfg) {
  if (!cfg.contains("coverage")) throw ConfigError("coverage-sim job needs a coverage section");
  const json jc = cfg.at("coverage");
  if (!ctx.dgp) throw ConfigError("coverage-sim needs a dgp section");
  CoverageRunConfig rc;
  rc.alpha = ctx.alpha;
  rc.n_reps = cfg_detail::get_or(jc, "n_reps", 200);
  rc.base_seed = ctx.seed;
  rc.workers = ctx.workers;
  rc.grid_points = cfg_detail::get_or(jc, "grid_points", 9);
  rc.pool_chains = cfg_detail::get_or(jc, "pool_chains", 4);
  rc.slice_denominator = cfg_detail::get_or(jc, "slice_denominator", 8);
  rc.chain = parse_chain(jc.contains("chain") ? jc.at("chain") : json({{"n_draws", 2000}, {"burn_in", 2000}, {"thin", 4}}), 0);
  const Eigen::Index pk = dgp_param_dim(*ctx.dgp);
  rc.theta_box = jc.contains("theta_box") ? parse_theta_box(jc.at("theta_box"))
                                          : ParamBox(Eigen::VectorXd::Constant(pk, -10.0),
                                                     Eigen::VectorXd::Constant(pk, 10.0));

  const std::string kind = cfg_detail::require(jc, "kind", "coverage").get<std::string>();
  CoverageReport rep;
  double tau = cfg_detail::get_or(jc, "tau", 0.5);
  if (kind == "two-stage") {
    if (!std::holds_alternative<LinearIvLogNormalDgp>(*ctx.dgp))
      throw ConfigError("two-stage coverage supports the linear_iv_lognormal family");
    if (!cfg.contains("mu_prior")) throw ConfigError("two-stage coverage needs a top-level mu_prior (F_mu)");
    const MuPrior f_mu =
        parse_mu_prior(cfg.at("mu_prior"), nullptr, nullptr, 1, dgp_sample_size(*ctx.dgp));
    rep = two_stage_coverage(std::get<LinearIvLogNormalDgp>(*ctx.dgp), f_mu, rc);
  } else if (kind == "fixed-mu") {
    const std::string m = cfg_detail::require(jc, "method", "coverage").get<std::string>();
    CoverageMethod method;
    if (m == "ch") method = CoverageMethod::kCh;
    else if (m == "pgmm_union") method = CoverageMethod::kPgmmUnion;
    else if (m == "local") method = CoverageMethod::kLocal;
    else throw ConfigError("unknown coverage method '" + m + "'");
    const Eigen::Index q = dgp_model(*ctx.dgp, tau, rc.theta_box)->q();
    rc.lambda = resolve_lambda(jc, q);
    rep = fixed_mu_coverage(*ctx.dgp, method, tau, rc);
  } else {
    throw ConfigError("coverage.kind must be 'two-stage' or 'fixed-mu'");
  }

  // CSV + markdown mirroring the simulation-table layout
  const double gamma = std::visit([](const auto& d) { return d.gamma; }, *ctx.dgp);
  const Eigen::Index T = dgp_sample_size(*ctx.dgp);
  std::ostringstream csv, md;
  csv << "gamma,T,tau,method,param,rate,mc_se\n";
  md << "| gamma | T | tau | method |";
  for (Eigen::Index j = 0; j < rep.rates.size(); ++j) md << " param_" << (j + 1) << " |";
  md << "\n|---|---|---|---|";
  for (Eigen::Index j = 0; j < rep.rates.size(); ++j) md << "---|";
  md << "\n| " << gamma << " | " << T << " | " << tau << " | " << rep.method << " |";
  for (Eigen::Index j = 0; j < rep.rates.size(); ++j) {
    csv << gamma << ',' << T << ',' << tau << ',' << rep.method << ",param_" << (j + 1) << ','
        << fmt_double(rep.rates[j]) << ',' << fmt_double(rep.mc_standard_errors[j]) << '\n';
    md << ' ' << rep.rates[j] << " |";
  }
  md << '\n';
  write_text(ctx.out_dir + "/coverage.csv", csv.str());
  write_text(ctx.out_dir + "/coverage.md", md.str());
  json out;
  out["method"] = rep.method;
  out["rates"] = cfg_detail::vector_to_json(rep.rates);
  out["mc_standard_errors"] = cfg_detail::vector_to_json(rep.mc_standard_errors);
  out["n_reps"] = rep.n_reps;
  out["failures"] = rep.failures;
  out["config_echo"] = rep.config_echo;
  write_text(ctx.out_dir + "/coverage.json", out.dump(2) + "\n");
}

inline void run_hpd_summary(LoadedJob& ctx, const json& cfg) {
  if (!cfg.contains("draws_csv")) throw ConfigError("hpd-summary job needs 'draws_csv'");
  const Dataset draws = Dataset::from_csv(cfg.at("draws_csv").get<std::string>());
  json out;
  json per = json::array();
  for (Eigen::Index j = 0; j < draws.d(); ++j) {
    const std::string& name = draws.column_names()[static_cast<std::size_t>(j)];
    if (name.rfind("theta_", 0) != 0 && name.rfind("mu_", 0) != 0) continue;
    const auto [lo, hi] = hpd_interval(draws.rows().col(j), ctx.alpha);
    per.push_back({{"name", name}, {"lo", lo}, {"hi", hi}, {"level", 1.0 - ctx.alpha}});
  }
  out["hpd"] = per;
  write_text(ctx.out_dir + "/hpd_summary.json", out.dump(2) + "\n");
}

}  // namespace run_detail

/// Dry-run consistency check: parse and construct everything, compute nothing.
inline std::string validate_config(const json& cfg) {
  run_detail::LoadedJob ctx = run_detail::load_job(cfg, "", 0, std::nullopt);
  std::ostringstream os;
  os << "ok: job=" << to_string(ctx.job) << " seed=" << ctx.seed << " workers=" << ctx.workers
     << "\nresolved config:\n" << ctx.resolved.dump(2) << "\n";
  return os.str();
}

/// Execute a job; writes artifacts plus the resolved-config echo into out_dir.
inline void run_config(const json& cfg, const std::string& out_override = "",
                       int workers_override = 0,
                       const std::optional<std::string>& job_override = std::nullopt) {
  run_detail::LoadedJob ctx = run_detail::load_job(cfg, out_override, workers_override, job_override);
  std::filesystem::create_directories(ctx.out_dir);
  switch (ctx.job) {
    case JobKind::kSample: run_detail::run_sample(ctx, cfg); break;
    case JobKind::kLocalApprox: run_detail::run_local_approx(ctx, cfg); break;
    case JobKind::kUnionCi: run_detail::run_union_ci(ctx, cfg); break;
    case JobKind::kCoverageSim: run_detail::run_coverage(ctx, cfg); break;
    case JobKind::kHpdSummary: run_detail::run_hpd_summary(ctx, cfg); break;
  }
  run_detail::write_text(ctx.out_dir + "/config_resolved.json", ctx.resolved.dump(2) + "\n");
}

}  // namespace pgmm
