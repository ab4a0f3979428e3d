#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "pgmm/models.hpp"
#include "pgmm/sampler.hpp"
#include "test_helpers.hpp"

using namespace pgmm;
using namespace pgmm_test;

namespace {

// Exact joint Gaussian for the linear no-intercept model with fixed weighting,
// Gaussian theta prior and Gaussian-local mu prior. Independent of the sampler
// path: posterior precision P = T C'WC + prior precision, C = [-bbar, -I].
struct ConjugateOracle {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

ConjugateOracle conjugate_posterior(const MomentEval& eval, const Eigen::MatrixXd& w,
                                    double theta_prior_mean, double theta_prior_var,
                                    const Eigen::MatrixXd& lambda) {
  const double T = static_cast<double>(eval.T());
  // mbar(theta) = abar - bbar * theta for the scalar linear model
  const double abar = eval.mbar(Eigen::VectorXd::Zero(1))[0];
  const double at1 = eval.mbar(Eigen::VectorXd::Ones(1))[0];
  const double bbar = abar - at1;
  Eigen::MatrixXd c(1, 2);
  c << -bbar, -1.0;
  Eigen::MatrixXd prior_prec = Eigen::MatrixXd::Zero(2, 2);
  prior_prec(0, 0) = 1.0 / theta_prior_var;
  prior_prec(1, 1) = T / lambda(0, 0);
  const Eigen::MatrixXd prec = T * c.transpose() * w * c + prior_prec;
  Eigen::VectorXd lin = -T * c.transpose() * w * Eigen::VectorXd::Constant(1, abar);
  lin[0] += theta_prior_mean / theta_prior_var;
  ConjugateOracle out;
  out.cov = prec.inverse();
  out.mean = out.cov * lin;
  return out;
}

struct ConjugateSetup {
  Dataset data;
  LinearIvModel model;
  WeightingScheme scheme;
  ThetaPrior theta_prior;
  MuPrior mu_prior;
  ConjugateOracle oracle;
};

ConjugateSetup make_conjugate_setup(std::uint64_t data_seed) {
  LinearIvLogNormalDgp dgp;
  dgp.theta_star = 0.3;
  dgp.gamma = 0.05;
  dgp.T = 200;
  Dataset data = simulate(dgp, data_seed);
  LinearIvModel model = toy_linear_iv_model(false, 60.0);
  auto eval = model.make_eval(data);
  const Eigen::MatrixXd w = Eigen::MatrixXd::Constant(1, 1, 0.2);
  const double th_mean = 0.0, th_var = 4.0;
  const Eigen::MatrixXd lambda = Eigen::MatrixXd::Constant(1, 1, 2.0);
  ConjugateOracle oracle = conjugate_posterior(*eval, w, th_mean, th_var, lambda);
  eval.reset();
  return ConjugateSetup{std::move(data),
                        std::move(model),
                        make_fixed_weighting(w),
                        GaussianPrior(Eigen::VectorXd::Constant(1, th_mean),
                                      Eigen::MatrixXd::Constant(1, 1, th_var)),
                        GaussianLocalPrior(Eigen::VectorXd::Zero(1), lambda, dgp.T),
                        oracle};
}

}  // namespace

TEST_CASE("joint chain matches the exact gaussian posterior") {
  ConjugateSetup s = make_conjugate_setup(2024);
  auto eval = s.model.make_eval(s.data);
  ChainConfig cfg;
  cfg.n_draws = 20000;
  cfg.burn_in = 4000;
  cfg.thin = 2;
  cfg.seed = 7;
  const PosteriorDraws draws = sample_joint(*eval, s.scheme, s.theta_prior, s.mu_prior, cfg);

  REQUIRE(draws.n() == 20000);
  for (int coord = 0; coord < 2; ++coord) {
    const Eigen::VectorXd series = coord == 0 ? draws.theta_draws.col(0) : draws.mu_draws.col(0);
    const double se = batch_means_se(series);
    REQUIRE(std::abs(series.mean() - s.oracle.mean[coord]) < 4.0 * se);
    // variance check via batch means of squared deviations
    Eigen::VectorXd sq = (series.array() - s.oracle.mean[coord]).square();
    const double se_var = batch_means_se(sq);
    REQUIRE(std::abs(sq.mean() - s.oracle.cov(coord, coord)) < 4.0 * se_var);
  }
}

TEST_CASE("dogmatic prior holds mu constant") {
  ConjugateSetup s = make_conjugate_setup(11);
  auto eval = s.model.make_eval(s.data);
  ChainConfig cfg;
  cfg.n_draws = 500;
  cfg.burn_in = 200;
  cfg.thin = 1;
  cfg.seed = 1;
  const Eigen::VectorXd mu0 = Eigen::VectorXd::Constant(1, 0.25);
  const PosteriorDraws draws =
      sample_joint(*eval, s.scheme, s.theta_prior, MuPrior(DogmaticPrior{mu0}), cfg);
  REQUIRE((draws.mu_draws.array() == 0.25).all());
  REQUIRE((draws.log_post.array() > kNegInf).all());
}

TEST_CASE("identical seeds give bit-identical draws") {
  ConjugateSetup s = make_conjugate_setup(3);
  auto eval = s.model.make_eval(s.data);
  ChainConfig cfg;
  cfg.n_draws = 800;
  cfg.burn_in = 300;
  cfg.thin = 2;
  cfg.seed = 99;
  const PosteriorDraws a = sample_joint(*eval, s.scheme, s.theta_prior, s.mu_prior, cfg);
  const PosteriorDraws b = sample_joint(*eval, s.scheme, s.theta_prior, s.mu_prior, cfg);
  REQUIRE(a.theta_draws == b.theta_draws);
  REQUIRE(a.mu_draws == b.mu_draws);
  REQUIRE(a.log_post == b.log_post);
  cfg.seed = 100;
  const PosteriorDraws c = sample_joint(*eval, s.scheme, s.theta_prior, s.mu_prior, cfg);
  REQUIRE(a.theta_draws != c.theta_draws);
}

TEST_CASE("conditional chain equals joint chain under a dogmatic prior in distribution") {
  ConjugateSetup s = make_conjugate_setup(17);
  auto eval = s.model.make_eval(s.data);
  const Eigen::VectorXd mu_fixed = Eigen::VectorXd::Constant(1, 0.1);
  ChainConfig cfg;
  cfg.n_draws = 10000;
  cfg.burn_in = 2000;
  cfg.thin = 25;  // decorrelate so the iid KS critical value applies
  cfg.seed = 5;
  const PosteriorDraws cond = sample_conditional_theta(*eval, s.scheme, s.theta_prior, mu_fixed, cfg);
  cfg.seed = 6;
  const PosteriorDraws joint =
      sample_joint(*eval, s.scheme, s.theta_prior, MuPrior(DogmaticPrior{mu_fixed}), cfg);
  std::vector<double> a(cond.theta_draws.col(0).data(), cond.theta_draws.col(0).data() + cond.n());
  std::vector<double> b(joint.theta_draws.col(0).data(), joint.theta_draws.col(0).data() + joint.n());
  const double d = ks_two_sample(a, b);
  REQUIRE(d < ks_two_sample_critical(a.size(), b.size(), 0.01));
  REQUIRE((cond.mu_draws.array() == 0.1).all());
}

TEST_CASE("conditional chain at mu = mbar(theta_hat) concentrates near theta_hat") {
  ConjugateSetup s = make_conjugate_setup(23);
  auto eval = s.model.make_eval(s.data);
  const Eigen::VectorXd theta_star = gmm_estimate(*eval, Eigen::MatrixXd::Identity(1, 1) * 1e-8,
                                                  Eigen::VectorXd::Zero(1));
  const Eigen::VectorXd mu_fixed = eval->mbar(theta_star);
  ChainConfig cfg;
  cfg.n_draws = 5000;
  cfg.burn_in = 2000;
  cfg.thin = 2;
  cfg.seed = 12;
  const PosteriorDraws draws =
      sample_conditional_theta(*eval, ContinuousUpdating{}, FlatOnBoxPrior{}, mu_fixed, cfg);
  const double mean = draws.theta_draws.col(0).mean();
  const double sd = sample_sd(draws.theta_draws.col(0));
  REQUIRE(std::abs(mean - theta_star[0]) < 3.0 * sd);
}

TEST_CASE("post-adaptation acceptance sits in the loose band") {
  ConjugateSetup s = make_conjugate_setup(31);
  auto eval = s.model.make_eval(s.data);
  ChainConfig cfg;
  cfg.n_draws = 4000;
  cfg.burn_in = 3000;
  cfg.thin = 1;
  cfg.seed = 2;
  const PosteriorDraws draws = sample_joint(*eval, s.scheme, s.theta_prior, s.mu_prior, cfg);
  REQUIRE(draws.diagnostics.accept_rate_theta > 0.10);
  REQUIRE(draws.diagnostics.accept_rate_theta < 0.50);
  REQUIRE(draws.diagnostics.accept_rate_mu > 0.10);
  REQUIRE(draws.diagnostics.accept_rate_mu < 0.50);
  // CUE variant on the same data
  const PosteriorDraws cue =
      sample_joint(*eval, ContinuousUpdating{}, FlatOnBoxPrior{}, s.mu_prior, cfg);
  REQUIRE(cue.diagnostics.accept_rate_theta > 0.10);
  REQUIRE(cue.diagnostics.accept_rate_theta < 0.50);
}

TEST_CASE("retained draws never leave the support") {
  const Dataset data = two_row_iv();
  const LinearIvModel model = toy_linear_iv_model(false, 2.0);
  auto eval = model.make_eval(data);
  const MuPrior boxp =
      UniformBoxPrior(Eigen::VectorXd::Constant(1, -0.5), Eigen::VectorXd::Constant(1, 1.5));
  ChainConfig cfg;
  cfg.n_draws = 3000;
  cfg.burn_in = 500;
  cfg.thin = 1;
  cfg.seed = 77;
  const PosteriorDraws draws =
      sample_joint(*eval, ContinuousUpdating{}, FlatOnBoxPrior{}, boxp, cfg);
  REQUIRE((draws.theta_draws.array().abs() <= 2.0).all());
  REQUIRE((draws.mu_draws.array() >= -0.5).all());
  REQUIRE((draws.mu_draws.array() <= 1.5).all());
  REQUIRE((draws.log_post.array() > kNegInf).all());
}

TEST_CASE("binned chain satisfies detailed balance on a 5-state projection") {
  // reversible kernel => symmetric two-step counts even after lumping
  const Dataset data = column_data({2.0, 3.0, 2.5, 1.5, 3.5, 2.5});
  ShiftModel model(0.0, 5.0);
  auto eval = model.make_eval(data);
  const MuPrior dogmatic = DogmaticPrior{Eigen::VectorXd::Zero(1)};
  ChainConfig cfg;
  cfg.n_draws = 60000;
  cfg.burn_in = 3000;
  cfg.thin = 1;
  cfg.seed = 4;
  const PosteriorDraws draws =
      sample_joint(*eval, ContinuousUpdating{}, FlatOnBoxPrior{}, dogmatic, cfg);
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(5, 5);
  auto bin = [](double x) { return std::min(4, std::max(0, static_cast<int>(x))); };
  for (Eigen::Index t = 0; t + 1 < draws.n(); ++t)
    counts(bin(draws.theta_draws(t, 0)), bin(draws.theta_draws(t + 1, 0))) += 1.0;
  for (int i = 0; i < 5; ++i)
    for (int j = i + 1; j < 5; ++j) {
      const double total = counts(i, j) + counts(j, i);
      if (total < 25.0) continue;  // too rare to test
      REQUIRE(std::abs(counts(i, j) - counts(j, i)) <= 3.0 * std::sqrt(total));
    }
}

TEST_CASE("initialization error after 1000 failed attempts") {
  class NanModel final : public MomentModel {
   public:
    NanModel()
        : MomentModel(1, 1,
                      ParamBox(Eigen::VectorXd::Constant(1, -1.0), Eigen::VectorXd::Constant(1, 1.0)),
                      false) {}
    Eigen::VectorXd evaluate(const Eigen::RowVectorXd&, const Eigen::VectorXd&) const override {
      return Eigen::VectorXd::Constant(1, std::numeric_limits<double>::quiet_NaN());
    }
  };
  const Dataset data = column_data({1.0, 2.0});
  NanModel model;
  auto eval = model.make_eval(data);
  ChainConfig cfg;
  cfg.n_draws = 10;
  cfg.burn_in = 10;
  cfg.thin = 1;
  cfg.seed = 1;
  REQUIRE_THROWS_AS(sample_joint(*eval, ContinuousUpdating{}, FlatOnBoxPrior{},
                                 MuPrior(DogmaticPrior{Eigen::VectorXd::Zero(1)}), cfg),
                    InitializationError);
}

TEST_CASE("split r-hat is near one for a stationary chain") {
  ConjugateSetup s = make_conjugate_setup(41);
  auto eval = s.model.make_eval(s.data);
  ChainConfig cfg;
  cfg.n_draws = 8000;
  cfg.burn_in = 2000;
  cfg.thin = 2;
  cfg.seed = 8;
  const PosteriorDraws draws = sample_joint(*eval, s.scheme, s.theta_prior, s.mu_prior, cfg);
  REQUIRE(draws.diagnostics.r_hat_theta[0] < 1.05);
}
