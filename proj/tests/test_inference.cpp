#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "pgmm/inference.hpp"
#include "pgmm/models.hpp"
#include "test_helpers.hpp"

using namespace pgmm;
using namespace pgmm_test;

TEST_CASE("hpd interval on 1..100") {
  Eigen::VectorXd x(100);
  for (int i = 0; i < 100; ++i) x[i] = i + 1;
  const auto [lo, hi] = hpd_interval(x, 0.05);
  REQUIRE(hi - lo == 94.0);
  REQUIRE(lo == 1.0);  // ties resolve to the smallest left endpoint
}

TEST_CASE("hpd interval on a large normal sample") {
  Rng rng(1);
  Eigen::VectorXd x(1000000);
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = rng.normal();
  const auto [lo, hi] = hpd_interval(x, 0.05);
  REQUIRE(lo == Catch::Approx(-1.96).margin(0.02));
  REQUIRE(hi == Catch::Approx(1.96).margin(0.02));
  // unimodal target: interval contains the sample median
  const double median = sample_quantile(x, 0.5);
  REQUIRE(median >= lo);
  REQUIRE(median <= hi);
}

TEST_CASE("hpd interval shifts toward the mode for skewed draws") {
  Rng rng(2);
  std::vector<double> v(200000);
  for (auto& e : v) e = -std::log(rng.uniform());  // exponential(1)
  Eigen::VectorXd x = Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  const auto [lo, hi] = hpd_interval(x, 0.05);
  const double eq_lo = sample_quantile(x, 0.025);
  REQUIRE(lo < eq_lo);
  REQUIRE(lo < 0.01);  // mode of the exponential is 0
  (void)hi;
}

TEST_CASE("hpd interval contract errors") {
  Eigen::VectorXd x(50);
  x.setLinSpaced(50, 0.0, 1.0);
  REQUIRE_THROWS_AS(hpd_interval(x, 0.05), ContractError);
}

TEST_CASE("hpd region: alpha near one keeps only the densest draws") {
  Rng rng(3);
  Eigen::MatrixXd draws(2000, 1);
  for (Eigen::Index i = 0; i < draws.rows(); ++i) draws(i, 0) = rng.normal();
  const HpdRegion region = hpd_region(draws, 0.995);
  REQUIRE(region.member_draws.size() <= 20);
  for (auto idx : region.member_draws) REQUIRE(std::abs(draws(idx, 0)) < 0.5);
}

TEST_CASE("hpd region: gaussian endpoints and membership") {
  Rng rng(4);
  Eigen::MatrixXd draws(100000, 1);
  for (Eigen::Index i = 0; i < draws.rows(); ++i) draws(i, 0) = rng.normal();
  const HpdRegion region = hpd_region(draws, 0.05);
  REQUIRE(static_cast<double>(region.member_draws.size()) / draws.rows() ==
          Catch::Approx(0.95).margin(1e-3));
  double lo = 1e9, hi = -1e9;
  for (auto idx : region.member_draws) {
    lo = std::min(lo, draws(idx, 0));
    hi = std::max(hi, draws(idx, 0));
  }
  REQUIRE(lo == Catch::Approx(-1.96).margin(0.05));
  REQUIRE(hi == Catch::Approx(1.96).margin(0.05));
  REQUIRE(region.contains(Eigen::VectorXd::Zero(1)));
  REQUIRE_FALSE(region.contains(Eigen::VectorXd::Constant(1, 3.0)));
}

TEST_CASE("hpd region: degenerate draws collapse to a flagged point") {
  Eigen::MatrixXd draws = Eigen::MatrixXd::Constant(500, 2, 1.25);
  const HpdRegion region = hpd_region(draws, 0.05);
  REQUIRE(region.degenerate);
  REQUIRE(region.contains(Eigen::VectorXd::Constant(2, 1.25)));
  REQUIRE_FALSE(region.contains(Eigen::VectorXd::Constant(2, 1.26)));
}

namespace {

PosteriorDraws fake_draws(const Eigen::MatrixXd& theta) {
  PosteriorDraws d;
  d.theta_draws = theta;
  d.mu_draws = Eigen::MatrixXd::Zero(theta.rows(), 1);
  d.log_post = Eigen::VectorXd::Zero(theta.rows());
  return d;
}

}  // namespace

TEST_CASE("posterior quantile interval basics") {
  Rng rng(5);
  Eigen::MatrixXd theta(50000, 1);
  for (Eigen::Index i = 0; i < theta.rows(); ++i) theta(i, 0) = rng.normal();
  const PosteriorDraws draws = fake_draws(theta);
  const Eigen::VectorXd eta = Eigen::VectorXd::Ones(1);

  const IntervalEstimate half = posterior_quantile_interval(draws, eta, 0.5);
  REQUIRE(half.lo == Catch::Approx(sample_quantile(theta.col(0), 0.25)));
  REQUIRE(half.hi == Catch::Approx(sample_quantile(theta.col(0), 0.75)));

  const IntervalEstimate ci = posterior_quantile_interval(draws, eta, 0.05);
  REQUIRE(ci.lo == Catch::Approx(-1.96).margin(0.05));
  REQUIRE(ci.hi == Catch::Approx(1.96).margin(0.05));

  const IntervalEstimate doubled = posterior_quantile_interval(draws, 2.0 * eta, 0.05);
  REQUIRE(doubled.lo == Catch::Approx(2.0 * ci.lo));
  REQUIRE(doubled.hi == Catch::Approx(2.0 * ci.hi));
}

TEST_CASE("t4 interval: feeding J_tilde = J_hat collapses to the chain-variance interval") {
  Rng rng(6);
  const Eigen::Index n = 20000;
  Eigen::MatrixXd theta(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double a = rng.normal();
    theta(i, 0) = a;
    theta(i, 1) = 0.5 * a + rng.normal();
  }
  const PosteriorDraws draws = fake_draws(theta);
  const Eigen::Index T = 400;
  const Eigen::RowVectorXd mean = theta.colwise().mean();
  const Eigen::MatrixXd centered = theta.rowwise() - mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
  const Eigen::MatrixXd j_hat_inv = static_cast<double>(T) * cov;
  const Eigen::MatrixXd j_hat = j_hat_inv.inverse();
  const Eigen::VectorXd eta = (Eigen::VectorXd(2) << 1.0, -0.3).finished();

  const IntervalEstimate est = t4_interval(draws, eta, 0.05, j_hat, T);
  const double hw_expected = normal_quantile(0.975) * std::sqrt(eta.dot(cov * eta));
  REQUIRE((est.hi - est.lo) / 2.0 == Catch::Approx(hw_expected).epsilon(1e-10));

  // with fixed matrices the half-width scales as 1/sqrt(T): a posterior whose
  // spread shrinks by sqrt(2) at 2T keeps J_hat fixed and halves the variance
  Eigen::MatrixXd theta2 = mean.replicate(n, 1) + centered / std::sqrt(2.0);
  const IntervalEstimate est2 = t4_interval(fake_draws(theta2), eta, 0.05, j_hat, 2 * T);
  REQUIRE((est2.hi - est2.lo) == Catch::Approx((est.hi - est.lo) / std::sqrt(2.0)).epsilon(1e-6));
}

TEST_CASE("union interval: single point, prefix nesting, and outward growth") {
  LinearIvLogNormalDgp dgp;
  dgp.theta_star = 0.4;
  dgp.gamma = 0.01;
  dgp.T = 2500;
  const Dataset data = simulate(dgp, 31);
  const LinearIvModel model = toy_linear_iv_model(false, 2.0);
  const auto eval = model.make_eval(data);
  ChainConfig cfg;
  cfg.n_draws = 3000;
  cfg.burn_in = 1000;
  cfg.thin = 2;
  cfg.seed = 1234;
  const Eigen::VectorXd eta = Eigen::VectorXd::Ones(1);
  auto mu = [](double v) { return Eigen::VectorXd::Constant(1, v); };

  const IntervalEstimate single = union_interval(*eval, ContinuousUpdating{}, FlatOnBoxPrior{},
                                                 {mu(0.0)}, eta, 0.05, PerMuMethod::kT3, cfg);
  ChainConfig direct_cfg = cfg;
  direct_cfg.seed = cfg.seed ^ 0ULL;
  const PosteriorDraws direct =
      sample_conditional_theta(*eval, ContinuousUpdating{}, FlatOnBoxPrior{}, mu(0.0), direct_cfg);
  const IntervalEstimate direct_est = posterior_quantile_interval(direct, eta, 0.05);
  REQUIRE(single.lo == direct_est.lo);
  REQUIRE(single.hi == direct_est.hi);
  REQUIRE(single.mu_grid_size == 1);

  // prefix grids share seeds, so the union is exactly nested
  const std::vector<Eigen::VectorXd> g2{mu(0.0), mu(0.05)};
  const std::vector<Eigen::VectorXd> g3{mu(0.0), mu(0.05), mu(-0.05)};
  const IntervalEstimate u2 = union_interval(*eval, ContinuousUpdating{}, FlatOnBoxPrior{}, g2, eta,
                                             0.05, PerMuMethod::kT3, cfg);
  const IntervalEstimate u3 = union_interval(*eval, ContinuousUpdating{}, FlatOnBoxPrior{}, g3, eta,
                                             0.05, PerMuMethod::kT3, cfg);
  REQUIRE(u2.lo <= single.lo);
  REQUIRE(u2.hi >= single.hi);
  REQUIRE(u3.lo <= u2.lo);
  REQUIRE(u3.hi >= u2.hi);

  // box [-b, b] growing outward
  double prev_lo = single.lo, prev_hi = single.hi;
  for (double b : {0.1, 0.2}) {
    const std::vector<Eigen::VectorXd> grid{mu(0.0), mu(b), mu(-b)};
    const IntervalEstimate u = union_interval(*eval, ContinuousUpdating{}, FlatOnBoxPrior{}, grid,
                                              eta, 0.05, PerMuMethod::kT3, cfg);
    REQUIRE(u.lo <= prev_lo + 1e-12);
    REQUIRE(u.hi >= prev_hi - 1e-12);
    prev_lo = u.lo;
    prev_hi = u.hi;
  }

  // duplicate grid point: deterministic across reruns
  const std::vector<Eigen::VectorXd> dup{mu(0.05), mu(0.05)};
  const IntervalEstimate d1 = union_interval(*eval, ContinuousUpdating{}, FlatOnBoxPrior{}, dup, eta,
                                             0.05, PerMuMethod::kT3, cfg);
  const IntervalEstimate d2 = union_interval(*eval, ContinuousUpdating{}, FlatOnBoxPrior{}, dup, eta,
                                             0.05, PerMuMethod::kT3, cfg, /*workers=*/2);
  REQUIRE(d1.lo == d2.lo);
  REQUIRE(d1.hi == d2.hi);
}

TEST_CASE("t4 union on information-equality weighting tracks the t3 width") {
  LinearIvLogNormalDgp dgp;
  dgp.theta_star = 0.4;
  dgp.gamma = 0.0;
  dgp.T = 3000;
  const Dataset data = simulate(dgp, 77);
  const LinearIvModel model = toy_linear_iv_model(false, 2.0);
  const auto eval = model.make_eval(data);
  ChainConfig cfg;
  cfg.n_draws = 40000;
  cfg.burn_in = 4000;
  cfg.thin = 2;
  cfg.seed = 5150;
  const Eigen::VectorXd eta = Eigen::VectorXd::Ones(1);
  const std::vector<Eigen::VectorXd> grid{Eigen::VectorXd::Zero(1)};
  const IntervalEstimate t3 = union_interval(*eval, ContinuousUpdating{}, FlatOnBoxPrior{}, grid,
                                             eta, 0.05, PerMuMethod::kT3, cfg);
  const IntervalEstimate t4 = union_interval(*eval, ContinuousUpdating{}, FlatOnBoxPrior{}, grid,
                                             eta, 0.05, PerMuMethod::kT4, cfg);
  const double w3 = t3.hi - t3.lo, w4 = t4.hi - t4.lo;
  REQUIRE(std::abs(w4 - w3) / w3 < 0.10);
}

TEST_CASE("auto mu grid patterns") {
  const MuPrior box = UniformBoxPrior(Eigen::VectorXd::Constant(2, -1.0), Eigen::VectorXd::Constant(2, 1.0));
  const auto grid = auto_mu_grid(box);
  REQUIRE(grid.size() == 1 + 4 + 4);  // center + 2q faces + 2^q corners
  const MuPrior ell = UniformEllipsePrior(Eigen::MatrixXd::Identity(3, 3), 2.0);
  REQUIRE(auto_mu_grid(ell).size() == 1 + 6);
  REQUIRE_THROWS_AS(auto_mu_grid(MuPrior(DogmaticPrior{Eigen::VectorXd::Zero(1)})), ContractError);
}

TEST_CASE("union interval: initialization failures at every grid point surface as such") {
  // constant moments make Omega identically singular, so no finite posterior exists
  const Dataset data = two_row_iv();
  const ConstantModel model(Eigen::VectorXd::Constant(1, 1.0));
  const auto eval = model.make_eval(data);
  ChainConfig cfg;
  cfg.n_draws = 100;
  cfg.burn_in = 50;
  cfg.thin = 1;
  cfg.seed = 3;
  REQUIRE_THROWS_AS(union_interval(*eval, ContinuousUpdating{}, FlatOnBoxPrior{},
                                   {Eigen::VectorXd::Zero(1)}, Eigen::VectorXd::Ones(1), 0.05,
                                   PerMuMethod::kT3, cfg),
                    InitializationError);
}
