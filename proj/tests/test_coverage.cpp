#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "pgmm/coverage.hpp"
#include "test_helpers.hpp"

using namespace pgmm;
using namespace pgmm_test;

namespace {

CoverageRunConfig small_run(int reps, std::uint64_t seed, Eigen::Index k) {
  CoverageRunConfig rc;
  rc.alpha = 0.05;
  rc.n_reps = reps;
  rc.base_seed = seed;
  rc.workers = 2;
  rc.chain.n_draws = 800;
  rc.chain.burn_in = 600;
  rc.chain.thin = 2;
  rc.theta_box = ParamBox(Eigen::VectorXd::Constant(k, -8.0), Eigen::VectorXd::Constant(k, 8.0));
  return rc;
}

}  // namespace

TEST_CASE("two-stage coverage at alpha = 0.5 sits near one half") {
  LinearIvLogNormalDgp family;
  family.theta_star = 0.0;
  family.T = 800;
  const MuPrior f_mu =
      GaussianLocalPrior(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1), family.T);
  CoverageRunConfig rc = small_run(200, 91, 1);
  rc.theta_box = ParamBox(Eigen::VectorXd::Constant(1, -3.0), Eigen::VectorXd::Constant(1, 3.0));
  rc.alpha = 0.5;
  const CoverageReport rep = two_stage_coverage(family, f_mu, rc);
  REQUIRE(rep.n_reps >= 196);
  REQUIRE(std::abs(rep.rates[0] - 0.5) <= 3.0 * rep.mc_standard_errors[0] + 0.02);
}

TEST_CASE("coverage results are independent of worker count and rerunnable") {
  LinearIvLogNormalDgp family;
  family.theta_star = 0.2;
  family.T = 100;
  const MuPrior f_mu = DogmaticPrior{Eigen::VectorXd::Zero(1)};
  CoverageRunConfig rc = small_run(40, 5, 1);
  rc.workers = 1;
  const CoverageReport a = two_stage_coverage(family, f_mu, rc);
  rc.workers = 2;
  const CoverageReport b = two_stage_coverage(family, f_mu, rc);
  REQUIRE(a.rates == b.rates);  // replication order cannot matter
  const CoverageReport c = two_stage_coverage(family, f_mu, rc);
  REQUIRE(b.rates == c.rates);
}

TEST_CASE("mc standard error formula matches a bootstrap of the indicators") {
  // the report's mc_se is sqrt(p(1-p)/n); check that formula against a
  // bootstrap over synthetic replication indicators
  Rng rng(17);
  const int n = 400;
  std::vector<double> ind(n);
  for (auto& v : ind) v = rng.uniform() < 0.93 ? 1.0 : 0.0;
  double mean = 0.0;
  for (double v : ind) mean += v;
  mean /= n;
  const double formula = std::sqrt(mean * (1.0 - mean) / n);
  const int b_reps = 3000;
  std::vector<double> boot(b_reps);
  for (int b = 0; b < b_reps; ++b) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += ind[rng.next_u64() % n];
    boot[b] = acc / n;
  }
  double bm = 0.0, bv = 0.0;
  for (double v : boot) bm += v;
  bm /= b_reps;
  for (double v : boot) bv += (v - bm) * (v - bm);
  const double boot_se = std::sqrt(bv / (b_reps - 1));
  REQUIRE(std::abs(boot_se - formula) / formula < 0.2);
}

TEST_CASE("fixed-mu coverage smoke: correctly specified linear design covers") {
  LinearIvLogNormalDgp dgp;
  dgp.theta_star = 0.3;
  dgp.gamma = 0.0;
  dgp.T = 600;
  CoverageRunConfig rc = small_run(60, 11, 1);
  rc.theta_box = ParamBox(Eigen::VectorXd::Constant(1, -3.0), Eigen::VectorXd::Constant(1, 3.0));
  const CoverageReport ch = fixed_mu_coverage(DgpSpec(dgp), CoverageMethod::kCh, 0.5, rc);
  REQUIRE(ch.rates[0] >= 1.0 - rc.alpha - 4.0 * ch.mc_standard_errors[0] - 0.02);
  rc.lambda = Eigen::MatrixXd::Identity(1, 1);
  const CoverageReport local = fixed_mu_coverage(DgpSpec(dgp), CoverageMethod::kLocal, 0.5, rc);
  REQUIRE(local.rates[0] >= 1.0 - rc.alpha - 4.0 * local.mc_standard_errors[0] - 0.02);
}

TEST_CASE("fixed-mu coverage smoke: pgmm union on the bernoulli design") {
  BernoulliTreatmentDgp dgp;
  dgp.beta_star = 1.0;
  dgp.gamma = 0.0;
  dgp.T = 120;
  CoverageRunConfig rc = small_run(30, 23, 2);
  rc.chain.n_draws = 600;
  rc.chain.burn_in = 500;
  rc.lambda = 10.0 * Eigen::MatrixXd::Identity(2, 2);
  const CoverageReport rep = fixed_mu_coverage(DgpSpec(dgp), CoverageMethod::kPgmmUnion, 0.5, rc);
  REQUIRE(rep.method == "pgmm_union");
  REQUIRE(rep.rates.size() == 2);
  // union intervals only over-cover relative to nominal at gamma = 0
  REQUIRE(rep.rates[1] >= 0.85);
}

TEST_CASE("prior quantile grid follows the marginal quantiles") {
  const Eigen::MatrixXd lambda = 10.0 * Eigen::MatrixXd::Identity(2, 2);
  const auto grid = pgmm::detail::prior_quantile_grid(lambda, 300, 9);
  REQUIRE(grid.size() == 9);
  // 5th point is the median = 0
  REQUIRE(grid[4].lpNorm<Eigen::Infinity>() < 1e-14);
  // first point is the 0.1 quantile of N(0, 10/300) in every component
  const double expected = normal_quantile(0.1) * std::sqrt(10.0 / 300.0);
  REQUIRE(grid[0][0] == Catch::Approx(expected));
  REQUIRE(grid[0][1] == Catch::Approx(expected));
  REQUIRE(grid[8][0] == Catch::Approx(-expected));
}
