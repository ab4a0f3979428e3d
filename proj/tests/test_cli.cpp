#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "pgmm/runner.hpp"

using namespace pgmm;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json toy_sample_config(const std::string& out) {
  json cfg;
  cfg["job"] = "sample";
  cfg["seed"] = 20240501;
  cfg["out_dir"] = out;
  cfg["workers"] = 1;
  cfg["data"] = {{"dgp", {{"family", "linear_iv_lognormal"}, {"theta_star", 0.4}, {"gamma", 0.1}, {"T", 150}}}};
  cfg["model"] = {{"type", "linear_iv"},
                  {"outcome", "Y"},
                  {"endogenous", {"X"}},
                  {"instruments", {"D"}},
                  {"intercept", false},
                  {"theta_box", {{"lo", {-10.0}}, {"hi", {10.0}}}}};
  cfg["mu_prior"] = {{"family", "dogmatic"}, {"mu0", {0.0}}};
  cfg["theta_prior"] = {{"family", "flat"}};
  cfg["weighting"] = {{"scheme", "cue"}};
  cfg["chain"] = {{"n_draws", 1200}, {"burn_in", 600}, {"thin", 2}};
  cfg["alpha"] = 0.05;
  return cfg;
}

}  // namespace

TEST_CASE("validate reports resolved defaults for a good config") {
  const std::string report = validate_config(toy_sample_config("/tmp/pgmm_cli_v"));
  REQUIRE(report.rfind("ok:", 0) == 0);
  REQUIRE(report.find("\"n_draws\": 1200") != std::string::npos);
  REQUIRE(report.find("\"target_accept\"") != std::string::npos);  // default materialized
}

TEST_CASE("validate rejects q < k") {
  json cfg = toy_sample_config("/tmp/pgmm_cli_qk");
  cfg["model"]["endogenous"] = {"X", "D"};
  cfg["model"]["instruments"] = json::array();
  cfg["model"]["theta_box"] = {{"lo", {-1.0, -1.0}}, {"hi", {1.0, 1.0}}};
  REQUIRE_THROWS_WITH(validate_config(cfg), Catch::Matchers::ContainsSubstring("q >= k"));
}

TEST_CASE("validate rejects a mu prior with the wrong dimension") {
  json cfg = toy_sample_config("/tmp/pgmm_cli_dim");
  cfg["mu_prior"] = {{"family", "dogmatic"}, {"mu0", {0.0, 0.0}}};
  REQUIRE_THROWS_AS(validate_config(cfg), ConfigError);
}

TEST_CASE("validate rejects missing seed and unknown jobs") {
  json cfg = toy_sample_config("/tmp/pgmm_cli_seed");
  cfg.erase("seed");
  REQUIRE_THROWS_AS(validate_config(cfg), ConfigError);
  json cfg2 = toy_sample_config("/tmp/pgmm_cli_job");
  cfg2["job"] = "fly";
  REQUIRE_THROWS_AS(validate_config(cfg2), ConfigError);
}

TEST_CASE("sample job writes draws with constant mu columns under a dogmatic prior") {
  const std::string out = "/tmp/pgmm_cli_run1";
  std::filesystem::remove_all(out);
  run_config(toy_sample_config(out));
  const std::string draws = slurp(out + "/draws.csv");
  REQUIRE(draws.rfind("iteration,theta_1,mu_1,log_post", 0) == 0);
  // every mu cell is exactly 0
  std::istringstream lines(draws);
  std::string line;
  std::getline(lines, line);
  int rows = 0;
  while (std::getline(lines, line)) {
    const auto first = line.find(',');
    const auto second = line.find(',', first + 1);
    const auto third = line.find(',', second + 1);
    REQUIRE(line.substr(second + 1, third - second - 1) == "0");
    ++rows;
  }
  REQUIRE(rows == 1200);
  REQUIRE(std::filesystem::exists(out + "/summary.json"));
  REQUIRE(std::filesystem::exists(out + "/config_resolved.json"));
}

TEST_CASE("reruns with the same seed are bit-identical") {
  const std::string out_a = "/tmp/pgmm_cli_det_a", out_b = "/tmp/pgmm_cli_det_b";
  std::filesystem::remove_all(out_a);
  std::filesystem::remove_all(out_b);
  run_config(toy_sample_config(out_a));
  run_config(toy_sample_config(out_b));
  REQUIRE(slurp(out_a + "/draws.csv") == slurp(out_b + "/draws.csv"));
  json changed = toy_sample_config(out_b);
  changed["seed"] = 999;
  std::filesystem::remove_all(out_b);
  run_config(changed);
  REQUIRE(slurp(out_a + "/draws.csv") != slurp(out_b + "/draws.csv"));
}

TEST_CASE("local-approx job recovers the closed-form IV coefficient") {
  json cfg = toy_sample_config("/tmp/pgmm_cli_local");
  cfg["job"] = "local-approx";
  cfg["data"]["dgp"]["T"] = 800;
  cfg["data"]["dgp"]["gamma"] = 0.0;
  cfg["local"] = {{"lambda_scale", 1e-8}};
  std::filesystem::remove_all("/tmp/pgmm_cli_local");
  run_config(cfg);
  const json out = json::parse(slurp("/tmp/pgmm_cli_local/local_approx.json"));
  // closed form from the simulated data (same seed derivation as the runner)
  const Dataset data = simulate(parse_dgp(cfg["data"]["dgp"]), seeds::data(20240501));
  const double closed_form =
      data.column("D").dot(data.column("Y")) / data.column("D").dot(data.column("X"));
  REQUIRE(out["theta_hat"][0].get<double>() == Catch::Approx(closed_form).margin(1e-4));
}

TEST_CASE("union-ci job writes per-mu breakdown") {
  json cfg = toy_sample_config("/tmp/pgmm_cli_union");
  cfg["job"] = "union-ci";
  cfg["chain"] = {{"n_draws", 800}, {"burn_in", 400}, {"thin", 2}};
  cfg["union"] = {{"mu_grid", {{-0.2}, {0.0}, {0.2}}}, {"per_mu_method", "t3"}};
  std::filesystem::remove_all("/tmp/pgmm_cli_union");
  run_config(cfg);
  const json out = json::parse(slurp("/tmp/pgmm_cli_union/union_ci.json"));
  REQUIRE(out["per_mu"].size() == 3);
  REQUIRE(out["lo"].get<double>() <= out["per_mu"][1]["lo"].get<double>());
  REQUIRE(out["hi"].get<double>() >= out["per_mu"][1]["hi"].get<double>());
}

TEST_CASE("hpd-summary job consumes a draws file") {
  const std::string out = "/tmp/pgmm_cli_run1";  // produced by the sample-job test
  if (!std::filesystem::exists(out + "/draws.csv")) run_config(toy_sample_config(out));
  json cfg;
  cfg["job"] = "hpd-summary";
  cfg["seed"] = 1;
  cfg["out_dir"] = "/tmp/pgmm_cli_hpd";
  cfg["draws_csv"] = out + "/draws.csv";
  cfg["alpha"] = 0.1;
  std::filesystem::remove_all("/tmp/pgmm_cli_hpd");
  run_config(cfg);
  const json res = json::parse(slurp("/tmp/pgmm_cli_hpd/hpd_summary.json"));
  REQUIRE(res["hpd"].size() >= 1);
  REQUIRE(res["hpd"][0]["level"].get<double>() == Catch::Approx(0.9));
}

TEST_CASE("coverage-sim job emits table files") {
  json cfg;
  cfg["job"] = "coverage-sim";
  cfg["seed"] = 314;
  cfg["out_dir"] = "/tmp/pgmm_cli_cov";
  cfg["workers"] = 2;
  cfg["alpha"] = 0.05;
  cfg["dgp"] = {{"family", "linear_iv_lognormal"}, {"theta_star", 0.2}, {"gamma", 0.0}, {"T", 100}};
  cfg["coverage"] = {{"kind", "fixed-mu"},
                     {"method", "ch"},
                     {"tau", 0.5},
                     {"n_reps", 20},
                     {"chain", {{"n_draws", 500}, {"burn_in", 400}, {"thin", 2}}},
                     {"theta_box", {{"lo", {-8.0}}, {"hi", {8.0}}}}};
  std::filesystem::remove_all("/tmp/pgmm_cli_cov");
  run_config(cfg);
  REQUIRE(std::filesystem::exists("/tmp/pgmm_cli_cov/coverage.csv"));
  REQUIRE(std::filesystem::exists("/tmp/pgmm_cli_cov/coverage.md"));
  const json res = json::parse(slurp("/tmp/pgmm_cli_cov/coverage.json"));
  REQUIRE(res["rates"].size() == 1);
  REQUIRE(res["n_reps"].get<int>() >= 19);
}

TEST_CASE("data errors carry their own type") {
  json cfg = toy_sample_config("/tmp/pgmm_cli_data");
  cfg["data"] = {{"csv", "/tmp/pgmm_definitely_missing.csv"}};
  REQUIRE_THROWS_AS(run_config(cfg), DataError);
}
