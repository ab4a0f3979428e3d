#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "pgmm/pgmm.hpp"

namespace {

pgmm::json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw pgmm::ConfigError("cannot open config file: " + path);
  try {
    return pgmm::json::parse(in);
  } catch (const pgmm::json::parse_error& e) {
    throw pgmm::ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
}

// exit codes: 0 success, 2 config, 3 data, 4 numerical, 5 sampler init
int guarded(const std::function<void()>& body) {
  try {
    body();
    return 0;
  } catch (const pgmm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const pgmm::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const pgmm::InitializationError& e) {
    std::cerr << "sampler initialization error: " << e.what() << "\n";
    return 5;
  } catch (const pgmm::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 4;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pgmm: quasi-Bayesian inference for moment-condition models under misspecification priors"};
  app.require_subcommand(1);

  std::string config_path, out_dir, job_override;
  int workers = 0;

  auto* run = app.add_subcommand("run", "execute the job described by a JSON config");
  run->add_option("config", config_path, "path to config JSON")->required();
  run->add_option("--out", out_dir, "output directory (overrides config out_dir)");
  run->add_option("--workers", workers, "worker threads (default: available parallelism)");
  run->add_option("--job", job_override, "override the config's job kind");

  auto* validate = app.add_subcommand("validate", "dry-run consistency check of a JSON config");
  validate->add_option("config", config_path, "path to config JSON")->required();

  CLI11_PARSE(app, argc, argv);

  if (app.got_subcommand("validate")) {
    return guarded([&] { std::cout << pgmm::validate_config(load_json(config_path)); });
  }
  return guarded([&] {
    pgmm::run_config(load_json(config_path), out_dir, workers,
                     job_override.empty() ? std::nullopt : std::optional<std::string>(job_override));
    std::cout << "done\n";
  });
}
