#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"
#include "gradlab/errors.hpp"
#include "gradlab/experiments.hpp"

namespace {

int run_from_config(const std::string& path, bool force_gradcheck) {
  gradlab::lab::ExperimentConfig cfg = gradlab::lab::load_config(path);
  if (force_gradcheck) {
    cfg.kind = "gradcheck";
    cfg.validate();
  }
  gradlab::lab::Report report = gradlab::lab::run_experiment(cfg);
  std::printf("%s\n", report.summary.c_str());
  for (const auto& [name, value] : report.metrics)
    std::printf("  %s = %s\n", name.c_str(), gradlab::lab::format_double(value).c_str());
  std::printf("  report: %s\n", report.csv_path.c_str());
  if (!report.passed) {
    std::printf("FAIL %s\n", report.kind.c_str());
    return 1;
  }
  std::printf("PASS %s\n", report.kind.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gradlab: reverse-mode AD experiment runner"};
  app.set_version_flag("--version", "gradlab 0.1.0");

  std::string run_config;
  std::string check_config;
  CLI::App* run = app.add_subcommand("run", "run the experiment described by a JSON config");
  run->add_option("config", run_config, "path to the JSON experiment config")->required();
  CLI::App* check =
      app.add_subcommand("gradcheck", "finite-difference check of the configured model");
  check->add_option("config", check_config, "path to the JSON experiment config")->required();
  app.require_subcommand(0, 1);

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return run_from_config(run_config, false);
    if (check->parsed()) return run_from_config(check_config, true);
  } catch (const gradlab::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }

  std::printf("%s", app.help().c_str());
  return 0;
}
