#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gradlab/datasets.hpp"
#include "gradlab/neumann.hpp"
#include "gradlab/train.hpp"

namespace gradlab::lab {

// Outer-loop settings for the learning-rate tuning demo. The inner problem is
// a fixed quadratic in one weight (curvature 2), so the optimal step size is
// 1/2 and the outer trajectory can be checked against it analytically.
struct HyperoptConfig {
  int outer_steps = 10;
  double beta = 0.2;
  double eta0 = 0.1;
  int inner_steps = 8;

  void validate() const;
};

struct ExperimentConfig {
  std::string kind;
  std::uint64_t seed = 0;
  std::string output_csv = "gradlab_report.csv";

  std::optional<train::Model> model;
  std::optional<train::TrainConfig> train;
  std::optional<newton::NeumannConfig> neumann;
  std::optional<data::DatasetSpec> dataset;
  std::optional<HyperoptConfig> hyperopt;

  int depth = 20;       // depth_diag
  int mc_samples = 100000;  // neumann_mc

  void validate() const;  // throws ConfigError naming the offending field
};

// Parse a JSON experiment description. Errors carry the dotted field path.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);

struct Report {
  std::string kind;
  bool passed = false;
  std::string csv_path;
  std::string summary;
  // Named scalar results in emission order, echoed by the CLI.
  std::vector<std::pair<std::string, double>> metrics;
};

Report run_experiment(const ExperimentConfig& cfg);

Report run_gradcheck(const ExperimentConfig& cfg);
Report run_commute(const ExperimentConfig& cfg);
Report run_neumann_mc(const ExperimentConfig& cfg);
Report run_revlearn_equiv(const ExperimentConfig& cfg);
Report run_hyperopt(const ExperimentConfig& cfg);
Report run_depth_diag(const ExperimentConfig& cfg);
Report run_earlystop_demo(const ExperimentConfig& cfg);
Report run_newton_vs_sgd(const ExperimentConfig& cfg);

// Shortest round-trip decimal form, independent of locale and stream state.
// Reruns of the same experiment produce byte-identical CSV because every
// number goes through here.
std::string format_double(double v);

}  // namespace gradlab::lab
