#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "gradlab/autodiff.hpp"
#include "gradlab/layers.hpp"
#include "gradlab/rng.hpp"

namespace gradlab::train {

struct Dataset {
  std::vector<Tensor> inputs;
  std::vector<Tensor> targets;

  std::size_t size() const { return inputs.size(); }
  void validate() const;  // equal lengths, at least one example
};

enum class LossKind { kSquaredError, kBinaryCrossEntropy };

struct Model {
  layers::ModelSpec spec;
  LossKind loss = LossKind::kSquaredError;
};

struct EarlyStopConfig {
  int patience = 10;
  double min_delta = 0.0;
};

struct TrainConfig {
  double eta = 0.1;
  std::size_t batch_size = 1;
  std::optional<double> clip_threshold;
  int max_epochs = 100;
  std::optional<EarlyStopConfig> early_stop;
  std::uint64_t seed = 0;
  void validate() const;
};

/// Per-example loss as tape nodes; parameters are pulled by name, the example
/// enters as constants. Cross-entropy clamps probabilities to [1e-12, 1-1e-12].
ad::Var example_loss(ad::Tape& tape, const Model& model, const Tensor& x, const Tensor& y,
                     layers::Mode mode, RngState& rng);

/// Mean loss over the index set, summed in index order then divided once.
ad::Var batch_loss(ad::Tape& tape, const Model& model, const Dataset& data,
                   const std::vector<std::uint32_t>& idx, layers::Mode mode, RngState& rng);

/// Program building the mean production-mode loss over a fixed index set.
ad::ProgramFn batch_loss_program(const Model& model, const Dataset& data,
                                 std::vector<std::uint32_t> idx);

/// Program building the mean production-mode loss over the whole dataset.
ad::ProgramFn dataset_loss_program(const Model& model, const Dataset& data);

double loss_mean(const Model& model, const ad::ParamMap& params, const Dataset& batch);

/// Gradient of the batch-mean loss: one tape, one reverse sweep.
ad::Gradient grad_of_mean(const Model& model, const ad::ParamMap& params, const Dataset& data,
                          const std::vector<std::uint32_t>& idx);

/// Mean of per-example gradients: one tape per example, averaged in index
/// order. Agrees with grad_of_mean to ~1e-12; the two routes are kept as
/// independent implementations of the same quantity.
ad::Gradient grad_mean(const Model& model, const ad::ParamMap& params, const Dataset& batch);

/// Fisher-Yates shuffle of [0, n) followed by contiguous blocks of
/// batch_size; a final short block is kept.
std::vector<std::vector<std::uint32_t>> epoch_schedule(std::size_t n, std::size_t batch_size,
                                                       RngState& rng);

/// Componentwise sign(g)*min(|g|, threshold). Threshold must be positive.
ad::Gradient clip_gradient(const ad::Gradient& g, double threshold);

/// w - eta*g for every parameter.
ad::ParamMap sgd_step(const ad::ParamMap& params, const ad::Gradient& g, double eta);

struct StopState {
  double best_val_loss = std::numeric_limits<double>::infinity();
  ad::ParamMap best_params;
  int evals_since_improvement = 0;
};

/// Records a new best when val_loss < best - min_delta; otherwise counts the
/// miss. Returns true once the miss count reaches cfg.patience.
bool early_stop_update(StopState& state, double val_loss, const ad::ParamMap& params,
                       const EarlyStopConfig& cfg);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  ad::ParamMap params;
  std::vector<EpochRecord> history;
  bool stopped_early = false;
  int epochs_run = 0;
};

/// Minibatched SGD, reproducible from cfg.seed (which drives initialization,
/// shuffling, and dropout via disjoint substreams). With early stopping
/// configured the returned params are the best-validation snapshot.
TrainResult train(const Model& model, const Dataset& data_train, const Dataset& data_val,
                  const TrainConfig& cfg);

}  // namespace gradlab::train
