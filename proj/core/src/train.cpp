#include "gradlab/train.hpp"

#include <cmath>

namespace gradlab::train {

namespace {
constexpr double kProbEps = 1e-12;
}

void Dataset::validate() const {
  if (inputs.size() != targets.size()) {
    throw DimensionError("Dataset: " + std::to_string(inputs.size()) + " inputs vs " +
                         std::to_string(targets.size()) + " targets");
  }
  if (inputs.empty()) throw DomainError("Dataset: needs at least one example");
}

void TrainConfig::validate() const {
  if (!(eta > 0.0)) throw DomainError("TrainConfig: eta must be positive");
  if (batch_size < 1) throw DomainError("TrainConfig: batch_size must be >= 1");
  if (clip_threshold && !(*clip_threshold > 0.0)) {
    throw DomainError("TrainConfig: clip_threshold must be positive");
  }
  if (max_epochs < 1) throw DomainError("TrainConfig: max_epochs must be >= 1");
  if (early_stop && early_stop->patience < 1) {
    throw DomainError("TrainConfig: early-stop patience must be >= 1");
  }
}

ad::Var example_loss(ad::Tape& tape, const Model& model, const Tensor& x, const Tensor& y,
                     layers::Mode mode, RngState& rng) {
  ad::Var out = layers::mlp_forward(tape, model.spec, tape.constant(x), mode, rng);
  ad::Var target = tape.constant(y);
  switch (model.loss) {
    case LossKind::kSquaredError: {
      ad::Var e = ad::sub(out, target);
      return ad::mul(tape.scalar(0.5), ad::reduce_sum(ad::mul(e, e)));
    }
    case LossKind::kBinaryCrossEntropy: {
      ad::Var one = tape.scalar(1.0);
      ad::Var p = ad::max_scalar(ad::min_scalar(out, 1.0 - kProbEps), kProbEps);
      ad::Var hit = ad::mul(target, ad::log(p));
      ad::Var miss = ad::mul(ad::sub(one, target), ad::log(ad::sub(one, p)));
      return ad::sub(tape.scalar(0.0), ad::reduce_sum(ad::add(hit, miss)));
    }
  }
  throw ContractError("unknown loss kind");
}

ad::Var batch_loss(ad::Tape& tape, const Model& model, const Dataset& data,
                   const std::vector<std::uint32_t>& idx, layers::Mode mode, RngState& rng) {
  data.validate();
  if (idx.empty()) throw DomainError("batch_loss: empty batch");
  ad::Var acc{};
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] >= data.size()) {
      throw DomainError("batch_loss: example index " + std::to_string(idx[k]) +
                        " out of range for dataset of " + std::to_string(data.size()));
    }
    ad::Var term = example_loss(tape, model, data.inputs[idx[k]], data.targets[idx[k]], mode, rng);
    acc = (k == 0) ? term : ad::add(acc, term);
  }
  return ad::div(acc, tape.scalar(static_cast<double>(idx.size())));
}

namespace {

std::vector<std::uint32_t> all_indices(std::size_t n) {
  std::vector<std::uint32_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<std::uint32_t>(i);
  return idx;
}

}  // namespace

ad::ProgramFn batch_loss_program(const Model& model, const Dataset& data,
                                 std::vector<std::uint32_t> idx) {
  return [model, data, idx = std::move(idx)](ad::Tape& tape) {
    RngState unused{};
    return batch_loss(tape, model, data, idx, layers::Mode::kProduction, unused);
  };
}

ad::ProgramFn dataset_loss_program(const Model& model, const Dataset& data) {
  return batch_loss_program(model, data, all_indices(data.size()));
}

double loss_mean(const Model& model, const ad::ParamMap& params, const Dataset& batch) {
  return ad::eval_value(dataset_loss_program(model, batch), params, {});
}

ad::Gradient grad_of_mean(const Model& model, const ad::ParamMap& params, const Dataset& data,
                          const std::vector<std::uint32_t>& idx) {
  return ad::grad(batch_loss_program(model, data, idx), params, {});
}

ad::Gradient grad_mean(const Model& model, const ad::ParamMap& params, const Dataset& batch) {
  batch.validate();
  const std::size_t n = batch.size();
  ad::Gradient acc;
  for (std::size_t p = 0; p < n; ++p) {
    auto prog = [&](ad::Tape& tape) {
      RngState unused{};
      return example_loss(tape, model, batch.inputs[p], batch.targets[p],
                          layers::Mode::kProduction, unused);
    };
    ad::Gradient g = ad::grad(prog, params, {});
    if (p == 0) {
      acc = std::move(g);
    } else {
      for (auto& [name, t] : acc.by_parameter) t = add(t, g.by_parameter.at(name));
    }
  }
  Tensor divisor = Tensor::scalar(static_cast<double>(n));
  for (auto& [name, t] : acc.by_parameter) t = div(t, divisor);
  return acc;
}

std::vector<std::vector<std::uint32_t>> epoch_schedule(std::size_t n, std::size_t batch_size,
                                                       RngState& rng) {
  if (n < 1) throw DomainError("epoch_schedule: empty dataset");
  if (batch_size < 1) throw DomainError("epoch_schedule: batch_size must be >= 1");
  std::vector<std::uint32_t> perm = all_indices(n);
  for (std::size_t i = n - 1; i > 0; --i) {
    std::size_t j = static_cast<std::size_t>(draw_below(rng, i + 1));
    std::swap(perm[i], perm[j]);
  }
  std::vector<std::vector<std::uint32_t>> blocks;
  for (std::size_t start = 0; start < n; start += batch_size) {
    std::size_t end = std::min(start + batch_size, n);
    blocks.emplace_back(perm.begin() + start, perm.begin() + end);
  }
  return blocks;
}

ad::Gradient clip_gradient(const ad::Gradient& g, double threshold) {
  if (!(threshold > 0.0)) throw DomainError("clip_gradient: threshold must be positive");
  ad::Gradient out = g;
  for (auto& [name, t] : out.by_parameter) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      double v = t[i];
      t[i] = std::copysign(std::min(std::abs(v), threshold), v);
    }
  }
  return out;
}

ad::ParamMap sgd_step(const ad::ParamMap& params, const ad::Gradient& g, double eta) {
  ad::ParamMap out;
  for (const auto& [name, w] : params) {
    auto it = g.by_parameter.find(name);
    if (it == g.by_parameter.end()) {
      throw CompositionError("sgd_step: gradient missing parameter '" + name + "'");
    }
    out.emplace(name, axpy(w, -eta, it->second));
  }
  return out;
}

bool early_stop_update(StopState& state, double val_loss, const ad::ParamMap& params,
                       const EarlyStopConfig& cfg) {
  if (val_loss < state.best_val_loss - cfg.min_delta) {
    state.best_val_loss = val_loss;
    state.best_params = params;
    state.evals_since_improvement = 0;
    return false;
  }
  state.evals_since_improvement += 1;
  return state.evals_since_improvement >= cfg.patience;
}

TrainResult train(const Model& model, const Dataset& data_train, const Dataset& data_val,
                  const TrainConfig& cfg) {
  model.spec.validate();
  cfg.validate();
  data_train.validate();
  data_val.validate();

  RngState init_rng = RngState{cfg.seed}.substream(0);
  RngState shuffle_rng = RngState{cfg.seed}.substream(1);
  RngState dropout_rng = RngState{cfg.seed}.substream(2);

  ad::ParamMap params = layers::init_mlp_params(model.spec, init_rng);
  StopState stop;
  TrainResult result;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    auto schedule = epoch_schedule(data_train.size(), cfg.batch_size, shuffle_rng);
    for (const auto& idx : schedule) {
      auto prog = [&](ad::Tape& tape) {
        return batch_loss(tape, model, data_train, idx, layers::Mode::kTrain, dropout_rng);
      };
      ad::Gradient g = ad::grad(prog, params, {});
      if (cfg.clip_threshold) g = clip_gradient(g, *cfg.clip_threshold);
      params = sgd_step(params, g, cfg.eta);
    }
    double train_loss = loss_mean(model, params, data_train);
    double val_loss = loss_mean(model, params, data_val);
    result.history.push_back({epoch, train_loss, val_loss});
    result.epochs_run = epoch + 1;
    if (cfg.early_stop && early_stop_update(stop, val_loss, params, *cfg.early_stop)) {
      result.stopped_early = true;
      break;
    }
  }

  result.params = cfg.early_stop ? stop.best_params : params;
  return result;
}

}  // namespace gradlab::train
