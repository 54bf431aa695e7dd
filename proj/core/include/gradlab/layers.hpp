#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "gradlab/autodiff.hpp"
#include "gradlab/rng.hpp"
#include "gradlab/tensor.hpp"

namespace gradlab::layers {

enum class Activation { kSigmoid, kRelu, kElu };
enum class OutputKind { kLinear, kSigmoid };
enum class Mode { kTrain, kProduction };

struct ModelSpec {
  std::vector<std::size_t> layer_dims;  // input, hidden..., output
  Activation activation = Activation::kSigmoid;
  double elu_alpha = 1.0;
  double dropout_prob = 0.0;  // applied after each hidden activation
  OutputKind output_kind = OutputKind::kLinear;

  std::size_t input_dim() const { return layer_dims.front(); }
  std::size_t output_dim() const { return layer_dims.back(); }
  std::size_t layer_count() const { return layer_dims.size() - 1; }
  void validate() const;  // DomainError on bad dims or dropout_prob
};

std::string weight_name(std::size_t layer);  // "W0", "W1", ...
std::string bias_name(std::size_t layer);    // "b0", "b1", ...

/// fan_out x fan_in matrix, entries i.i.d. uniform on ±sqrt(6/(fan_in+fan_out)).
Tensor glorot_init(std::size_t fan_in, std::size_t fan_out, RngState& rng);

/// Glorot weights, zero biases, drawn in layer order.
ad::ParamMap init_mlp_params(const ModelSpec& spec, RngState& rng);

struct DropoutResult {
  Tensor output;
  Tensor mask;
};

/// Train mode: each element zeroed independently with probability p_drop,
/// no rescaling. Production mode: deterministic, output = (1-p_drop)*x,
/// rng untouched. p_drop = 0 consumes no randomness in either mode.
DropoutResult dropout_forward(const Tensor& x, double p_drop, Mode mode, RngState& rng);

/// Graph form of the above; the sampled mask enters the tape as a constant.
ad::Var dropout(ad::Var x, double p_drop, Mode mode, RngState& rng);

/// Builds the network on `tape`, pulling parameters by name (W0, b0, ...).
ad::Var mlp_forward(ad::Tape& tape, const ModelSpec& spec, ad::Var x, Mode mode, RngState& rng);

/// Value-level evaluation (runs mlp_forward on a scratch tape).
Tensor mlp_apply(const ModelSpec& spec, const ad::ParamMap& params, const Tensor& x, Mode mode,
                 RngState& rng);

struct LstmCellState {
  Tensor hidden;
  Tensor cell;
};

struct LstmVars {
  ad::Var hidden;
  ad::Var cell;
};

/// Gate parameters Wi/Wf/Wo/Wc of shape hidden x (input+hidden) acting on
/// concat(x, hidden), plus biases bi/bf/bo/bc. No peepholes.
ad::ParamMap init_lstm_params(std::size_t input_dim, std::size_t hidden_dim, RngState& rng);

/// One cell step on the tape: cell' = f.cell + i.candidate, hidden' = o.tanh(cell').
LstmVars lstm_cell(ad::Tape& tape, ad::Var x, const LstmVars& state);

/// Value-level cell step (runs lstm_cell on a scratch tape).
LstmCellState lstm_cell_apply(const ad::ParamMap& params, const Tensor& x,
                              const LstmCellState& state);

}  // namespace gradlab::layers
