#include "gradlab/layers.hpp"

#include <cmath>

namespace gradlab::layers {

void ModelSpec::validate() const {
  if (layer_dims.size() < 2) {
    throw DomainError("ModelSpec: need at least input and output dims, got " +
                      std::to_string(layer_dims.size()));
  }
  for (std::size_t d : layer_dims) {
    if (d < 1) throw DomainError("ModelSpec: every layer dim must be >= 1");
  }
  if (!(dropout_prob >= 0.0 && dropout_prob < 1.0)) {
    throw DomainError("ModelSpec: dropout_prob must lie in [0, 1), got " +
                      std::to_string(dropout_prob));
  }
}

std::string weight_name(std::size_t layer) { return "W" + std::to_string(layer); }
std::string bias_name(std::size_t layer) { return "b" + std::to_string(layer); }

Tensor glorot_init(std::size_t fan_in, std::size_t fan_out, RngState& rng) {
  if (fan_in < 1 || fan_out < 1) {
    throw DomainError("glorot_init: fans must be positive, got fan_in=" + std::to_string(fan_in) +
                      " fan_out=" + std::to_string(fan_out));
  }
  double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor w = Tensor::zeros({fan_out, fan_in});
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = draw_uniform(rng, -bound, bound);
  return w;
}

ad::ParamMap init_mlp_params(const ModelSpec& spec, RngState& rng) {
  spec.validate();
  ad::ParamMap params;
  for (std::size_t l = 0; l + 1 < spec.layer_dims.size(); ++l) {
    params.emplace(weight_name(l), glorot_init(spec.layer_dims[l], spec.layer_dims[l + 1], rng));
    params.emplace(bias_name(l), Tensor::zeros({spec.layer_dims[l + 1]}));
  }
  return params;
}

namespace {

void check_p_drop(double p_drop) {
  if (!(p_drop >= 0.0 && p_drop < 1.0)) {
    throw DomainError("dropout: p_drop must lie in [0, 1), got " + std::to_string(p_drop));
  }
}

Tensor sample_mask(const std::vector<std::size_t>& shape, std::size_t n, double p_drop,
                   RngState& rng) {
  Tensor mask = Tensor::ones(shape);
  for (std::size_t i = 0; i < n; ++i) {
    if (draw_uniform(rng, 0.0, 1.0) < p_drop) mask[i] = 0.0;
  }
  return mask;
}

ad::Var apply_activation(ad::Var z, const ModelSpec& spec) {
  switch (spec.activation) {
    case Activation::kSigmoid:
      return ad::sigmoid(z);
    case Activation::kRelu:
      return ad::relu(z);
    case Activation::kElu:
      return ad::elu(z, spec.elu_alpha);
  }
  throw ContractError("unknown activation");
}

}  // namespace

DropoutResult dropout_forward(const Tensor& x, double p_drop, Mode mode, RngState& rng) {
  check_p_drop(p_drop);
  if (mode == Mode::kProduction) {
    return {p_drop == 0.0 ? x : scale(x, 1.0 - p_drop), Tensor::ones(x.shape())};
  }
  if (p_drop == 0.0) return {x, Tensor::ones(x.shape())};
  Tensor mask = sample_mask(x.shape(), x.size(), p_drop, rng);
  return {mul(x, mask), mask};
}

ad::Var dropout(ad::Var x, double p_drop, Mode mode, RngState& rng) {
  check_p_drop(p_drop);
  if (p_drop == 0.0) return x;
  ad::Tape& tape = *x.tape;
  if (mode == Mode::kProduction) {
    return ad::mul(x, tape.scalar(1.0 - p_drop));
  }
  Tensor mask = sample_mask(x.value().shape(), x.value().size(), p_drop, rng);
  return ad::mul(x, tape.constant(std::move(mask)));
}

ad::Var mlp_forward(ad::Tape& tape, const ModelSpec& spec, ad::Var x, Mode mode, RngState& rng) {
  spec.validate();
  if (x.value().rank() != 1 || x.value().size() != spec.input_dim()) {
    throw DimensionError("mlp_forward: input shape " + x.value().shape_str() +
                         " does not match input dim " + std::to_string(spec.input_dim()));
  }
  ad::Var h = x;
  const std::size_t layers = spec.layer_count();
  for (std::size_t l = 0; l < layers; ++l) {
    ad::Var w = tape.param(weight_name(l));
    ad::Var b = tape.param(bias_name(l));
    ad::Var z = ad::add(ad::matmul(w, h), b);
    if (l + 1 < layers) {
      h = dropout(apply_activation(z, spec), spec.dropout_prob, mode, rng);
    } else {
      h = spec.output_kind == OutputKind::kSigmoid ? ad::sigmoid(z) : z;
    }
  }
  return h;
}

Tensor mlp_apply(const ModelSpec& spec, const ad::ParamMap& params, const Tensor& x, Mode mode,
                 RngState& rng) {
  ad::Tape tape;
  for (const auto& [name, value] : params) tape.param(name, value);
  ad::Var out = mlp_forward(tape, spec, tape.constant(x), mode, rng);
  return out.value();
}

ad::ParamMap init_lstm_params(std::size_t input_dim, std::size_t hidden_dim, RngState& rng) {
  if (input_dim < 1 || hidden_dim < 1) {
    throw DomainError("init_lstm_params: dims must be positive");
  }
  ad::ParamMap params;
  for (const char* gate : {"i", "f", "o", "c"}) {
    params.emplace(std::string("W") + gate, glorot_init(input_dim + hidden_dim, hidden_dim, rng));
    params.emplace(std::string("b") + gate, Tensor::zeros({hidden_dim}));
  }
  return params;
}

LstmVars lstm_cell(ad::Tape& tape, ad::Var x, const LstmVars& state) {
  if (state.hidden.value().size() != state.cell.value().size()) {
    throw DimensionError("lstm_cell: hidden " + state.hidden.value().shape_str() +
                         " and cell " + state.cell.value().shape_str() + " lengths differ");
  }
  ad::Var xs = ad::concat(x, state.hidden);
  auto gate = [&](const char* w, const char* b) {
    return ad::add(ad::matmul(tape.param(w), xs), tape.param(b));
  };
  ad::Var i = ad::sigmoid(gate("Wi", "bi"));
  ad::Var f = ad::sigmoid(gate("Wf", "bf"));
  ad::Var o = ad::sigmoid(gate("Wo", "bo"));
  ad::Var candidate = ad::tanh(gate("Wc", "bc"));
  ad::Var cell = ad::add(ad::mul(f, state.cell), ad::mul(i, candidate));
  ad::Var hidden = ad::mul(o, ad::tanh(cell));
  return {hidden, cell};
}

LstmCellState lstm_cell_apply(const ad::ParamMap& params, const Tensor& x,
                              const LstmCellState& state) {
  ad::Tape tape;
  for (const auto& [name, value] : params) tape.param(name, value);
  LstmVars out = lstm_cell(tape, tape.constant(x),
                           {tape.constant(state.hidden), tape.constant(state.cell)});
  return {out.hidden.value(), out.cell.value()};
}

}  // namespace gradlab::layers
