#include "gradlab/autodiff.hpp"

#include <utility>

namespace gradlab::ad {

namespace {

bool is_leaf(Op op) { return op == Op::kConstant || op == Op::kParam || op == Op::kInput; }

Tensor compute_value(const Tape& t, const TapeNode& n) {
  auto A = [&]() -> const Tensor& { return t.value_of(n.a); };
  auto B = [&]() -> const Tensor& { return t.value_of(n.b); };
  switch (n.op) {
    case Op::kConstant:
    case Op::kParam:
    case Op::kInput:
      return n.value;
    case Op::kAdd:
      return gradlab::add(A(), B());
    case Op::kSub:
      return gradlab::sub(A(), B());
    case Op::kMul:
      return gradlab::mul(A(), B());
    case Op::kDiv:
      return gradlab::div(A(), B());
    case Op::kMatMul:
      return gradlab::matmul(A(), B());
    case Op::kTranspose:
      return gradlab::transpose(A());
    case Op::kReshape:
      return gradlab::reshape(A(), n.shape_attr);
    case Op::kConcat:
      return gradlab::concat(A(), B());
    case Op::kSlice:
      return gradlab::slice(A(), n.i0, n.i1);
    case Op::kPad:
      return gradlab::pad_embed(A(), n.i0, n.i1);
    case Op::kReduceSum:
      return gradlab::reduce_sum(A());
    case Op::kReduceMean:
      return gradlab::reduce_mean(A());
    case Op::kExp:
      return gradlab::exp(A());
    case Op::kLog:
      return gradlab::log(A());
    case Op::kMaxScalar:
      return gradlab::max_scalar(A(), n.attr);
    case Op::kMinScalar:
      return gradlab::min_scalar(A(), n.attr);
    case Op::kStepGt:
      return gradlab::step_gt(A(), n.attr);
    case Op::kStepLt:
      return gradlab::step_lt(A(), n.attr);
    case Op::kSigmoid:
      return gradlab::sigmoid(A());
    case Op::kTanh:
      return gradlab::tanh(A());
    case Op::kElu:
      return gradlab::elu(A(), n.attr);
  }
  throw ContractError("compute_value: unknown op");
}

Tape& tape_of(Var a, const char* op) {
  if (a.tape == nullptr) throw CompositionError(std::string(op) + ": unbound var");
  return *a.tape;
}

Tape& tape_of(Var a, Var b, const char* op) {
  if (a.tape == nullptr || a.tape != b.tape) {
    throw CompositionError(std::string(op) + ": operands belong to different tapes");
  }
  return *a.tape;
}

Var unary(Op op, Var a, const char* name, double attr = 0.0) {
  Tape& t = tape_of(a, name);
  TapeNode n;
  n.op = op;
  n.a = a.id;
  n.attr = attr;
  return t.emit(std::move(n));
}

Var binary(Op op, Var a, Var b, const char* name) {
  Tape& t = tape_of(a, b, name);
  TapeNode n;
  n.op = op;
  n.a = a.id;
  n.b = b.id;
  return t.emit(std::move(n));
}

}  // namespace

const Tensor& Var::value() const {
  if (tape == nullptr) throw CompositionError("Var::value: unbound var");
  return tape->value_of(id);
}

Var Tape::constant(Tensor v) {
  TapeNode n;
  n.op = Op::kConstant;
  n.value = std::move(v);
  return emit(std::move(n));
}

Var Tape::param(const std::string& name, Tensor v) {
  if (param_ids_.count(name) || input_ids_.count(name)) {
    throw CompositionError("name '" + name + "' already bound on this tape");
  }
  TapeNode n;
  n.op = Op::kParam;
  n.value = std::move(v);
  Var r = emit(std::move(n));
  param_ids_.emplace(name, r.id);
  return r;
}

Var Tape::param(const std::string& name) {
  auto it = param_ids_.find(name);
  if (it != param_ids_.end()) return Var{this, it->second};
  if (staged_params_ != nullptr) {
    auto s = staged_params_->find(name);
    if (s != staged_params_->end()) return param(name, s->second);
  }
  throw CompositionError("unbound parameter '" + name + "'");
}

Var Tape::input(const std::string& name, Tensor v) {
  if (param_ids_.count(name) || input_ids_.count(name)) {
    throw CompositionError("name '" + name + "' already bound on this tape");
  }
  TapeNode n;
  n.op = Op::kInput;
  n.value = std::move(v);
  Var r = emit(std::move(n));
  input_ids_.emplace(name, r.id);
  return r;
}

Var Tape::input(const std::string& name) {
  auto it = input_ids_.find(name);
  if (it != input_ids_.end()) return Var{this, it->second};
  if (staged_inputs_ != nullptr) {
    auto s = staged_inputs_->find(name);
    if (s != staged_inputs_->end()) return input(name, s->second);
  }
  throw CompositionError("unbound input '" + name + "'");
}

void Tape::set_param(const std::string& name, Tensor v) {
  auto it = param_ids_.find(name);
  if (it == param_ids_.end()) throw CompositionError("set_param: unknown parameter '" + name + "'");
  if (!nodes_[it->second].value.same_shape(v)) {
    throw DimensionError("set_param('" + name + "'): shape " + v.shape_str() +
                         " does not match bound shape " + nodes_[it->second].value.shape_str());
  }
  nodes_[it->second].value = std::move(v);
}

void Tape::set_input(const std::string& name, Tensor v) {
  auto it = input_ids_.find(name);
  if (it == input_ids_.end()) throw CompositionError("set_input: unknown input '" + name + "'");
  if (!nodes_[it->second].value.same_shape(v)) {
    throw DimensionError("set_input('" + name + "'): shape " + v.shape_str() +
                         " does not match bound shape " + nodes_[it->second].value.shape_str());
  }
  nodes_[it->second].value = std::move(v);
}

void Tape::replay() {
  for (TapeNode& n : nodes_) {
    if (!is_leaf(n.op)) n.value = compute_value(*this, n);
  }
}

Var Tape::emit(TapeNode n) {
  if (!is_leaf(n.op)) n.value = compute_value(*this, n);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

void Tape::set_output(Var v) {
  if (v.tape != this) throw CompositionError("set_output: var from a different tape");
  output_id_ = v.id;
  has_output_ = true;
}

Var Tape::output() {
  if (!has_output_) throw ContractError("tape has no recorded output");
  return Var{this, output_id_};
}

Var add(Var a, Var b) { return binary(Op::kAdd, a, b, "add"); }
Var sub(Var a, Var b) { return binary(Op::kSub, a, b, "sub"); }
Var mul(Var a, Var b) { return binary(Op::kMul, a, b, "mul"); }
Var div(Var a, Var b) { return binary(Op::kDiv, a, b, "div"); }
Var matmul(Var a, Var b) { return binary(Op::kMatMul, a, b, "matmul"); }
Var transpose(Var a) { return unary(Op::kTranspose, a, "transpose"); }

Var reshape(Var a, std::vector<std::size_t> shape) {
  Tape& t = tape_of(a, "reshape");
  TapeNode n;
  n.op = Op::kReshape;
  n.a = a.id;
  n.shape_attr = std::move(shape);
  return t.emit(std::move(n));
}

Var concat(Var a, Var b) { return binary(Op::kConcat, a, b, "concat"); }

Var slice(Var a, std::size_t start, std::size_t len) {
  Tape& t = tape_of(a, "slice");
  TapeNode n;
  n.op = Op::kSlice;
  n.a = a.id;
  n.i0 = start;
  n.i1 = len;
  return t.emit(std::move(n));
}

Var pad_embed(Var a, std::size_t start, std::size_t total) {
  Tape& t = tape_of(a, "pad_embed");
  TapeNode n;
  n.op = Op::kPad;
  n.a = a.id;
  n.i0 = start;
  n.i1 = total;
  return t.emit(std::move(n));
}

Var reduce_sum(Var a) { return unary(Op::kReduceSum, a, "reduce_sum"); }
Var reduce_mean(Var a) { return unary(Op::kReduceMean, a, "reduce_mean"); }
Var exp(Var a) { return unary(Op::kExp, a, "exp"); }
Var log(Var a) { return unary(Op::kLog, a, "log"); }
Var sigmoid(Var a) { return unary(Op::kSigmoid, a, "sigmoid"); }
Var tanh(Var a) { return unary(Op::kTanh, a, "tanh"); }
Var elu(Var a, double alpha) { return unary(Op::kElu, a, "elu", alpha); }
Var max_scalar(Var a, double c) { return unary(Op::kMaxScalar, a, "max_scalar", c); }
Var min_scalar(Var a, double c) { return unary(Op::kMinScalar, a, "min_scalar", c); }
Var step_gt(Var a, double c) { return unary(Op::kStepGt, a, "step_gt", c); }
Var step_lt(Var a, double c) { return unary(Op::kStepLt, a, "step_lt", c); }
Var relu(Var a) { return max_scalar(a, 0.0); }

std::vector<Var> emit_adjoints(Tape& tape, Var output, Var seed,
                               const std::vector<std::uint32_t>& wrt) {
  if (output.tape != &tape || seed.tape != &tape) {
    throw CompositionError("emit_adjoints: vars from a different tape");
  }
  if (!seed.value().same_shape(output.value())) {
    throw DimensionError("emit_adjoints: seed shape " + seed.value().shape_str() +
                         " does not match output shape " + output.value().shape_str());
  }

  const std::uint32_t n = output.id + 1;
  std::vector<std::uint32_t> adj(n, kNoOperand);
  adj[output.id] = seed.id;

  auto var_of = [&tape](std::uint32_t id) { return Var{&tape, id}; };
  auto accum = [&](std::uint32_t target, Var contrib) {
    if (adj[target] == kNoOperand) {
      adj[target] = contrib.id;
    } else {
      adj[target] = add(var_of(adj[target]), contrib).id;
    }
  };
  // Rank-0 operands broadcast forward, so their adjoints gather backward.
  auto collapse = [&](Var g, const Tensor& operand) {
    if (operand.rank() == 0 && g.value().rank() != 0) return reduce_sum(g);
    return g;
  };

  for (std::uint32_t id = n; id-- > 0;) {
    if (adj[id] == kNoOperand) continue;
    const TapeNode nd = tape.node(id);  // copy: emitting below may reallocate
    Var g = var_of(adj[id]);
    Var self = var_of(id);
    Var va = var_of(nd.a);
    Var vb = var_of(nd.b);
    switch (nd.op) {
      case Op::kConstant:
      case Op::kParam:
      case Op::kInput:
        break;
      case Op::kAdd:
        accum(nd.a, collapse(g, va.value()));
        accum(nd.b, collapse(g, vb.value()));
        break;
      case Op::kSub: {
        accum(nd.a, collapse(g, va.value()));
        Var ng = sub(tape.scalar(0.0), g);
        accum(nd.b, collapse(ng, vb.value()));
        break;
      }
      case Op::kMul: {
        // Emit the product first; collapse's operand reference must be taken
        // fresh afterwards, since emitting can relocate node storage.
        Var ga = mul(g, vb);
        accum(nd.a, collapse(ga, va.value()));
        Var gb = mul(g, va);
        accum(nd.b, collapse(gb, vb.value()));
        break;
      }
      case Op::kDiv: {
        Var ga = div(g, vb);
        accum(nd.a, collapse(ga, va.value()));
        Var t = div(self, vb);  // a / b^2
        Var gb = sub(tape.scalar(0.0), mul(g, t));
        accum(nd.b, collapse(gb, vb.value()));
        break;
      }
      case Op::kMatMul: {
        const std::size_t b_rank = vb.value().rank();
        if (b_rank == 2) {
          accum(nd.a, matmul(g, transpose(vb)));
          accum(nd.b, matmul(transpose(va), g));
        } else {
          // y = A x with x rank-1: dA is the outer product g x^T.
          std::size_t m = va.value().shape()[0];
          std::size_t k = va.value().shape()[1];
          accum(nd.a, matmul(reshape(g, {m, 1}), reshape(vb, {1, k})));
          accum(nd.b, matmul(transpose(va), g));
        }
        break;
      }
      case Op::kTranspose:
        accum(nd.a, transpose(g));
        break;
      case Op::kReshape:
        accum(nd.a, reshape(g, va.value().shape()));
        break;
      case Op::kConcat:
        accum(nd.a, slice(g, 0, va.value().size()));
        accum(nd.b, slice(g, va.value().size(), vb.value().size()));
        break;
      case Op::kSlice:
        accum(nd.a, pad_embed(g, nd.i0, va.value().size()));
        break;
      case Op::kPad:
        accum(nd.a, slice(g, nd.i0, va.value().size()));
        break;
      case Op::kReduceSum:
        accum(nd.a, mul(tape.constant(Tensor::ones(va.value().shape())), g));
        break;
      case Op::kReduceMean: {
        double inv = 1.0 / static_cast<double>(va.value().size());
        Tensor w = gradlab::scale(Tensor::ones(va.value().shape()), inv);
        accum(nd.a, mul(tape.constant(std::move(w)), g));
        break;
      }
      case Op::kExp:
        accum(nd.a, mul(g, self));
        break;
      case Op::kLog:
        accum(nd.a, div(g, va));
        break;
      case Op::kMaxScalar:
        accum(nd.a, mul(g, step_gt(va, nd.attr)));
        break;
      case Op::kMinScalar:
        accum(nd.a, mul(g, step_lt(va, nd.attr)));
        break;
      case Op::kStepGt:
      case Op::kStepLt:
        break;  // flat almost everywhere
      case Op::kSigmoid:
        accum(nd.a, mul(g, mul(self, sub(tape.scalar(1.0), self))));
        break;
      case Op::kTanh:
        accum(nd.a, mul(g, sub(tape.scalar(1.0), mul(self, self))));
        break;
      case Op::kElu: {
        // x>0: 1; x<=0: alpha*exp(x) — equals alpha at 0, C^1 for alpha=1.
        Var sg = step_gt(va, 0.0);
        Var off = mul(tape.scalar(nd.attr), exp(min_scalar(va, 0.0)));
        Var d = add(sg, mul(sub(tape.scalar(1.0), sg), off));
        accum(nd.a, mul(g, d));
        break;
      }
    }
  }

  std::vector<Var> out;
  out.reserve(wrt.size());
  for (std::uint32_t w : wrt) {
    if (w < n && adj[w] != kNoOperand) {
      out.push_back(var_of(adj[w]));
    } else {
      out.push_back(tape.constant(Tensor::zeros(tape.value_of(w).shape())));
    }
  }
  return out;
}

Evaluation eval_with_tape(const ProgramFn& f, const ParamMap& params, const ParamMap& inputs) {
  Evaluation ev;
  ev.tape.stage_bindings(&params, &inputs);
  Var out = f(ev.tape);
  ev.tape.stage_bindings(nullptr, nullptr);
  if (out.tape != &ev.tape) {
    throw CompositionError("program returned a var from a different tape");
  }
  if (out.value().rank() != 0) {
    throw ContractError("program output must be a scalar, got shape " + out.value().shape_str());
  }
  ev.tape.set_output(out);
  ev.value = out.value();
  return ev;
}

Gradient backward(Tape& tape, double seed) {
  Var out = tape.output();
  if (out.value().rank() != 0) {
    throw ContractError("backward: tape output is not a scalar");
  }
  std::vector<std::string> names;
  std::vector<std::uint32_t> ids;
  for (const auto& [name, id] : tape.param_ids()) {
    names.push_back(name);
    ids.push_back(id);
  }
  Var unit = tape.scalar(1.0);
  std::vector<Var> gvars = emit_adjoints(tape, out, unit, ids);
  Gradient g;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    Tensor t = gvars[i].value();
    if (seed != 1.0) t = gradlab::scale(t, seed);
    g.by_parameter.emplace(names[i], std::move(t));
  }
  return g;
}

Gradient grad(const ProgramFn& f, const ParamMap& params, const ParamMap& inputs) {
  Evaluation ev = eval_with_tape(f, params, inputs);
  return backward(ev.tape, 1.0);
}

ValueGrad value_and_grad(const ProgramFn& f, const ParamMap& params, const ParamMap& inputs) {
  Evaluation ev = eval_with_tape(f, params, inputs);
  ValueGrad vg;
  vg.value = ev.value.scalar_value();
  vg.gradient = backward(ev.tape, 1.0);
  return vg;
}

double eval_value(const ProgramFn& f, const ParamMap& params, const ParamMap& inputs) {
  return eval_with_tape(f, params, inputs).value.scalar_value();
}

Tensor hvp(const ProgramFn& f, const ParamMap& params, const ParamMap& inputs, const Tensor& v) {
  if (v.rank() != 1 || v.size() != param_count(params)) {
    throw DimensionError("hvp: direction has " + std::to_string(v.size()) +
                         " elements, parameters have " + std::to_string(param_count(params)));
  }
  Evaluation ev = eval_with_tape(f, params, inputs);
  Tape& tape = ev.tape;

  // Copy the shapes out first: emitting nodes below may grow the tape and
  // relocate node storage, so references into it must not be kept.
  std::vector<std::uint32_t> ids;
  std::vector<std::vector<std::size_t>> shapes;
  std::vector<std::size_t> sizes;
  for (const auto& [name, id] : tape.param_ids()) {
    ids.push_back(id);
    const Tensor& pv = tape.value_of(id);
    shapes.push_back(pv.shape());
    sizes.push_back(pv.size());
  }

  Var unit = tape.scalar(1.0);
  std::vector<Var> gvars = emit_adjoints(tape, tape.output(), unit, ids);

  // Directional derivative of the gradient: s = g . v, then one more sweep.
  Var s{};
  std::size_t offset = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    Tensor chunk(shapes[i], std::vector<double>(v.values().begin() + offset,
                                                v.values().begin() + offset + sizes[i]));
    offset += sizes[i];
    Var term = reduce_sum(mul(gvars[i], tape.constant(std::move(chunk))));
    s = (i == 0) ? term : add(s, term);
  }

  std::vector<Var> hvars = emit_adjoints(tape, s, tape.scalar(1.0), ids);

  Tensor out = Tensor::zeros({v.size()});
  offset = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const Tensor& h = hvars[i].value();
    for (std::size_t j = 0; j < h.size(); ++j) out[offset + j] = h[j];
    offset += h.size();
  }
  return out;
}

std::size_t param_count(const ParamMap& p) {
  std::size_t n = 0;
  for (const auto& [name, t] : p) n += t.size();
  return n;
}

Tensor flatten_params(const ParamMap& p) {
  Tensor out = Tensor::zeros({param_count(p)});
  std::size_t offset = 0;
  for (const auto& [name, t] : p) {
    for (std::size_t j = 0; j < t.size(); ++j) out[offset + j] = t[j];
    offset += t.size();
  }
  return out;
}

ParamMap unflatten_like(const ParamMap& like, const Tensor& flat) {
  if (flat.rank() != 1 || flat.size() != param_count(like)) {
    throw DimensionError("unflatten_like: flat vector has " + std::to_string(flat.size()) +
                         " elements, layout needs " + std::to_string(param_count(like)));
  }
  ParamMap out;
  std::size_t offset = 0;
  for (const auto& [name, t] : like) {
    Tensor chunk(t.shape(), std::vector<double>(flat.values().begin() + offset,
                                                flat.values().begin() + offset + t.size()));
    offset += t.size();
    out.emplace(name, std::move(chunk));
  }
  return out;
}

Tensor flatten_gradient(const ParamMap& like, const Gradient& g) {
  Tensor out = Tensor::zeros({param_count(like)});
  std::size_t offset = 0;
  for (const auto& [name, t] : like) {
    auto it = g.by_parameter.find(name);
    if (it == g.by_parameter.end()) {
      throw CompositionError("flatten_gradient: gradient missing parameter '" + name + "'");
    }
    for (std::size_t j = 0; j < t.size(); ++j) out[offset + j] = it->second[j];
    offset += t.size();
  }
  return out;
}

}  // namespace gradlab::ad
