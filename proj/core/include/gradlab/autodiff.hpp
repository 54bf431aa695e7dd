#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "gradlab/tensor.hpp"

namespace gradlab::ad {

enum class Op : std::uint8_t {
  kConstant,
  kParam,
  kInput,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kMatMul,
  kTranspose,
  kReshape,
  kConcat,
  kSlice,
  kPad,
  kReduceSum,
  kReduceMean,
  kExp,
  kLog,
  kMaxScalar,
  kMinScalar,
  kStepGt,
  kStepLt,
  kSigmoid,
  kTanh,
  kElu,
};

inline constexpr std::uint32_t kNoOperand = 0xffffffffu;

/// One recorded primitive. Saved primal `value` is what the adjoint rules read;
/// nothing is recomputed during the reverse sweep.
struct TapeNode {
  Op op = Op::kConstant;
  std::uint32_t a = kNoOperand;
  std::uint32_t b = kNoOperand;
  double attr = 0.0;                    // scalar threshold / elu alpha
  std::size_t i0 = 0;                   // slice/pad start
  std::size_t i1 = 0;                   // slice length / pad total
  std::vector<std::size_t> shape_attr;  // reshape target
  Tensor value;
};

class Tape;

/// Handle to a tape node. Valid only while its tape is alive and unmoved.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;
  const Tensor& value() const;
  double scalar() const { return value().scalar_value(); }
};

using ParamMap = std::map<std::string, Tensor>;

/// Append-only record of one forward evaluation. Nodes are evaluated eagerly
/// as they are emitted, so every node always carries its primal value.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var constant(Tensor v);
  Var scalar(double v) { return constant(Tensor::scalar(v)); }

  // Named leaves. The unary forms resolve against bindings staged by
  // eval_with_tape and are idempotent: a second call with the same name
  // returns the existing node.
  Var param(const std::string& name, Tensor v);
  Var param(const std::string& name);
  Var input(const std::string& name, Tensor v);
  Var input(const std::string& name);

  void set_param(const std::string& name, Tensor v);
  void set_input(const std::string& name, Tensor v);

  /// Recomputes every non-leaf value in recording order. After set_param,
  /// this reproduces the forward pass at the new binding; with unchanged
  /// bindings it reproduces the recorded values exactly.
  void replay();

  Var emit(TapeNode n);

  const TapeNode& node(std::uint32_t id) const { return nodes_[id]; }
  const Tensor& value_of(std::uint32_t id) const { return nodes_[id].value; }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<TapeNode>& nodes() const { return nodes_; }

  const std::map<std::string, std::uint32_t>& param_ids() const { return param_ids_; }

  void set_output(Var v);
  Var output();
  bool has_output() const { return has_output_; }

  void stage_bindings(const ParamMap* params, const ParamMap* inputs) {
    staged_params_ = params;
    staged_inputs_ = inputs;
  }

 private:
  std::vector<TapeNode> nodes_;
  std::map<std::string, std::uint32_t> param_ids_;
  std::map<std::string, std::uint32_t> input_ids_;
  const ParamMap* staged_params_ = nullptr;
  const ParamMap* staged_inputs_ = nullptr;
  std::uint32_t output_id_ = 0;
  bool has_output_ = false;
};

// -- graph builders; each emits one node and evaluates it eagerly -----------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var matmul(Var a, Var b);
Var transpose(Var a);
Var reshape(Var a, std::vector<std::size_t> shape);
Var concat(Var a, Var b);
Var slice(Var a, std::size_t start, std::size_t len);
Var pad_embed(Var a, std::size_t start, std::size_t total);
Var reduce_sum(Var a);
Var reduce_mean(Var a);
Var exp(Var a);
Var log(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var elu(Var a, double alpha);
Var max_scalar(Var a, double c);
Var min_scalar(Var a, double c);
Var step_gt(Var a, double c);
Var step_lt(Var a, double c);
Var relu(Var a);  // max_scalar(a, 0); adjoint at 0 is 0

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }

/// Walks the tape backwards from `output`, appending the adjoint computation
/// as ordinary nodes (so adjoints are themselves differentiable). Returns one
/// Var per entry of `wrt`; targets unreachable from `output` get fresh zero
/// constants of the matching shape.
std::vector<Var> emit_adjoints(Tape& tape, Var output, Var seed,
                               const std::vector<std::uint32_t>& wrt);

struct Gradient {
  std::map<std::string, Tensor> by_parameter;
};

using ProgramFn = std::function<Var(Tape&)>;

struct Evaluation {
  Tensor value;
  Tape tape;
};

/// Runs a program with the given named bindings. The program may only
/// reference names present in `params`/`inputs` (composition error otherwise)
/// and must return a rank-0 node (contract error otherwise).
Evaluation eval_with_tape(const ProgramFn& f, const ParamMap& params, const ParamMap& inputs);

/// Reverse sweep over a tape produced by eval_with_tape. Linearity in the
/// seed is exact: adjoints are accumulated with a unit seed and scaled once
/// at the end.
Gradient backward(Tape& tape, double seed);

Gradient grad(const ProgramFn& f, const ParamMap& params, const ParamMap& inputs);

struct ValueGrad {
  double value = 0.0;
  Gradient gradient;
};
ValueGrad value_and_grad(const ProgramFn& f, const ParamMap& params, const ParamMap& inputs);

double eval_value(const ProgramFn& f, const ParamMap& params, const ParamMap& inputs);

/// Exact Hessian-vector product by reverse-over-reverse: emits the gradient
/// as graph nodes, forms its inner product with v, and differentiates that
/// scalar again. v is laid out like flatten_params(params).
Tensor hvp(const ProgramFn& f, const ParamMap& params, const ParamMap& inputs, const Tensor& v);

// Flattening uses the map's lexicographic name order; every module relies on
// this single layout when moving between ParamMap and flat vectors.
std::size_t param_count(const ParamMap& p);
Tensor flatten_params(const ParamMap& p);
ParamMap unflatten_like(const ParamMap& like, const Tensor& flat);
Tensor flatten_gradient(const ParamMap& like, const Gradient& g);

}  // namespace gradlab::ad
