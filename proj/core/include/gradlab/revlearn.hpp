#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "gradlab/autodiff.hpp"
#include "gradlab/train.hpp"

namespace gradlab::rev {

/// Builds the scalar training objective for one step's batch indices.
/// Must be deterministic in (parameters, indices) for replay to be bit-exact.
using BatchProgram = std::function<ad::Var(ad::Tape&, const std::vector<std::uint32_t>&)>;

struct SgdRun {
  double eta = 0.1;
  std::uint64_t seed = 0;  // recorded for provenance, not consumed here
  std::vector<std::vector<std::uint32_t>> schedule;  // batch indices per step
};

/// Everything needed to run a recorded SGD trajectory backwards: per-step
/// compressed reconstruction residuals, the batch schedule, and checksums
/// that prove each reconstructed w(t) equals the forward pass bit-for-bit.
struct ResidualTrace {
  std::uint64_t steps = 0;
  std::uint64_t weight_count = 0;
  double eta = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::vector<std::size_t>>> param_shapes;
  std::vector<std::vector<std::uint32_t>> schedule;
  std::vector<std::uint64_t> step_checksums;  // of w(t), t = 0..T-1
  std::uint64_t final_checksum = 0;           // of w(T)
  std::vector<std::vector<std::uint8_t>> residuals;

  std::size_t encoded_bytes() const;
  std::size_t raw_trajectory_bytes() const;  // T * weight_count * 8
};

struct Hypergrad {
  double d_eta = 0.0;
  ad::ParamMap d_w0;
};

struct ForwardRecord {
  ad::ParamMap wT;
  ResidualTrace trace;
};

/// Plain SGD over the schedule. At each step additionally evaluates the
/// reverse prediction w_hat(t) = w(t+1) + eta * grad(w(t+1)) and stores the
/// correction delta(t) making backward reconstruction exact.
ForwardRecord train_forward_record(const BatchProgram& objective, const ad::ParamMap& w0,
                                   const SgdRun& run);

/// Runs the recorded trajectory backwards, reconstructing each w(t) from
/// w(t+1) plus the stored residual (checksum-verified), while propagating
/// adjoints of val_loss(w(T)):
///   d_eta <- d_eta - g(t) . dw,  dw <- dw - eta * H(w(t), batch t) dw.
Hypergrad reverse_replay_hypergrad(const BatchProgram& objective, const ad::ParamMap& wT,
                                   const ResidualTrace& trace, const ad::ProgramFn& val_loss);

struct FullTapeResult {
  Hypergrad hypergrad;
  std::size_t stored_reals = 0;  // steps * weight_count actually kept in memory
};

/// Baseline that stores the entire weight trajectory and runs the identical
/// adjoint recurrence from the stored weights instead of reconstructed ones.
FullTapeResult hypergrad_full_tape(const BatchProgram& objective, const ad::ParamMap& w0,
                                   const SgdRun& run, const ad::ProgramFn& val_loss);

// Residuals live in the XOR domain: delta(t) carries bits(w) ^ bits(w_hat)
// per element, so applying it to w_hat reproduces w exactly regardless of
// rounding, and near-agreement shows up as leading zero bytes to suppress.
Tensor xor_diff(const Tensor& w, const Tensor& w_hat);
Tensor xor_apply(const Tensor& w_hat, const Tensor& delta);

/// Per element: a 4-bit significant-byte count, then that many low-order
/// bytes of the element's little-endian bit pattern. Lossless.
std::vector<std::uint8_t> residual_encode(const Tensor& delta);
Tensor residual_decode(const std::vector<std::uint8_t>& bytes, std::size_t count);

/// FNV-1a over the little-endian bytes of the flattened weights.
std::uint64_t checksum_flat(const Tensor& flat);
std::uint64_t params_checksum(const ad::ParamMap& params);

// Binary trace file: little-endian header (magic, version, T, |w|, eta,
// seed), parameter table, schedule, checksums, then length-prefixed
// residual blocks.
void save_trace(const ResidualTrace& trace, const std::string& path);
ResidualTrace load_trace(const std::string& path);

/// Production-mode batch-mean loss of the model on `data`; deterministic,
/// so recorded runs replay bit-exactly.
BatchProgram make_batch_objective(const train::Model& model, const train::Dataset& data);

/// Production-mode mean loss over the whole validation set.
ad::ProgramFn make_validation_objective(const train::Model& model, const train::Dataset& val);

/// Same shuffling stream trainkit's train() uses, so a recorded run visits
/// batches in exactly the order train() would.
SgdRun make_run(std::size_t n_examples, const train::TrainConfig& cfg, int epochs);

}  // namespace gradlab::rev
