#include "gradlab/revlearn.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace gradlab::rev {

namespace {

constexpr char kMagic[8] = {'G', 'R', 'A', 'D', 'L', 'T', 'R', 'C'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  put_u64(out, std::bit_cast<std::uint64_t>(v));
}

struct ByteReader {
  const std::vector<std::uint8_t>& data;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > data.size()) throw CorruptionError("trace file truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(data[pos + k]) << (8 * k);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(data[pos + k]) << (8 * k);
    pos += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::vector<std::uint8_t> bytes(std::size_t n) {
    need(n);
    std::vector<std::uint8_t> v(data.begin() + pos, data.begin() + pos + n);
    pos += n;
    return v;
  }
};

void check_finite(const ad::ParamMap& w, std::uint64_t step) {
  for (const auto& [name, t] : w) {
    if (!t.all_finite()) {
      throw DivergenceError("training produced non-finite weights at step " +
                            std::to_string(step) + " (parameter " + name + ")");
    }
  }
}

ad::ParamMap layout_from_shapes(
    const std::vector<std::pair<std::string, std::vector<std::size_t>>>& shapes) {
  ad::ParamMap like;
  for (const auto& [name, shape] : shapes) like.emplace(name, Tensor::zeros(shape));
  return like;
}

}  // namespace

std::size_t ResidualTrace::encoded_bytes() const {
  std::size_t n = 0;
  for (const auto& r : residuals) n += r.size();
  return n;
}

std::size_t ResidualTrace::raw_trajectory_bytes() const {
  return static_cast<std::size_t>(steps) * weight_count * sizeof(double);
}

Tensor xor_diff(const Tensor& w, const Tensor& w_hat) {
  if (!w.same_shape(w_hat)) {
    throw DimensionError("xor_diff: shapes " + w.shape_str() + " and " + w_hat.shape_str() +
                         " differ");
  }
  Tensor out = w;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::bit_cast<double>(std::bit_cast<std::uint64_t>(w[i]) ^
                                   std::bit_cast<std::uint64_t>(w_hat[i]));
  }
  return out;
}

Tensor xor_apply(const Tensor& w_hat, const Tensor& delta) { return xor_diff(w_hat, delta); }

std::vector<std::uint8_t> residual_encode(const Tensor& delta) {
  const std::size_t n = delta.size();
  std::vector<std::uint8_t> lens(n);
  std::vector<std::uint8_t> out;
  out.reserve((n + 1) / 2 + n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(delta[i]);
    lens[i] = static_cast<std::uint8_t>(8 - std::countl_zero(bits) / 8);
  }
  for (std::size_t i = 0; i < n; i += 2) {
    std::uint8_t packed = lens[i];
    if (i + 1 < n) packed |= static_cast<std::uint8_t>(lens[i + 1] << 4);
    out.push_back(packed);
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(delta[i]);
    for (std::uint8_t k = 0; k < lens[i]; ++k) {
      out.push_back(static_cast<std::uint8_t>(bits >> (8 * k)));
    }
  }
  return out;
}

Tensor residual_decode(const std::vector<std::uint8_t>& bytes, std::size_t count) {
  const std::size_t nibble_bytes = (count + 1) / 2;
  if (bytes.size() < nibble_bytes) throw CorruptionError("residual block shorter than its length table");
  std::vector<std::uint8_t> lens(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint8_t packed = bytes[i / 2];
    lens[i] = (i % 2 == 0) ? (packed & 0x0f) : (packed >> 4);
    if (lens[i] > 8) throw CorruptionError("residual element length out of range");
  }
  if (count % 2 == 1 && (bytes[nibble_bytes - 1] >> 4) != 0)
    throw CorruptionError("residual block has nonzero nibble padding");
  Tensor out = Tensor::zeros({count});
  std::size_t pos = nibble_bytes;
  for (std::size_t i = 0; i < count; ++i) {
    if (pos + lens[i] > bytes.size()) throw CorruptionError("residual block truncated");
    std::uint64_t bits = 0;
    for (std::uint8_t k = 0; k < lens[i]; ++k) {
      bits |= static_cast<std::uint64_t>(bytes[pos + k]) << (8 * k);
    }
    pos += lens[i];
    out[i] = std::bit_cast<double>(bits);
  }
  if (pos != bytes.size()) throw CorruptionError("residual block has trailing bytes");
  return out;
}

std::uint64_t checksum_flat(const Tensor& flat) {
  std::uint64_t h = 14695981039346656037ull;
  for (std::size_t i = 0; i < flat.size(); ++i) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(flat[i]);
    for (int k = 0; k < 8; ++k) {
      h ^= (bits >> (8 * k)) & 0xffu;
      h *= 1099511628211ull;
    }
  }
  return h;
}

std::uint64_t params_checksum(const ad::ParamMap& params) {
  return checksum_flat(ad::flatten_params(params));
}

ForwardRecord train_forward_record(const BatchProgram& objective, const ad::ParamMap& w0,
                                   const SgdRun& run) {
  if (!(run.eta >= 0.0)) throw DomainError("train_forward_record: eta must be non-negative");
  ResidualTrace trace;
  trace.steps = run.schedule.size();
  trace.weight_count = ad::param_count(w0);
  trace.eta = run.eta;
  trace.seed = run.seed;
  trace.schedule = run.schedule;
  for (const auto& [name, t] : w0) trace.param_shapes.emplace_back(name, t.shape());
  trace.step_checksums.reserve(trace.steps);
  trace.residuals.reserve(trace.steps);

  ad::ParamMap w = w0;
  for (std::uint64_t t = 0; t < trace.steps; ++t) {
    const auto& batch = run.schedule[t];
    auto prog = [&](ad::Tape& tape) { return objective(tape, batch); };
    ad::Gradient g = ad::grad(prog, w, {});
    ad::ParamMap w_next = train::sgd_step(w, g, run.eta);
    check_finite(w_next, t + 1);

    ad::Gradient g_hat = ad::grad(prog, w_next, {});
    ad::ParamMap w_hat = train::sgd_step(w_next, g_hat, -run.eta);
    Tensor delta = xor_diff(ad::flatten_params(w), ad::flatten_params(w_hat));
    trace.residuals.push_back(residual_encode(delta));
    trace.step_checksums.push_back(params_checksum(w));
    w = std::move(w_next);
  }
  trace.final_checksum = params_checksum(w);
  return {std::move(w), std::move(trace)};
}

Hypergrad reverse_replay_hypergrad(const BatchProgram& objective, const ad::ParamMap& wT,
                                   const ResidualTrace& trace, const ad::ProgramFn& val_loss) {
  if (params_checksum(wT) != trace.final_checksum) {
    throw CorruptionError("final weights fail the trace checksum");
  }
  ad::ParamMap like = layout_from_shapes(trace.param_shapes);

  ad::Gradient gval = ad::grad(val_loss, wT, {});
  Tensor dw = ad::flatten_gradient(wT, gval);
  double d_eta = 0.0;

  ad::ParamMap w = wT;
  for (std::uint64_t t = trace.steps; t-- > 0;) {
    const auto& batch = trace.schedule[t];
    auto prog = [&](ad::Tape& tape) { return objective(tape, batch); };

    // Reconstruct w(t) = [w(t+1) + eta * grad(w(t+1))] corrected by delta(t).
    ad::Gradient g_hat = ad::grad(prog, w, {});
    ad::ParamMap w_hat = train::sgd_step(w, g_hat, -trace.eta);
    Tensor delta = residual_decode(trace.residuals[t], trace.weight_count);
    Tensor w_flat = xor_apply(ad::flatten_params(w_hat), delta);
    if (checksum_flat(w_flat) != trace.step_checksums[t]) {
      throw CorruptionError("reconstruction checksum mismatch at step " + std::to_string(t));
    }
    ad::ParamMap w_t = ad::unflatten_like(like, w_flat);

    ad::Gradient g = ad::grad(prog, w_t, {});
    d_eta -= dot(ad::flatten_gradient(w_t, g), dw);
    Tensor hv = ad::hvp(prog, w_t, {}, dw);
    dw = axpy(dw, -trace.eta, hv);
    w = std::move(w_t);
  }
  return {d_eta, ad::unflatten_like(like, dw)};
}

FullTapeResult hypergrad_full_tape(const BatchProgram& objective, const ad::ParamMap& w0,
                                   const SgdRun& run, const ad::ProgramFn& val_loss) {
  const std::uint64_t steps = run.schedule.size();
  std::vector<Tensor> trajectory;
  trajectory.reserve(steps);

  ad::ParamMap w = w0;
  for (std::uint64_t t = 0; t < steps; ++t) {
    const auto& batch = run.schedule[t];
    auto prog = [&](ad::Tape& tape) { return objective(tape, batch); };
    trajectory.push_back(ad::flatten_params(w));
    ad::Gradient g = ad::grad(prog, w, {});
    w = train::sgd_step(w, g, run.eta);
    check_finite(w, t + 1);
  }

  ad::Gradient gval = ad::grad(val_loss, w, {});
  Tensor dw = ad::flatten_gradient(w, gval);
  double d_eta = 0.0;

  for (std::uint64_t t = steps; t-- > 0;) {
    const auto& batch = run.schedule[t];
    auto prog = [&](ad::Tape& tape) { return objective(tape, batch); };
    ad::ParamMap w_t = ad::unflatten_like(w0, trajectory[t]);
    ad::Gradient g = ad::grad(prog, w_t, {});
    d_eta -= dot(ad::flatten_gradient(w_t, g), dw);
    Tensor hv = ad::hvp(prog, w_t, {}, dw);
    dw = axpy(dw, -run.eta, hv);
  }

  FullTapeResult out;
  out.hypergrad = Hypergrad{d_eta, ad::unflatten_like(w0, dw)};
  out.stored_reals = static_cast<std::size_t>(steps) * ad::param_count(w0);
  return out;
}

void save_trace(const ResidualTrace& trace, const std::string& path) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 8);
  put_u32(out, kVersion);
  put_u64(out, trace.steps);
  put_u64(out, trace.weight_count);
  put_f64(out, trace.eta);
  put_u64(out, trace.seed);

  put_u32(out, static_cast<std::uint32_t>(trace.param_shapes.size()));
  for (const auto& [name, shape] : trace.param_shapes) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) put_u64(out, d);
  }

  for (const auto& batch : trace.schedule) {
    put_u32(out, static_cast<std::uint32_t>(batch.size()));
    for (std::uint32_t idx : batch) put_u32(out, idx);
  }

  for (std::uint64_t c : trace.step_checksums) put_u64(out, c);
  put_u64(out, trace.final_checksum);

  for (const auto& block : trace.residuals) {
    put_u64(out, block.size());
    out.insert(out.end(), block.begin(), block.end());
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open trace file for writing: " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error("failed writing trace file: " + path);
}

ResidualTrace load_trace(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open trace file: " + path);
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  ByteReader r{data};

  auto magic = r.bytes(8);
  if (std::memcmp(magic.data(), kMagic, 8) != 0) {
    throw CorruptionError("not a trace file: bad magic");
  }
  std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw CorruptionError("unsupported trace version " + std::to_string(version));
  }

  ResidualTrace trace;
  trace.steps = r.u64();
  trace.weight_count = r.u64();
  trace.eta = r.f64();
  trace.seed = r.u64();

  std::uint32_t n_params = r.u32();
  for (std::uint32_t i = 0; i < n_params; ++i) {
    std::uint32_t name_len = r.u32();
    auto name_bytes = r.bytes(name_len);
    std::string name(name_bytes.begin(), name_bytes.end());
    std::uint32_t rank = r.u32();
    std::vector<std::size_t> shape(rank);
    for (std::uint32_t k = 0; k < rank; ++k) shape[k] = static_cast<std::size_t>(r.u64());
    trace.param_shapes.emplace_back(std::move(name), std::move(shape));
  }

  trace.schedule.resize(trace.steps);
  for (std::uint64_t t = 0; t < trace.steps; ++t) {
    std::uint32_t len = r.u32();
    trace.schedule[t].resize(len);
    for (std::uint32_t k = 0; k < len; ++k) trace.schedule[t][k] = r.u32();
  }

  trace.step_checksums.resize(trace.steps);
  for (std::uint64_t t = 0; t < trace.steps; ++t) trace.step_checksums[t] = r.u64();
  trace.final_checksum = r.u64();

  trace.residuals.resize(trace.steps);
  for (std::uint64_t t = 0; t < trace.steps; ++t) {
    std::uint64_t len = r.u64();
    trace.residuals[t] = r.bytes(static_cast<std::size_t>(len));
  }
  if (r.pos != data.size()) throw CorruptionError("trace file has trailing bytes");
  return trace;
}

BatchProgram make_batch_objective(const train::Model& model, const train::Dataset& data) {
  return [model, data](ad::Tape& tape, const std::vector<std::uint32_t>& idx) {
    RngState unused{};
    return train::batch_loss(tape, model, data, idx, layers::Mode::kProduction, unused);
  };
}

ad::ProgramFn make_validation_objective(const train::Model& model, const train::Dataset& val) {
  std::vector<std::uint32_t> all(val.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<std::uint32_t>(i);
  return [model, val, all](ad::Tape& tape) {
    RngState unused{};
    return train::batch_loss(tape, model, val, all, layers::Mode::kProduction, unused);
  };
}

SgdRun make_run(std::size_t n_examples, const train::TrainConfig& cfg, int epochs) {
  cfg.validate();
  SgdRun run;
  run.eta = cfg.eta;
  run.seed = cfg.seed;
  RngState shuffle_rng = RngState{cfg.seed}.substream(1);
  for (int e = 0; e < epochs; ++e) {
    auto blocks = train::epoch_schedule(n_examples, cfg.batch_size, shuffle_rng);
    run.schedule.insert(run.schedule.end(), blocks.begin(), blocks.end());
  }
  return run;
}

}  // namespace gradlab::rev
