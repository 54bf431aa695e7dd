// End-to-end acceptance checks. Each section prints one PASS/FAIL line with
// the measured quantities; the process exits nonzero if any section fails.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "gradlab/autodiff.hpp"
#include "gradlab/datasets.hpp"
#include "gradlab/errors.hpp"
#include "gradlab/experiments.hpp"
#include "gradlab/gradcheck.hpp"
#include "gradlab/layers.hpp"
#include "gradlab/neumann.hpp"
#include "gradlab/revlearn.hpp"
#include "gradlab/rng.hpp"
#include "gradlab/train.hpp"
#include "oracles.hpp"

using namespace gradlab;
namespace ts = testsupport;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_failures = 0;

std::string fmt(double v) { return lab::format_double(v); }

void criterion(int id, const char* title, const std::function<Outcome()>& body) {
  auto t0 = std::chrono::steady_clock::now();
  Outcome out;
  try {
    out = body();
  } catch (const std::exception& e) {
    out.pass = false;
    out.detail = std::string("unexpected exception: ") + e.what();
  }
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("[%s] %2d %s: %s [%.1fs]\n", out.pass ? "PASS" : "FAIL", id, title,
              out.detail.c_str(), secs);
  std::fflush(stdout);
  if (!out.pass) ++g_failures;
}

std::string out_path(const char* name) {
  std::filesystem::create_directories("acceptance_out");
  return (std::filesystem::path("acceptance_out") / name).string();
}

Tensor normal_vector(std::size_t n, RngState& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = draw_normal(rng);
  return Tensor({n}, v);
}

// Random rotation of a uniform spectrum; test-side construction.
Tensor rotated_spd(std::size_t n, double lo, double hi, RngState& rng) {
  std::vector<double> q(n * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) q[i * n + j] = draw_normal(rng);
    for (std::size_t k = 0; k < j; ++k) {
      double d = 0;
      for (std::size_t i = 0; i < n; ++i) d += q[i * n + k] * q[i * n + j];
      for (std::size_t i = 0; i < n; ++i) q[i * n + j] -= d * q[i * n + k];
    }
    double nrm = 0;
    for (std::size_t i = 0; i < n; ++i) nrm += q[i * n + j] * q[i * n + j];
    nrm = std::sqrt(nrm);
    for (std::size_t i = 0; i < n; ++i) q[i * n + j] /= nrm;
  }
  std::vector<double> lam(n);
  for (auto& l : lam) l = draw_uniform(rng, lo, hi);
  std::vector<double> h(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < n; ++k) s += q[i * n + k] * lam[k] * q[j * n + k];
      h[i * n + j] = h[j * n + i] = s;
    }
  return Tensor({n, n}, h);
}

// --------------------------------------------------------------------------
// 1: reverse-mode gradients vs central differences over every primitive.

// A program that records every differentiable op kind at least once.
ad::Var op_inventory(ad::Tape& t) {
  ad::Var w = t.param("W");      // 2x3
  ad::Var u = t.param("u");      // 3
  ad::Var b = t.param("b");      // 2
  ad::Var s = t.param("s");      // rank 0, in [1, 2]
  ad::Var xin = t.input("xin");  // 3

  ad::Var y = ad::add(ad::matmul(w, u), b);
  ad::Var act = ad::add(ad::mul(ad::sigmoid(y), ad::tanh(y)), ad::elu(y, 1.3));
  ad::Var m = ad::matmul(ad::transpose(w), act);
  ad::Var c = ad::concat(m, ad::exp(ad::min_scalar(ad::mul(u, xin), 1.5)));
  ad::Var d = ad::sub(c, ad::pad_embed(ad::div(ad::slice(c, 1, 3), s), 1, 6));
  ad::Var e = ad::log(ad::max_scalar(ad::add(ad::mul(d, d), t.scalar(0.7)), 0.5));
  ad::Var r = ad::matmul(ad::reshape(w, {3, 2}), ad::slice(e, 0, 2));
  ad::Var gate = ad::add(ad::step_gt(u, 0.2), ad::step_lt(u, 0.8));
  return ad::add(ad::add(ad::reduce_mean(e), ad::mul(s, ad::reduce_sum(r))),
                 ad::add(ad::reduce_sum(ad::mul(gate, u)), ad::reduce_sum(ad::relu(y))));
}

Outcome check_gradients_vs_fd() {
  double max_rel = 0.0;
  std::size_t coords = 0, kinks = 0, points = 0;

  // dedicated inventory program at 10 random points
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    RngState rng{seed, 0};
    ad::ParamMap params;
    std::vector<double> wv(6), uv(3), bv(2);
    for (auto& x : wv) x = draw_normal(rng);
    for (auto& x : uv) x = draw_normal(rng);
    for (auto& x : bv) x = draw_normal(rng);
    params.emplace("W", Tensor({2, 3}, wv));
    params.emplace("u", Tensor({3}, uv));
    params.emplace("b", Tensor({2}, bv));
    params.emplace("s", Tensor::scalar(draw_uniform(rng, 1.0, 2.0)));
    std::vector<double> xv(3);
    for (auto& x : xv) x = draw_uniform(rng, 0.3, 1.2);
    ad::ParamMap inputs{{"xin", Tensor({3}, xv)}};

    if (seed == 0) {
      // structural completeness: the recorded tape touches every op kind
      ad::Evaluation ev = ad::eval_with_tape(op_inventory, params, inputs);
      std::set<std::uint8_t> seen;
      for (const auto& n : ev.tape.nodes()) seen.insert(static_cast<std::uint8_t>(n.op));
      if (seen.size() != 24)
        return {false, "op inventory covers only " + std::to_string(seen.size()) + "/24 ops"};
    }

    check::GradcheckResult res = check::gradcheck(op_inventory, params, inputs, 1e-5, 1e-6);
    if (!res.passed) return {false, "inventory point " + std::to_string(seed) + " failed"};
    max_rel = std::max(max_rel, res.max_rel_err);
    coords += res.checked;
    kinks += res.skipped_kinks;
    ++points;
  }

  // MLP losses with every activation and both heads
  struct Case {
    layers::Activation act;
    layers::OutputKind head;
    train::LossKind loss;
  };
  for (const Case& c : {Case{layers::Activation::kSigmoid, layers::OutputKind::kLinear,
                             train::LossKind::kSquaredError},
                        Case{layers::Activation::kRelu, layers::OutputKind::kLinear,
                             train::LossKind::kSquaredError},
                        Case{layers::Activation::kElu, layers::OutputKind::kLinear,
                             train::LossKind::kSquaredError},
                        Case{layers::Activation::kSigmoid, layers::OutputKind::kSigmoid,
                             train::LossKind::kBinaryCrossEntropy}}) {
    train::Model model;
    model.spec.layer_dims = {4, 8, 2};
    model.spec.activation = c.act;
    model.spec.output_kind = c.head;
    model.loss = c.loss;
    for (std::uint64_t seed = 40; seed < 50; ++seed) {
      RngState rng{seed, 0};
      ad::ParamMap params = layers::init_mlp_params(model.spec, rng);
      Tensor x = normal_vector(4, rng);
      std::vector<double> yv(2);
      for (auto& v : yv)
        v = c.loss == train::LossKind::kBinaryCrossEntropy
                ? static_cast<double>(draw_below(rng, 2))
                : draw_normal(rng);
      Tensor y({2}, yv);
      ad::ProgramFn f = [&model, x, y](ad::Tape& t) {
        RngState unused{0, 0};
        return train::example_loss(t, model, x, y, layers::Mode::kProduction, unused);
      };
      check::GradcheckResult res = check::gradcheck(f, params, {}, 1e-5, 1e-6);
      if (!res.passed) return {false, "mlp case failed at seed " + std::to_string(seed)};
      max_rel = std::max(max_rel, res.max_rel_err);
      coords += res.checked;
      kinks += res.skipped_kinks;
      ++points;
    }
  }

  // recurrent composition: 12-step unrolled LSTM
  for (std::uint64_t seed = 900; seed < 910; ++seed) {
    RngState rng{seed, 0};
    ad::ParamMap params = layers::init_lstm_params(2, 3, rng);
    std::vector<Tensor> xs;
    for (int t = 0; t < 12; ++t) xs.push_back(normal_vector(2, rng));
    Tensor target = normal_vector(3, rng);
    ad::ProgramFn f = [&xs, target](ad::Tape& t) {
      layers::LstmVars state{t.constant(Tensor::zeros({3})), t.constant(Tensor::zeros({3}))};
      for (const Tensor& x : xs) state = layers::lstm_cell(t, t.constant(x), state);
      ad::Var err = ad::sub(state.hidden, t.constant(target));
      return ad::reduce_sum(ad::mul(err, err));
    };
    check::GradcheckResult res = check::gradcheck(f, params, {}, 1e-5, 1e-6);
    if (!res.passed)
      return {false, "unrolled lstm failed at seed " + std::to_string(seed)};
    max_rel = std::max(max_rel, res.max_rel_err);
    coords += res.checked;
    kinks += res.skipped_kinks;
    ++points;
  }

  return {max_rel < 1e-6,
          std::to_string(points) + " points, " + std::to_string(coords) +
              " coordinates, max rel err " + fmt(max_rel) + ", " + std::to_string(kinks) +
              " kink-skipped"};
}

// --------------------------------------------------------------------------
// 2: gradient of the mean equals the mean of gradients.

Outcome check_commute() {
  data::DatasetSpec dspec;
  dspec.generator = data::Generator::kGaussianBlobs;
  dspec.n_train = 64;
  dspec.n_val = 1;
  dspec.dim = 5;
  dspec.noise_sigma = 0.8;
  auto [tr, val] = data::generate_dataset(dspec, 31);

  train::Model model;
  model.spec.layer_dims = {5, 8, 1};
  RngState rng{31, 7};
  ad::ParamMap params = layers::init_mlp_params(model.spec, rng);

  double worst = 0.0;
  for (std::size_t b : {std::size_t{1}, std::size_t{7}, std::size_t{64}}) {
    std::vector<std::uint32_t> idx(b);
    for (std::size_t i = 0; i < b; ++i) idx[i] = static_cast<std::uint32_t>(i);
    train::Dataset sub;
    sub.inputs.assign(tr.inputs.begin(), tr.inputs.begin() + static_cast<std::ptrdiff_t>(b));
    sub.targets.assign(tr.targets.begin(), tr.targets.begin() + static_cast<std::ptrdiff_t>(b));
    ad::Gradient left = train::grad_of_mean(model, params, tr, idx);
    ad::Gradient right = train::grad_mean(model, params, sub);
    for (const auto& [name, g] : left.by_parameter) {
      const Tensor& h = right.by_parameter.at(name);
      for (std::size_t i = 0; i < g.size(); ++i) worst = std::max(worst, std::abs(g[i] - h[i]));
    }
  }
  return {worst < 1e-12, "max elementwise diff " + fmt(worst) + " over batches {1,7,64}"};
}

// --------------------------------------------------------------------------
// 3: size-weighted minibatch gradients average to the full-dataset gradient.

Outcome check_sgd_unbiasedness() {
  data::DatasetSpec dspec;
  dspec.generator = data::Generator::kLinearTeacher;
  dspec.n_train = 19;  // 4+4+4+4+3: the last block is smaller
  dspec.n_val = 1;
  dspec.dim = 4;
  dspec.noise_sigma = 0.3;
  auto [tr, val] = data::generate_dataset(dspec, 404);

  train::Model model;
  model.spec.layer_dims = {4, 6, 1};
  RngState rng{404, 9};
  ad::ParamMap params = layers::init_mlp_params(model.spec, rng);

  RngState shuffle{404, 1};
  auto schedule = train::epoch_schedule(tr.size(), 4, shuffle);

  std::vector<int> hits(tr.size(), 0);
  ad::ParamMap weighted;
  for (const auto& [name, t] : params) weighted.emplace(name, Tensor::zeros(t.shape()));
  for (const auto& block : schedule) {
    for (std::uint32_t i : block) ++hits[i];
    ad::Gradient g = train::grad_of_mean(model, params, tr, block);
    double w = double(block.size()) / double(tr.size());
    for (auto& [name, acc] : weighted) {
      const Tensor& gb = g.by_parameter.at(name);
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w * gb[i];
    }
  }
  for (int h : hits)
    if (h != 1) return {false, "epoch schedule is not a partition of the dataset"};

  ad::Gradient full = train::grad_mean(model, params, tr);
  double worst = 0.0;
  for (const auto& [name, acc] : weighted) {
    const Tensor& f = full.by_parameter.at(name);
    for (std::size_t i = 0; i < acc.size(); ++i)
      worst = std::max(worst, std::abs(acc[i] - f[i]));
  }
  return {worst < 1e-10, std::to_string(schedule.size()) +
                             " blocks over 19 examples; max elementwise diff vs full gradient " +
                             fmt(worst)};
}

// --------------------------------------------------------------------------
// 4: backward replay equals the full-tape hypergradient oracle.

rev::BatchProgram half_square_obj() {
  return [](ad::Tape& t, const std::vector<std::uint32_t>&) {
    ad::Var w = t.param("w");
    return ad::mul(t.scalar(0.5), ad::reduce_sum(ad::mul(w, w)));
  };
}

Outcome check_reverse_replay() {
  // (a) one-step quadratic with known hypergradients
  ad::ProgramFn vq = [](ad::Tape& t) {
    ad::Var w = t.param("w");
    return ad::mul(t.scalar(0.5), ad::reduce_sum(ad::mul(w, w)));
  };
  ad::ParamMap q0{{"w", Tensor::vector({1.0})}};
  rev::SgdRun qrun;
  qrun.eta = 0.1;
  qrun.schedule = {{0u}};
  rev::ForwardRecord qf = rev::train_forward_record(half_square_obj(), q0, qrun);
  rev::Hypergrad qr = rev::reverse_replay_hypergrad(half_square_obj(), qf.wT, qf.trace, vq);
  rev::FullTapeResult qfull = rev::hypergrad_full_tape(half_square_obj(), q0, qrun, vq);
  double quad_eta_err = std::abs(qr.d_eta - (-0.9));
  double quad_w0_err = std::abs(qr.d_w0.at("w")[0] - 0.81);
  double quad_oracle_diff = std::max(std::abs(qr.d_eta - qfull.hypergrad.d_eta),
                                     std::abs(qr.d_w0.at("w")[0] - qfull.hypergrad.d_w0.at("w")[0]));
  if (quad_eta_err > 1e-12 || quad_w0_err > 1e-12 || quad_oracle_diff > 1e-12)
    return {false, "quadratic: d_eta err " + fmt(quad_eta_err) + ", d_w0 err " +
                       fmt(quad_w0_err) + ", oracle diff " + fmt(quad_oracle_diff)};

  // (b) 200-step two-layer MLP
  data::DatasetSpec dspec;
  dspec.generator = data::Generator::kLinearTeacher;
  dspec.n_train = 20;
  dspec.n_val = 12;
  dspec.dim = 3;
  dspec.noise_sigma = 0.1;
  auto [tr, val] = data::generate_dataset(dspec, 51);

  train::Model model;
  model.spec.layer_dims = {3, 6, 1};
  train::TrainConfig tc;
  tc.eta = 0.05;
  tc.batch_size = 4;
  tc.max_epochs = 40;
  tc.seed = 51;

  RngState init = RngState{tc.seed, 0}.substream(0);
  ad::ParamMap w0 = layers::init_mlp_params(model.spec, init);
  rev::SgdRun run = rev::make_run(tr.size(), tc, tc.max_epochs);
  rev::BatchProgram obj = rev::make_batch_objective(model, tr);
  ad::ProgramFn vobj = rev::make_validation_objective(model, val);

  rev::ForwardRecord fwd = rev::train_forward_record(obj, w0, run);
  rev::Hypergrad replay = rev::reverse_replay_hypergrad(obj, fwd.wT, fwd.trace, vobj);
  rev::FullTapeResult full = rev::hypergrad_full_tape(obj, w0, run, vobj);

  double eta_diff = std::abs(replay.d_eta - full.hypergrad.d_eta);
  double w0_diff = 0.0;
  for (const auto& [name, t] : replay.d_w0) {
    const Tensor& u = full.hypergrad.d_w0.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) w0_diff = std::max(w0_diff, std::abs(t[i] - u[i]));
  }

  double hstep = 1e-4;
  auto val_at = [&](double eta) {
    rev::SgdRun r2 = run;
    r2.eta = eta;
    return ad::eval_value(vobj, rev::train_forward_record(obj, w0, r2).wT, {});
  };
  double fd = (val_at(run.eta + hstep) - val_at(run.eta - hstep)) / (2.0 * hstep);
  double fd_rel = std::abs(fd - replay.d_eta) / std::max(1e-12, std::abs(fd));

  std::size_t encoded = fwd.trace.encoded_bytes();
  std::size_t raw = fwd.trace.raw_trajectory_bytes();
  double ratio = double(encoded) / double(raw);

  bool pass = run.schedule.size() == 200 && eta_diff <= 1e-12 && w0_diff <= 1e-12 &&
              fd_rel < 1e-4 && encoded < raw;
  return {pass, "200-step MLP: replay vs full-tape d_eta diff " + fmt(eta_diff) +
                    ", d_w0 diff " + fmt(w0_diff) + ", d_eta FD rel err " + fmt(fd_rel) +
                    ", trace " + std::to_string(encoded) + "/" + std::to_string(raw) +
                    " bytes (ratio " + fmt(ratio) + ")"};
}

// --------------------------------------------------------------------------
// 5: checksums hold along the whole trajectory and corruption is caught.

Outcome check_checksums() {
  data::DatasetSpec dspec;
  dspec.generator = data::Generator::kLinearTeacher;
  dspec.n_train = 10;
  dspec.n_val = 6;
  dspec.dim = 2;
  dspec.noise_sigma = 0.05;
  auto [tr, val] = data::generate_dataset(dspec, 61);

  train::Model model;
  model.spec.layer_dims = {2, 4, 1};
  train::TrainConfig tc;
  tc.eta = 0.08;
  tc.batch_size = 3;
  tc.max_epochs = 15;
  tc.seed = 61;

  RngState init = RngState{tc.seed, 0}.substream(0);
  ad::ParamMap w0 = layers::init_mlp_params(model.spec, init);
  rev::SgdRun run = rev::make_run(tr.size(), tc, tc.max_epochs);
  rev::BatchProgram obj = rev::make_batch_objective(model, tr);
  ad::ProgramFn vobj = rev::make_validation_objective(model, val);
  rev::ForwardRecord fwd = rev::train_forward_record(obj, w0, run);

  // independent trajectory replica: same public calls, so checksums must agree
  std::size_t matched = 0;
  ad::ParamMap w = w0;
  for (std::size_t t = 0; t < run.schedule.size(); ++t) {
    if (rev::params_checksum(w) != fwd.trace.step_checksums[t])
      return {false, "step checksum mismatch at t=" + std::to_string(t)};
    ++matched;
    auto prog = [&](ad::Tape& tape) { return obj(tape, run.schedule[t]); };
    ad::Gradient g = ad::grad(prog, w, {});
    w = train::sgd_step(w, g, run.eta);
  }
  if (rev::params_checksum(w) != fwd.trace.final_checksum)
    return {false, "final checksum mismatch"};

  // a clean replay passes all verifications
  rev::Hypergrad hg = rev::reverse_replay_hypergrad(obj, fwd.wT, fwd.trace, vobj);
  (void)hg;

  // corrupting one residual byte is caught and names the step
  rev::ResidualTrace bad = fwd.trace;
  std::size_t victim = bad.residuals.size() / 2;
  if (bad.residuals[victim].empty()) return {false, "empty residual block"};
  bad.residuals[victim][bad.residuals[victim].size() / 2] ^= 0x10;
  bool caught = false;
  std::string msg;
  try {
    rev::reverse_replay_hypergrad(obj, fwd.wT, bad, vobj);
  } catch (const CorruptionError& e) {
    caught = true;
    msg = e.what();
  }
  if (!caught) return {false, "tampered residual was not detected"};

  // corrupting the saved file is caught on load or replay
  std::string path = out_path("checksum_tamper.trace");
  rev::save_trace(fwd.trace, path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-9, std::ios::end);  // inside the last residual payload
    char c;
    f.seekg(-9, std::ios::end);
    f.get(c);
    f.seekp(-9, std::ios::end);
    f.put(static_cast<char>(c ^ 0x04));
  }
  bool file_caught = false;
  try {
    rev::ResidualTrace loaded = rev::load_trace(path);
    rev::reverse_replay_hypergrad(obj, fwd.wT, loaded, vobj);
  } catch (const CorruptionError&) {
    file_caught = true;
  }

  bool pass = caught && file_caught;
  return {pass, std::to_string(matched) + "+1 checksums verified against an independent "
                    "trajectory; tampering detected (\"" + msg + "\")"};
}

// --------------------------------------------------------------------------
// 6: Monte-Carlo means of the truncated estimator match direct solves.

struct McCase {
  std::string name;
  newton::HvpOracle oracle;
  double c = 1.0;
  newton::NeumannConfig cfg;
  Tensor v{std::vector<std::size_t>{0}, {}};
  Tensor exact{std::vector<std::size_t>{0}, {}};
};

Outcome check_estimator_mc() {
  const int samples = 100000;
  RngState root{515, 0};
  std::vector<McCase> cases;

  const std::array<std::size_t, 5> dims = {2, 5, 10, 5, 10};
  for (std::size_t k = 0; k < dims.size(); ++k) {
    RngState gen = root.substream(k);
    McCase c;
    c.name = "spd" + std::to_string(k) + "(d=" + std::to_string(dims[k]) + ")";
    Tensor h = rotated_spd(dims[k], 0.15, 0.85, gen);
    c.oracle = newton::make_matrix_oracle(h);
    c.cfg.q = 0.91;
    c.cfg.repeats = 1;
    c.v = normal_vector(dims[k], gen);
    c.exact = ts::solve_matrix(h, c.v);
    cases.push_back(std::move(c));
  }
  {
    McCase c;
    c.name = "diag(0.5)";
    c.oracle = newton::make_matrix_oracle(Tensor::matrix(2, 2, {0.5, 0.0, 0.0, 0.5}));
    c.cfg.q = 0.91;
    c.cfg.repeats = 1;
    c.v = Tensor::vector({1.0, 0.0});
    c.exact = Tensor::vector({2.0, 0.0});  // H^{-1} v analytically
    cases.push_back(std::move(c));
  }
  {
    // stochastic minibatch oracle on a damped logistic-regression Hessian
    data::DatasetSpec dspec;
    dspec.generator = data::Generator::kGaussianBlobs;
    dspec.n_train = 24;
    dspec.n_val = 1;
    dspec.dim = 4;
    dspec.noise_sigma = 0.6;
    auto [tr, val] = data::generate_dataset(dspec, 515);
    train::Model logreg;
    logreg.spec.layer_dims = {4, 1};
    logreg.spec.output_kind = layers::OutputKind::kSigmoid;
    logreg.loss = train::LossKind::kBinaryCrossEntropy;

    RngState gen = root.substream(8);
    ad::ParamMap params = layers::init_mlp_params(logreg.spec, gen);
    std::size_t d = ad::param_count(params);

    newton::NeumannConfig base;
    base.damping = 1.0;
    base.scale_margin = 0.25;
    base.repeats = 1;

    newton::HvpOracle exact = newton::stochastic_hvp_oracle(logreg, params, tr, tr.size());
    std::vector<double> hm(d * d);
    RngState unused{0, 0};
    for (std::size_t j = 0; j < d; ++j) {
      std::vector<double> e(d, 0.0);
      e[j] = 1.0;
      Tensor col = exact.apply(Tensor({d}, e), unused);
      for (std::size_t i = 0; i < d; ++i) hm[i * d + j] = col[i];
      hm[j * d + j] += base.damping;
    }

    newton::HvpOracle stoch = newton::stochastic_hvp_oracle(logreg, params, tr, 8);
    newton::ScaledOracle scaled = newton::scale_oracle(stoch, base);
    McCase c;
    c.name = "logistic(d=" + std::to_string(d) + ")";
    c.oracle = scaled.oracle;
    c.c = scaled.c;
    c.cfg = base;
    c.cfg.q = newton::auto_q(scaled);
    newton::validate_truncation(c.cfg, scaled);
    c.v = normal_vector(d, gen);
    c.exact = ts::solve_matrix(Tensor({d, d}, hm), c.v);
    cases.push_back(std::move(c));
  }

  double max_sig = 0.0;
  for (std::size_t k = 0; k < cases.size(); ++k) {
    McCase& c = cases[k];
    std::size_t d = c.v.size();
    std::vector<double> mean(d, 0.0), m2(d, 0.0);
    RngState mc = root.substream(100 + k);
    for (int s = 0; s < samples; ++s) {
      Tensor est = newton::estimate_hinv_v(c.oracle, c.v, c.cfg, mc);
      for (std::size_t i = 0; i < d; ++i) {
        double x = c.c * est[i];
        double delta = x - mean[i];
        mean[i] += delta / double(s + 1);
        m2[i] += delta * (x - mean[i]);
      }
    }
    for (std::size_t i = 0; i < d; ++i) {
      double se = std::sqrt(m2[i] / (double(samples) * double(samples - 1)));
      double dev = std::abs(mean[i] - c.exact[i]);
      double sig = se > 0 ? dev / se : (dev == 0 ? 0.0 : 1e9);
      max_sig = std::max(max_sig, sig);
      if (dev > 3.0 * se + 1e-12)
        return {false, c.name + " coord " + std::to_string(i) + " off by " + fmt(sig) +
                           " standard errors"};
    }
  }
  return {true, std::to_string(cases.size()) + " cases x " + std::to_string(samples) +
                    " single-draw estimates; worst deviation " + fmt(max_sig) + " SE"};
}

// --------------------------------------------------------------------------
// 7: one stochastic Newton step contracts a stiff quadratic.

Outcome check_newton_contraction() {
  Tensor h = Tensor::matrix(2, 2, {1.0, 0.0, 0.0, 100.0});
  newton::HvpOracle oracle = newton::make_matrix_oracle(h);
  // Head geometric soaks up the fast direction (c*100 ~ 0.8 per term); the
  // tail matches the slow one (decay 1 - c, c ~ 1/125), where tail_q halfway
  // between rho^2 and 1 minimizes single-draw variance.
  newton::NeumannConfig cfg;
  cfg.q = 0.2;
  cfg.tail_q = 0.992;
  cfg.tail_weight = 0.5;
  cfg.repeats = 100;
  cfg.scale_margin = 0.25;
  newton::ScaledOracle scaled = newton::scale_oracle(oracle, cfg);
  newton::validate_truncation(cfg, scaled);

  std::vector<double> ratios;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    RngState rng{700 + seed, 0};
    Tensor w = normal_vector(2, rng);
    double n0 = norm2(w);
    for (std::size_t i = 0; i < 2; ++i) w[i] /= n0;  // unit distance from w* = 0
    Tensor g = Tensor({2}, {1.0 * w[0], 100.0 * w[1]});  // H w, analytic
    Tensor d = newton::newton_direction(scaled, g, cfg, rng);
    Tensor w1 = sub(w, d);  // alpha = 1
    ratios.push_back(norm2(w1));
  }
  double med = ts::median(ratios);
  return {med <= 0.1, "median error reduction over 20 seeds: " + fmt(1.0 / med) +
                          "x (ratio " + fmt(med) + ", repeats=100, alpha=1)"};
}

// --------------------------------------------------------------------------
// 8: the trick inventory behaves as specified.

Outcome check_tricks() {
  std::string parts;

  // componentwise clipping: bounded sup norm, signs preserved
  {
    ad::Gradient g;
    g.by_parameter.emplace("w", Tensor::vector({3.0, -0.2, -7.0, 0.4}));
    ad::Gradient c = train::clip_gradient(g, 0.5);
    const Tensor& t = c.by_parameter.at("w");
    if (norm_inf(t) > 0.5) return {false, "clipped sup norm exceeds the threshold"};
    if (!(t[0] == 0.5 && t[1] == -0.2 && t[2] == -0.5 && t[3] == 0.4))
      return {false, "clipping changed the wrong components"};
    parts += "clip ok";
  }

  // train-mode dropout expectation within a 3-sigma band of (1-p)x
  {
    const double p = 0.3;
    const std::size_t n = 100, draws = 10000;
    RngState rng{808, 0};
    double sum = 0.0;
    Tensor x = Tensor::ones({n});
    for (std::size_t d = 0; d < draws; ++d) {
      layers::DropoutResult r = layers::dropout_forward(x, p, layers::Mode::kTrain, rng);
      for (std::size_t i = 0; i < n; ++i) sum += r.output[i];
    }
    double total = double(n) * double(draws);
    double mean = sum / total;  // per-unit mean, x = 1 everywhere
    double sigma = std::sqrt(p * (1.0 - p) / total);
    double sig = std::abs(mean - (1.0 - p)) / sigma;
    if (sig > 3.0) return {false, "dropout expectation off by " + fmt(sig) + " sigma"};
    // production mode rescales instead of sampling
    RngState prod_rng{1, 0};
    layers::DropoutResult r = layers::dropout_forward(x, p, layers::Mode::kProduction, prod_rng);
    for (std::size_t i = 0; i < n; ++i)
      if (r.output[i] != 1.0 - p) return {false, "production dropout did not rescale"};
    parts += "; dropout mean " + fmt(mean) + " vs 0.7 (" + fmt(sig) + " sigma)";
  }

  // early stopping halts and returns the best snapshot
  {
    data::DatasetSpec dspec;
    dspec.generator = data::Generator::kNoisyPoly;
    dspec.n_train = 16;
    dspec.n_val = 24;
    dspec.dim = 1;
    dspec.noise_sigma = 0.3;
    auto [tr, val] = data::generate_dataset(dspec, 88);

    train::Model model;
    model.spec.layer_dims = {1, 12, 1};
    train::TrainConfig tc;
    tc.eta = 0.1;
    tc.batch_size = 4;
    tc.max_epochs = 800;
    train::EarlyStopConfig es;
    es.patience = 40;
    tc.early_stop = es;
    tc.seed = 88;

    train::TrainResult res = train::train(model, tr, val, tc);
    double returned = train::loss_mean(model, res.params, val);
    double final_val = res.history.back().val_loss;
    if (!res.stopped_early)
      return {false, "early stopping never halted in " + std::to_string(tc.max_epochs) + " epochs"};
    if (returned > final_val)
      return {false, "returned params are worse than the final epoch"};
    parts += "; early stop at epoch " + std::to_string(res.epochs_run) + " (best " +
             fmt(returned) + " <= final " + fmt(final_val) + ")";
  }

  // LSTM hold-value: saturated gates carry the cell state 100 steps
  {
    RngState rng{909, 0};
    ad::ParamMap params = layers::init_lstm_params(2, 3, rng);
    for (auto& [name, t] : params) {
      if (name[0] == 'W')
        for (std::size_t i = 0; i < t.size(); ++i) t[i] *= 0.1;
    }
    for (std::size_t i = 0; i < 3; ++i) {
      params.at("bf")[i] = 20.0;   // forget gate pinned open
      params.at("bi")[i] = -20.0;  // input gate pinned shut
      params.at("bo")[i] = 0.0;
      params.at("bc")[i] = 0.0;
    }
    layers::LstmCellState st;
    st.hidden = Tensor::zeros({3});
    st.cell = Tensor::vector({0.7, -0.4, 0.2});
    Tensor c0 = st.cell;
    for (int t = 0; t < 100; ++t) {
      Tensor x = Tensor::vector({draw_uniform(rng, -1.0, 1.0), draw_uniform(rng, -1.0, 1.0)});
      st = layers::lstm_cell_apply(params, x, st);
    }
    double drift = 0.0;
    for (std::size_t i = 0; i < 3; ++i) drift = std::max(drift, std::abs(st.cell[i] - c0[i]));
    if (drift > 1e-6)
      return {false, "lstm cell drifted by " + fmt(drift) + " over 100 steps"};
    parts += "; lstm 100-step cell drift " + fmt(drift);
  }

  // glorot sample variance within 5% of 2/(fan_in+fan_out)
  {
    RngState rng{1010, 0};
    Tensor w = layers::glorot_init(200, 300, rng);
    double target = 2.0 / 500.0;
    double bound = std::sqrt(6.0 / 500.0);
    double m = 0, s2 = 0;
    for (std::size_t i = 0; i < w.size(); ++i) m += w[i];
    m /= double(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (std::abs(w[i]) > bound) return {false, "glorot draw outside its bound"};
      s2 += (w[i] - m) * (w[i] - m);
    }
    s2 /= double(w.size() - 1);
    double rel = std::abs(s2 - target) / target;
    if (rel > 0.05) return {false, "glorot variance off by " + fmt(100 * rel) + "%"};
    parts += "; glorot var within " + fmt(100 * rel) + "%";
  }

  return {true, parts};
}

// --------------------------------------------------------------------------
// 9: depth diagnostic separates sigmoid from relu gradient decay.

Outcome check_depth_diag() {
  lab::ExperimentConfig cfg;
  cfg.kind = "depth_diag";
  cfg.seed = 1212;
  cfg.depth = 20;
  cfg.output_csv = out_path("depth_diag.csv");
  lab::Report rep = lab::run_experiment(cfg);

  std::string body = ts::read_file_bytes(cfg.output_csv);
  std::size_t rows = 0;
  for (char ch : body)
    if (ch == '\n') ++rows;
  // header + depth x activations x seeds
  if (rows != 1 + 20 * 2 * 20)
    return {false, "expected 801 csv rows, found " + std::to_string(rows)};

  double med_sig = 0, med_relu = 0;
  for (const auto& [k, v] : rep.metrics) {
    if (k == "median_ratio_sigmoid") med_sig = v;
    if (k == "median_ratio_relu") med_relu = v;
  }
  return {rep.passed, "median first/last grad-norm ratio: sigmoid " + fmt(med_sig) +
                          " < relu " + fmt(med_relu) + " at depth 20 (800 data rows)"};
}

// --------------------------------------------------------------------------
// 10: identical configs produce byte-identical reports.

Outcome check_determinism() {
  // gradcheck experiment
  lab::ExperimentConfig gc;
  gc.kind = "gradcheck";
  gc.seed = 77;
  train::Model m;
  m.spec.layer_dims = {4, 8, 2};
  gc.model = m;
  gc.output_csv = out_path("det_gc_a.csv");
  lab::run_experiment(gc);
  gc.output_csv = out_path("det_gc_b.csv");
  lab::run_experiment(gc);
  if (ts::read_file_bytes(out_path("det_gc_a.csv")) !=
      ts::read_file_bytes(out_path("det_gc_b.csv")))
    return {false, "gradcheck reruns differ"};

  // reversible-training experiment, including the binary trace
  lab::ExperimentConfig rl;
  rl.kind = "revlearn_equiv";
  rl.seed = 78;
  train::Model rm;
  rm.spec.layer_dims = {3, 5, 1};
  rl.model = rm;
  data::DatasetSpec ds;
  ds.generator = data::Generator::kLinearTeacher;
  ds.n_train = 12;
  ds.n_val = 8;
  ds.dim = 3;
  ds.noise_sigma = 0.1;
  rl.dataset = ds;
  train::TrainConfig tc;
  tc.eta = 0.05;
  tc.batch_size = 4;
  tc.max_epochs = 10;
  tc.seed = 78;
  rl.train = tc;
  rl.output_csv = out_path("det_rl_a.csv");
  lab::Report ra = lab::run_experiment(rl);
  rl.output_csv = out_path("det_rl_b.csv");
  lab::Report rb = lab::run_experiment(rl);
  if (!ra.passed || !rb.passed) return {false, "revlearn experiment failed"};
  if (ts::read_file_bytes(out_path("det_rl_a.csv")) !=
      ts::read_file_bytes(out_path("det_rl_b.csv")))
    return {false, "revlearn csv reruns differ"};
  if (ts::read_file_bytes(out_path("det_rl_a.csv") + ".trace") !=
      ts::read_file_bytes(out_path("det_rl_b.csv") + ".trace"))
    return {false, "revlearn trace reruns differ"};

  // remaining cheap kinds, one rerun each
  auto rerun_identical = [](lab::ExperimentConfig cfg, const char* tag) {
    cfg.output_csv = out_path((std::string("det_") + tag + "_a.csv").c_str());
    lab::run_experiment(cfg);
    std::string first = ts::read_file_bytes(cfg.output_csv);
    cfg.output_csv = out_path((std::string("det_") + tag + "_b.csv").c_str());
    lab::run_experiment(cfg);
    return first == ts::read_file_bytes(cfg.output_csv);
  };

  lab::ExperimentConfig cm;
  cm.kind = "commute";
  cm.seed = 3;
  train::Model cmm;
  cmm.spec.layer_dims = {3, 4, 1};
  cm.model = cmm;
  data::DatasetSpec cds;
  cds.generator = data::Generator::kGaussianBlobs;
  cds.n_train = 64;
  cds.n_val = 1;
  cds.dim = 3;
  cds.noise_sigma = 0.8;
  cm.dataset = cds;
  if (!rerun_identical(cm, "commute")) return {false, "commute reruns differ"};

  lab::ExperimentConfig hy;
  hy.kind = "hyperopt";
  hy.seed = 4;
  hy.hyperopt = lab::HyperoptConfig{};
  if (!rerun_identical(hy, "hyperopt")) return {false, "hyperopt reruns differ"};

  lab::ExperimentConfig dd;
  dd.kind = "depth_diag";
  dd.seed = 5;
  dd.depth = 6;
  if (!rerun_identical(dd, "depth")) return {false, "depth_diag reruns differ"};

  return {true, "gradcheck, revlearn (csv + binary trace), commute, hyperopt, and "
                "depth_diag reruns are byte-identical"};
}

}  // namespace

int main() {
  std::printf("acceptance checks\n");

  auto timed_limit = [](const char* name, double secs, double limit) {
    return std::string(name) + " in " + fmt(secs) + "s (< " + fmt(limit) + "s)";
  };
  (void)timed_limit;

  {
    auto t0 = std::chrono::steady_clock::now();
    criterion(1, "reverse gradients match central differences", check_gradients_vs_fd);
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs >= 60.0) {
      std::printf("[FAIL]  1 runtime bound: %.1fs >= 60s\n", secs);
      ++g_failures;
    }
  }
  criterion(2, "grad of mean commutes with averaging", check_commute);
  criterion(3, "minibatch blocks average to the full gradient", check_sgd_unbiasedness);
  {
    auto t0 = std::chrono::steady_clock::now();
    criterion(4, "backward replay equals the full-tape oracle", check_reverse_replay);
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs >= 300.0) {
      std::printf("[FAIL]  4 runtime bound: %.1fs >= 300s\n", secs);
      ++g_failures;
    }
  }
  criterion(5, "trajectory checksums verified, corruption detected", check_checksums);
  {
    auto t0 = std::chrono::steady_clock::now();
    criterion(6, "estimator Monte-Carlo means match direct solves", check_estimator_mc);
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs >= 300.0) {
      std::printf("[FAIL]  6 runtime bound: %.1fs >= 300s\n", secs);
      ++g_failures;
    }
  }
  criterion(7, "stochastic Newton contracts a stiff quadratic 10x", check_newton_contraction);
  criterion(8, "clipping, dropout, early stop, lstm, glorot", check_tricks);
  criterion(9, "depth diagnostic ranks sigmoid decay above relu", check_depth_diag);
  criterion(10, "experiment reruns are byte-identical", check_determinism);

  if (g_failures == 0) {
    std::printf("all acceptance criteria satisfied\n");
    return 0;
  }
  std::printf("%d criterion(s) failed\n", g_failures);
  return 1;
}
