#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "gradlab/autodiff.hpp"
#include "gradlab/datasets.hpp"
#include "gradlab/layers.hpp"
#include "gradlab/neumann.hpp"
#include "gradlab/revlearn.hpp"
#include "gradlab/rng.hpp"
#include "gradlab/train.hpp"

using namespace gradlab;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, RngState& rng) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = draw_normal(rng);
  return Tensor(std::move(shape), std::move(v));
}

void BM_MatmulSquare(benchmark::State& state) {
  std::size_t n = static_cast<std::size_t>(state.range(0));
  RngState rng{1, 0};
  Tensor a = random_tensor({n, n}, rng);
  Tensor b = random_tensor({n, n}, rng);
  for (auto _ : state) {
    Tensor c = matmul(a, b);
    benchmark::DoNotOptimize(c);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_MatmulSquare)->Arg(16)->Arg(64)->Arg(128);

train::Model bench_model(std::vector<std::size_t> dims) {
  train::Model m;
  m.spec.layer_dims = std::move(dims);
  return m;
}

void BM_MlpGradient(benchmark::State& state) {
  train::Model model = bench_model({16, 32, 32, 1});
  RngState rng{2, 0};
  ad::ParamMap params = layers::init_mlp_params(model.spec, rng);
  Tensor x = random_tensor({16}, rng);
  Tensor y = random_tensor({1}, rng);
  ad::ProgramFn f = [&](ad::Tape& t) {
    RngState unused{0, 0};
    return train::example_loss(t, model, x, y, layers::Mode::kProduction, unused);
  };
  for (auto _ : state) {
    ad::Gradient g = ad::grad(f, params, {});
    benchmark::DoNotOptimize(g);
  }
}
BENCHMARK(BM_MlpGradient);

void BM_MlpHvp(benchmark::State& state) {
  train::Model model = bench_model({16, 32, 32, 1});
  RngState rng{3, 0};
  ad::ParamMap params = layers::init_mlp_params(model.spec, rng);
  Tensor x = random_tensor({16}, rng);
  Tensor y = random_tensor({1}, rng);
  ad::ProgramFn f = [&](ad::Tape& t) {
    RngState unused{0, 0};
    return train::example_loss(t, model, x, y, layers::Mode::kProduction, unused);
  };
  Tensor v = random_tensor({ad::param_count(params)}, rng);
  for (auto _ : state) {
    Tensor hv = ad::hvp(f, params, {}, v);
    benchmark::DoNotOptimize(hv);
  }
}
BENCHMARK(BM_MlpHvp);

void BM_ResidualRoundTrip(benchmark::State& state) {
  std::size_t n = static_cast<std::size_t>(state.range(0));
  RngState rng{4, 0};
  Tensor w = random_tensor({n}, rng);
  Tensor w_hat = w;
  for (std::size_t i = 0; i < n; ++i) w_hat[i] = w[i] * (1.0 + 1e-9 * draw_normal(rng));
  Tensor delta = rev::xor_diff(w, w_hat);
  for (auto _ : state) {
    std::vector<std::uint8_t> enc = rev::residual_encode(delta);
    Tensor dec = rev::residual_decode(enc, n);
    benchmark::DoNotOptimize(dec);
  }
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(n * 8));
}
BENCHMARK(BM_ResidualRoundTrip)->Arg(64)->Arg(4096);

void BM_NeumannEstimate(benchmark::State& state) {
  RngState rng{5, 0};
  Tensor h = Tensor::matrix(8, 8, std::vector<double>(64, 0.0));
  for (std::size_t i = 0; i < 8; ++i) h[i * 8 + i] = 0.2 + 0.08 * double(i);
  newton::HvpOracle oracle = newton::make_matrix_oracle(h);
  Tensor v = random_tensor({8}, rng);
  newton::NeumannConfig cfg;
  cfg.q = 0.9;
  cfg.repeats = 10;
  for (auto _ : state) {
    Tensor est = newton::estimate_hinv_v(oracle, v, cfg, rng);
    benchmark::DoNotOptimize(est);
  }
}
BENCHMARK(BM_NeumannEstimate);

void BM_SgdEpoch(benchmark::State& state) {
  data::DatasetSpec spec;
  spec.generator = data::Generator::kLinearTeacher;
  spec.n_train = 64;
  spec.n_val = 1;
  spec.dim = 8;
  spec.noise_sigma = 0.1;
  auto [tr, val] = data::generate_dataset(spec, 6);
  train::Model model = bench_model({8, 16, 1});
  train::TrainConfig cfg;
  cfg.eta = 0.05;
  cfg.batch_size = 8;
  cfg.max_epochs = 1;
  cfg.seed = 6;
  for (auto _ : state) {
    train::TrainResult res = train::train(model, tr, val, cfg);
    benchmark::DoNotOptimize(res);
  }
}
BENCHMARK(BM_SgdEpoch);

}  // namespace

BENCHMARK_MAIN();
