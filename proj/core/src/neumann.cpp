#include "gradlab/neumann.hpp"

#include <cmath>

namespace gradlab::newton {

void NeumannConfig::validate() const {
  if (!(q > 0.0 && q < 1.0)) throw DomainError("NeumannConfig: q must lie in (0, 1)");
  if (!(scale_margin > 0.0)) throw DomainError("NeumannConfig: scale_margin must be positive");
  if (!(damping >= 0.0)) throw DomainError("NeumannConfig: damping must be non-negative");
  if (repeats < 1) throw DomainError("NeumannConfig: repeats must be >= 1");
  if (!(tail_weight >= 0.0 && tail_weight < 1.0)) {
    throw DomainError("NeumannConfig: tail_weight must lie in [0, 1)");
  }
  if (tail_weight > 0.0 && !(tail_q > 0.0 && tail_q < 1.0)) {
    throw DomainError("NeumannConfig: tail_q must lie in (0, 1) when tail_weight > 0");
  }
}

namespace {

std::uint64_t geometric_index(double q, RngState& rng) {
  double u = draw_uniform(rng, 0.0, 1.0);
  if (u == 0.0) return 0;
  double i = std::floor(std::log(1.0 - u) / std::log(q));
  return i < 0.0 ? 0 : static_cast<std::uint64_t>(i);
}

}  // namespace

Truncation sample_truncation(double q, RngState& rng) {
  if (!(q > 0.0 && q < 1.0)) throw DomainError("sample_truncation: q must lie in (0, 1)");
  std::uint64_t i = geometric_index(q, rng);
  return {i, (1.0 - q) * std::pow(q, static_cast<double>(i))};
}

Truncation sample_truncation(const NeumannConfig& cfg, RngState& rng) {
  cfg.validate();
  if (cfg.tail_weight == 0.0) return sample_truncation(cfg.q, rng);
  double pick = draw_uniform(rng, 0.0, 1.0);
  std::uint64_t i = geometric_index(pick < cfg.tail_weight ? cfg.tail_q : cfg.q, rng);
  return {i, truncation_pmf(cfg, i)};
}

double truncation_pmf(const NeumannConfig& cfg, std::uint64_t i) {
  double di = static_cast<double>(i);
  double body = (1.0 - cfg.tail_weight) * (1.0 - cfg.q) * std::pow(cfg.q, di);
  if (cfg.tail_weight == 0.0) return body;
  return body + cfg.tail_weight * (1.0 - cfg.tail_q) * std::pow(cfg.tail_q, di);
}

Tensor estimate_hinv_v(const HvpOracle& oracle, const Tensor& v, const NeumannConfig& cfg,
                       RngState& rng) {
  cfg.validate();
  if (v.rank() != 1 || v.size() != oracle.dim) {
    throw DimensionError("estimate_hinv_v: direction " + v.shape_str() +
                         " does not match oracle dim " + std::to_string(oracle.dim));
  }
  Tensor acc = Tensor::zeros({oracle.dim});
  for (int r = 0; r < cfg.repeats; ++r) {
    Truncation t = sample_truncation(cfg, rng);
    Tensor u = v;
    for (std::uint64_t k = 0; k < t.index; ++k) {
      u = sub(u, oracle.apply(u, rng));
      if (!u.all_finite()) {
        throw DivergenceError("Neumann iterate diverged after " + std::to_string(k + 1) +
                              " applications; rescale the operator (larger scale_margin or "
                              "damping)");
      }
    }
    acc = axpy(acc, 1.0 / t.prob, u);
  }
  return scale(acc, 1.0 / static_cast<double>(cfg.repeats));
}

namespace {

// 50 power-iteration steps from a fixed start vector; returns the final
// Rayleigh quotient. `op` must be symmetric (as Hessians are).
double power_iteration(const std::function<Tensor(const Tensor&, RngState&)>& op, std::size_t dim,
                       RngState& rng) {
  RngState start{0x9e3779b97f4a7c15ull, 0};
  Tensor x = Tensor::zeros({dim});
  for (std::size_t i = 0; i < dim; ++i) x[i] = draw_normal(start);
  double nx = norm2(x);
  x = scale(x, 1.0 / nx);
  for (int step = 0; step < 50; ++step) {
    Tensor y = op(x, rng);
    double ny = norm2(y);
    if (ny == 0.0) return 0.0;
    x = scale(y, 1.0 / ny);
  }
  Tensor y = op(x, rng);
  return dot(x, y);
}

}  // namespace

ScaledOracle scale_oracle(const HvpOracle& oracle, const NeumannConfig& cfg) {
  cfg.validate();
  if (oracle.dim < 1) throw DomainError("scale_oracle: oracle has no dimensions");
  const double damping = cfg.damping;
  auto damped = [apply = oracle.apply, damping](const Tensor& v, RngState& rng) {
    return axpy(apply(v, rng), damping, v);
  };

  RngState power_rng{0x5ca1ab1e, 0};
  double lam_max = power_iteration(damped, oracle.dim, power_rng);
  if (!(lam_max > 0.0) || !std::isfinite(lam_max)) {
    throw NotPositiveDefiniteError("top eigenvalue estimate " + std::to_string(lam_max) +
                                   " is not positive; increase damping");
  }
  auto shifted = [damped, lam_max](const Tensor& v, RngState& rng) {
    return axpy(scale(v, lam_max), -1.0, damped(v, rng));
  };
  double mu = power_iteration(shifted, oracle.dim, power_rng);
  double lam_min = lam_max - std::max(mu, 0.0);
  if (!(lam_min > 0.0)) {
    throw NotPositiveDefiniteError("bottom eigenvalue estimate " + std::to_string(lam_min) +
                                   " is not positive; increase damping");
  }

  ScaledOracle out;
  out.c = 1.0 / (lam_max * (1.0 + cfg.scale_margin));
  out.lambda_max_hat = lam_max;
  out.lambda_min_hat = lam_min;
  out.rho_hat = std::max(std::abs(1.0 - out.c * lam_min), std::abs(1.0 - out.c * lam_max));
  out.oracle.kind = oracle.kind;
  out.oracle.dim = oracle.dim;
  out.oracle.apply = [damped, c = out.c](const Tensor& v, RngState& rng) {
    return scale(damped(v, rng), c);
  };
  return out;
}

double auto_q(const ScaledOracle& scaled) {
  double q = std::max(0.5, scaled.rho_hat * scaled.rho_hat + 0.1);
  if (q >= 1.0) {
    throw DomainError("auto_q: spectral radius " + std::to_string(scaled.rho_hat) +
                      " needs q >= 1; add damping or configure the tail mixture");
  }
  return q;
}

void validate_truncation(const NeumannConfig& cfg, const ScaledOracle& scaled) {
  cfg.validate();
  double q_eff = cfg.tail_weight > 0.0 ? std::max(cfg.q, cfg.tail_q) : cfg.q;
  double rho2 = scaled.rho_hat * scaled.rho_hat;
  if (!(rho2 < q_eff)) {
    throw DomainError("truncation tail too thin: rho^2 = " + std::to_string(rho2) +
                      " >= effective q = " + std::to_string(q_eff) +
                      "; the estimator variance would diverge");
  }
}

HvpOracle make_matrix_oracle(const Tensor& h) {
  if (h.rank() != 2 || h.rows() != h.cols()) {
    throw DimensionError("make_matrix_oracle: need a square matrix, got " + h.shape_str());
  }
  HvpOracle o;
  o.kind = HvpOracle::Kind::kExact;
  o.dim = h.rows();
  o.apply = [h](const Tensor& v, RngState&) { return matmul(h, v); };
  return o;
}

std::vector<std::uint32_t> sample_batch(std::size_t n, std::size_t batch_size, RngState& rng) {
  if (n < 1) throw DomainError("sample_batch: empty dataset");
  if (batch_size < 1) throw DomainError("sample_batch: batch_size must be >= 1");
  std::vector<std::uint32_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = static_cast<std::uint32_t>(i);
  if (batch_size >= n) return pool;  // natural order: degrades to the exact oracle
  for (std::size_t k = 0; k < batch_size; ++k) {
    std::size_t j = k + static_cast<std::size_t>(draw_below(rng, n - k));
    std::swap(pool[k], pool[j]);
  }
  pool.resize(batch_size);
  return pool;
}

HvpOracle stochastic_hvp_oracle(const train::Model& model, const ad::ParamMap& params,
                                const train::Dataset& data, std::size_t batch_size) {
  data.validate();
  HvpOracle o;
  o.dim = ad::param_count(params);
  o.kind = batch_size >= data.size() ? HvpOracle::Kind::kExact : HvpOracle::Kind::kStochastic;
  o.apply = [model, params, data, batch_size](const Tensor& v, RngState& rng) {
    std::vector<std::uint32_t> idx = sample_batch(data.size(), batch_size, rng);
    return ad::hvp(train::batch_loss_program(model, data, std::move(idx)), params, {}, v);
  };
  return o;
}

Tensor newton_direction(const ScaledOracle& scaled, const Tensor& g, const NeumannConfig& cfg,
                        RngState& rng) {
  return scale(estimate_hinv_v(scaled.oracle, g, cfg, rng), scaled.c);
}

ad::ParamMap stochastic_newton_step(const train::Model& model, const ad::ParamMap& params,
                                    const train::Dataset& data, const NewtonConfig& cfg,
                                    RngState& rng) {
  cfg.neumann.validate();
  std::vector<std::uint32_t> idx = sample_batch(data.size(), cfg.batch_size, rng);
  ad::Gradient g = train::grad_of_mean(model, params, data, idx);
  Tensor g_flat = ad::flatten_gradient(params, g);
  if (norm2(g_flat) == 0.0) return params;

  HvpOracle oracle = stochastic_hvp_oracle(model, params, data, cfg.batch_size);
  ScaledOracle scaled = scale_oracle(oracle, cfg.neumann);
  validate_truncation(cfg.neumann, scaled);
  Tensor d = newton_direction(scaled, g_flat, cfg.neumann, rng);
  return ad::unflatten_like(params, axpy(ad::flatten_params(params), -cfg.alpha, d));
}

}  // namespace gradlab::newton
