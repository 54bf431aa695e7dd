#pragma once

#include <cstdint>
#include <functional>

#include "gradlab/autodiff.hpp"
#include "gradlab/rng.hpp"
#include "gradlab/train.hpp"

namespace gradlab::newton {

struct NeumannConfig {
  double q = 0.5;            // geometric truncation parameter
  double scale_margin = 0.25;
  double damping = 0.0;      // added multiple of the identity
  int repeats = 10;          // independent estimates averaged
  // Optional heavy-tail mixture: with probability tail_weight the truncation
  // index is drawn from Geometric(tail_q) instead of Geometric(q). The pmf
  // stays full-support; the slow tail keeps the estimator variance finite on
  // ill-conditioned spectra where a single geometric cannot.
  double tail_q = 0.0;
  double tail_weight = 0.0;

  void validate() const;
};

struct HvpOracle {
  enum class Kind { kExact, kStochastic };
  std::function<Tensor(const Tensor&, RngState&)> apply;
  Kind kind = Kind::kExact;
  std::size_t dim = 0;
};

struct Truncation {
  std::uint64_t index = 0;
  double prob = 0.0;
};

/// i ~ Geometric(q): p(i) = (1-q) q^i, i >= 0.
Truncation sample_truncation(double q, RngState& rng);

/// Mixture-aware draw; prob is the full mixture pmf at the drawn index.
Truncation sample_truncation(const NeumannConfig& cfg, RngState& rng);

double truncation_pmf(const NeumannConfig& cfg, std::uint64_t i);

/// Single-sample estimator p(i)^{-1} (I-H)^i v, averaged over cfg.repeats
/// draws. Unbiased for H^{-1} v whenever the spectrum of H lies in (0, 1)
/// (see scale_oracle); each application of a stochastic oracle uses a fresh
/// batch draw.
Tensor estimate_hinv_v(const HvpOracle& oracle, const Tensor& v, const NeumannConfig& cfg,
                       RngState& rng);

struct ScaledOracle {
  HvpOracle oracle;  // applies c * (H + damping I)
  double c = 1.0;
  double lambda_max_hat = 0.0;
  double lambda_min_hat = 0.0;
  double rho_hat = 0.0;  // spectral radius estimate of I - c (H + damping I)
};

/// Estimates the spectrum edges with 50 power-iteration steps (fixed start
/// vector) and rescales so the damped operator's spectrum sits inside (0, 1).
/// H^{-1} v is recovered from the scaled operator as c * (H')^{-1} v.
ScaledOracle scale_oracle(const HvpOracle& oracle, const NeumannConfig& cfg);

/// max(0.5, rho_hat^2 + 0.1); rejects spectra that would need q >= 1.
double auto_q(const ScaledOracle& scaled);

/// Rejects configurations whose truncation tail is too thin for the
/// estimator's variance to be finite (needs rho^2 < effective tail q).
void validate_truncation(const NeumannConfig& cfg, const ScaledOracle& scaled);

/// Exact oracle for a symmetric matrix: apply(v) = h v.
HvpOracle make_matrix_oracle(const Tensor& h);

/// Each apply draws an independent minibatch without replacement and returns
/// the exact HVP of that batch's mean loss. batch_size >= |data| degrades to
/// the exact full-data oracle (natural index order, no randomness consumed).
HvpOracle stochastic_hvp_oracle(const train::Model& model, const ad::ParamMap& params,
                                const train::Dataset& data, std::size_t batch_size);

/// c * estimate over the scaled oracle: an estimate of H^{-1} g.
Tensor newton_direction(const ScaledOracle& scaled, const Tensor& g, const NeumannConfig& cfg,
                        RngState& rng);

struct NewtonConfig {
  NeumannConfig neumann;
  std::size_t batch_size = 8;
  double alpha = 1.0;
};

/// One step of the stochastic Newton method: stochastic gradient, scaled
/// stochastic curvature oracle, Neumann estimate of the inverse product,
/// params <- params - alpha * d. A zero gradient leaves params unchanged.
ad::ParamMap stochastic_newton_step(const train::Model& model, const ad::ParamMap& params,
                                    const train::Dataset& data, const NewtonConfig& cfg,
                                    RngState& rng);

/// Uniform without-replacement index sample (partial Fisher-Yates).
std::vector<std::uint32_t> sample_batch(std::size_t n, std::size_t batch_size, RngState& rng);

}  // namespace gradlab::newton
