#include "gradlab/datasets.hpp"

#include <cmath>

namespace gradlab::data {

void DatasetSpec::validate() const {
  if (n_train < 1 || n_val < 1) throw DomainError("DatasetSpec: n_train and n_val must be >= 1");
  if (dim < 1) throw DomainError("DatasetSpec: dim must be >= 1");
  if (!(noise_sigma >= 0.0)) throw DomainError("DatasetSpec: noise_sigma must be non-negative");
}

namespace {

Tensor normal_vector(std::size_t dim, RngState& rng) {
  Tensor x = Tensor::zeros({dim});
  for (std::size_t j = 0; j < dim; ++j) x[j] = draw_normal(rng);
  return x;
}

void fill_blobs(train::Dataset& out, std::size_t n, std::size_t dim, double sigma,
                RngState& rng) {
  double center = 3.0 / std::sqrt(static_cast<double>(dim));
  for (std::size_t i = 0; i < n; ++i) {
    double label = static_cast<double>(i % 2);
    double sign = label > 0.5 ? 1.0 : -1.0;
    Tensor x = Tensor::zeros({dim});
    for (std::size_t j = 0; j < dim; ++j) x[j] = sign * center + sigma * draw_normal(rng);
    out.inputs.push_back(std::move(x));
    out.targets.push_back(Tensor::vector({label}));
  }
}

void fill_linear(train::Dataset& out, std::size_t n, const Tensor& w_star, double b_star,
                 double sigma, RngState& rng) {
  for (std::size_t i = 0; i < n; ++i) {
    Tensor x = normal_vector(w_star.size(), rng);
    double y = dot(w_star, x) + b_star;
    if (sigma > 0.0) y += sigma * draw_normal(rng);
    out.inputs.push_back(std::move(x));
    out.targets.push_back(Tensor::vector({y}));
  }
}

void fill_poly(train::Dataset& out, std::size_t n, std::size_t dim, double sigma, RngState& rng) {
  for (std::size_t i = 0; i < n; ++i) {
    Tensor x = Tensor::zeros({dim});
    double y = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      double v = draw_uniform(rng, -1.0, 1.0);
      x[j] = v;
      y += v * v * v - 0.5 * v;
    }
    if (sigma > 0.0) y += sigma * draw_normal(rng);
    out.inputs.push_back(std::move(x));
    out.targets.push_back(Tensor::vector({y}));
  }
}

}  // namespace

std::pair<train::Dataset, train::Dataset> generate_dataset(const DatasetSpec& spec,
                                                           std::uint64_t seed) {
  spec.validate();
  RngState rng{seed, 0};
  train::Dataset tr;
  train::Dataset va;
  switch (spec.generator) {
    case Generator::kGaussianBlobs:
      fill_blobs(tr, spec.n_train, spec.dim, spec.noise_sigma, rng);
      fill_blobs(va, spec.n_val, spec.dim, spec.noise_sigma, rng);
      break;
    case Generator::kLinearTeacher: {
      Tensor w_star = normal_vector(spec.dim, rng);
      double b_star = draw_normal(rng);
      fill_linear(tr, spec.n_train, w_star, b_star, spec.noise_sigma, rng);
      fill_linear(va, spec.n_val, w_star, b_star, spec.noise_sigma, rng);
      break;
    }
    case Generator::kNoisyPoly:
      fill_poly(tr, spec.n_train, spec.dim, spec.noise_sigma, rng);
      fill_poly(va, spec.n_val, spec.dim, spec.noise_sigma, rng);
      break;
  }
  return {std::move(tr), std::move(va)};
}

}  // namespace gradlab::data
