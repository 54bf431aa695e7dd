#pragma once

#include <cstdint>
#include <utility>

#include "gradlab/train.hpp"

namespace gradlab::data {

enum class Generator { kGaussianBlobs, kLinearTeacher, kNoisyPoly };

struct DatasetSpec {
  Generator generator = Generator::kLinearTeacher;
  std::size_t n_train = 32;
  std::size_t n_val = 16;
  double noise_sigma = 0.0;
  std::size_t dim = 2;
  void validate() const;
};

/// Deterministic from the seed; the validation examples are drawn after the
/// training examples from the same stream, so the two sets are disjoint.
///
/// gaussian_blobs: two classes at well-separated centers, unit-ish spread
///   scaled by noise_sigma; targets 0/1, examples alternate classes.
/// linear_teacher: x ~ N(0, I), y = w*.x + b* + noise_sigma * N(0,1) for a
///   teacher (w*, b*) drawn once per dataset.
/// noisy_poly: x uniform in [-1,1]^dim, y = sum_j (x_j^3 - 0.5 x_j) + noise.
std::pair<train::Dataset, train::Dataset> generate_dataset(const DatasetSpec& spec,
                                                           std::uint64_t seed);

}  // namespace gradlab::data
