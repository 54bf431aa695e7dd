#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gradlab/autodiff.hpp"

// Test-side reference implementations, kept independent of the library code
// they are used to check.
namespace testsupport {

using gradlab::Tensor;

// Central-difference gradient over every parameter coordinate.
gradlab::ad::ParamMap fd_gradient(const gradlab::ad::ProgramFn& f,
                                  const gradlab::ad::ParamMap& params,
                                  const gradlab::ad::ParamMap& inputs, double h);

// Dense solve of a row-major square system by Gaussian elimination.
std::vector<double> dense_solve(std::vector<double> a, std::vector<double> b);

// H^{-1} v for a square Tensor matrix via dense_solve.
Tensor solve_matrix(const Tensor& h, const Tensor& v);

// (I - H)^i v with plain loops (no library tensor ops).
Tensor residual_power(const Tensor& h, const Tensor& v, std::uint64_t i);

double mean(const std::vector<double>& xs);
double sample_variance(const std::vector<double>& xs);
double median(std::vector<double> xs);

std::string read_file_bytes(const std::string& path);

}  // namespace testsupport
