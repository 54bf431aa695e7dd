#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gradlab/errors.hpp"

namespace gradlab {

/// Dense tensor of rank 0, 1 or 2 holding 64-bit reals in row-major order.
/// Tensors are plain values: copyable, immutable by convention once built.
class Tensor {
 public:
  Tensor() : shape_{}, data_(1, 0.0) {}  // rank-0 zero
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor ones(std::vector<std::size_t> shape);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<const double> values() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double at2(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& at2(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }

  std::size_t rows() const { return rank() == 2 ? shape_[0] : (rank() == 1 ? shape_[0] : 1); }
  std::size_t cols() const { return rank() == 2 ? shape_[1] : 1; }

  bool is_scalar() const { return data_.size() == 1 && rank() == 0; }
  double scalar_value() const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  std::string shape_str() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// -- structural ops ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, std::vector<std::size_t> shape);
Tensor concat(const Tensor& a, const Tensor& b);                       // rank-1
Tensor slice(const Tensor& a, std::size_t start, std::size_t len);     // rank-1
Tensor pad_embed(const Tensor& a, std::size_t start, std::size_t total);  // rank-1

// -- reductions (fixed index-order accumulation) ----------------------------

Tensor reduce_sum(const Tensor& a);
Tensor reduce_mean(const Tensor& a);  // DomainError on empty input

// -- elementwise ops; rank-0 operands broadcast against any shape -----------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sigmoid(const Tensor& a);  // stable for large |x|
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor elu(const Tensor& a, double alpha);
Tensor max_scalar(const Tensor& a, double c);
Tensor min_scalar(const Tensor& a, double c);
Tensor step_gt(const Tensor& a, double c);  // 1 where a[i] > c, else 0
Tensor step_lt(const Tensor& a, double c);  // 1 where a[i] < c, else 0

Tensor scale(const Tensor& a, double s);
Tensor axpy(const Tensor& x, double alpha, const Tensor& y);  // x + alpha*y

double dot(const Tensor& a, const Tensor& b);
double norm2(const Tensor& a);
double norm_inf(const Tensor& a);

}  // namespace gradlab
