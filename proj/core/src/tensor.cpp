#include "gradlab/tensor.hpp"

#include <cmath>
#include <sstream>

namespace gradlab {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

[[noreturn]] void shape_mismatch(const char* op, const Tensor& a, const Tensor& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + a.shape_str() + " and " +
                       b.shape_str());
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.size() > 2) {
    throw DimensionError("Tensor: rank " + std::to_string(shape_.size()) + " not supported");
  }
  if (shape_product(shape_) != data_.size()) {
    throw DimensionError("Tensor: shape " + shape_str() + " does not match " +
                         std::to_string(data_.size()) + " elements");
  }
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  std::size_t n = shape_product(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::ones(std::vector<std::size_t> shape) {
  std::size_t n = shape_product(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 1.0));
}

Tensor Tensor::vector(std::vector<double> values) {
  std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

double Tensor::scalar_value() const {
  if (data_.size() != 1) {
    throw DimensionError("scalar_value: tensor of shape " + shape_str() + " is not a scalar");
  }
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << 'x';
    os << shape_[i];
  }
  os << ']';
  return os.str();
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2) {
    throw DimensionError("matmul: left operand must be rank-2, got " + a.shape_str());
  }
  std::size_t m = a.shape()[0];
  std::size_t k = a.shape()[1];
  if (b.rank() == 1) {
    if (b.shape()[0] != k) shape_mismatch("matmul", a, b);
    Tensor out = Tensor::zeros({m});
    for (std::size_t i = 0; i < m; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < k; ++j) acc += a.at2(i, j) * b[j];
      out[i] = acc;
    }
    return out;
  }
  if (b.rank() == 2) {
    if (b.shape()[0] != k) shape_mismatch("matmul", a, b);
    std::size_t n = b.shape()[1];
    Tensor out = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t l = 0; l < k; ++l) acc += a.at2(i, l) * b.at2(l, j);
        out.at2(i, j) = acc;
      }
    }
    return out;
  }
  throw DimensionError("matmul: right operand must be rank-1 or rank-2, got " + b.shape_str());
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) {
    throw DimensionError("transpose: rank-2 tensor required, got " + a.shape_str());
  }
  std::size_t r = a.shape()[0], c = a.shape()[1];
  Tensor out = Tensor::zeros({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at2(j, i) = a.at2(i, j);
  return out;
}

Tensor reshape(const Tensor& a, std::vector<std::size_t> shape) {
  return Tensor(std::move(shape), std::vector<double>(a.values().begin(), a.values().end()));
}

Tensor concat(const Tensor& a, const Tensor& b) {
  if (a.rank() != 1 || b.rank() != 1) {
    throw DimensionError("concat: rank-1 tensors required, got " + a.shape_str() + " and " +
                         b.shape_str());
  }
  std::vector<double> out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.values().begin(), a.values().end());
  out.insert(out.end(), b.values().begin(), b.values().end());
  return Tensor::vector(std::move(out));
}

Tensor slice(const Tensor& a, std::size_t start, std::size_t len) {
  if (a.rank() != 1 || start + len > a.size()) {
    throw DimensionError("slice: [" + std::to_string(start) + ", " + std::to_string(start + len) +
                         ") out of range for " + a.shape_str());
  }
  return Tensor::vector(
      std::vector<double>(a.values().begin() + start, a.values().begin() + start + len));
}

Tensor pad_embed(const Tensor& a, std::size_t start, std::size_t total) {
  if (a.rank() != 1 || start + a.size() > total) {
    throw DimensionError("pad_embed: cannot place " + a.shape_str() + " at offset " +
                         std::to_string(start) + " in length " + std::to_string(total));
  }
  Tensor out = Tensor::zeros({total});
  for (std::size_t i = 0; i < a.size(); ++i) out[start + i] = a[i];
  return out;
}

Tensor reduce_sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  return Tensor::scalar(acc);
}

Tensor reduce_mean(const Tensor& a) {
  if (a.size() == 0) throw DomainError("reduce_mean: empty tensor");
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  return Tensor::scalar(acc / static_cast<double>(a.size()));
}

namespace {

template <typename F>
Tensor ew_binary(const char* name, const Tensor& a, const Tensor& b, F f) {
  if (a.same_shape(b)) {
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
    return out;
  }
  if (a.is_scalar()) {
    Tensor out = b;
    double s = a[0];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(s, b[i]);
    return out;
  }
  if (b.is_scalar()) {
    Tensor out = a;
    double s = b[0];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], s);
    return out;
  }
  shape_mismatch(name, a, b);
}

template <typename F>
Tensor ew_unary(const Tensor& a, F f) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i]);
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return ew_binary("add", a, b, [](double x, double y) { return x + y; });
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return ew_binary("sub", a, b, [](double x, double y) { return x - y; });
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return ew_binary("mul", a, b, [](double x, double y) { return x * y; });
}
Tensor div(const Tensor& a, const Tensor& b) {
  return ew_binary("div", a, b, [](double x, double y) { return x / y; });
}

Tensor exp(const Tensor& a) {
  return ew_unary(a, [](double x) { return std::exp(x); });
}
Tensor log(const Tensor& a) {
  return ew_unary(a, [](double x) { return std::log(x); });
}

Tensor sigmoid(const Tensor& a) {
  return ew_unary(a, [](double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
  });
}

Tensor tanh(const Tensor& a) {
  return ew_unary(a, [](double x) { return std::tanh(x); });
}

Tensor relu(const Tensor& a) {
  return ew_unary(a, [](double x) { return x > 0.0 ? x : 0.0; });
}

Tensor elu(const Tensor& a, double alpha) {
  return ew_unary(a, [alpha](double x) { return x > 0.0 ? x : alpha * (std::exp(x) - 1.0); });
}

Tensor max_scalar(const Tensor& a, double c) {
  return ew_unary(a, [c](double x) { return x > c ? x : c; });
}
Tensor min_scalar(const Tensor& a, double c) {
  return ew_unary(a, [c](double x) { return x < c ? x : c; });
}
Tensor step_gt(const Tensor& a, double c) {
  return ew_unary(a, [c](double x) { return x > c ? 1.0 : 0.0; });
}
Tensor step_lt(const Tensor& a, double c) {
  return ew_unary(a, [c](double x) { return x < c ? 1.0 : 0.0; });
}

Tensor scale(const Tensor& a, double s) {
  return ew_unary(a, [s](double x) { return s * x; });
}

Tensor axpy(const Tensor& x, double alpha, const Tensor& y) {
  if (!x.same_shape(y)) shape_mismatch("axpy", x, y);
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + alpha * y[i];
  return out;
}

double dot(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) shape_mismatch("dot", a, b);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double norm2(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v * v;
  return std::sqrt(acc);
}

double norm_inf(const Tensor& a) {
  double m = 0.0;
  for (double v : a.values()) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace gradlab
