#include "tthlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>

#include "tthlab/error.hpp"

namespace tth {

namespace {

std::size_t element_count(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {
  require_finite(std::span<const double>(&fill, 1), "tensor fill");
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != element_count(shape_)) {
    raise(ErrorKind::Dimension, "tensor of shape " + shape_string(shape_) + " given " +
                                    std::to_string(data_.size()) + " values");
  }
  require_finite(data_, "tensor values");
}

Tensor Tensor::from_values(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) raise(ErrorKind::Dimension, "ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    raise(ErrorKind::Dimension, "axis " + std::to_string(axis) + " out of range for " +
                                    shape_string(shape_));
  }
  return shape_[axis];
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    raise(ErrorKind::Dimension,
          "matmul " + shape_string(a.shape()) + " by " + shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a(i, p);
      const double* brow = b.values().data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return Tensor({m, n}, std::move(out));
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    raise(ErrorKind::Dimension,
          "dot of lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

std::vector<double> l2_normalize(std::span<const double> v) {
  const double n = l2_norm(v);
  if (!(n > 0.0)) raise(ErrorKind::Degenerate, "cannot normalize a zero vector");
  if (!std::isfinite(n)) raise(ErrorKind::Numeric, "non-finite norm");
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

Tensor l2_normalize(const Tensor& v) {
  return Tensor(v.shape(), l2_normalize(v.values()));
}

double cosine(std::span<const double> u, std::span<const double> v) {
  const double nu = l2_norm(u);
  const double nv = l2_norm(v);
  if (!(nu > 0.0) || !(nv > 0.0)) raise(ErrorKind::Degenerate, "cosine of a zero vector");
  const double c = dot(u, v) / (nu * nv);
  if (!std::isfinite(c)) raise(ErrorKind::Numeric, "non-finite cosine");
  return std::clamp(c, -1.0, 1.0);
}

double cosine(const Tensor& u, const Tensor& v) { return cosine(u.values(), v.values()); }

void require_finite(std::span<const double> values, const char* what) {
  for (double x : values) {
    if (!std::isfinite(x)) raise(ErrorKind::Numeric, std::string(what) + " contains NaN/Inf");
  }
}

}  // namespace tth
