#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace tth {

// Dense row-major array of doubles with a fixed shape.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> values);

  static Tensor from_values(std::vector<double> values);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // 2-D access.
  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  bool operator==(const Tensor&) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

Tensor matmul(const Tensor& a, const Tensor& b);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);

Tensor l2_normalize(const Tensor& v);
std::vector<double> l2_normalize(std::span<const double> v);

double cosine(const Tensor& u, const Tensor& v);
double cosine(std::span<const double> u, std::span<const double> v);

// Throws a numeric error naming `what` if any value is NaN or infinite.
void require_finite(std::span<const double> values, const char* what);

}  // namespace tth
