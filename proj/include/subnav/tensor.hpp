#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

namespace subnav {

using Vec = std::vector<double>;

// Dense row-major double tensor. Parameters are rank 1 or 2.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)),
        values_(std::accumulate(shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>()), fill) {}

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const { return shape_.size() < 2 ? 1 : shape_[1]; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

  std::span<double> row(std::size_t r) { return {values_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols(), cols()}; }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  void fill(double v) { std::fill(values_.begin(), values_.end(), v); }
  bool all_finite() const;
  bool operator==(const Tensor&) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> values_;
};

namespace la {

// y = W x (+ b)
Vec matvec(const Tensor& w, std::span<const double> x);
Vec affine(const Tensor& w, const Tensor& b, std::span<const double> x);
// y += W^T g
void matTvec_acc(const Tensor& w, std::span<const double> g, std::span<double> y);
// dW += g x^T
void outer_acc(Tensor& dw, std::span<const double> g, std::span<const double> x);
void add_to(Tensor& db, std::span<const double> g);
double dot(std::span<const double> a, std::span<const double> b);
void axpy(double a, std::span<const double> x, std::span<double> y);
Vec concat(std::initializer_list<std::span<const double>> parts);
double sigmoid(double x);
Vec softmax(std::span<const double> z);
// Backward through softmax: dz = p * (dp - <p, dp>)
Vec softmax_backward(std::span<const double> p, std::span<const double> dp);

}  // namespace la

}  // namespace subnav
