#include "subnav/tensor.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

namespace subnav {

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

namespace la {

Vec matvec(const Tensor& w, std::span<const double> x) {
  assert(w.cols() == x.size());
  Vec y(w.rows(), 0.0);
  for (std::size_t r = 0; r < w.rows(); ++r) y[r] = dot(w.row(r), x);
  return y;
}

Vec affine(const Tensor& w, const Tensor& b, std::span<const double> x) {
  Vec y = matvec(w, x);
  for (std::size_t r = 0; r < y.size(); ++r) y[r] += b[r];
  return y;
}

void matTvec_acc(const Tensor& w, std::span<const double> g, std::span<double> y) {
  assert(w.rows() == g.size() && w.cols() == y.size());
  for (std::size_t r = 0; r < w.rows(); ++r) {
    if (g[r] != 0.0) axpy(g[r], w.row(r), y);
  }
}

void outer_acc(Tensor& dw, std::span<const double> g, std::span<const double> x) {
  assert(dw.rows() == g.size() && dw.cols() == x.size());
  for (std::size_t r = 0; r < dw.rows(); ++r) {
    if (g[r] != 0.0) axpy(g[r], x, dw.row(r));
  }
}

void add_to(Tensor& db, std::span<const double> g) {
  assert(db.size() == g.size());
  for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i];
}

double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
  assert(x.size() == y.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

Vec concat(std::initializer_list<std::span<const double>> parts) {
  Vec out;
  for (auto p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Vec softmax(std::span<const double> z) {
  const double mx = *std::max_element(z.begin(), z.end());
  Vec p(z.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) sum += (p[i] = std::exp(z[i] - mx));
  for (auto& v : p) v /= sum;
  return p;
}

Vec softmax_backward(std::span<const double> p, std::span<const double> dp) {
  const double inner = dot(p, dp);
  Vec dz(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) dz[i] = p[i] * (dp[i] - inner);
  return dz;
}

}  // namespace la

}  // namespace subnav
