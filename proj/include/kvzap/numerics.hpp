#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include "kvzap/errors.hpp"
#include "kvzap/rng.hpp"

namespace kvzap {

enum class DType { f32, f64 };

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>, "f32 or f64 only");
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

template <typename T>
using MatrixR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

inline std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Dense row-major tensor. Rank 1 and 2 are what the kernels consume; higher
// ranks exist only as storage (score tensors, datasets).
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(element_count(shape_), T(0)) {}

  Tensor(std::vector<std::size_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    require(element_count(shape_) == data_.size(), ErrorKind::dimension,
            "shape " + shape_string(shape_) + " does not match " + std::to_string(data_.size()) +
                " values");
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<T> values) {
    return Tensor({rows, cols}, std::vector<T>(values));
  }
  static Tensor vector(std::initializer_list<T> values) {
    return Tensor({values.size()}, std::vector<T>(values));
  }
  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
  static Tensor filled(std::vector<std::size_t> shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }
  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = T(1);
    return t;
  }
  static Tensor randn(std::vector<std::size_t> shape, Rng& rng, double stddev = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = static_cast<T>(stddev * rng.normal());
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  DType dtype() const { return dtype_of<T>(); }

  std::size_t rows() const { return rank() == 1 ? 1 : shape_.at(0); }
  std::size_t cols() const { return rank() == 1 ? shape_.at(0) : shape_.at(1); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& operator()(std::size_t i, std::size_t j) { return data_[i * cols() + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return data_[i * cols() + j]; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::span<T> row(std::size_t i) { return std::span<T>(data_).subspan(i * cols(), cols()); }
  std::span<const T> row(std::size_t i) const {
    return std::span<const T>(data_).subspan(i * cols(), cols());
  }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  void reshape(std::vector<std::size_t> shape) {
    require(element_count(shape) == data_.size(), ErrorKind::dimension,
            "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    shape_ = std::move(shape);
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static std::size_t element_count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }

  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

template <typename T>
Eigen::Map<MatrixR<T>> as_matrix(Tensor<T>& t) {
  return {t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}
template <typename T>
Eigen::Map<const MatrixR<T>> as_matrix(const Tensor<T>& t) {
  return {t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

template <typename T>
Tensor<T> from_matrix(const MatrixR<T>& m) {
  Tensor<T> t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  as_matrix(t) = m;
  return t;
}

template <typename T>
void ensure_finite(const Tensor<T>& t, std::string_view op) {
  require(t.all_finite(), ErrorKind::non_finite, std::string(op) + " produced a non-finite value");
}

// ---------------------------------------------------------------------------
// Scalar activations. GELU is the tanh approximation, everywhere.

template <typename T>
T silu(T x) {
  return x / (T(1) + std::exp(-x));
}

template <typename T>
T silu_grad(T x) {
  const T s = T(1) / (T(1) + std::exp(-x));
  return s * (T(1) + x * (T(1) - s));
}

inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)

template <typename T>
T gelu(T x) {
  const T inner = T(kGeluC) * (x + T(0.044715) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(inner));
}

template <typename T>
T gelu_grad(T x) {
  const T inner = T(kGeluC) * (x + T(0.044715) * x * x * x);
  const T t = std::tanh(inner);
  const T dinner = T(kGeluC) * (T(1) + T(3 * 0.044715) * x * x);
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * dinner;
}

// ---------------------------------------------------------------------------
// Raw kernels on Eigen storage. The Tensor API below and the model/training
// code share these so there is one implementation of each formula.

namespace detail {

// Row-wise causal softmax of scale * scores, in place. Entries above the
// diagonal (col > row + offset) are written as exact zeros.
template <typename Derived>
void softmax_causal_inplace(Eigen::MatrixBase<Derived>& s, typename Derived::Scalar scale,
                            Eigen::Index offset = 0) {
  using T = typename Derived::Scalar;
  const Eigen::Index n = s.cols();
  for (Eigen::Index j = 0; j < s.rows(); ++j) {
    const Eigen::Index last = std::min<Eigen::Index>(n - 1, j + offset);
    T mx = -std::numeric_limits<T>::infinity();
    for (Eigen::Index i = 0; i <= last; ++i) mx = std::max(mx, scale * s(j, i));
    T sum = 0;
    for (Eigen::Index i = 0; i <= last; ++i) {
      const T e = std::exp(scale * s(j, i) - mx);
      s(j, i) = e;
      sum += e;
    }
    const T inv = T(1) / sum;
    for (Eigen::Index i = 0; i <= last; ++i) s(j, i) *= inv;
    for (Eigen::Index i = last + 1; i < n; ++i) s(j, i) = T(0);
  }
}

// d(scores) for y = softmax_causal(scale * scores): scale * y * (dy - <dy, y>_row).
template <typename T>
MatrixR<T> softmax_causal_backward(const MatrixR<T>& y, const MatrixR<T>& dy, T scale) {
  MatrixR<T> ds(y.rows(), y.cols());
  for (Eigen::Index j = 0; j < y.rows(); ++j) {
    const T dot = y.row(j).dot(dy.row(j));
    ds.row(j) = scale * (y.row(j).array() * (dy.row(j).array() - dot)).matrix();
  }
  return ds;
}

// y = x * r * gamma with r = 1/sqrt(mean(x^2) + eps), per row. Stores r per row.
template <typename T>
void rmsnorm_rows(const MatrixR<T>& x, const T* gamma, T eps, MatrixR<T>& y,
                  std::vector<T>* inv_rms = nullptr) {
  const Eigen::Index d = x.cols();
  y.resize(x.rows(), d);
  if (inv_rms) inv_rms->resize(static_cast<std::size_t>(x.rows()));
  Eigen::Map<const RowVector<T>> g(gamma, d);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T ms = x.row(r).squaredNorm() / static_cast<T>(d);
    const T inv = T(1) / std::sqrt(ms + eps);
    y.row(r) = (x.row(r).array() * inv * g.array()).matrix();
    if (inv_rms) (*inv_rms)[static_cast<std::size_t>(r)] = inv;
  }
}

// Accumulates dx and dgamma for rmsnorm_rows.
template <typename T>
void rmsnorm_rows_backward(const MatrixR<T>& x, const T* gamma, const std::vector<T>& inv_rms,
                           const MatrixR<T>& dy, MatrixR<T>& dx, T* dgamma) {
  const Eigen::Index d = x.cols();
  Eigen::Map<const RowVector<T>> g(gamma, d);
  Eigen::Map<RowVector<T>> dg(dgamma, d);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T inv = inv_rms[static_cast<std::size_t>(r)];
    const RowVector<T> gdy = (dy.row(r).array() * g.array()).matrix();
    const T proj = gdy.dot(x.row(r)) / static_cast<T>(d);
    dx.row(r) += inv * gdy - (inv * inv * inv * proj) * x.row(r);
    dg += (dy.row(r).array() * x.row(r).array() * inv).matrix();
  }
}

// Rotates adjacent pairs (2i, 2i+1) of v by position * theta_base^(-2i/d).
template <typename T>
void rope_inplace(T* v, std::size_t d, double position, double theta_base) {
  for (std::size_t i = 0; i < d / 2; ++i) {
    const double freq = std::pow(theta_base, -2.0 * static_cast<double>(i) / static_cast<double>(d));
    const double angle = position * freq;
    const T c = static_cast<T>(std::cos(angle));
    const T s = static_cast<T>(std::sin(angle));
    const T a = v[2 * i];
    const T b = v[2 * i + 1];
    v[2 * i] = a * c - b * s;
    v[2 * i + 1] = a * s + b * c;
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Tensor-level kernels.

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == 2 && b.rank() == 2, ErrorKind::dimension, "matmul expects matrices");
  require(a.cols() == b.rows(), ErrorKind::dimension,
          "matmul inner dims " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  Tensor<T> c({a.rows(), b.cols()});
  as_matrix(c).noalias() = as_matrix(a) * as_matrix(b);
  ensure_finite(c, "matmul");
  return c;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require(a.rank() == 2, ErrorKind::dimension, "transpose expects a matrix");
  Tensor<T> t({a.cols(), a.rows()});
  as_matrix(t) = as_matrix(a).transpose();
  return t;
}

template <typename T>
Tensor<T> softmax_causal(const Tensor<T>& scores, T scale) {
  require(scores.rank() == 2 && scores.rows() == scores.cols(), ErrorKind::dimension,
          "softmax_causal expects a square matrix, got " + shape_string(scores.shape()));
  Tensor<T> y = scores;
  auto m = as_matrix(y);
  detail::softmax_causal_inplace(m, scale);
  ensure_finite(y, "softmax_causal");
  return y;
}

// Accepts a vector or a matrix (normalized per row).
template <typename T>
Tensor<T> rmsnorm(const Tensor<T>& x, const Tensor<T>& gamma, T eps) {
  require(x.size() > 0 && x.cols() > 0, ErrorKind::dimension, "rmsnorm of an empty vector");
  require(gamma.size() == x.cols(), ErrorKind::dimension, "rmsnorm gain length mismatch");
  require(eps > T(0), ErrorKind::config, "rmsnorm eps must be positive");
  MatrixR<T> y;
  detail::rmsnorm_rows<T>(as_matrix(x), gamma.data(), eps, y);
  Tensor<T> out(x.shape());
  as_matrix(out) = y;
  ensure_finite(out, "rmsnorm");
  return out;
}

template <typename T>
Tensor<T> rope(const Tensor<T>& vec, std::int64_t position, double theta_base) {
  require(vec.rank() == 1, ErrorKind::dimension, "rope expects a vector");
  require(vec.size() % 2 == 0, ErrorKind::dimension, "rope needs an even dimension");
  Tensor<T> out = vec;
  detail::rope_inplace(out.data(), out.size(), static_cast<double>(position), theta_base);
  return out;
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (auto& v : y.values()) v = silu(v);
  ensure_finite(y, "silu");
  return y;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (auto& v : y.values()) v = gelu(v);
  ensure_finite(y, "gelu");
  return y;
}

// Vector-Jacobian products. Each returns gradients shaped like the kernel's inputs.

template <typename T>
std::pair<Tensor<T>, Tensor<T>> matmul_vjp(const Tensor<T>& a, const Tensor<T>& b,
                                           const Tensor<T>& upstream) {
  Tensor<T> da(a.shape());
  Tensor<T> db(b.shape());
  as_matrix(da).noalias() = as_matrix(upstream) * as_matrix(b).transpose();
  as_matrix(db).noalias() = as_matrix(a).transpose() * as_matrix(upstream);
  return {std::move(da), std::move(db)};
}

template <typename T>
Tensor<T> softmax_causal_vjp(const Tensor<T>& output, T scale, const Tensor<T>& upstream) {
  MatrixR<T> y = as_matrix(output);
  MatrixR<T> dy = as_matrix(upstream);
  return from_matrix<T>(detail::softmax_causal_backward<T>(y, dy, scale));
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> rmsnorm_vjp(const Tensor<T>& x, const Tensor<T>& gamma, T eps,
                                            const Tensor<T>& upstream) {
  MatrixR<T> xm = as_matrix(x);
  MatrixR<T> y;
  std::vector<T> inv;
  detail::rmsnorm_rows<T>(xm, gamma.data(), eps, y, &inv);
  MatrixR<T> dx = MatrixR<T>::Zero(xm.rows(), xm.cols());
  Tensor<T> dgamma(gamma.shape());
  detail::rmsnorm_rows_backward<T>(xm, gamma.data(), inv, as_matrix(upstream), dx, dgamma.data());
  Tensor<T> dxt(x.shape());
  as_matrix(dxt) = dx;
  return {std::move(dxt), std::move(dgamma)};
}

// The rotation is orthogonal, so its transpose is the rotation by -position.
template <typename T>
Tensor<T> rope_vjp(std::int64_t position, double theta_base, const Tensor<T>& upstream) {
  return rope(upstream, -position, theta_base);
}

template <typename T>
Tensor<T> silu_vjp(const Tensor<T>& x, const Tensor<T>& upstream) {
  Tensor<T> dx = upstream;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= silu_grad(x[i]);
  return dx;
}

template <typename T>
Tensor<T> gelu_vjp(const Tensor<T>& x, const Tensor<T>& upstream) {
  Tensor<T> dx = upstream;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= gelu_grad(x[i]);
  return dx;
}

// ---------------------------------------------------------------------------
// Kernel registry and finite-difference gradient checking (f64 only).

using TensorD = Tensor<double>;

struct KernelSpec {
  std::string name;
  std::function<TensorD(std::span<const TensorD>)> forward;
  // Empty when the kernel has no registered vjp.
  std::function<std::vector<TensorD>(std::span<const TensorD>, const TensorD&)> vjp;
};

// Fixed hyper-parameters of the registered kernel instances.
inline constexpr double kRegistrySoftmaxScale = 0.5;
inline constexpr double kRegistryRmsEps = 1e-6;
inline constexpr std::int64_t kRegistryRopePosition = 7;
inline constexpr double kRegistryRopeTheta = 10000.0;

inline const std::vector<KernelSpec>& kernel_registry() {
  static const std::vector<KernelSpec> registry = [] {
    std::vector<KernelSpec> r;
    r.push_back({"matmul",
                 [](std::span<const TensorD> in) { return matmul(in[0], in[1]); },
                 [](std::span<const TensorD> in, const TensorD& up) {
                   auto [da, db] = matmul_vjp(in[0], in[1], up);
                   return std::vector<TensorD>{std::move(da), std::move(db)};
                 }});
    r.push_back({"softmax_causal",
                 [](std::span<const TensorD> in) { return softmax_causal(in[0], kRegistrySoftmaxScale); },
                 [](std::span<const TensorD> in, const TensorD& up) {
                   const auto y = softmax_causal(in[0], kRegistrySoftmaxScale);
                   return std::vector<TensorD>{softmax_causal_vjp(y, kRegistrySoftmaxScale, up)};
                 }});
    r.push_back({"rmsnorm",
                 [](std::span<const TensorD> in) { return rmsnorm(in[0], in[1], kRegistryRmsEps); },
                 [](std::span<const TensorD> in, const TensorD& up) {
                   auto [dx, dg] = rmsnorm_vjp(in[0], in[1], kRegistryRmsEps, up);
                   return std::vector<TensorD>{std::move(dx), std::move(dg)};
                 }});
    r.push_back({"rope",
                 [](std::span<const TensorD> in) {
                   return rope(in[0], kRegistryRopePosition, kRegistryRopeTheta);
                 },
                 [](std::span<const TensorD>, const TensorD& up) {
                   return std::vector<TensorD>{rope_vjp(kRegistryRopePosition, kRegistryRopeTheta, up)};
                 }});
    r.push_back({"silu",
                 [](std::span<const TensorD> in) { return silu(in[0]); },
                 [](std::span<const TensorD> in, const TensorD& up) {
                   return std::vector<TensorD>{silu_vjp(in[0], up)};
                 }});
    r.push_back({"gelu",
                 [](std::span<const TensorD> in) { return gelu(in[0]); },
                 [](std::span<const TensorD> in, const TensorD& up) {
                   return std::vector<TensorD>{gelu_vjp(in[0], up)};
                 }});
    // Max over each row, as used by the score reductions. The gradient goes to
    // the first maximal entry of each row.
    r.push_back({"row_max",
                 [](std::span<const TensorD> in) {
                   TensorD out({in[0].rows()});
                   for (std::size_t i = 0; i < in[0].rows(); ++i) {
                     const auto row = in[0].row(i);
                     out[i] = *std::max_element(row.begin(), row.end());
                   }
                   return out;
                 },
                 [](std::span<const TensorD> in, const TensorD& up) {
                   TensorD g({in[0].rows(), in[0].cols()});
                   for (std::size_t i = 0; i < in[0].rows(); ++i) {
                     const auto row = in[0].row(i);
                     g(i, static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin())) = up[i];
                   }
                   return std::vector<TensorD>{g};
                 }});
    return r;
  }();
  return registry;
}

inline const KernelSpec& find_kernel(std::string_view name) {
  for (const auto& k : kernel_registry())
    if (k.name == name) return k;
  throw Error(ErrorKind::unsupported, "no kernel named " + std::string(name));
}

struct GradCheckReport {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t coordinates_checked = 0;
  bool passed = false;
};

inline constexpr double kFiniteDifferenceStep = 1e-5;
// Denominator floor of the relative error, so exact-zero gradients compare absolutely.
inline constexpr double kRelativeErrorFloor = 1e-4;

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), kRelativeErrorFloor});
}

// Checks the vjp of a registered kernel by contracting its output with a fixed
// random upstream tensor u and comparing against central differences of <u, f(x)>.
inline GradCheckReport grad_check(const KernelSpec& kernel, std::vector<TensorD> inputs,
                                  double tolerance, std::uint64_t seed = 0x5eed) {
  if (!kernel.vjp) throw Error(ErrorKind::unsupported, kernel.name + " has no registered vjp");
  const TensorD base = kernel.forward(inputs);
  Rng rng(seed);
  const TensorD upstream = TensorD::randn(base.shape(), rng);
  const auto analytic = kernel.vjp(inputs, upstream);
  require(analytic.size() == inputs.size(), ErrorKind::dimension, kernel.name + " vjp arity");

  auto objective = [&] {
    const TensorD y = kernel.forward(inputs);
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += y[i] * upstream[i];
    return acc;
  };

  GradCheckReport report{kernel.name};
  for (std::size_t which = 0; which < inputs.size(); ++which) {
    require(analytic[which].shape() == inputs[which].shape(), ErrorKind::dimension,
            kernel.name + " vjp shape mismatch for input " + std::to_string(which));
    for (std::size_t k = 0; k < inputs[which].size(); ++k) {
      double& x = inputs[which][k];
      const double saved = x;
      x = saved + kFiniteDifferenceStep;
      const double plus = objective();
      x = saved - kFiniteDifferenceStep;
      const double minus = objective();
      x = saved;
      const double numeric = (plus - minus) / (2.0 * kFiniteDifferenceStep);
      report.max_rel_error = std::max(report.max_rel_error, relative_error(analytic[which][k], numeric));
      ++report.coordinates_checked;
    }
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

inline GradCheckReport grad_check(std::string_view name, std::vector<TensorD> inputs,
                                  double tolerance, std::uint64_t seed = 0x5eed) {
  return grad_check(find_kernel(name), std::move(inputs), tolerance, seed);
}

// Same check for a scalar loss over arbitrary parameter buffers. `loss` must
// read the buffers in place. When max_coords_per_buffer is non-zero a seeded
// random subset of each buffer is checked.
inline GradCheckReport grad_check_scalar(std::string name, const std::function<double()>& loss,
                                         std::vector<std::span<double>> params,
                                         std::vector<std::span<const double>> grads,
                                         double tolerance, std::size_t max_coords_per_buffer = 0,
                                         std::uint64_t seed = 0x5eed) {
  require(params.size() == grads.size(), ErrorKind::dimension, "parameter/gradient count mismatch");
  GradCheckReport report{std::move(name)};
  Rng rng(seed);
  for (std::size_t b = 0; b < params.size(); ++b) {
    require(params[b].size() == grads[b].size(), ErrorKind::dimension, "gradient buffer size mismatch");
    std::vector<std::size_t> coords(params[b].size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (max_coords_per_buffer && coords.size() > max_coords_per_buffer) {
      for (std::size_t i = 0; i < max_coords_per_buffer; ++i)
        std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
      coords.resize(max_coords_per_buffer);
    }
    for (std::size_t k : coords) {
      double& x = params[b][k];
      const double saved = x;
      x = saved + kFiniteDifferenceStep;
      const double plus = loss();
      x = saved - kFiniteDifferenceStep;
      const double minus = loss();
      x = saved;
      const double numeric = (plus - minus) / (2.0 * kFiniteDifferenceStep);
      report.max_rel_error = std::max(report.max_rel_error, relative_error(grads[b][k], numeric));
      ++report.coordinates_checked;
    }
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

}  // namespace kvzap
