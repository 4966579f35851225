#pragma once

// Dense row-major matrices and the numerical kernels every model is built on:
// activations, losses, Xavier initialization, Adam, and a central-difference
// gradient checker. All values are 64-bit floats.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace tsaug {

/// Raised when a computation produces or receives a non-finite value.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix row_vector(std::span<const double> values);
  static Matrix zeros_like(const Matrix& other) { return Matrix(other.rows_, other.cols_); }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }
  std::string shape_string() const;

  void fill(double v);
  Matrix transposed() const;
  /// Same data, new shape. Element count must match.
  Matrix reshaped(std::size_t rows, std::size_t cols) const;

  Matrix& operator+=(const Matrix& o);
  Matrix& operator-=(const Matrix& o);
  Matrix& operator*=(double s);

  /// Bitwise equality of shape and contents.
  bool identical(const Matrix& o) const noexcept;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);

// Products. `_tn` transposes the left operand, `_nt` the right one.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);
/// out += a * b^T
void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& out);
/// out += a^T * b
void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out);
/// out += a * b
void matmul_acc(const Matrix& a, const Matrix& b, Matrix& out);

Matrix hadamard(const Matrix& a, const Matrix& b);
/// Adds a 1×cols row to every row of m.
void add_row_broadcast(Matrix& m, const Matrix& row);
/// Sum over rows, producing 1×cols. Accumulated into `out` when given.
void column_sums_acc(const Matrix& m, Matrix& out);

/// Throws NumericalError naming the first non-finite entry.
void require_finite(const Matrix& m, std::string_view what);
bool all_finite(const Matrix& m) noexcept;

enum class Activation { sigmoid, tanh, relu };

double sigmoid(double x) noexcept;
Matrix activation(Activation kind, const Matrix& x);

/// Numerically stable softmax (max subtraction).
std::vector<double> softmax(std::span<const double> v);
/// Row-wise softmax.
Matrix softmax_rows(const Matrix& m);
/// Backward of a row-wise softmax given its output and the upstream gradient.
Matrix softmax_rows_backward(const Matrix& y, const Matrix& dy);

double mse(const Matrix& pred, const Matrix& target);
/// d mse / d pred
Matrix mse_grad(const Matrix& pred, const Matrix& target);
double mae(std::span<const double> pred, std::span<const double> target);

/// Deterministic random stream: identical (seed, stream id) give identical
/// draws on every platform. Only integer arithmetic feeds the state, and the
/// floating-point transforms are written out here rather than taken from
/// <random>, whose distributions are implementation-defined.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::string_view stream_id);

  std::uint64_t seed() const noexcept { return seed_; }
  const std::string& stream_id() const noexcept { return stream_id_; }

  /// Derives an independent child stream.
  RngStream derive(std::string_view child_id) const;

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller.
  double normal() noexcept;
  double normal(double mean, double sd) noexcept { return mean + sd * normal(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept;

  template <typename T>
  void shuffle(std::vector<T>& v) noexcept {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  std::uint64_t seed_;
  std::string stream_id_;
  std::uint64_t state_[4];
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

std::uint64_t splitmix64(std::uint64_t& state) noexcept;
std::uint64_t fnv1a64(std::string_view bytes) noexcept;
/// Pure function of (master seed, stage label, index).
std::uint64_t derive_seed(std::uint64_t master, std::string_view stage, std::uint64_t index = 0) noexcept;

/// Xavier-uniform: entries in ±sqrt(6 / (fan_in + fan_out)) with fan_in = cols,
/// fan_out = rows.
Matrix init_uniform(std::size_t rows, std::size_t cols, RngStream& rng);
double xavier_bound(std::size_t rows, std::size_t cols) noexcept;

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Matrix m;
  Matrix v;
  std::uint64_t t = 0;
  AdamConfig config;

  AdamState() = default;
  AdamState(const Matrix& like, AdamConfig cfg) : m(Matrix::zeros_like(like)), v(Matrix::zeros_like(like)), config(cfg) {}
};

/// One bias-corrected Adam update of `params` in place. `name` labels the
/// tensor in error messages.
void adam_step(Matrix& params, const Matrix& grads, AdamState& state, std::string_view name = "tensor");

/// A named view of one parameter tensor inside a model.
struct TensorRef {
  std::string name;
  Matrix* value;
};
struct ConstTensorRef {
  std::string name;
  const Matrix* value;
};

/// Adam over a whole model. Models expose `tensors()` returning TensorRef in a
/// fixed order; gradient objects have the same type as the model.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(AdamConfig cfg = {}) : config_(cfg) {}

  void step(std::span<const TensorRef> params, std::span<const ConstTensorRef> grads);

  template <typename Model>
  void step(Model& model, const Model& grads) {
    auto p = model.tensors();
    auto g = grads.tensors();
    step(p, g);
  }

  std::uint64_t steps_taken() const noexcept { return states_.empty() ? 0 : states_.front().t; }

 private:
  AdamConfig config_;
  std::vector<AdamState> states_;
};

/// Scalar objective over a flat parameter vector.
using ScalarFunction = std::function<double(std::span<const double>)>;

/// Central differences with step h; returns the max over parameters of
/// |analytic − numeric| / max(1, |analytic|, |numeric|).
double grad_check(const ScalarFunction& f, std::span<const double> params, std::span<const double> analytic,
                  double h = 1e-5);

/// Flatten/unflatten helpers for models exposing tensors().
std::vector<double> flatten(std::span<const ConstTensorRef> tensors);
void unflatten(std::span<const double> flat, std::span<const TensorRef> tensors);

template <typename Model>
std::vector<double> flatten_model(const Model& m) {
  auto t = m.tensors();
  return flatten(t);
}
template <typename Model>
void unflatten_model(std::span<const double> flat, Model& m) {
  auto t = m.tensors();
  unflatten(flat, t);
}

/// Sets every tensor of a model to zero, keeping shapes.
template <typename Model>
void zero_model(Model& m) {
  for (auto& t : m.tensors()) t.value->fill(0.0);
}

}  // namespace tsaug
