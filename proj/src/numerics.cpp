#include "tsaug/numerics.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace tsaug {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<RowMajor>;
using CMapR = Eigen::Map<const RowMajor>;

MapR map(Matrix& m) { return MapR(m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())); }
CMapR map(const Matrix& m) {
  return CMapR(m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols()));
}

[[noreturn]] void shape_error(std::string_view op, const Matrix& a, const Matrix& b) {
  std::ostringstream os;
  os << op << ": shape mismatch " << a.shape_string() << " vs " << b.shape_string();
  throw std::invalid_argument(os.str());
}

std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw std::invalid_argument("Matrix: data length " + std::to_string(data_.size()) + " does not match " +
                                std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  Matrix m(r, c);
  std::size_t i = 0;
  for (const auto& row : rows) {
    if (row.size() != c) throw std::invalid_argument("Matrix::from_rows: ragged rows");
    for (double v : row) m.data_[i++] = v;
  }
  return m;
}

Matrix Matrix::row_vector(std::span<const double> values) {
  return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

std::string Matrix::shape_string() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

Matrix Matrix::reshaped(std::size_t rows, std::size_t cols) const {
  if (rows * cols != data_.size()) {
    throw std::invalid_argument("Matrix::reshaped: cannot view " + shape_string() + " as " + std::to_string(rows) +
                                "x" + std::to_string(cols));
  }
  return Matrix(rows, cols, data_);
}

Matrix& Matrix::operator+=(const Matrix& o) {
  if (!same_shape(o)) shape_error("operator+=", *this, o);
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

Matrix& Matrix::operator-=(const Matrix& o) {
  if (!same_shape(o)) shape_error("operator-=", *this, o);
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
  return *this;
}

Matrix& Matrix::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

bool Matrix::identical(const Matrix& o) const noexcept {
  if (!same_shape(o)) return false;
  return std::equal(data_.begin(), data_.end(), o.data_.begin(), [](double a, double b) {
    return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b);
  });
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(Matrix a, double s) { return a *= s; }

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a, b);
  Matrix out(a.rows(), b.cols());
  map(out).noalias() = map(a) * map(b);
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) shape_error("matmul_tn", a, b);
  Matrix out(a.cols(), b.cols());
  map(out).noalias() = map(a).transpose() * map(b);
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) shape_error("matmul_nt", a, b);
  Matrix out(a.rows(), b.rows());
  map(out).noalias() = map(a) * map(b).transpose();
  return out;
}

void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.cols() != b.cols() || out.rows() != a.rows() || out.cols() != b.rows()) shape_error("matmul_nt_acc", a, b);
  map(out).noalias() += map(a) * map(b).transpose();
}

void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.rows() != b.rows() || out.rows() != a.cols() || out.cols() != b.cols()) shape_error("matmul_tn_acc", a, b);
  map(out).noalias() += map(a).transpose() * map(b);
}

void matmul_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.cols() != b.rows() || out.rows() != a.rows() || out.cols() != b.cols()) shape_error("matmul_acc", a, b);
  map(out).noalias() += map(a) * map(b);
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) shape_error("hadamard", a, b);
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

void add_row_broadcast(Matrix& m, const Matrix& row) {
  if (row.rows() != 1 || row.cols() != m.cols()) shape_error("add_row_broadcast", m, row);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto dst = m.row(r);
    for (std::size_t c = 0; c < m.cols(); ++c) dst[c] += row[c];
  }
}

void column_sums_acc(const Matrix& m, Matrix& out) {
  if (out.rows() != 1 || out.cols() != m.cols()) shape_error("column_sums_acc", m, out);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto src = m.row(r);
    for (std::size_t c = 0; c < m.cols(); ++c) out[c] += src[c];
  }
}

bool all_finite(const Matrix& m) noexcept {
  return std::all_of(m.values().begin(), m.values().end(), [](double v) { return std::isfinite(v); });
}

void require_finite(const Matrix& m, std::string_view what) {
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!std::isfinite(m[i])) {
      std::ostringstream os;
      os << what << ": non-finite value " << m[i] << " at (" << i / std::max<std::size_t>(m.cols(), 1) << ", "
         << i % std::max<std::size_t>(m.cols(), 1) << ")";
      throw NumericalError(os.str());
    }
  }
}

double sigmoid(double x) noexcept {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix activation(Activation kind, const Matrix& x) {
  require_finite(x, "activation input");
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    switch (kind) {
      case Activation::sigmoid: out[i] = sigmoid(x[i]); break;
      case Activation::tanh: out[i] = std::tanh(x[i]); break;
      case Activation::relu: out[i] = x[i] > 0.0 ? x[i] : 0.0; break;
    }
  }
  return out;
}

std::vector<double> softmax(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("softmax: empty vector");
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericalError("softmax: non-finite input");
    mx = std::max(mx, x);
  }
  std::vector<double> out(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    sum += out[i];
  }
  for (double& x : out) x /= sum;
  return out;
}

Matrix softmax_rows(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto s = softmax(m.row(r));
    std::copy(s.begin(), s.end(), out.row(r).begin());
  }
  return out;
}

Matrix softmax_rows_backward(const Matrix& y, const Matrix& dy) {
  if (!y.same_shape(dy)) shape_error("softmax_rows_backward", y, dy);
  Matrix dx(y.rows(), y.cols());
  for (std::size_t r = 0; r < y.rows(); ++r) {
    double dot = 0.0;
    for (std::size_t c = 0; c < y.cols(); ++c) dot += y(r, c) * dy(r, c);
    for (std::size_t c = 0; c < y.cols(); ++c) dx(r, c) = y(r, c) * (dy(r, c) - dot);
  }
  return dx;
}

double mse(const Matrix& pred, const Matrix& target) {
  if (!pred.same_shape(target)) shape_error("mse", pred, target);
  if (pred.empty()) throw std::invalid_argument("mse: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

Matrix mse_grad(const Matrix& pred, const Matrix& target) {
  if (!pred.same_shape(target)) shape_error("mse_grad", pred, target);
  Matrix g(pred.rows(), pred.cols());
  const double scale = 2.0 / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) g[i] = scale * (pred[i] - target[i]);
  return g;
}

double mae(std::span<const double> pred, std::span<const double> target) {
  if (pred.empty()) throw std::invalid_argument("mae: empty input");
  if (pred.size() != target.size()) {
    throw std::invalid_argument("mae: length mismatch " + std::to_string(pred.size()) + " vs " +
                                std::to_string(target.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - target[i]);
  return acc / static_cast<double>(pred.size());
}

std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view stage, std::uint64_t index) noexcept {
  std::uint64_t s = master ^ fnv1a64(stage);
  splitmix64(s);
  s ^= index * 0xD6E8FEB86659FD93ULL;
  return splitmix64(s);
}

RngStream::RngStream(std::uint64_t seed, std::string_view stream_id) : seed_(seed), stream_id_(stream_id) {
  std::uint64_t s = seed ^ fnv1a64(stream_id);
  for (auto& word : state_) word = splitmix64(s);
}

RngStream RngStream::derive(std::string_view child_id) const {
  std::string id = stream_id_;
  id += '/';
  id += child_id;
  return RngStream(seed_, id);
}

// xoshiro256**
std::uint64_t RngStream::next_u64() noexcept {
  const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double RngStream::uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double RngStream::normal() noexcept {
  if (has_spare_) {
    has_spare_ = false;
    return spare_normal_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_normal_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

std::uint64_t RngStream::below(std::uint64_t n) noexcept {
  // Lemire-style rejection keeps the draw unbiased.
  const std::uint64_t threshold = (0 - n) % n;
  for (;;) {
    const std::uint64_t x = next_u64();
    if (x >= threshold) return x % n;
  }
}

double xavier_bound(std::size_t rows, std::size_t cols) noexcept {
  return std::sqrt(6.0 / static_cast<double>(rows + cols));
}

Matrix init_uniform(std::size_t rows, std::size_t cols, RngStream& rng) {
  if (rows == 0 || cols == 0) throw std::invalid_argument("init_uniform: zero dimension");
  const double bound = xavier_bound(rows, cols);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.uniform(-bound, bound);
  return m;
}

void adam_step(Matrix& params, const Matrix& grads, AdamState& state, std::string_view name) {
  if (!params.same_shape(grads) || !params.same_shape(state.m) || !params.same_shape(state.v)) {
    throw std::invalid_argument("adam_step: shape mismatch for '" + std::string(name) + "': params " +
                                params.shape_string() + ", grads " + grads.shape_string() + ", state " +
                                state.m.shape_string());
  }
  if (!all_finite(grads)) throw NumericalError("adam_step: non-finite gradient in '" + std::string(name) + "'");
  const AdamConfig& c = state.config;
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
    state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
  }
}

void AdamOptimizer::step(std::span<const TensorRef> params, std::span<const ConstTensorRef> grads) {
  if (params.size() != grads.size()) throw std::invalid_argument("AdamOptimizer: tensor count mismatch");
  if (states_.empty()) {
    states_.reserve(params.size());
    for (const auto& p : params) states_.emplace_back(*p.value, config_);
  } else if (states_.size() != params.size()) {
    throw std::invalid_argument("AdamOptimizer: model layout changed between steps");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    adam_step(*params[i].value, *grads[i].value, states_[i], params[i].name);
  }
}

double grad_check(const ScalarFunction& f, std::span<const double> params, std::span<const double> analytic,
                  double h) {
  if (params.size() != analytic.size()) throw std::invalid_argument("grad_check: gradient length mismatch");
  std::vector<double> probe(params.begin(), params.end());
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + h;
    const double fp = f(probe);
    probe[i] = saved - h;
    const double fm = f(probe);
    probe[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericalError("grad_check: objective non-finite when probing parameter " + std::to_string(i));
    }
    const double numeric = (fp - fm) / (2.0 * h);
    const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

std::vector<double> flatten(std::span<const ConstTensorRef> tensors) {
  std::vector<double> flat;
  for (const auto& t : tensors) flat.insert(flat.end(), t.value->values().begin(), t.value->values().end());
  return flat;
}

void unflatten(std::span<const double> flat, std::span<const TensorRef> tensors) {
  std::size_t offset = 0;
  for (const auto& t : tensors) {
    auto dst = t.value->values();
    if (offset + dst.size() > flat.size()) throw std::invalid_argument("unflatten: vector too short");
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), dst.size(), dst.begin());
    offset += dst.size();
  }
  if (offset != flat.size()) throw std::invalid_argument("unflatten: vector too long");
}

}  // namespace tsaug
