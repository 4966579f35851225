#pragma once

// Brute-force reference implementations for tests. Written with nested loops
// over plain vectors, sharing no code with the library beyond reading Matrix
// entries.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

#include "tsaug/numerics.hpp"

namespace oracle {

using Grid = std::vector<std::vector<double>>;

inline Grid grid(const tsaug::Matrix& m) {
  Grid g(m.rows(), std::vector<double>(m.cols()));
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) g[r][c] = m(r, c);
  return g;
}

inline double max_abs_diff(const Grid& a, const tsaug::Matrix& b) {
  if (a.size() != b.rows() || (!a.empty() && a[0].size() != b.cols())) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (std::size_t r = 0; r < b.rows(); ++r)
    for (std::size_t c = 0; c < b.cols(); ++c) worst = std::max(worst, std::abs(a[r][c] - b(r, c)));
  return worst;
}

inline double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Grid matmul(const Grid& a, const Grid& b) {
  Grid out(a.size(), std::vector<double>(b.empty() ? 0 : b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < out[i].size(); ++j)
      for (std::size_t k = 0; k < b.size(); ++k) out[i][j] += a[i][k] * b[k][j];
  return out;
}

inline std::vector<double> softmax(const std::vector<double>& x) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : x) m = std::max(m, v);
  std::vector<double> e(x.size());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    e[i] = std::exp(x[i] - m);
    s += e[i];
  }
  for (double& v : e) v /= s;
  return e;
}

inline double mse(const Grid& a, const Grid& b) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t r = 0; r < a.size(); ++r)
    for (std::size_t c = 0; c < a[r].size(); ++c, ++n) s += (a[r][c] - b[r][c]) * (a[r][c] - b[r][c]);
  return s / static_cast<double>(n);
}

inline double mae(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

struct LstmStep {
  std::vector<double> h, c;
};

/// One sample. Weights laid out as stacked gates [i, f, g, o].
inline LstmStep lstm_step(const Grid& wx, const Grid& wh, const std::vector<double>& b, const std::vector<double>& x,
                          const std::vector<double>& h, const std::vector<double>& c) {
  const std::size_t hs = h.size();
  std::vector<double> z(4 * hs);
  for (std::size_t r = 0; r < 4 * hs; ++r) {
    double s = b[r];
    for (std::size_t j = 0; j < x.size(); ++j) s += wx[r][j] * x[j];
    for (std::size_t j = 0; j < hs; ++j) s += wh[r][j] * h[j];
    z[r] = s;
  }
  LstmStep out{std::vector<double>(hs), std::vector<double>(hs)};
  for (std::size_t k = 0; k < hs; ++k) {
    const double i = sigm(z[k]);
    const double f = sigm(z[hs + k]);
    const double g = std::tanh(z[2 * hs + k]);
    const double o = sigm(z[3 * hs + k]);
    out.c[k] = f * c[k] + i * g;
    out.h[k] = o * std::tanh(out.c[k]);
  }
  return out;
}

/// sequence: L rows of C inputs; returns L rows of hidden states.
inline Grid lstm_forward(const Grid& wx, const Grid& wh, const std::vector<double>& b, const Grid& sequence) {
  const std::size_t hs = wh[0].size();
  std::vector<double> h(hs, 0.0), c(hs, 0.0);
  Grid out;
  for (const auto& x : sequence) {
    auto s = lstm_step(wx, wh, b, x, h, c);
    h = s.h;
    c = s.c;
    out.push_back(h);
  }
  return out;
}

/// input: Cin × L, w: F × (Cin·k) with column index ci·k + j.
inline Grid conv1d(const Grid& input, const Grid& w, const std::vector<double>& b, std::size_t k) {
  const std::size_t len = input[0].size();
  const std::size_t out_len = len - k + 1;
  Grid out(w.size(), std::vector<double>(out_len));
  for (std::size_t f = 0; f < w.size(); ++f) {
    for (std::size_t t = 0; t < out_len; ++t) {
      double s = b[f];
      for (std::size_t ci = 0; ci < input.size(); ++ci)
        for (std::size_t j = 0; j < k; ++j) s += w[f][ci * k + j] * input[ci][t + j];
      out[f][t] = s;
    }
  }
  return out;
}

/// Padding positions are skipped (never win the max).
inline Grid maxpool(const Grid& input, std::size_t kernel, std::size_t stride, std::size_t pad) {
  const long len = static_cast<long>(input[0].size());
  const std::size_t out_len = (input[0].size() + 2 * pad - kernel) / stride + 1;
  Grid out(input.size(), std::vector<double>(out_len));
  for (std::size_t r = 0; r < input.size(); ++r) {
    for (std::size_t j = 0; j < out_len; ++j) {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t w = 0; w < kernel; ++w) {
        const long pos = static_cast<long>(j * stride + w) - static_cast<long>(pad);
        if (pos >= 0 && pos < len) best = std::max(best, input[r][static_cast<std::size_t>(pos)]);
      }
      out[r][j] = best;
    }
  }
  return out;
}

/// Time attention over hidden states H (T × Hd); projections d × Hd.
inline Grid time_attention(const Grid& wq, const Grid& we, const Grid& wv, const Grid& hidden, bool literal) {
  const std::size_t len = hidden.size();
  const std::size_t d = wq.size();
  auto project = [&](const Grid& w, std::size_t t) {
    std::vector<double> out(d, 0.0);
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t j = 0; j < hidden[t].size(); ++j) out[a] += w[a][j] * hidden[t][j];
    return out;
  };
  Grid q, e, v;
  for (std::size_t t = 0; t < len; ++t) {
    q.push_back(project(wq, t));
    e.push_back(project(we, t));
    v.push_back(project(wv, t));
  }
  Grid ctx(len, std::vector<double>(d, 0.0));
  for (std::size_t t = 0; t < len; ++t) {
    std::vector<double> scores(len);
    for (std::size_t j = 0; j < len; ++j) {
      double s = 0.0;
      for (std::size_t a = 0; a < d; ++a) s += q[t][a] * e[j][a];
      scores[j] = s / std::sqrt(static_cast<double>(d));
    }
    const auto alpha = softmax(scores);
    for (std::size_t j = 0; j < len; ++j)
      for (std::size_t a = 0; a < d; ++a) ctx[t][a] += alpha[j] * v[j][a];
    if (literal)
      for (double& x : ctx[t]) x /= static_cast<double>(d);
  }
  return ctx;
}

/// Max relative error |a − n| / max(1, |a|, |n|) between the analytic
/// gradient written by `loss(model, &grads)` and central differences.
template <typename Model, typename Loss>
double model_grad_error(Model model, Loss loss, double h = 1e-5) {
  Model grads = model.zeros();
  loss(model, &grads);
  auto params = model.tensors();
  const auto g = std::as_const(grads).tensors();
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i].value;
    const auto& a = *g[i].value;
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double keep = p[j];
      p[j] = keep + h;
      const double up = loss(model, static_cast<Model*>(nullptr));
      p[j] = keep - h;
      const double down = loss(model, static_cast<Model*>(nullptr));
      p[j] = keep;
      const double num = (up - down) / (2.0 * h);
      const double err = std::abs(a[j] - num) / std::max({1.0, std::abs(a[j]), std::abs(num)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace oracle
