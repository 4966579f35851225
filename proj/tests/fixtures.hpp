#pragma once

// Small differentiable probes around single layers so the generic
// finite-difference checker can treat inputs and weights alike.

#include <string>
#include <utility>
#include <vector>

#include "tsaug/forecast.hpp"
#include "tsaug/layers.hpp"
#include "tsaug/lstm.hpp"
#include "tsaug/numerics.hpp"
#include "tsaug/predict.hpp"

namespace fixture {

using tsaug::ConstTensorRef;
using tsaug::Matrix;
using tsaug::RngStream;
using tsaug::TensorRef;

inline Matrix random_matrix(std::size_t rows, std::size_t cols, RngStream& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = scale * rng.normal();
  return m;
}

inline double weighted_sum(const Matrix& a, const Matrix& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * w[i];
  return s;
}

// loss = Σ R ⊙ H over the hidden sequence of one LSTM layer.
struct LstmProbe {
  tsaug::LstmParams p;
  Matrix x;  // L × C
  Matrix r;  // L × H, fixed weights of the loss

  std::vector<TensorRef> tensors() {
    auto t = p.tensors();
    t.push_back({"x", &x});
    return t;
  }
  std::vector<ConstTensorRef> tensors() const {
    auto t = p.tensors();
    t.push_back({"x", &x});
    return t;
  }
  LstmProbe zeros() const { return {p.zeros(), Matrix(x.rows(), x.cols()), r}; }

  static LstmProbe make(std::size_t len, std::size_t in, std::size_t hidden, RngStream& rng) {
    LstmProbe probe{tsaug::LstmParams(in, hidden), random_matrix(len, in, rng), random_matrix(len, hidden, rng)};
    probe.p.w_x = random_matrix(4 * hidden, in, rng, 0.5);
    probe.p.w_h = random_matrix(4 * hidden, hidden, rng, 0.5);
    probe.p.b = random_matrix(1, 4 * hidden, rng, 0.5);
    return probe;
  }

  static double loss(const LstmProbe& m, LstmProbe* g) {
    auto fw = tsaug::lstm_forward(m.p, m.x);
    const double l = weighted_sum(fw.hidden, m.r);
    if (g != nullptr) {
      auto back = tsaug::lstm_backward(m.p, fw.cache, m.r);
      auto dst = g->p.tensors();
      const auto src = std::as_const(back.params).tensors();
      for (std::size_t i = 0; i < dst.size(); ++i) *dst[i].value += *src[i].value;
      g->x += back.d_input;
    }
    return l;
  }
};

// conv → ReLU → pool → conv → ReLU → pool on one channel.
struct ConvProbe {
  Matrix x;  // 1 × L
  Matrix w1, b1, w2, b2;
  Matrix r;
  std::size_t kernel = 3;

  std::vector<TensorRef> tensors() { return {{"x", &x}, {"w1", &w1}, {"b1", &b1}, {"w2", &w2}, {"b2", &b2}}; }
  std::vector<ConstTensorRef> tensors() const { return {{"x", &x}, {"w1", &w1}, {"b1", &b1}, {"w2", &w2}, {"b2", &b2}}; }
  ConvProbe zeros() const {
    return {Matrix(x.rows(), x.cols()), Matrix(w1.rows(), w1.cols()), Matrix(1, b1.cols()),
            Matrix(w2.rows(), w2.cols()), Matrix(1, b2.cols()), r, kernel};
  }

  static ConvProbe make(std::size_t len, std::size_t f1, std::size_t f2, RngStream& rng) {
    ConvProbe p;
    p.x = random_matrix(1, len, rng);
    p.w1 = random_matrix(f1, p.kernel, rng, 0.7);
    p.b1 = random_matrix(1, f1, rng, 0.2);
    p.w2 = random_matrix(f2, f1 * p.kernel, rng, 0.5);
    p.b2 = random_matrix(1, f2, rng, 0.2);
    const auto shape = tsaug::cnn_shape(len, p.kernel, {});
    p.r = random_matrix(f2, shape.pool2, rng);
    return p;
  }

  static double loss(const ConvProbe& m, ConvProbe* g) {
    using namespace tsaug;
    const Matrix z1 = conv1d(m.x, m.w1, m.b1, m.kernel);
    const PoolResult p1 = maxpool1d(relu(z1));
    const Matrix z2 = conv1d(p1.output, m.w2, m.b2, m.kernel);
    const PoolResult p2 = maxpool1d(relu(z2));
    const double l = weighted_sum(p2.output, m.r);
    if (g != nullptr) {
      const Matrix d_r2 = maxpool1d_backward(p2, z2.rows(), z2.cols(), m.r);
      const Matrix d_p1 = conv1d_backward(p1.output, m.w2, m.kernel, relu_backward(z2, d_r2), g->w2, g->b2);
      const Matrix d_r1 = maxpool1d_backward(p1, z1.rows(), z1.cols(), d_p1);
      g->x += conv1d_backward(m.x, m.w1, m.kernel, relu_backward(z1, d_r1), g->w1, g->b1);
    }
    return l;
  }
};

struct MhaProbe {
  tsaug::MultiHeadAttentionParams p;
  Matrix x;  // L × d
  Matrix r;

  std::vector<TensorRef> tensors() {
    auto t = p.tensors("mha.");
    t.push_back({"x", &x});
    return t;
  }
  std::vector<ConstTensorRef> tensors() const {
    auto t = p.tensors("mha.");
    t.push_back({"x", &x});
    return t;
  }
  MhaProbe zeros() const {
    return {tsaug::MultiHeadAttentionParams(p.dim(), p.heads), Matrix(x.rows(), x.cols()), r};
  }

  static MhaProbe make(std::size_t len, std::size_t dim, std::size_t heads, RngStream& rng) {
    MhaProbe probe{tsaug::MultiHeadAttentionParams(dim, heads), random_matrix(len, dim, rng), random_matrix(len, dim, rng)};
    for (auto& t : probe.p.tensors("")) *t.value = random_matrix(t.value->rows(), t.value->cols(), rng, 0.5);
    return probe;
  }

  static double loss(const MhaProbe& m, MhaProbe* g) {
    tsaug::MhaCache cache;
    const Matrix y = tsaug::multihead_attention(m.p, m.x, g != nullptr ? &cache : nullptr);
    const double l = weighted_sum(y, m.r);
    if (g != nullptr) g->x += tsaug::multihead_attention_backward(m.p, cache, m.r, g->p);
    return l;
  }
};

struct TimeAttentionProbe {
  tsaug::TimeAttentionParams p;
  Matrix h;  // T × H
  Matrix r;  // T × d
  bool literal = false;

  std::vector<TensorRef> tensors() {
    auto t = p.tensors("att.");
    t.push_back({"h", &h});
    return t;
  }
  std::vector<ConstTensorRef> tensors() const {
    auto t = p.tensors("att.");
    t.push_back({"h", &h});
    return t;
  }
  TimeAttentionProbe zeros() const {
    return {tsaug::TimeAttentionParams(p.wq.cols(), p.dim()), Matrix(h.rows(), h.cols()), r, literal};
  }

  static TimeAttentionProbe make(std::size_t len, std::size_t hidden, std::size_t dim, bool literal, RngStream& rng) {
    TimeAttentionProbe probe{tsaug::TimeAttentionParams(hidden, dim), random_matrix(len, hidden, rng),
                             random_matrix(len, dim, rng), literal};
    for (auto& t : probe.p.tensors("")) *t.value = random_matrix(t.value->rows(), t.value->cols(), rng, 0.5);
    return probe;
  }

  static double loss(const TimeAttentionProbe& m, TimeAttentionProbe* g) {
    const auto fw = tsaug::time_attention(m.p, m.h, m.literal);
    const double l = weighted_sum(fw.context, m.r);
    if (g != nullptr) g->h += tsaug::time_attention_backward(m.p, fw, m.r, g->p, m.literal);
    return l;
  }
};

inline std::vector<tsaug::WindowSample> random_windows(std::size_t n, std::size_t in_len, std::size_t horizon,
                                                       std::size_t channels, RngStream& rng) {
  std::vector<tsaug::WindowSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({"s" + std::to_string(i), 0, random_matrix(in_len, channels, rng),
                   random_matrix(horizon, channels, rng)});
  }
  return out;
}

inline tsaug::WindowBatch batch_of(const std::vector<tsaug::WindowSample>& windows) {
  std::vector<const tsaug::WindowSample*> ptrs;
  for (const auto& w : windows) ptrs.push_back(&w);
  return tsaug::make_batch(ptrs);
}

/// Tiny CNN / TALSTM configurations for gradient checks.
inline tsaug::PredictorConfig tiny_cnn(bool attention, std::size_t channels, std::size_t length) {
  tsaug::PredictorConfig c;
  c.kind = attention ? tsaug::PredictorKind::cnn_attention : tsaug::PredictorKind::cnn;
  c.channels = channels;
  c.length = length;
  c.conv1_filters = 3;
  c.conv2_filters = 4;
  c.fc_width = 5;
  c.heads = 2;
  return c;
}

inline tsaug::PredictorConfig tiny_talstm(std::size_t channels, bool literal = false) {
  tsaug::PredictorConfig c;
  c.kind = tsaug::PredictorKind::talstm;
  c.channels = channels;
  c.lstm_layers = 2;
  c.lstm_hidden = 3;
  c.attention_dim = 4;
  c.eq1_literal = literal;
  return c;
}

}  // namespace fixture
