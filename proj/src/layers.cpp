#include "tsaug/layers.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace tsaug {

namespace {

Matrix column_block(const Matrix& m, std::size_t start, std::size_t width) {
  Matrix out(m.rows(), width);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < width; ++c) out(r, c) = m(r, start + c);
  return out;
}

void add_column_block(Matrix& m, std::size_t start, const Matrix& block) {
  for (std::size_t r = 0; r < block.rows(); ++r)
    for (std::size_t c = 0; c < block.cols(); ++c) m(r, start + c) += block(r, c);
}

Matrix affine_rows(const Matrix& x, const Matrix& w, const Matrix& b) {
  Matrix y = matmul_nt(x, w);
  add_row_broadcast(y, b);
  return y;
}

}  // namespace

// ---- conv ----

Matrix im2col_1d(const Matrix& input, std::size_t kernel) {
  if (kernel == 0 || input.cols() < kernel) {
    throw std::invalid_argument("conv1d: input length " + std::to_string(input.cols()) + " shorter than kernel " +
                                std::to_string(kernel));
  }
  const std::size_t out_len = input.cols() - kernel + 1;
  Matrix cols(input.rows() * kernel, out_len);
  for (std::size_t ci = 0; ci < input.rows(); ++ci) {
    for (std::size_t j = 0; j < kernel; ++j) {
      const double* src = input.row(ci).data() + j;
      double* dst = cols.row(ci * kernel + j).data();
      std::copy_n(src, out_len, dst);
    }
  }
  return cols;
}

Matrix conv1d(const Matrix& input, const Matrix& weights, const Matrix& bias, std::size_t kernel) {
  if (weights.cols() != input.rows() * kernel || bias.rows() != 1 || bias.cols() != weights.rows()) {
    throw std::invalid_argument("conv1d: weights " + weights.shape_string() + " / bias " + bias.shape_string() +
                                " do not fit input " + input.shape_string() + " with kernel " + std::to_string(kernel));
  }
  Matrix out = matmul(weights, im2col_1d(input, kernel));
  for (std::size_t f = 0; f < out.rows(); ++f)
    for (double& v : out.row(f)) v += bias[f];
  return out;
}

Matrix conv1d_backward(const Matrix& input, const Matrix& weights, std::size_t kernel, const Matrix& d_out,
                       Matrix& d_weights, Matrix& d_bias) {
  const Matrix cols = im2col_1d(input, kernel);
  if (d_out.rows() != weights.rows() || d_out.cols() != cols.cols()) {
    throw std::invalid_argument("conv1d_backward: upstream gradient " + d_out.shape_string() + " has wrong shape");
  }
  matmul_nt_acc(d_out, cols, d_weights);
  for (std::size_t f = 0; f < d_out.rows(); ++f) {
    double s = 0.0;
    for (double v : d_out.row(f)) s += v;
    d_bias[f] += s;
  }
  const Matrix d_cols = matmul_tn(weights, d_out);
  Matrix d_input(input.rows(), input.cols());
  const std::size_t out_len = cols.cols();
  for (std::size_t ci = 0; ci < input.rows(); ++ci) {
    for (std::size_t j = 0; j < kernel; ++j) {
      const double* src = d_cols.row(ci * kernel + j).data();
      double* dst = d_input.row(ci).data() + j;
      for (std::size_t t = 0; t < out_len; ++t) dst[t] += src[t];
    }
  }
  return d_input;
}

// ---- pooling ----

std::size_t PoolSpec::output_length(std::size_t length) const {
  if (kernel == 0 || stride == 0) throw std::invalid_argument("maxpool1d: kernel and stride must be >= 1");
  if (length + 2 * pad < kernel) {
    throw std::invalid_argument("maxpool1d: input length " + std::to_string(length) + " too short for kernel " +
                                std::to_string(kernel));
  }
  return (length + 2 * pad - kernel) / stride + 1;
}

PoolResult maxpool1d(const Matrix& input, const PoolSpec& spec) {
  const std::size_t len = input.cols();
  if (len == 0) throw std::invalid_argument("maxpool1d: empty input");
  const std::size_t out_len = spec.output_length(len);
  PoolResult r{Matrix(input.rows(), out_len), std::vector<std::size_t>(input.rows() * out_len)};
  for (std::size_t f = 0; f < input.rows(); ++f) {
    for (std::size_t j = 0; j < out_len; ++j) {
      double best = -std::numeric_limits<double>::infinity();
      std::size_t best_idx = 0;
      bool found = false;
      for (std::size_t w = 0; w < spec.kernel; ++w) {
        const std::size_t padded = j * spec.stride + w;
        if (padded < spec.pad || padded - spec.pad >= len) continue;
        const std::size_t src = padded - spec.pad;
        if (!found || input(f, src) > best) {
          best = input(f, src);
          best_idx = f * len + src;
          found = true;
        }
      }
      if (!found) throw std::invalid_argument("maxpool1d: a pooling window covers only padding");
      r.output(f, j) = best;
      r.argmax[f * out_len + j] = best_idx;
    }
  }
  return r;
}

Matrix maxpool1d_backward(const PoolResult& forward, std::size_t rows, std::size_t cols, const Matrix& d_out) {
  if (!d_out.same_shape(forward.output)) throw std::invalid_argument("maxpool1d_backward: gradient shape mismatch");
  Matrix d_in(rows, cols);
  for (std::size_t i = 0; i < d_out.size(); ++i) d_in[forward.argmax[i]] += d_out[i];
  return d_in;
}

Matrix relu(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

Matrix relu_backward(const Matrix& x, const Matrix& d_out) {
  Matrix d(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) d[i] = x[i] > 0.0 ? d_out[i] : 0.0;
  return d;
}

// ---- multi-head attention ----

MultiHeadAttentionParams::MultiHeadAttentionParams(std::size_t dim, std::size_t heads_)
    : wq(dim, dim), wk(dim, dim), wv(dim, dim), wo(dim, dim),
      bq(1, dim), bk(1, dim), bv(1, dim), bo(1, dim), heads(heads_) {
  if (heads == 0 || dim % heads != 0) {
    throw std::invalid_argument("multihead_attention: dimension " + std::to_string(dim) +
                                " not divisible by heads " + std::to_string(heads));
  }
}

MultiHeadAttentionParams MultiHeadAttentionParams::xavier(std::size_t dim, std::size_t heads, RngStream& rng) {
  MultiHeadAttentionParams p(dim, heads);
  p.wq = init_uniform(dim, dim, rng);
  p.wk = init_uniform(dim, dim, rng);
  p.wv = init_uniform(dim, dim, rng);
  p.wo = init_uniform(dim, dim, rng);
  return p;
}

std::vector<TensorRef> MultiHeadAttentionParams::tensors(const std::string& prefix) {
  return {{prefix + "wq", &wq}, {prefix + "wk", &wk}, {prefix + "wv", &wv}, {prefix + "wo", &wo},
          {prefix + "bq", &bq}, {prefix + "bk", &bk}, {prefix + "bv", &bv}, {prefix + "bo", &bo}};
}

std::vector<ConstTensorRef> MultiHeadAttentionParams::tensors(const std::string& prefix) const {
  return {{prefix + "wq", &wq}, {prefix + "wk", &wk}, {prefix + "wv", &wv}, {prefix + "wo", &wo},
          {prefix + "bq", &bq}, {prefix + "bk", &bk}, {prefix + "bv", &bv}, {prefix + "bo", &bo}};
}

Matrix multihead_attention(const MultiHeadAttentionParams& p, const Matrix& tokens, MhaCache* cache) {
  const std::size_t d = p.dim();
  if (p.heads == 0 || d % p.heads != 0) {
    throw std::invalid_argument("multihead_attention: dimension " + std::to_string(d) + " not divisible by heads " +
                                std::to_string(p.heads));
  }
  if (tokens.cols() != d || tokens.rows() == 0) {
    throw std::invalid_argument("multihead_attention: tokens " + tokens.shape_string() + ", model dimension " +
                                std::to_string(d));
  }
  const std::size_t dk = d / p.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  Matrix q = affine_rows(tokens, p.wq, p.bq);
  Matrix k = affine_rows(tokens, p.wk, p.bk);
  Matrix v = affine_rows(tokens, p.wv, p.bv);
  Matrix concat(tokens.rows(), d);
  std::vector<Matrix> attn;
  attn.reserve(p.heads);
  for (std::size_t h = 0; h < p.heads; ++h) {
    const Matrix qh = column_block(q, h * dk, dk);
    const Matrix kh = column_block(k, h * dk, dk);
    const Matrix vh = column_block(v, h * dk, dk);
    Matrix a = softmax_rows(matmul_nt(qh, kh) * scale);
    add_column_block(concat, h * dk, matmul(a, vh));
    attn.push_back(std::move(a));
  }
  Matrix out = affine_rows(concat, p.wo, p.bo);
  if (cache != nullptr) {
    cache->x = tokens;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->concat = std::move(concat);
    cache->attention = std::move(attn);
  }
  return out;
}

Matrix multihead_attention_backward(const MultiHeadAttentionParams& p, const MhaCache& cache, const Matrix& d_out,
                                    MultiHeadAttentionParams& grads) {
  const std::size_t d = p.dim();
  const std::size_t dk = d / p.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  if (!d_out.same_shape(cache.concat)) throw std::invalid_argument("multihead_attention_backward: gradient shape");

  matmul_tn_acc(d_out, cache.concat, grads.wo);
  column_sums_acc(d_out, grads.bo);
  const Matrix d_concat = matmul(d_out, p.wo);

  Matrix dq(cache.q.rows(), d), dk_all(cache.k.rows(), d), dv(cache.v.rows(), d);
  for (std::size_t h = 0; h < p.heads; ++h) {
    const Matrix& a = cache.attention[h];
    const Matrix qh = column_block(cache.q, h * dk, dk);
    const Matrix kh = column_block(cache.k, h * dk, dk);
    const Matrix vh = column_block(cache.v, h * dk, dk);
    const Matrix d_oh = column_block(d_concat, h * dk, dk);
    const Matrix d_a = matmul_nt(d_oh, vh);
    add_column_block(dv, h * dk, matmul_tn(a, d_oh));
    const Matrix d_s = softmax_rows_backward(a, d_a) * scale;
    add_column_block(dq, h * dk, matmul(d_s, kh));
    add_column_block(dk_all, h * dk, matmul_tn(d_s, qh));
  }
  matmul_tn_acc(dq, cache.x, grads.wq);
  matmul_tn_acc(dk_all, cache.x, grads.wk);
  matmul_tn_acc(dv, cache.x, grads.wv);
  column_sums_acc(dq, grads.bq);
  column_sums_acc(dk_all, grads.bk);
  column_sums_acc(dv, grads.bv);
  Matrix dx = matmul(dq, p.wq);
  matmul_acc(dk_all, p.wk, dx);
  matmul_acc(dv, p.wv, dx);
  return dx;
}

// ---- time attention ----

TimeAttentionParams::TimeAttentionParams(std::size_t hidden, std::size_t dim)
    : wq(dim, hidden), we(dim, hidden), wv(dim, hidden) {}

TimeAttentionParams TimeAttentionParams::xavier(std::size_t hidden, std::size_t dim, RngStream& rng) {
  TimeAttentionParams p;
  p.wq = init_uniform(dim, hidden, rng);
  p.we = init_uniform(dim, hidden, rng);
  p.wv = init_uniform(dim, hidden, rng);
  return p;
}

std::vector<TensorRef> TimeAttentionParams::tensors(const std::string& prefix) {
  return {{prefix + "wq", &wq}, {prefix + "we", &we}, {prefix + "wv", &wv}};
}

std::vector<ConstTensorRef> TimeAttentionParams::tensors(const std::string& prefix) const {
  return {{prefix + "wq", &wq}, {prefix + "we", &we}, {prefix + "wv", &wv}};
}

TimeAttentionResult time_attention(const TimeAttentionParams& p, const Matrix& hidden, bool literal_prefactor) {
  if (hidden.rows() == 0 || hidden.cols() != p.wq.cols()) {
    throw std::invalid_argument("time_attention: hidden states " + hidden.shape_string() + ", projection expects " +
                                std::to_string(p.wq.cols()) + " features");
  }
  const double dim = static_cast<double>(p.dim());
  TimeAttentionResult r;
  r.h = hidden;
  r.q = matmul_nt(hidden, p.wq);
  r.e = matmul_nt(hidden, p.we);
  r.v = matmul_nt(hidden, p.wv);
  r.weights = softmax_rows(matmul_nt(r.q, r.e) * (1.0 / std::sqrt(dim)));
  r.context = matmul(r.weights, r.v);
  if (literal_prefactor) r.context *= 1.0 / dim;
  return r;
}

Matrix time_attention_backward(const TimeAttentionParams& p, const TimeAttentionResult& fwd, const Matrix& d_context,
                               TimeAttentionParams& grads, bool literal_prefactor) {
  if (!d_context.same_shape(fwd.context)) throw std::invalid_argument("time_attention_backward: gradient shape");
  const double dim = static_cast<double>(p.dim());
  Matrix dc = d_context;
  if (literal_prefactor) dc *= 1.0 / dim;
  const Matrix d_w = matmul_nt(dc, fwd.v);
  const Matrix dv = matmul_tn(fwd.weights, dc);
  const Matrix d_s = softmax_rows_backward(fwd.weights, d_w) * (1.0 / std::sqrt(dim));
  const Matrix dq = matmul(d_s, fwd.e);
  const Matrix de = matmul_tn(d_s, fwd.q);
  matmul_tn_acc(dq, fwd.h, grads.wq);
  matmul_tn_acc(de, fwd.h, grads.we);
  matmul_tn_acc(dv, fwd.h, grads.wv);
  Matrix dh = matmul(dq, p.wq);
  matmul_acc(de, p.we, dh);
  matmul_acc(dv, p.wv, dh);
  return dh;
}

}  // namespace tsaug
