#pragma once

// Building blocks of the age regressors, each with an explicit backward pass.
// Layers operate on one sample at a time.

#include <cstddef>
#include <vector>

#include "tsaug/numerics.hpp"

namespace tsaug {

// ---- 1D convolution (valid, stride 1) ----

/// Unrolls input (Cin × L) into (Cin·k × L−k+1) so the convolution is one GEMM.
Matrix im2col_1d(const Matrix& input, std::size_t kernel);

/// Cross-correlation. input: Cin × L, weights: F × (Cin·k), bias: 1 × F.
/// Returns F × (L − k + 1).
Matrix conv1d(const Matrix& input, const Matrix& weights, const Matrix& bias, std::size_t kernel);

/// Accumulates dW, db and returns d input.
Matrix conv1d_backward(const Matrix& input, const Matrix& weights, std::size_t kernel, const Matrix& d_out,
                       Matrix& d_weights, Matrix& d_bias);

// ---- max pooling ----

struct PoolSpec {
  std::size_t kernel = 2;
  std::size_t stride = 2;
  std::size_t pad = 1;

  std::size_t output_length(std::size_t length) const;
};

struct PoolResult {
  Matrix output;
  std::vector<std::size_t> argmax;  // flat source index per output element
};

/// Padding counts as −∞, so it is never selected over real samples.
PoolResult maxpool1d(const Matrix& input, const PoolSpec& spec = {});
Matrix maxpool1d_backward(const PoolResult& forward, std::size_t rows, std::size_t cols, const Matrix& d_out);

Matrix relu(const Matrix& x);
/// Zeroes gradient where the forward input was ≤ 0.
Matrix relu_backward(const Matrix& x, const Matrix& d_out);

// ---- multi-head self-attention ----

struct MultiHeadAttentionParams {
  Matrix wq, wk, wv, wo;  // d × d
  Matrix bq, bk, bv, bo;  // 1 × d
  std::size_t heads = 2;

  MultiHeadAttentionParams() = default;
  MultiHeadAttentionParams(std::size_t dim, std::size_t heads);
  static MultiHeadAttentionParams xavier(std::size_t dim, std::size_t heads, RngStream& rng);

  std::size_t dim() const noexcept { return wq.rows(); }
  std::vector<TensorRef> tensors(const std::string& prefix);
  std::vector<ConstTensorRef> tensors(const std::string& prefix) const;
};

struct MhaCache {
  Matrix x, q, k, v, concat;
  std::vector<Matrix> attention;  // per head, L × L
};

/// tokens: L × d. Scaled dot-product attention per head on d/heads-wide
/// slices, heads concatenated and output-projected. No positional encoding.
Matrix multihead_attention(const MultiHeadAttentionParams& p, const Matrix& tokens, MhaCache* cache = nullptr);
Matrix multihead_attention_backward(const MultiHeadAttentionParams& p, const MhaCache& cache, const Matrix& d_out,
                                    MultiHeadAttentionParams& grads);

// ---- time attention over LSTM states ----

struct TimeAttentionParams {
  Matrix wq, we, wv;  // d_att × H

  TimeAttentionParams() = default;
  TimeAttentionParams(std::size_t hidden, std::size_t dim);
  static TimeAttentionParams xavier(std::size_t hidden, std::size_t dim, RngStream& rng);

  std::size_t dim() const noexcept { return wq.rows(); }
  std::vector<TensorRef> tensors(const std::string& prefix);
  std::vector<ConstTensorRef> tensors(const std::string& prefix) const;
};

struct TimeAttentionResult {
  Matrix context;  // T × d_att
  Matrix weights;  // T × T, row t = α_t·
  Matrix h, q, e, v;
};

/// q_t = W_q h_t, e_j = W_e h_j, v_j = W_v h_j; α_t· = softmax_j(q_t·e_j / √d);
/// c_t = Σ_j α_tj v_j. With `literal_prefactor`, c_t is additionally divided
/// by d (the leading 1/‖e_j‖ factor read with ‖e_j‖ = d).
TimeAttentionResult time_attention(const TimeAttentionParams& p, const Matrix& hidden, bool literal_prefactor = false);
Matrix time_attention_backward(const TimeAttentionParams& p, const TimeAttentionResult& fwd, const Matrix& d_context,
                               TimeAttentionParams& grads, bool literal_prefactor = false);

}  // namespace tsaug
