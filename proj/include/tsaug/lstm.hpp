#pragma once

// Single LSTM layer with hand-derived backpropagation through time.
//
// Gate blocks are stacked in the order [input, forget, cell, output], so rows
// [0,H) of w_x/w_h/b belong to the input gate, [H,2H) to the forget gate and
// so on. The batched entry points take one B×C matrix per time step; the
// single-sequence ones take an L×C matrix and treat it as B = 1.

#include <cstddef>
#include <span>
#include <vector>

#include "tsaug/numerics.hpp"

namespace tsaug {

struct LstmParams {
  Matrix w_x;  // 4H × C
  Matrix w_h;  // 4H × H
  Matrix b;    // 1 × 4H

  LstmParams() = default;
  LstmParams(std::size_t input_size, std::size_t hidden_size);

  /// Xavier weights, zero bias.
  static LstmParams xavier(std::size_t input_size, std::size_t hidden_size, RngStream& rng);

  std::size_t input_size() const noexcept { return w_x.cols(); }
  std::size_t hidden_size() const noexcept { return w_h.cols(); }

  std::vector<TensorRef> tensors();
  std::vector<ConstTensorRef> tensors() const;
  LstmParams zeros() const { return LstmParams(input_size(), hidden_size()); }
  void validate() const;
};

struct LstmState {
  Matrix h;  // B × H
  Matrix c;  // B × H
};

/// Everything the backward pass needs from one time step.
struct LstmStepCache {
  Matrix x, h_prev, c_prev;
  Matrix i, f, g, o;  // gate activations, B × H
  Matrix c, tanh_c;
};

struct LstmCache {
  std::vector<LstmStepCache> steps;
  std::size_t batch = 0;
};

LstmState lstm_step(const LstmParams& p, const Matrix& x, const Matrix& h_prev, const Matrix& c_prev,
                    LstmStepCache* cache = nullptr);

struct LstmBatchOutput {
  std::vector<Matrix> hidden;  // L entries of B × H
  LstmCache cache;
};

/// Zero initial state for every sequence in the batch.
LstmBatchOutput lstm_forward_batch(const LstmParams& p, std::span<const Matrix> inputs, bool keep_cache = true);

/// Accumulates parameter gradients into `grads`; returns per-step input
/// gradients (L entries of B × C). `d_hidden` has one B×H entry per step.
std::vector<Matrix> lstm_backward_batch(const LstmParams& p, const LstmCache& cache,
                                        std::span<const Matrix> d_hidden, LstmParams& grads);

struct LstmSequenceOutput {
  Matrix hidden;  // L × H
  LstmCache cache;
};

LstmSequenceOutput lstm_forward(const LstmParams& p, const Matrix& sequence);

struct LstmGradients {
  LstmParams params;
  Matrix d_input;  // L × C
};

LstmGradients lstm_backward(const LstmParams& p, const LstmCache& cache, const Matrix& d_hidden);

/// Splits an L×C sequence into L row matrices (B = 1), and back.
std::vector<Matrix> split_rows(const Matrix& sequence);
Matrix stack_rows(std::span<const Matrix> rows);

}  // namespace tsaug
