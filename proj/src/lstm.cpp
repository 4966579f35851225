#include "tsaug/lstm.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace tsaug {

LstmParams::LstmParams(std::size_t input_size, std::size_t hidden_size)
    : w_x(4 * hidden_size, input_size), w_h(4 * hidden_size, hidden_size), b(1, 4 * hidden_size) {}

LstmParams LstmParams::xavier(std::size_t input_size, std::size_t hidden_size, RngStream& rng) {
  LstmParams p;
  p.w_x = init_uniform(4 * hidden_size, input_size, rng);
  p.w_h = init_uniform(4 * hidden_size, hidden_size, rng);
  p.b = Matrix(1, 4 * hidden_size);
  return p;
}

std::vector<TensorRef> LstmParams::tensors() { return {{"w_x", &w_x}, {"w_h", &w_h}, {"b", &b}}; }
std::vector<ConstTensorRef> LstmParams::tensors() const { return {{"w_x", &w_x}, {"w_h", &w_h}, {"b", &b}}; }

void LstmParams::validate() const {
  const std::size_t h = w_h.cols();
  if (h == 0 || w_h.rows() != 4 * h || w_x.rows() != 4 * h || b.rows() != 1 || b.cols() != 4 * h) {
    throw std::invalid_argument("LstmParams: inconsistent shapes w_x " + w_x.shape_string() + ", w_h " +
                                w_h.shape_string() + ", b " + b.shape_string());
  }
}

LstmState lstm_step(const LstmParams& p, const Matrix& x, const Matrix& h_prev, const Matrix& c_prev,
                    LstmStepCache* cache) {
  const std::size_t hs = p.hidden_size();
  const std::size_t batch = x.rows();
  if (x.cols() != p.input_size() || h_prev.rows() != batch || h_prev.cols() != hs || !h_prev.same_shape(c_prev)) {
    throw std::invalid_argument("lstm_step: shape mismatch x " + x.shape_string() + ", h " + h_prev.shape_string() +
                                ", c " + c_prev.shape_string() + " for input " + std::to_string(p.input_size()) +
                                ", hidden " + std::to_string(hs));
  }

  Matrix z = matmul_nt(x, p.w_x);
  matmul_nt_acc(h_prev, p.w_h, z);
  add_row_broadcast(z, p.b);

  Matrix i(batch, hs), f(batch, hs), g(batch, hs), o(batch, hs);
  LstmState next{Matrix(batch, hs), Matrix(batch, hs)};
  Matrix tanh_c(batch, hs);
  for (std::size_t r = 0; r < batch; ++r) {
    const auto zr = z.row(r);
    for (std::size_t k = 0; k < hs; ++k) {
      const double ig = sigmoid(zr[k]);
      const double fg = sigmoid(zr[hs + k]);
      const double gg = std::tanh(zr[2 * hs + k]);
      const double og = sigmoid(zr[3 * hs + k]);
      const double c = fg * c_prev(r, k) + ig * gg;
      const double tc = std::tanh(c);
      i(r, k) = ig;
      f(r, k) = fg;
      g(r, k) = gg;
      o(r, k) = og;
      next.c(r, k) = c;
      tanh_c(r, k) = tc;
      next.h(r, k) = og * tc;
    }
  }
  require_finite(next.c, "lstm_step cell state");

  if (cache != nullptr) {
    cache->x = x;
    cache->h_prev = h_prev;
    cache->c_prev = c_prev;
    cache->i = std::move(i);
    cache->f = std::move(f);
    cache->g = std::move(g);
    cache->o = std::move(o);
    cache->c = next.c;
    cache->tanh_c = std::move(tanh_c);
  }
  return next;
}

LstmBatchOutput lstm_forward_batch(const LstmParams& p, std::span<const Matrix> inputs, bool keep_cache) {
  if (inputs.empty()) throw std::invalid_argument("lstm_forward: sequence length must be >= 1");
  const std::size_t batch = inputs.front().rows();
  const std::size_t hs = p.hidden_size();
  LstmBatchOutput out;
  out.cache.batch = batch;
  out.hidden.reserve(inputs.size());
  if (keep_cache) out.cache.steps.resize(inputs.size());

  LstmState state{Matrix(batch, hs), Matrix(batch, hs)};
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    if (inputs[t].rows() != batch) throw std::invalid_argument("lstm_forward: batch size changes within sequence");
    state = lstm_step(p, inputs[t], state.h, state.c, keep_cache ? &out.cache.steps[t] : nullptr);
    out.hidden.push_back(state.h);
  }
  return out;
}

std::vector<Matrix> lstm_backward_batch(const LstmParams& p, const LstmCache& cache, std::span<const Matrix> d_hidden,
                                        LstmParams& grads) {
  const std::size_t steps = cache.steps.size();
  if (steps == 0 || d_hidden.size() != steps) {
    throw std::invalid_argument("lstm_backward: cache has " + std::to_string(steps) + " steps, got " +
                                std::to_string(d_hidden.size()) + " upstream gradients");
  }
  if (!grads.w_x.same_shape(p.w_x) || !grads.w_h.same_shape(p.w_h) || !grads.b.same_shape(p.b)) {
    throw std::invalid_argument("lstm_backward: gradient buffers do not match parameter shapes");
  }
  const std::size_t hs = p.hidden_size();
  const std::size_t batch = cache.batch;

  std::vector<Matrix> d_inputs(steps);
  Matrix dh_next(batch, hs);
  Matrix dc_next(batch, hs);
  Matrix dz(batch, 4 * hs);

  for (std::size_t step = steps; step-- > 0;) {
    const LstmStepCache& s = cache.steps[step];
    const Matrix& up = d_hidden[step];
    if (up.rows() != batch || up.cols() != hs) {
      throw std::invalid_argument("lstm_backward: upstream gradient at step " + std::to_string(step) + " is " +
                                  up.shape_string());
    }
    for (std::size_t r = 0; r < batch; ++r) {
      auto dzr = dz.row(r);
      for (std::size_t k = 0; k < hs; ++k) {
        const double dh = up(r, k) + dh_next(r, k);
        const double og = s.o(r, k);
        const double tc = s.tanh_c(r, k);
        const double ig = s.i(r, k);
        const double fg = s.f(r, k);
        const double gg = s.g(r, k);
        const double dc = dh * og * (1.0 - tc * tc) + dc_next(r, k);
        dzr[k] = dc * gg * ig * (1.0 - ig);
        dzr[hs + k] = dc * s.c_prev(r, k) * fg * (1.0 - fg);
        dzr[2 * hs + k] = dc * ig * (1.0 - gg * gg);
        dzr[3 * hs + k] = dh * tc * og * (1.0 - og);
        dc_next(r, k) = dc * fg;
      }
    }
    matmul_tn_acc(dz, s.x, grads.w_x);
    matmul_tn_acc(dz, s.h_prev, grads.w_h);
    column_sums_acc(dz, grads.b);
    d_inputs[step] = matmul(dz, p.w_x);
    dh_next = matmul(dz, p.w_h);
  }
  return d_inputs;
}

std::vector<Matrix> split_rows(const Matrix& sequence) {
  std::vector<Matrix> rows;
  rows.reserve(sequence.rows());
  for (std::size_t t = 0; t < sequence.rows(); ++t) rows.push_back(Matrix::row_vector(sequence.row(t)));
  return rows;
}

Matrix stack_rows(std::span<const Matrix> rows) {
  if (rows.empty()) return {};
  const std::size_t cols = rows.front().cols();
  Matrix out(rows.size(), cols);
  for (std::size_t t = 0; t < rows.size(); ++t) {
    if (rows[t].rows() != 1 || rows[t].cols() != cols) throw std::invalid_argument("stack_rows: expected 1xN rows");
    std::copy(rows[t].values().begin(), rows[t].values().end(), out.row(t).begin());
  }
  return out;
}

LstmSequenceOutput lstm_forward(const LstmParams& p, const Matrix& sequence) {
  const auto inputs = split_rows(sequence);
  auto out = lstm_forward_batch(p, inputs);
  return {stack_rows(out.hidden), std::move(out.cache)};
}

LstmGradients lstm_backward(const LstmParams& p, const LstmCache& cache, const Matrix& d_hidden) {
  if (cache.batch != 1) throw std::invalid_argument("lstm_backward: cache was produced by a batched forward pass");
  if (d_hidden.rows() != cache.steps.size() || d_hidden.cols() != p.hidden_size()) {
    throw std::invalid_argument("lstm_backward: upstream gradient " + d_hidden.shape_string() + " does not match " +
                                std::to_string(cache.steps.size()) + " steps of hidden size " +
                                std::to_string(p.hidden_size()));
  }
  LstmGradients g{p.zeros(), {}};
  const auto d_rows = split_rows(d_hidden);
  const auto d_inputs = lstm_backward_batch(p, cache, d_rows, g.params);
  g.d_input = stack_rows(d_inputs);
  return g;
}

}  // namespace tsaug
