#pragma once

// Age regressors used to judge whether extended series help: a per-channel
// 1D CNN, the same CNN with two-head self-attention after the second pooling
// stage, and a three-layer LSTM with time attention.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "tsaug/checkpoint.hpp"
#include "tsaug/dataset.hpp"
#include "tsaug/layers.hpp"
#include "tsaug/lstm.hpp"
#include "tsaug/numerics.hpp"

namespace tsaug {

enum class PredictorKind { cnn, cnn_attention, talstm };

std::string_view to_string(PredictorKind kind) noexcept;
PredictorKind predictor_kind_from_string(std::string_view name);
ModelKind model_kind(PredictorKind kind) noexcept;

struct PredictorConfig {
  PredictorKind kind = PredictorKind::talstm;
  std::size_t channels = 0;
  std::size_t length = 0;

  // CNN
  std::size_t conv1_filters = 128;
  std::size_t conv2_filters = 64;
  std::size_t kernel = 3;
  PoolSpec pool;
  std::size_t fc_width = 128;
  std::size_t heads = 2;
  bool shared_towers = false;

  // Time-attention LSTM
  std::size_t lstm_layers = 3;
  std::size_t lstm_hidden = 64;
  std::size_t attention_dim = 64;
  bool eq1_literal = false;
};

/// Lengths through conv → pool → conv → pool for one channel.
struct CnnShape {
  std::size_t conv1 = 0;
  std::size_t pool1 = 0;
  std::size_t conv2 = 0;
  std::size_t pool2 = 0;
};

/// Throws with the computed stage lengths when the series is too short.
CnnShape cnn_shape(std::size_t length, std::size_t kernel, const PoolSpec& pool);

struct ConvTower {
  Matrix conv1_w;  // F1 × k
  Matrix conv1_b;  // 1 × F1
  Matrix conv2_w;  // F2 × (F1·k)
  Matrix conv2_b;  // 1 × F2
};

struct CnnModel {
  PredictorConfig config;
  CnnShape shape;
  std::vector<ConvTower> towers;  // one per channel, or one when shared
  MultiHeadAttentionParams attention;
  Matrix fc1_w, fc1_b;  // fc × (C·F2·P2), 1 × fc
  Matrix fc2_w, fc2_b;  // 1 × fc, 1 × 1

  static CnnModel create(const PredictorConfig& config, RngStream& rng);
  bool has_attention() const noexcept { return config.kind == PredictorKind::cnn_attention; }
  const ConvTower& tower(std::size_t channel) const { return towers[config.shared_towers ? 0 : channel]; }
  std::size_t feature_size() const noexcept { return config.channels * config.conv2_filters * shape.pool2; }

  std::vector<TensorRef> tensors();
  std::vector<ConstTensorRef> tensors() const;
  CnnModel zeros() const;
};

/// Raw network output for one series (C × T). `with_attention` must be false
/// for a model built without an attention block.
double cnn_forward(const CnnModel& model, const Matrix& series, bool with_attention);
double cnn_forward(const CnnModel& model, const Matrix& series);

/// Per-channel tower output (F2 × P2), before any attention.
Matrix cnn_tower_features(const CnnModel& model, const Matrix& series, std::size_t channel);

struct TimeAttentionLstm {
  PredictorConfig config;
  std::vector<LstmParams> layers;
  TimeAttentionParams attention;
  Matrix reduce_w, reduce_b;  // 1 × d, 1 × 1
  Matrix out_w, out_b;        // 1 × d, 1 × 1

  static TimeAttentionLstm create(const PredictorConfig& config, RngStream& rng);

  std::vector<TensorRef> tensors();
  std::vector<ConstTensorRef> tensors() const;
  TimeAttentionLstm zeros() const;
};

struct TalstmTrace {
  double output = 0.0;
  Matrix alpha;  // T × T
  Matrix beta;   // 1 × T
  Matrix context;
};

/// Input at step t is the C-vector of all channels.
double talstm_forward(const TimeAttentionLstm& model, const Matrix& series);
TalstmTrace talstm_trace(const TimeAttentionLstm& model, const Matrix& series);

/// Mean squared error of raw outputs against `targets`; gradients are
/// accumulated into `grads` when non-null.
double cnn_batch_loss(const CnnModel& model, std::span<const Matrix* const> series, std::span<const double> targets,
                      CnnModel* grads);
double talstm_batch_loss(const TimeAttentionLstm& model, std::span<const Matrix* const> series,
                         std::span<const double> targets, TimeAttentionLstm* grads);

/// A trained regressor plus the affine map from network output to years.
struct AgePredictor {
  PredictorConfig config;
  double target_offset = 0.0;
  double target_scale = 1.0;
  std::variant<CnnModel, TimeAttentionLstm> net;

  double predict(const Matrix& series) const;
  std::vector<double> predict(const std::vector<TimeSeriesRecord>& records) const;
};

struct PredictorTrainConfig {
  std::size_t epochs = 30;
  std::size_t batch = 16;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct PredictorTrainResult {
  AgePredictor model;
  std::vector<double> loss_log;  // per-epoch train MSE in years²
};

/// Builds the architecture for the records' C and T (when the config leaves
/// them at 0) and fits it with mini-batch Adam on MSE. Throws NumericalError
/// on a non-finite loss.
PredictorTrainResult train_predictor(PredictorConfig arch, const std::vector<TimeSeriesRecord>& records,
                                     const PredictorTrainConfig& config,
                                     const std::function<void(std::size_t, double)>& on_epoch = {});

double evaluate_mae(const AgePredictor& model, const std::vector<TimeSeriesRecord>& records);

TsafContainer to_container(const AgePredictor& model);
AgePredictor predictor_from_container(const TsafContainer& c);
void save_predictor(const AgePredictor& model, const std::filesystem::path& path);
AgePredictor load_predictor(const std::filesystem::path& path);

}  // namespace tsaug
