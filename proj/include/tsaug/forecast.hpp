#pragma once

// LSTM forecasters used to extend series: a stateless model that emits the
// whole horizon from the final hidden state, and a recursive model that
// predicts one time point, shifts it into the window and repeats. Both start
// every window from a zero state.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "tsaug/checkpoint.hpp"
#include "tsaug/dataset.hpp"
#include "tsaug/lstm.hpp"
#include "tsaug/numerics.hpp"

namespace tsaug {

enum class ForecastMode : std::uint8_t { stateless = 0, recursive = 1 };

std::string_view to_string(ForecastMode mode) noexcept;
ForecastMode forecast_mode_from_string(std::string_view name);

/// LSTM + linear head reading the final hidden state. The head emits
/// horizon·C values, laid out time-major (step × channel).
struct StatelessForecaster {
  LstmParams cell;
  Matrix head_w;  // (horizon·C) × H
  Matrix head_b;  // 1 × (horizon·C)
  std::size_t input_length = 20;
  std::size_t horizon = 4;

  static StatelessForecaster create(std::size_t channels, std::size_t hidden, std::size_t input_length,
                                    std::size_t horizon, RngStream& rng);
  std::size_t channels() const noexcept { return cell.input_size(); }
  std::size_t hidden() const noexcept { return cell.hidden_size(); }

  std::vector<TensorRef> tensors();
  std::vector<ConstTensorRef> tensors() const;
  StatelessForecaster zeros() const;
};

/// LSTM + linear head emitting one time point (C values) per pass.
struct RecursiveForecaster {
  LstmParams cell;
  Matrix head_w;  // C × H
  Matrix head_b;  // 1 × C
  std::size_t input_length = 20;
  /// Rollout length used during training.
  std::size_t horizon = 4;

  static RecursiveForecaster create(std::size_t channels, std::size_t hidden, std::size_t input_length,
                                    std::size_t horizon, RngStream& rng);
  std::size_t channels() const noexcept { return cell.input_size(); }
  std::size_t hidden() const noexcept { return cell.hidden_size(); }

  std::vector<TensorRef> tensors();
  std::vector<ConstTensorRef> tensors() const;
  RecursiveForecaster zeros() const;
};

/// window: L_in × C → horizon × C
Matrix forecast_stateless(const StatelessForecaster& model, const Matrix& window);
/// window: L_in × C → steps × C, feeding each prediction back as the newest row.
Matrix forecast_recursive(const RecursiveForecaster& model, const Matrix& window, std::size_t steps);

/// Time-major batch view of windows: one B×C matrix per input step and the
/// targets as B × (horizon·C).
struct WindowBatch {
  std::vector<Matrix> inputs;
  Matrix targets;
};
WindowBatch make_batch(std::span<const WindowSample* const> windows);

/// Forward + backward on one batch. Returns the batch MSE; gradients are
/// accumulated into `grads` when non-null.
double stateless_loss(const StatelessForecaster& model, const WindowBatch& batch, StatelessForecaster* grads);
/// Rollout of model.horizon steps without teacher forcing; loss is the mean of
/// the per-step MSEs.
double recursive_loss(const RecursiveForecaster& model, const WindowBatch& batch, RecursiveForecaster* grads);

struct ForecasterConfig {
  std::size_t epochs = 500;
  std::size_t batch = 64;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  std::size_t hidden = 50;
  WindowGeometry geometry;
  /// Stop once the epoch's test MSE falls below this value (0 disables).
  double target_test_mse = 0.0;
};

struct LossRow {
  std::size_t epoch = 0;
  double train_mse = 0.0;
  double test_mse = 0.0;
};

struct ForecasterCheckpoint {
  ForecastMode mode = ForecastMode::stateless;
  ForecasterConfig config;
  std::size_t epochs_run = 0;
  double final_train_mse = 0.0;
  double final_test_mse = 0.0;
  std::variant<StatelessForecaster, RecursiveForecaster> model;

  std::size_t channels() const;
  std::size_t input_length() const;
  const StatelessForecaster& stateless() const;
  const RecursiveForecaster& recursive() const;
  /// Mode-dispatched forecast of `steps` points. Stateless checkpoints chain
  /// whole blocks, so steps must be a multiple of the horizon.
  Matrix forecast(const Matrix& window, std::size_t steps) const;
};

struct ForecasterTrainResult {
  ForecasterCheckpoint checkpoint;
  std::vector<LossRow> log;
};

using EpochCallback = std::function<void(const LossRow&)>;

/// Mini-batch Adam on MSE. Train and test windows must come from disjoint
/// subjects. Throws NumericalError on a non-finite loss.
ForecasterTrainResult train_forecaster(ForecastMode mode, const std::vector<WindowSample>& train,
                                       const std::vector<WindowSample>& test, const ForecasterConfig& config,
                                       const EpochCallback& on_epoch = {});

/// MSE of the model over a window set, evaluated in chunks.
double evaluate_forecaster(const ForecasterCheckpoint& ckpt, const std::vector<WindowSample>& windows);

TsafContainer to_container(const ForecasterCheckpoint& ckpt);
ForecasterCheckpoint forecaster_from_container(const TsafContainer& c);
void save_checkpoint(const ForecasterCheckpoint& ckpt, const std::filesystem::path& path);
ForecasterCheckpoint load_checkpoint(const std::filesystem::path& path);
/// Rejects a checkpoint whose mode differs from `expected`.
ForecasterCheckpoint load_checkpoint(const std::filesystem::path& path, ForecastMode expected);

void write_loss_csv(const std::vector<LossRow>& log, const std::filesystem::path& path);

}  // namespace tsaug
