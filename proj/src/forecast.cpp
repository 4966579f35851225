#include "tsaug/forecast.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include "json.hpp"

namespace tsaug {

namespace {

constexpr std::size_t kEvalChunk = 256;

std::vector<TensorRef> forecaster_tensors(LstmParams& cell, Matrix& w, Matrix& b) {
  return {{"lstm.w_x", &cell.w_x}, {"lstm.w_h", &cell.w_h}, {"lstm.b", &cell.b}, {"head.w", &w}, {"head.b", &b}};
}
std::vector<ConstTensorRef> forecaster_tensors(const LstmParams& cell, const Matrix& w, const Matrix& b) {
  return {{"lstm.w_x", &cell.w_x}, {"lstm.w_h", &cell.w_h}, {"lstm.b", &cell.b}, {"head.w", &w}, {"head.b", &b}};
}

Matrix head_apply(const Matrix& h, const Matrix& w, const Matrix& b) {
  Matrix y = matmul_nt(h, w);
  add_row_broadcast(y, b);
  return y;
}

void check_window(const Matrix& window, std::size_t input_length, std::size_t channels) {
  if (window.rows() != input_length || window.cols() != channels) {
    throw std::invalid_argument("forecast: window is " + window.shape_string() + ", model expects " +
                                std::to_string(input_length) + "x" + std::to_string(channels));
  }
}

struct RolloutPass {
  LstmCache cache;
  Matrix h_last;
};

struct Rollout {
  std::vector<Matrix> preds;  // steps entries of B × C
  std::vector<RolloutPass> passes;
};

// Pass k sees row t of the shifted window: original row t+k while it exists,
// otherwise prediction t+k−L.
Rollout rollout(const RecursiveForecaster& m, std::span<const Matrix> base, std::size_t steps, bool keep_cache) {
  const std::size_t len = base.size();
  Rollout r;
  r.preds.reserve(steps);
  std::vector<Matrix> window(len);
  for (std::size_t k = 0; k < steps; ++k) {
    for (std::size_t t = 0; t < len; ++t) window[t] = (t + k < len) ? base[t + k] : r.preds[t + k - len];
    auto fw = lstm_forward_batch(m.cell, window, keep_cache);
    r.preds.push_back(head_apply(fw.hidden.back(), m.head_w, m.head_b));
    if (keep_cache) r.passes.push_back({std::move(fw.cache), std::move(fw.hidden.back())});
  }
  return r;
}

nlohmann::json config_to_json(const ForecasterCheckpoint& ckpt) {
  const auto& c = ckpt.config;
  return nlohmann::json{
      {"mode", std::string(to_string(ckpt.mode))},
      {"epochs", c.epochs},
      {"epochs_run", ckpt.epochs_run},
      {"batch", c.batch},
      {"lr", c.lr},
      {"seed", c.seed},
      {"hidden", c.hidden},
      {"window", c.geometry.window},
      {"input", c.geometry.input},
      {"stride", c.geometry.stride},
      {"target_test_mse", c.target_test_mse},
      {"channels", ckpt.channels()},
      {"final_train_mse", ckpt.final_train_mse},
      {"final_test_mse", ckpt.final_test_mse},
  };
}

}  // namespace

std::string_view to_string(ForecastMode mode) noexcept {
  return mode == ForecastMode::stateless ? "stateless" : "recursive";
}

ForecastMode forecast_mode_from_string(std::string_view name) {
  if (name == "stateless") return ForecastMode::stateless;
  if (name == "recursive") return ForecastMode::recursive;
  throw std::invalid_argument("unknown forecaster mode '" + std::string(name) + "' (expected stateless|recursive)");
}

// ---- models ----

StatelessForecaster StatelessForecaster::create(std::size_t channels, std::size_t hidden, std::size_t input_length,
                                                std::size_t horizon, RngStream& rng) {
  if (channels == 0 || hidden == 0 || input_length == 0 || horizon == 0) {
    throw std::invalid_argument("StatelessForecaster: dimensions must be >= 1");
  }
  StatelessForecaster m;
  m.cell = LstmParams::xavier(channels, hidden, rng);
  m.head_w = init_uniform(horizon * channels, hidden, rng);
  m.head_b = Matrix(1, horizon * channels);
  m.input_length = input_length;
  m.horizon = horizon;
  return m;
}

std::vector<TensorRef> StatelessForecaster::tensors() { return forecaster_tensors(cell, head_w, head_b); }
std::vector<ConstTensorRef> StatelessForecaster::tensors() const { return forecaster_tensors(cell, head_w, head_b); }

StatelessForecaster StatelessForecaster::zeros() const {
  StatelessForecaster z = *this;
  zero_model(z);
  return z;
}

RecursiveForecaster RecursiveForecaster::create(std::size_t channels, std::size_t hidden, std::size_t input_length,
                                                std::size_t horizon, RngStream& rng) {
  if (channels == 0 || hidden == 0 || input_length == 0 || horizon == 0) {
    throw std::invalid_argument("RecursiveForecaster: dimensions must be >= 1");
  }
  RecursiveForecaster m;
  m.cell = LstmParams::xavier(channels, hidden, rng);
  m.head_w = init_uniform(channels, hidden, rng);
  m.head_b = Matrix(1, channels);
  m.input_length = input_length;
  m.horizon = horizon;
  return m;
}

std::vector<TensorRef> RecursiveForecaster::tensors() { return forecaster_tensors(cell, head_w, head_b); }
std::vector<ConstTensorRef> RecursiveForecaster::tensors() const { return forecaster_tensors(cell, head_w, head_b); }

RecursiveForecaster RecursiveForecaster::zeros() const {
  RecursiveForecaster z = *this;
  zero_model(z);
  return z;
}

// ---- inference ----

Matrix forecast_stateless(const StatelessForecaster& model, const Matrix& window) {
  check_window(window, model.input_length, model.channels());
  const auto inputs = split_rows(window);
  const auto fw = lstm_forward_batch(model.cell, inputs, false);
  return head_apply(fw.hidden.back(), model.head_w, model.head_b).reshaped(model.horizon, model.channels());
}

Matrix forecast_recursive(const RecursiveForecaster& model, const Matrix& window, std::size_t steps) {
  if (steps < 1) throw std::invalid_argument("forecast_recursive: steps must be >= 1");
  check_window(window, model.input_length, model.channels());
  const auto inputs = split_rows(window);
  const auto r = rollout(model, inputs, steps, false);
  return stack_rows(r.preds);
}

// ---- losses ----

WindowBatch make_batch(std::span<const WindowSample* const> windows) {
  if (windows.empty()) throw std::invalid_argument("make_batch: empty batch");
  const std::size_t len = windows.front()->input.rows();
  const std::size_t channels = windows.front()->input.cols();
  const std::size_t target_size = windows.front()->target.size();
  WindowBatch b;
  b.inputs.assign(len, Matrix(windows.size(), channels));
  b.targets = Matrix(windows.size(), target_size);
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const WindowSample& w = *windows[i];
    if (w.input.rows() != len || w.input.cols() != channels || w.target.size() != target_size) {
      throw std::invalid_argument("make_batch: windows differ in geometry");
    }
    for (std::size_t t = 0; t < len; ++t) std::copy_n(w.input.row(t).begin(), channels, b.inputs[t].row(i).begin());
    std::copy(w.target.values().begin(), w.target.values().end(), b.targets.row(i).begin());
  }
  return b;
}

double stateless_loss(const StatelessForecaster& model, const WindowBatch& batch, StatelessForecaster* grads) {
  if (batch.inputs.size() != model.input_length) {
    throw std::invalid_argument("stateless_loss: batch has " + std::to_string(batch.inputs.size()) +
                                " input steps, model expects " + std::to_string(model.input_length));
  }
  auto fw = lstm_forward_batch(model.cell, batch.inputs, grads != nullptr);
  const Matrix& h_last = fw.hidden.back();
  const Matrix pred = head_apply(h_last, model.head_w, model.head_b);
  const double loss = mse(pred, batch.targets);
  if (grads == nullptr) return loss;

  const Matrix d_pred = mse_grad(pred, batch.targets);
  matmul_tn_acc(d_pred, h_last, grads->head_w);
  column_sums_acc(d_pred, grads->head_b);
  std::vector<Matrix> d_hidden(fw.hidden.size(), Matrix(h_last.rows(), h_last.cols()));
  d_hidden.back() = matmul(d_pred, model.head_w);
  lstm_backward_batch(model.cell, fw.cache, d_hidden, grads->cell);
  return loss;
}

double recursive_loss(const RecursiveForecaster& model, const WindowBatch& batch, RecursiveForecaster* grads) {
  const std::size_t steps = model.horizon;
  const std::size_t channels = model.channels();
  const std::size_t bsz = batch.targets.rows();
  if (batch.inputs.size() != model.input_length || batch.targets.cols() != steps * channels) {
    throw std::invalid_argument("recursive_loss: batch geometry does not match the model");
  }
  const auto r = rollout(model, batch.inputs, steps, grads != nullptr);

  std::vector<Matrix> targets(steps, Matrix(bsz, channels));
  for (std::size_t i = 0; i < bsz; ++i)
    for (std::size_t k = 0; k < steps; ++k)
      for (std::size_t c = 0; c < channels; ++c) targets[k](i, c) = batch.targets(i, k * channels + c);

  double loss = 0.0;
  for (std::size_t k = 0; k < steps; ++k) loss += mse(r.preds[k], targets[k]);
  loss /= static_cast<double>(steps);
  if (grads == nullptr) return loss;

  const std::size_t len = batch.inputs.size();
  std::vector<Matrix> d_pred(steps);
  for (std::size_t k = 0; k < steps; ++k) d_pred[k] = mse_grad(r.preds[k], targets[k]) * (1.0 / static_cast<double>(steps));

  // Pass k's inputs include predictions p < k, so walking k downwards
  // finishes every d_pred[k] before it is consumed.
  std::vector<Matrix> d_hidden(len, Matrix(bsz, model.hidden()));
  for (std::size_t k = steps; k-- > 0;) {
    const RolloutPass& pass = r.passes[k];
    matmul_tn_acc(d_pred[k], pass.h_last, grads->head_w);
    column_sums_acc(d_pred[k], grads->head_b);
    for (auto& d : d_hidden) d.fill(0.0);
    d_hidden.back() = matmul(d_pred[k], model.head_w);
    const auto d_inputs = lstm_backward_batch(model.cell, pass.cache, d_hidden, grads->cell);
    for (std::size_t t = 0; t < len; ++t) {
      if (t + k >= len) d_pred[t + k - len] += d_inputs[t];
    }
  }
  return loss;
}

// ---- checkpoint ----

std::size_t ForecasterCheckpoint::channels() const {
  return std::visit([](const auto& m) { return m.channels(); }, model);
}

std::size_t ForecasterCheckpoint::input_length() const {
  return std::visit([](const auto& m) { return m.input_length; }, model);
}

const StatelessForecaster& ForecasterCheckpoint::stateless() const {
  if (const auto* m = std::get_if<StatelessForecaster>(&model)) return *m;
  throw std::invalid_argument("checkpoint holds a recursive forecaster, stateless expected");
}

const RecursiveForecaster& ForecasterCheckpoint::recursive() const {
  if (const auto* m = std::get_if<RecursiveForecaster>(&model)) return *m;
  throw std::invalid_argument("checkpoint holds a stateless forecaster, recursive expected");
}

Matrix ForecasterCheckpoint::forecast(const Matrix& window, std::size_t steps) const {
  if (steps < 1) throw std::invalid_argument("forecast: steps must be >= 1");
  if (mode == ForecastMode::recursive) return forecast_recursive(recursive(), window, steps);

  const auto& m = stateless();
  if (steps % m.horizon != 0) {
    throw std::invalid_argument("stateless forecaster emits blocks of " + std::to_string(m.horizon) +
                                " points; " + std::to_string(steps) + " steps is not a multiple");
  }
  check_window(window, m.input_length, m.channels());
  Matrix out(steps, m.channels());
  Matrix current = window;
  for (std::size_t done = 0; done < steps; done += m.horizon) {
    const Matrix block = forecast_stateless(m, current);
    for (std::size_t t = 0; t < m.horizon; ++t)
      std::copy_n(block.row(t).begin(), m.channels(), out.row(done + t).begin());
    // Shift the block in as the newest rows.
    Matrix next(current.rows(), current.cols());
    for (std::size_t t = 0; t < current.rows(); ++t) {
      const std::size_t src = t + m.horizon;
      const auto row = src < current.rows() ? current.row(src) : block.row(src - current.rows());
      std::copy(row.begin(), row.end(), next.row(t).begin());
    }
    current = std::move(next);
  }
  return out;
}

// ---- training ----

namespace {

template <typename Model, typename LossFn>
double evaluate_windows(const Model& model, const std::vector<WindowSample>& windows, LossFn loss_fn) {
  if (windows.empty()) throw std::invalid_argument("evaluate: no windows");
  double total = 0.0;
  std::vector<const WindowSample*> ptrs;
  for (std::size_t start = 0; start < windows.size(); start += kEvalChunk) {
    const std::size_t end = std::min(windows.size(), start + kEvalChunk);
    ptrs.clear();
    for (std::size_t i = start; i < end; ++i) ptrs.push_back(&windows[i]);
    total += loss_fn(model, make_batch(ptrs), nullptr) * static_cast<double>(end - start);
  }
  return total / static_cast<double>(windows.size());
}

template <typename Model, typename LossFn>
ForecasterTrainResult run_training(ForecastMode mode, Model model, const std::vector<WindowSample>& train,
                                   const std::vector<WindowSample>& test, const ForecasterConfig& config,
                                   LossFn loss_fn, const EpochCallback& on_epoch) {
  RngStream shuffle_rng(config.seed, std::string("forecast/") + std::string(to_string(mode)) + "/shuffle");
  AdamOptimizer opt(AdamConfig{config.lr});
  ForecasterTrainResult result;

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<const WindowSample*> ptrs;
  LossRow row;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const std::size_t end = std::min(order.size(), start + config.batch);
      ptrs.clear();
      for (std::size_t i = start; i < end; ++i) ptrs.push_back(&train[order[i]]);
      Model grads = model.zeros();
      double loss = 0.0;
      try {
        loss = loss_fn(model, make_batch(ptrs), &grads);
      } catch (const NumericalError& e) {
        throw NumericalError("epoch " + std::to_string(epoch) + ": " + e.what());
      }
      if (!std::isfinite(loss)) {
        throw NumericalError("non-finite training loss at epoch " + std::to_string(epoch));
      }
      opt.step(model, grads);
      sum += loss * static_cast<double>(end - start);
    }
    row = LossRow{epoch, sum / static_cast<double>(train.size()), evaluate_windows(model, test, loss_fn)};
    if (!std::isfinite(row.test_mse)) {
      throw NumericalError("non-finite test loss at epoch " + std::to_string(epoch));
    }
    result.log.push_back(row);
    if (on_epoch) on_epoch(row);
    if (config.target_test_mse > 0.0 && row.test_mse < config.target_test_mse) break;
  }

  auto& ckpt = result.checkpoint;
  ckpt.mode = mode;
  ckpt.config = config;
  ckpt.epochs_run = row.epoch;
  ckpt.final_train_mse = row.train_mse;
  ckpt.final_test_mse = row.test_mse;
  ckpt.model = std::move(model);
  return result;
}

void require_disjoint_subjects(const std::vector<WindowSample>& train, const std::vector<WindowSample>& test) {
  std::set<std::string> train_ids;
  for (const auto& w : train) train_ids.insert(w.subject_id);
  for (const auto& w : test) {
    if (train_ids.count(w.subject_id) != 0) {
      throw std::invalid_argument("train_forecaster: subject '" + w.subject_id + "' appears in both splits");
    }
  }
}

}  // namespace

ForecasterTrainResult train_forecaster(ForecastMode mode, const std::vector<WindowSample>& train,
                                       const std::vector<WindowSample>& test, const ForecasterConfig& config,
                                       const EpochCallback& on_epoch) {
  if (train.empty()) throw std::invalid_argument("train_forecaster: empty training split");
  if (test.empty()) throw std::invalid_argument("train_forecaster: empty test split");
  if (config.epochs < 1 || config.batch < 1) throw std::invalid_argument("train_forecaster: epochs and batch must be >= 1");
  config.geometry.validate();
  require_disjoint_subjects(train, test);

  const std::size_t channels = train.front().input.cols();
  const std::size_t in_len = train.front().input.rows();
  const std::size_t horizon = train.front().target.rows();
  if (in_len != config.geometry.input || horizon != config.geometry.target()) {
    throw std::invalid_argument("train_forecaster: windows do not match the configured geometry");
  }
  RngStream init_rng(config.seed, std::string("forecast/") + std::string(to_string(mode)) + "/init");
  if (mode == ForecastMode::stateless) {
    return run_training(mode, StatelessForecaster::create(channels, config.hidden, in_len, horizon, init_rng), train,
                        test, config, stateless_loss, on_epoch);
  }
  return run_training(mode, RecursiveForecaster::create(channels, config.hidden, in_len, horizon, init_rng), train,
                      test, config, recursive_loss, on_epoch);
}

double evaluate_forecaster(const ForecasterCheckpoint& ckpt, const std::vector<WindowSample>& windows) {
  if (ckpt.mode == ForecastMode::stateless) return evaluate_windows(ckpt.stateless(), windows, stateless_loss);
  return evaluate_windows(ckpt.recursive(), windows, recursive_loss);
}

TsafContainer to_container(const ForecasterCheckpoint& ckpt) {
  TsafContainer c;
  c.kind = ckpt.mode == ForecastMode::stateless ? ModelKind::stateless : ModelKind::recursive;
  c.config_json = config_to_json(ckpt).dump();
  c.tensors = std::visit([](const auto& m) { return collect_tensors(m); }, ckpt.model);
  return c;
}

ForecasterCheckpoint forecaster_from_container(const TsafContainer& c) {
  if (c.kind != ModelKind::stateless && c.kind != ModelKind::recursive) {
    throw FormatError("TSAF: mode byte " + std::to_string(static_cast<int>(c.kind)) + " is not a forecaster");
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(c.config_json);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("TSAF: config block is not valid JSON: ") + e.what());
  }
  ForecasterCheckpoint ckpt;
  try {
    ckpt.mode = c.kind == ModelKind::stateless ? ForecastMode::stateless : ForecastMode::recursive;
    if (j.at("mode").get<std::string>() != to_string(ckpt.mode)) {
      throw FormatError("TSAF: mode byte disagrees with config block");
    }
    auto& cfg = ckpt.config;
    cfg.epochs = j.at("epochs").get<std::size_t>();
    cfg.batch = j.at("batch").get<std::size_t>();
    cfg.lr = j.at("lr").get<double>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.hidden = j.at("hidden").get<std::size_t>();
    cfg.geometry.window = j.at("window").get<std::size_t>();
    cfg.geometry.input = j.at("input").get<std::size_t>();
    cfg.geometry.stride = j.at("stride").get<std::size_t>();
    cfg.target_test_mse = j.at("target_test_mse").get<double>();
    ckpt.epochs_run = j.at("epochs_run").get<std::size_t>();
    ckpt.final_train_mse = j.at("final_train_mse").get<double>();
    ckpt.final_test_mse = j.at("final_test_mse").get<double>();
    const auto channels = j.at("channels").get<std::size_t>();
    cfg.geometry.validate();

    const std::size_t hidden = cfg.hidden;
    const std::size_t horizon = cfg.geometry.target();
    const std::size_t in_len = cfg.geometry.input;
    if (ckpt.mode == ForecastMode::stateless) {
      StatelessForecaster m;
      m.cell = LstmParams(channels, hidden);
      m.head_w = Matrix(horizon * channels, hidden);
      m.head_b = Matrix(1, horizon * channels);
      m.input_length = in_len;
      m.horizon = horizon;
      restore_tensors(c, m);
      ckpt.model = std::move(m);
    } else {
      RecursiveForecaster m;
      m.cell = LstmParams(channels, hidden);
      m.head_w = Matrix(channels, hidden);
      m.head_b = Matrix(1, channels);
      m.input_length = in_len;
      m.horizon = horizon;
      restore_tensors(c, m);
      ckpt.model = std::move(m);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("TSAF: bad forecaster config: ") + e.what());
  }
  if (c.tensors.size() != 5) throw FormatError("TSAF: forecaster expects 5 tensors, found " + std::to_string(c.tensors.size()));
  return ckpt;
}

void save_checkpoint(const ForecasterCheckpoint& ckpt, const std::filesystem::path& path) {
  save_tsaf(to_container(ckpt), path);
}

ForecasterCheckpoint load_checkpoint(const std::filesystem::path& path) {
  return forecaster_from_container(load_tsaf(path));
}

ForecasterCheckpoint load_checkpoint(const std::filesystem::path& path, ForecastMode expected) {
  auto c = load_tsaf(path);
  const auto want = expected == ForecastMode::stateless ? ModelKind::stateless : ModelKind::recursive;
  if (c.kind != want) {
    throw FormatError("checkpoint '" + path.string() + "' has mode " + std::string(to_string(c.kind)) + ", expected " +
                      std::string(to_string(expected)));
  }
  return forecaster_from_container(c);
}

void write_loss_csv(const std::vector<LossRow>& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << "epoch,train_mse,test_mse\n";
  char buf[128];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", r.epoch, r.train_mse, r.test_mse);
    out << buf;
  }
}

}  // namespace tsaug
