#include "tsaug/predict.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace tsaug {

std::string_view to_string(PredictorKind kind) noexcept {
  switch (kind) {
    case PredictorKind::cnn: return "cnn";
    case PredictorKind::cnn_attention: return "cnn-att";
    case PredictorKind::talstm: return "talstm";
  }
  return "unknown";
}

PredictorKind predictor_kind_from_string(std::string_view name) {
  if (name == "cnn") return PredictorKind::cnn;
  if (name == "cnn-att") return PredictorKind::cnn_attention;
  if (name == "talstm") return PredictorKind::talstm;
  throw std::invalid_argument("unknown predictor '" + std::string(name) + "' (expected cnn, cnn-att or talstm)");
}

ModelKind model_kind(PredictorKind kind) noexcept {
  switch (kind) {
    case PredictorKind::cnn: return ModelKind::cnn;
    case PredictorKind::cnn_attention: return ModelKind::cnn_attention;
    case PredictorKind::talstm: return ModelKind::talstm;
  }
  return ModelKind::cnn;
}

CnnShape cnn_shape(std::size_t length, std::size_t kernel, const PoolSpec& pool) {
  CnnShape s;
  auto fail = [&](const std::string& stage) {
    throw std::invalid_argument("cnn: series of length " + std::to_string(length) + " too short (" + stage +
                                "; stages conv1=" + std::to_string(s.conv1) + " pool1=" + std::to_string(s.pool1) +
                                " conv2=" + std::to_string(s.conv2) + ")");
  };
  if (length < kernel) fail("first convolution");
  s.conv1 = length - kernel + 1;
  s.pool1 = pool.output_length(s.conv1);
  if (s.pool1 < kernel) fail("second convolution");
  s.conv2 = s.pool1 - kernel + 1;
  s.pool2 = pool.output_length(s.conv2);
  return s;
}

// ---- CNN ----

CnnModel CnnModel::create(const PredictorConfig& config, RngStream& rng) {
  if (config.kind == PredictorKind::talstm) throw std::invalid_argument("CnnModel: config describes a talstm");
  if (config.channels == 0 || config.conv1_filters == 0 || config.conv2_filters == 0 || config.fc_width == 0) {
    throw std::invalid_argument("CnnModel: dimensions must be >= 1");
  }
  CnnModel m;
  m.config = config;
  m.shape = cnn_shape(config.length, config.kernel, config.pool);
  const std::size_t k = config.kernel;
  const std::size_t n_towers = config.shared_towers ? 1 : config.channels;
  for (std::size_t c = 0; c < n_towers; ++c) {
    ConvTower t;
    t.conv1_w = init_uniform(config.conv1_filters, k, rng);
    t.conv1_b = Matrix(1, config.conv1_filters);
    t.conv2_w = init_uniform(config.conv2_filters, config.conv1_filters * k, rng);
    t.conv2_b = Matrix(1, config.conv2_filters);
    m.towers.push_back(std::move(t));
  }
  if (m.has_attention()) m.attention = MultiHeadAttentionParams::xavier(config.conv2_filters, config.heads, rng);
  m.fc1_w = init_uniform(config.fc_width, m.feature_size(), rng);
  m.fc1_b = Matrix(1, config.fc_width);
  m.fc2_w = init_uniform(1, config.fc_width, rng);
  m.fc2_b = Matrix(1, 1);
  return m;
}

namespace {

template <typename Ref, typename Self>
std::vector<Ref> cnn_tensor_list(Self& m) {
  std::vector<Ref> out;
  for (std::size_t c = 0; c < m.towers.size(); ++c) {
    const std::string p = "tower" + std::to_string(c) + ".";
    auto& t = m.towers[c];
    out.push_back({p + "conv1.w", &t.conv1_w});
    out.push_back({p + "conv1.b", &t.conv1_b});
    out.push_back({p + "conv2.w", &t.conv2_w});
    out.push_back({p + "conv2.b", &t.conv2_b});
  }
  if (m.has_attention()) {
    for (auto& r : m.attention.tensors("mha.")) out.push_back({r.name, r.value});
  }
  out.push_back({"fc1.w", &m.fc1_w});
  out.push_back({"fc1.b", &m.fc1_b});
  out.push_back({"fc2.w", &m.fc2_w});
  out.push_back({"fc2.b", &m.fc2_b});
  return out;
}

struct TowerCache {
  Matrix x;
  Matrix z1;
  PoolResult p1;
  Matrix z2;
  PoolResult p2;
  MhaCache mha;
};

struct CnnCache {
  std::vector<TowerCache> towers;
  Matrix features;  // 1 × D
  Matrix a1;        // 1 × fc, pre-activation
  Matrix h1;
};

void check_series(const CnnModel& m, const Matrix& series) {
  if (series.rows() != m.config.channels || series.cols() != m.config.length) {
    throw std::invalid_argument("cnn: series is " + series.shape_string() + ", model expects " +
                                std::to_string(m.config.channels) + "x" + std::to_string(m.config.length));
  }
}

Matrix tower_forward(const CnnModel& m, const Matrix& series, std::size_t c, TowerCache* cache) {
  const ConvTower& t = m.tower(c);
  const std::size_t k = m.config.kernel;
  Matrix x = Matrix::row_vector(series.row(c));
  Matrix z1 = conv1d(x, t.conv1_w, t.conv1_b, k);
  PoolResult p1 = maxpool1d(relu(z1), m.config.pool);
  Matrix z2 = conv1d(p1.output, t.conv2_w, t.conv2_b, k);
  PoolResult p2 = maxpool1d(relu(z2), m.config.pool);
  Matrix out = p2.output;
  if (cache != nullptr) {
    cache->x = std::move(x);
    cache->z1 = std::move(z1);
    cache->p1 = std::move(p1);
    cache->z2 = std::move(z2);
    cache->p2 = std::move(p2);
  }
  return out;
}

double cnn_forward_impl(const CnnModel& m, const Matrix& series, bool with_attention, CnnCache* cache) {
  check_series(m, series);
  if (with_attention && !m.has_attention()) throw std::invalid_argument("cnn: model has no attention block");
  const std::size_t f2 = m.config.conv2_filters;
  const std::size_t p2 = m.shape.pool2;
  Matrix features(1, m.feature_size());
  if (cache != nullptr) cache->towers.resize(m.config.channels);
  for (std::size_t c = 0; c < m.config.channels; ++c) {
    TowerCache* tc = cache != nullptr ? &cache->towers[c] : nullptr;
    Matrix feat = tower_forward(m, series, c, tc);
    if (with_attention) {
      Matrix tokens = feat.transposed();
      tokens += multihead_attention(m.attention, tokens, tc != nullptr ? &tc->mha : nullptr);
      feat = tokens.transposed();
    }
    std::copy(feat.values().begin(), feat.values().end(), features.data() + c * f2 * p2);
  }
  Matrix a1 = matmul_nt(features, m.fc1_w);
  add_row_broadcast(a1, m.fc1_b);
  Matrix h1 = relu(a1);
  double out = m.fc2_b[0];
  for (std::size_t j = 0; j < h1.cols(); ++j) out += h1[j] * m.fc2_w[j];
  if (cache != nullptr) {
    cache->features = std::move(features);
    cache->a1 = std::move(a1);
    cache->h1 = std::move(h1);
  }
  return out;
}

void cnn_backward(const CnnModel& m, const CnnCache& cache, double d_out, bool with_attention, CnnModel& g) {
  const std::size_t f2 = m.config.conv2_filters;
  const std::size_t p2 = m.shape.pool2;
  const std::size_t k = m.config.kernel;
  for (std::size_t j = 0; j < cache.h1.cols(); ++j) g.fc2_w[j] += d_out * cache.h1[j];
  g.fc2_b[0] += d_out;
  Matrix dh1(1, cache.h1.cols());
  for (std::size_t j = 0; j < dh1.cols(); ++j) dh1[j] = d_out * m.fc2_w[j];
  const Matrix da1 = relu_backward(cache.a1, dh1);
  matmul_tn_acc(da1, cache.features, g.fc1_w);
  g.fc1_b += da1;
  const Matrix d_features = matmul(da1, m.fc1_w);

  for (std::size_t c = 0; c < m.config.channels; ++c) {
    const TowerCache& tc = cache.towers[c];
    Matrix d_feat(f2, p2);
    std::copy_n(d_features.data() + c * f2 * p2, f2 * p2, d_feat.data());
    if (with_attention) {
      const Matrix d_tokens = d_feat.transposed();
      Matrix d_in = d_tokens;
      d_in += multihead_attention_backward(m.attention, tc.mha, d_tokens, g.attention);
      d_feat = d_in.transposed();
    }
    const ConvTower& t = m.tower(c);
    ConvTower& gt = g.towers[m.config.shared_towers ? 0 : c];
    const Matrix d_r2 = maxpool1d_backward(tc.p2, tc.z2.rows(), tc.z2.cols(), d_feat);
    const Matrix d_z2 = relu_backward(tc.z2, d_r2);
    const Matrix d_p1 = conv1d_backward(tc.p1.output, t.conv2_w, k, d_z2, gt.conv2_w, gt.conv2_b);
    const Matrix d_r1 = maxpool1d_backward(tc.p1, tc.z1.rows(), tc.z1.cols(), d_p1);
    const Matrix d_z1 = relu_backward(tc.z1, d_r1);
    conv1d_backward(tc.x, t.conv1_w, k, d_z1, gt.conv1_w, gt.conv1_b);
  }
}

}  // namespace

std::vector<TensorRef> CnnModel::tensors() { return cnn_tensor_list<TensorRef>(*this); }
std::vector<ConstTensorRef> CnnModel::tensors() const { return cnn_tensor_list<ConstTensorRef>(*this); }

CnnModel CnnModel::zeros() const {
  CnnModel z = *this;
  zero_model(z);
  return z;
}

double cnn_forward(const CnnModel& model, const Matrix& series, bool with_attention) {
  return cnn_forward_impl(model, series, with_attention, nullptr);
}

double cnn_forward(const CnnModel& model, const Matrix& series) {
  return cnn_forward_impl(model, series, model.has_attention(), nullptr);
}

Matrix cnn_tower_features(const CnnModel& model, const Matrix& series, std::size_t channel) {
  check_series(model, series);
  if (channel >= model.config.channels) throw std::invalid_argument("cnn_tower_features: channel out of range");
  return tower_forward(model, series, channel, nullptr);
}

double cnn_batch_loss(const CnnModel& model, std::span<const Matrix* const> series, std::span<const double> targets,
                      CnnModel* grads) {
  if (series.empty() || series.size() != targets.size()) throw std::invalid_argument("cnn_batch_loss: bad batch");
  const bool att = model.has_attention();
  const double n = static_cast<double>(series.size());
  double loss = 0.0;
  CnnCache cache;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const double out = cnn_forward_impl(model, *series[i], att, grads != nullptr ? &cache : nullptr);
    const double diff = out - targets[i];
    loss += diff * diff;
    if (grads != nullptr) cnn_backward(model, cache, 2.0 * diff / n, att, *grads);
  }
  return loss / n;
}

// ---- time-attention LSTM ----

TimeAttentionLstm TimeAttentionLstm::create(const PredictorConfig& config, RngStream& rng) {
  if (config.kind != PredictorKind::talstm) throw std::invalid_argument("TimeAttentionLstm: config is not talstm");
  if (config.channels == 0 || config.lstm_layers == 0 || config.lstm_hidden == 0 || config.attention_dim == 0) {
    throw std::invalid_argument("TimeAttentionLstm: dimensions must be >= 1");
  }
  TimeAttentionLstm m;
  m.config = config;
  for (std::size_t l = 0; l < config.lstm_layers; ++l) {
    m.layers.push_back(LstmParams::xavier(l == 0 ? config.channels : config.lstm_hidden, config.lstm_hidden, rng));
  }
  m.attention = TimeAttentionParams::xavier(config.lstm_hidden, config.attention_dim, rng);
  m.reduce_w = init_uniform(1, config.attention_dim, rng);
  m.reduce_b = Matrix(1, 1);
  m.out_w = init_uniform(1, config.attention_dim, rng);
  m.out_b = Matrix(1, 1);
  return m;
}

namespace {

template <typename Ref, typename Self>
std::vector<Ref> talstm_tensor_list(Self& m) {
  std::vector<Ref> out;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const std::string p = "lstm" + std::to_string(l) + ".";
    for (auto& r : m.layers[l].tensors()) out.push_back({p + r.name, r.value});
  }
  for (auto& r : m.attention.tensors("attention.")) out.push_back({r.name, r.value});
  out.push_back({"reduce.w", &m.reduce_w});
  out.push_back({"reduce.b", &m.reduce_b});
  out.push_back({"out.w", &m.out_w});
  out.push_back({"out.b", &m.out_b});
  return out;
}

struct TalstmSampleCache {
  TimeAttentionResult att;
  Matrix beta;  // 1 × T
  Matrix pooled;  // 1 × d
};

// Step-major inputs for a batch of equal-length series.
std::vector<Matrix> batch_inputs(std::span<const Matrix* const> series, std::size_t channels) {
  const std::size_t len = series.front()->cols();
  std::vector<Matrix> inputs(len, Matrix(series.size(), channels));
  for (std::size_t b = 0; b < series.size(); ++b) {
    const Matrix& s = *series[b];
    if (s.rows() != channels || s.cols() != len) {
      throw std::invalid_argument("talstm: series " + s.shape_string() + " does not match batch geometry " +
                                  std::to_string(channels) + "x" + std::to_string(len));
    }
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t t = 0; t < len; ++t) inputs[t](b, c) = s(c, t);
  }
  return inputs;
}

double talstm_head(const TimeAttentionLstm& m, const Matrix& hidden, TalstmSampleCache& sc) {
  sc.att = time_attention(m.attention, hidden, m.config.eq1_literal);
  const Matrix& ctx = sc.att.context;
  const std::size_t len = ctx.rows();
  std::vector<double> scores(len);
  for (std::size_t t = 0; t < len; ++t) {
    double s = m.reduce_b[0];
    for (std::size_t j = 0; j < ctx.cols(); ++j) s += ctx(t, j) * m.reduce_w[j];
    scores[t] = s;
  }
  sc.beta = Matrix::row_vector(softmax(scores));
  sc.pooled = matmul(sc.beta, ctx);
  double out = m.out_b[0];
  for (std::size_t j = 0; j < sc.pooled.cols(); ++j) out += sc.pooled[j] * m.out_w[j];
  return out;
}

Matrix talstm_head_backward(const TimeAttentionLstm& m, const TalstmSampleCache& sc, double d_out,
                            TimeAttentionLstm& g) {
  const Matrix& ctx = sc.att.context;
  const std::size_t len = ctx.rows();
  const std::size_t d = ctx.cols();
  for (std::size_t j = 0; j < d; ++j) g.out_w[j] += d_out * sc.pooled[j];
  g.out_b[0] += d_out;

  Matrix d_ctx(len, d);
  std::vector<double> d_beta(len, 0.0);
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t j = 0; j < d; ++j) {
      const double dz = d_out * m.out_w[j];
      d_ctx(t, j) = sc.beta[t] * dz;
      d_beta[t] += dz * ctx(t, j);
    }
  }
  double dot = 0.0;
  for (std::size_t t = 0; t < len; ++t) dot += sc.beta[t] * d_beta[t];
  for (std::size_t t = 0; t < len; ++t) {
    const double d_score = sc.beta[t] * (d_beta[t] - dot);
    g.reduce_b[0] += d_score;
    for (std::size_t j = 0; j < d; ++j) {
      g.reduce_w[j] += d_score * ctx(t, j);
      d_ctx(t, j) += d_score * m.reduce_w[j];
    }
  }
  return time_attention_backward(m.attention, sc.att, d_ctx, g.attention, m.config.eq1_literal);
}

struct TalstmBatchForward {
  std::vector<LstmBatchOutput> layers;
  std::vector<TalstmSampleCache> samples;
  std::vector<double> outputs;
};

TalstmBatchForward talstm_batch_forward(const TimeAttentionLstm& m, std::span<const Matrix* const> series,
                                        bool keep_cache) {
  TalstmBatchForward fw;
  std::vector<Matrix> inputs = batch_inputs(series, m.config.channels);
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    fw.layers.push_back(lstm_forward_batch(m.layers[l], l == 0 ? std::span<const Matrix>(inputs)
                                                                : std::span<const Matrix>(fw.layers[l - 1].hidden),
                                           keep_cache));
  }
  const auto& top = fw.layers.back().hidden;
  const std::size_t len = top.size();
  const std::size_t hs = m.config.lstm_hidden;
  fw.samples.resize(series.size());
  fw.outputs.resize(series.size());
  for (std::size_t b = 0; b < series.size(); ++b) {
    Matrix hidden(len, hs);
    for (std::size_t t = 0; t < len; ++t) std::copy_n(top[t].row(b).begin(), hs, hidden.row(t).begin());
    fw.outputs[b] = talstm_head(m, hidden, fw.samples[b]);
  }
  if (!keep_cache) fw.layers.clear();
  return fw;
}

double talstm_equal_length_loss(const TimeAttentionLstm& m, std::span<const Matrix* const> series,
                                std::span<const double> targets, double denom, TimeAttentionLstm* grads) {
  auto fw = talstm_batch_forward(m, series, grads != nullptr);
  double loss = 0.0;
  for (std::size_t b = 0; b < series.size(); ++b) {
    const double diff = fw.outputs[b] - targets[b];
    loss += diff * diff;
  }
  if (grads == nullptr) return loss;

  const std::size_t len = series.front()->cols();
  const std::size_t hs = m.config.lstm_hidden;
  std::vector<Matrix> d_hidden(len, Matrix(series.size(), hs));
  for (std::size_t b = 0; b < series.size(); ++b) {
    const double d_out = 2.0 * (fw.outputs[b] - targets[b]) / denom;
    const Matrix dh = talstm_head_backward(m, fw.samples[b], d_out, *grads);
    for (std::size_t t = 0; t < len; ++t) std::copy_n(dh.row(t).begin(), hs, d_hidden[t].row(b).begin());
  }
  for (std::size_t l = m.layers.size(); l-- > 0;) {
    d_hidden = lstm_backward_batch(m.layers[l], fw.layers[l].cache, d_hidden, grads->layers[l]);
  }
  return loss;
}

}  // namespace

std::vector<TensorRef> TimeAttentionLstm::tensors() { return talstm_tensor_list<TensorRef>(*this); }
std::vector<ConstTensorRef> TimeAttentionLstm::tensors() const { return talstm_tensor_list<ConstTensorRef>(*this); }

TimeAttentionLstm TimeAttentionLstm::zeros() const {
  TimeAttentionLstm z = *this;
  zero_model(z);
  return z;
}

TalstmTrace talstm_trace(const TimeAttentionLstm& model, const Matrix& series) {
  const Matrix* one[] = {&series};
  auto fw = talstm_batch_forward(model, one, false);
  auto& sc = fw.samples.front();
  return TalstmTrace{fw.outputs.front(), std::move(sc.att.weights), std::move(sc.beta), std::move(sc.att.context)};
}

double talstm_forward(const TimeAttentionLstm& model, const Matrix& series) {
  const Matrix* one[] = {&series};
  return talstm_batch_forward(model, one, false).outputs.front();
}

double talstm_batch_loss(const TimeAttentionLstm& model, std::span<const Matrix* const> series,
                         std::span<const double> targets, TimeAttentionLstm* grads) {
  if (series.empty() || series.size() != targets.size()) throw std::invalid_argument("talstm_batch_loss: bad batch");
  const double n = static_cast<double>(series.size());
  // Series of different lengths are run as separate equal-length groups.
  std::map<std::size_t, std::vector<std::size_t>> by_length;
  for (std::size_t i = 0; i < series.size(); ++i) by_length[series[i]->cols()].push_back(i);
  double loss = 0.0;
  for (const auto& [len, idx] : by_length) {
    std::vector<const Matrix*> group;
    std::vector<double> group_targets;
    for (auto i : idx) {
      group.push_back(series[i]);
      group_targets.push_back(targets[i]);
    }
    loss += talstm_equal_length_loss(model, group, group_targets, n, grads);
  }
  return loss / n;
}

// ---- predictor wrapper ----

double AgePredictor::predict(const Matrix& series) const {
  const double raw = std::visit(
      [&](const auto& m) {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, CnnModel>) {
          return cnn_forward(m, series);
        } else {
          return talstm_forward(m, series);
        }
      },
      net);
  return target_offset + target_scale * raw;
}

std::vector<double> AgePredictor::predict(const std::vector<TimeSeriesRecord>& records) const {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(predict(r.series));
  return out;
}

namespace {

template <typename Model, typename LossFn>
std::vector<double> fit(Model& model, const std::vector<TimeSeriesRecord>& records, const std::vector<double>& targets,
                        const PredictorTrainConfig& config, double loss_scale, LossFn loss_fn,
                        const std::function<void(std::size_t, double)>& on_epoch) {
  RngStream shuffle_rng(config.seed, std::string("predict/") + std::string(to_string(model.config.kind)) + "/shuffle");
  AdamOptimizer opt(AdamConfig{config.lr});
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> log;
  std::vector<const Matrix*> batch;
  std::vector<double> batch_targets;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const std::size_t end = std::min(order.size(), start + config.batch);
      batch.clear();
      batch_targets.clear();
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(&records[order[i]].series);
        batch_targets.push_back(targets[order[i]]);
      }
      Model grads = model.zeros();
      double loss = 0.0;
      try {
        loss = loss_fn(model, batch, batch_targets, &grads);
      } catch (const NumericalError& e) {
        throw NumericalError("epoch " + std::to_string(epoch) + ": " + e.what());
      }
      if (!std::isfinite(loss)) throw NumericalError("non-finite predictor loss at epoch " + std::to_string(epoch));
      opt.step(model, grads);
      sum += loss * static_cast<double>(end - start);
    }
    const double epoch_loss = sum / static_cast<double>(records.size()) * loss_scale;
    log.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss);
  }
  return log;
}

}  // namespace

PredictorTrainResult train_predictor(PredictorConfig arch, const std::vector<TimeSeriesRecord>& records,
                                     const PredictorTrainConfig& config,
                                     const std::function<void(std::size_t, double)>& on_epoch) {
  if (records.empty()) throw std::invalid_argument("train_predictor: empty training set");
  if (config.epochs < 1 || config.batch < 1) throw std::invalid_argument("train_predictor: epochs and batch must be >= 1");
  if (arch.channels == 0) arch.channels = records.front().channels();
  if (arch.length == 0) arch.length = records.front().length();
  for (const auto& r : records) {
    if (!std::isfinite(r.age)) throw std::invalid_argument("train_predictor: non-finite age for '" + r.subject_id + "'");
    if (r.channels() != arch.channels) {
      throw std::invalid_argument("train_predictor: subject '" + r.subject_id + "' has " +
                                  std::to_string(r.channels()) + " channels, expected " +
                                  std::to_string(arch.channels));
    }
    if (arch.kind != PredictorKind::talstm && r.length() != arch.length) {
      throw std::invalid_argument("train_predictor: CNN needs equal-length series; '" + r.subject_id + "' has " +
                                  std::to_string(r.length()) + ", expected " + std::to_string(arch.length));
    }
  }

  PredictorTrainResult result;
  AgePredictor& p = result.model;
  p.config = arch;
  double mean = 0.0;
  for (const auto& r : records) mean += r.age;
  mean /= static_cast<double>(records.size());
  double var = 0.0;
  for (const auto& r : records) var += (r.age - mean) * (r.age - mean);
  var /= static_cast<double>(records.size());
  p.target_offset = mean;
  p.target_scale = std::sqrt(var) > 1e-8 ? std::sqrt(var) : 1.0;

  std::vector<double> targets;
  targets.reserve(records.size());
  for (const auto& r : records) targets.push_back((r.age - p.target_offset) / p.target_scale);
  const double loss_scale = p.target_scale * p.target_scale;

  RngStream init_rng(config.seed, std::string("predict/") + std::string(to_string(arch.kind)) + "/init");
  if (arch.kind == PredictorKind::talstm) {
    auto m = TimeAttentionLstm::create(arch, init_rng);
    result.loss_log = fit(m, records, targets, config, loss_scale, talstm_batch_loss, on_epoch);
    p.net = std::move(m);
  } else {
    auto m = CnnModel::create(arch, init_rng);
    result.loss_log = fit(m, records, targets, config, loss_scale, cnn_batch_loss, on_epoch);
    p.net = std::move(m);
  }
  return result;
}

double evaluate_mae(const AgePredictor& model, const std::vector<TimeSeriesRecord>& records) {
  if (records.empty()) throw std::invalid_argument("evaluate_mae: empty record set");
  std::vector<double> ages;
  ages.reserve(records.size());
  for (const auto& r : records) ages.push_back(r.age);
  return mae(model.predict(records), ages);
}

// ---- persistence ----

namespace {

nlohmann::json arch_to_json(const PredictorConfig& c) {
  return nlohmann::json{
      {"kind", std::string(to_string(c.kind))},
      {"channels", c.channels},
      {"length", c.length},
      {"conv1_filters", c.conv1_filters},
      {"conv2_filters", c.conv2_filters},
      {"kernel", c.kernel},
      {"pool_kernel", c.pool.kernel},
      {"pool_stride", c.pool.stride},
      {"pool_pad", c.pool.pad},
      {"fc_width", c.fc_width},
      {"heads", c.heads},
      {"shared_towers", c.shared_towers},
      {"lstm_layers", c.lstm_layers},
      {"lstm_hidden", c.lstm_hidden},
      {"attention_dim", c.attention_dim},
      {"eq1_literal", c.eq1_literal},
  };
}

PredictorConfig arch_from_json(const nlohmann::json& j) {
  PredictorConfig c;
  c.kind = predictor_kind_from_string(j.at("kind").get<std::string>());
  c.channels = j.at("channels").get<std::size_t>();
  c.length = j.at("length").get<std::size_t>();
  c.conv1_filters = j.at("conv1_filters").get<std::size_t>();
  c.conv2_filters = j.at("conv2_filters").get<std::size_t>();
  c.kernel = j.at("kernel").get<std::size_t>();
  c.pool.kernel = j.at("pool_kernel").get<std::size_t>();
  c.pool.stride = j.at("pool_stride").get<std::size_t>();
  c.pool.pad = j.at("pool_pad").get<std::size_t>();
  c.fc_width = j.at("fc_width").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.shared_towers = j.at("shared_towers").get<bool>();
  c.lstm_layers = j.at("lstm_layers").get<std::size_t>();
  c.lstm_hidden = j.at("lstm_hidden").get<std::size_t>();
  c.attention_dim = j.at("attention_dim").get<std::size_t>();
  c.eq1_literal = j.at("eq1_literal").get<bool>();
  return c;
}

}  // namespace

TsafContainer to_container(const AgePredictor& model) {
  TsafContainer c;
  c.kind = model_kind(model.config.kind);
  auto j = arch_to_json(model.config);
  j["target_offset"] = model.target_offset;
  j["target_scale"] = model.target_scale;
  c.config_json = j.dump();
  c.tensors = std::visit([](const auto& m) { return collect_tensors(m); }, model.net);
  return c;
}

AgePredictor predictor_from_container(const TsafContainer& c) {
  if (c.kind != ModelKind::cnn && c.kind != ModelKind::cnn_attention && c.kind != ModelKind::talstm) {
    throw FormatError("TSAF: mode byte " + std::to_string(static_cast<int>(c.kind)) + " is not a predictor");
  }
  AgePredictor p;
  try {
    const auto j = nlohmann::json::parse(c.config_json);
    p.config = arch_from_json(j);
    p.target_offset = j.at("target_offset").get<double>();
    p.target_scale = j.at("target_scale").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("TSAF: bad predictor config: ") + e.what());
  }
  if (model_kind(p.config.kind) != c.kind) throw FormatError("TSAF: mode byte disagrees with config block");
  RngStream scratch(0, "load");
  std::size_t expected = 0;
  if (p.config.kind == PredictorKind::talstm) {
    auto m = TimeAttentionLstm::create(p.config, scratch);
    restore_tensors(c, m);
    expected = m.tensors().size();
    p.net = std::move(m);
  } else {
    auto m = CnnModel::create(p.config, scratch);
    restore_tensors(c, m);
    expected = m.tensors().size();
    p.net = std::move(m);
  }
  if (c.tensors.size() != expected) {
    throw FormatError("TSAF: predictor expects " + std::to_string(expected) + " tensors, found " +
                      std::to_string(c.tensors.size()));
  }
  return p;
}

void save_predictor(const AgePredictor& model, const std::filesystem::path& path) {
  save_tsaf(to_container(model), path);
}

AgePredictor load_predictor(const std::filesystem::path& path) { return predictor_from_container(load_tsaf(path)); }

}  // namespace tsaug
