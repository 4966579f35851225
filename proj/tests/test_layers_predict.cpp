#include <cmath>
#include <filesystem>
#include <limits>

#include "doctest.h"
#include "fixtures.hpp"
#include "oracles.hpp"
#include "tsaug/binary_io.hpp"
#include "tsaug/layers.hpp"
#include "tsaug/predict.hpp"

using namespace tsaug;
using fixture::random_matrix;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "tsaug_unit";
  fs::create_directories(dir);
  return dir / name;
}

oracle::Grid relu_grid(oracle::Grid g) {
  for (auto& row : g)
    for (double& x : row) x = std::max(0.0, x);
  return g;
}

// Loop multi-head attention; projections are y = W x + b per token.
oracle::Grid mha_oracle(const MultiHeadAttentionParams& p, const Matrix& tokens) {
  const auto x = oracle::grid(tokens);
  const std::size_t len = x.size(), d = p.dim(), dh = d / p.heads;
  auto proj = [&](const Matrix& w, const Matrix& b, const oracle::Grid& in) {
    const auto wg = oracle::grid(w);
    oracle::Grid out(in.size(), std::vector<double>(d));
    for (std::size_t t = 0; t < in.size(); ++t)
      for (std::size_t a = 0; a < d; ++a) {
        double s = b[a];
        for (std::size_t j = 0; j < d; ++j) s += in[t][j] * wg[a][j];
        out[t][a] = s;
      }
    return out;
  };
  const auto q = proj(p.wq, p.bq, x), k = proj(p.wk, p.bk, x), v = proj(p.wv, p.bv, x);
  oracle::Grid concat(len, std::vector<double>(d, 0.0));
  for (std::size_t h = 0; h < p.heads; ++h)
    for (std::size_t t = 0; t < len; ++t) {
      std::vector<double> scores(len);
      for (std::size_t j = 0; j < len; ++j) {
        double s = 0.0;
        for (std::size_t a = h * dh; a < (h + 1) * dh; ++a) s += q[t][a] * k[j][a];
        scores[j] = s / std::sqrt(static_cast<double>(dh));
      }
      const auto w = oracle::softmax(scores);
      for (std::size_t j = 0; j < len; ++j)
        for (std::size_t a = h * dh; a < (h + 1) * dh; ++a) concat[t][a] += w[j] * v[j][a];
    }
  return proj(p.wo, p.bo, concat);
}

std::vector<TimeSeriesRecord> cohort(std::size_t n, std::size_t channels, std::size_t length, std::uint64_t seed) {
  RngStream rng(seed, "test/cohort");
  auto recs = gen_synthetic(SyntheticSpec{n, channels, length, 2.0}, rng);
  for (auto& r : recs) r = zscore(r);
  return recs;
}

}  // namespace

TEST_CASE("conv1d and pooling match loop oracles") {
  RngStream rng(20, "test/conv");
  for (int rep = 0; rep < 10; ++rep) {
    const std::size_t cin = 1 + rng.below(3), len = 6 + rng.below(8), f = 1 + rng.below(4);
    const Matrix x = random_matrix(cin, len, rng);
    const Matrix w = random_matrix(f, cin * 3, rng), b = random_matrix(1, f, rng);
    const Matrix y = conv1d(x, w, b, 3);
    CHECK(oracle::max_abs_diff(oracle::conv1d(oracle::grid(x), oracle::grid(w), oracle::grid(b)[0], 3), y) < 1e-12);
    const auto pooled = maxpool1d(y);
    CHECK(pooled.output.cols() == PoolSpec{}.output_length(y.cols()));
    CHECK(oracle::max_abs_diff(oracle::maxpool(oracle::grid(y), 2, 2, 1), pooled.output) == 0.0);
  }
  // All-negative input: padding must never win.
  const auto p = maxpool1d(Matrix::from_rows({{-3.0, -1.0, -2.0}}));
  CHECK(p.output(0, 0) == -3.0);
  CHECK(p.output(0, 1) == -1.0);
  CHECK(PoolSpec{}.output_length(5) == 3);
  CHECK(PoolSpec{}.output_length(4) == 3);
  CHECK_THROWS(conv1d(Matrix(1, 2), Matrix(1, 3), Matrix(1, 1), 3));
}

TEST_CASE("layer gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    RngStream rng(seed, "test/layer-grad");
    CHECK(oracle::model_grad_error(fixture::ConvProbe::make(13, 3, 2, rng), fixture::ConvProbe::loss) < 1e-6);
    CHECK(oracle::model_grad_error(fixture::MhaProbe::make(5, 4, 2, rng), fixture::MhaProbe::loss) < 1e-6);
    for (bool literal : {false, true}) {
      CHECK(oracle::model_grad_error(fixture::TimeAttentionProbe::make(6, 3, 4, literal, rng),
                                     fixture::TimeAttentionProbe::loss) < 1e-6);
    }
  }
}

TEST_CASE("multi-head attention matches the loop oracle") {
  RngStream rng(21, "test/mha");
  auto probe = fixture::MhaProbe::make(7, 6, 2, rng);
  CHECK(oracle::max_abs_diff(mha_oracle(probe.p, probe.x), multihead_attention(probe.p, probe.x)) < 1e-12);
  CHECK_THROWS(MultiHeadAttentionParams(5, 2));
}

TEST_CASE("time attention matches the loop oracle; the literal prefactor divides by d") {
  RngStream rng(22, "test/tatt");
  for (bool literal : {false, true}) {
    auto probe = fixture::TimeAttentionProbe::make(9, 5, 4, literal, rng);
    const auto fw = time_attention(probe.p, probe.h, literal);
    CHECK(oracle::max_abs_diff(oracle::time_attention(oracle::grid(probe.p.wq), oracle::grid(probe.p.we),
                                                      oracle::grid(probe.p.wv), oracle::grid(probe.h), literal),
                               fw.context) < 1e-12);
    for (std::size_t t = 0; t < fw.weights.rows(); ++t) {
      double s = 0.0;
      for (double a : fw.weights.row(t)) s += a;
      CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
    }
  }
  auto probe = fixture::TimeAttentionProbe::make(5, 3, 4, false, rng);
  const auto plain = time_attention(probe.p, probe.h, false);
  const auto literal = time_attention(probe.p, probe.h, true);
  for (std::size_t i = 0; i < plain.context.size(); ++i)
    CHECK(literal.context[i] == doctest::Approx(plain.context[i] / 4.0).epsilon(1e-14));
}

TEST_CASE("cnn stage lengths") {
  const auto s = cnn_shape(122, 3, {});
  CHECK(s.conv1 == 120);
  CHECK(s.pool1 == 61);
  CHECK(s.conv2 == 59);
  CHECK(s.pool2 == 30);
  CHECK(cnn_shape(6, 3, {}).pool2 == 1);
  CHECK_THROWS_WITH(cnn_shape(5, 3, {}), doctest::Contains("second convolution"));
  CHECK_THROWS(cnn_shape(2, 3, {}));
}

TEST_CASE("cnn towers follow the loop oracle and the parameter count is per channel") {
  RngStream rng(23, "test/cnn");
  auto cfg = fixture::tiny_cnn(false, 3, 17);
  const auto m = CnnModel::create(cfg, rng);
  CHECK(m.towers.size() == 3);
  CHECK(m.feature_size() == 3 * 4 * cnn_shape(17, 3, {}).pool2);
  const Matrix series = random_matrix(3, 17, rng);
  for (std::size_t c = 0; c < 3; ++c) {
    const auto& t = m.tower(c);
    const oracle::Grid x{oracle::grid(series)[c]};
    auto h = oracle::maxpool(relu_grid(oracle::conv1d(x, oracle::grid(t.conv1_w), oracle::grid(t.conv1_b)[0], 3)), 2, 2, 1);
    h = oracle::maxpool(relu_grid(oracle::conv1d(h, oracle::grid(t.conv2_w), oracle::grid(t.conv2_b)[0], 3)), 2, 2, 1);
    CHECK(oracle::max_abs_diff(h, cnn_tower_features(m, series, c)) < 1e-12);
  }
  cfg.shared_towers = true;
  CHECK(CnnModel::create(cfg, rng).towers.size() == 1);
  CHECK_THROWS(cnn_forward(m, Matrix(2, 17)));
}

TEST_CASE("predictor losses match finite differences") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    RngStream rng(seed, "test/pred-grad");
    const Matrix a = random_matrix(2, 11, rng), b = random_matrix(2, 11, rng), c = random_matrix(2, 8, rng);
    const std::vector<const Matrix*> same{&a, &b};
    const std::vector<double> y2{0.5, -1.0};
    for (bool att : {false, true}) {
      auto m = CnnModel::create(fixture::tiny_cnn(att, 2, 11), rng);
      CHECK(oracle::model_grad_error(m, [&](const CnnModel& mm, CnnModel* g) {
              return cnn_batch_loss(mm, same, y2, g);
            }) < 1e-6);
    }
    for (bool literal : {false, true}) {
      auto m = TimeAttentionLstm::create(fixture::tiny_talstm(2, literal), rng);
      for (auto& t : m.tensors()) *t.value = random_matrix(t.value->rows(), t.value->cols(), rng, 0.5);
      const std::vector<const Matrix*> mixed{&a, &c, &b};
      const std::vector<double> y3{0.5, -1.0, 0.25};
      CHECK(oracle::model_grad_error(m, [&](const TimeAttentionLstm& mm, TimeAttentionLstm* g) {
              return talstm_batch_loss(mm, mixed, y3, g);
            }) < 1e-6);
    }
  }
}

TEST_CASE("talstm reduction weights form a distribution and batching matches single series") {
  RngStream rng(24, "test/talstm");
  auto m = TimeAttentionLstm::create(fixture::tiny_talstm(3), rng);
  const Matrix a = random_matrix(3, 10, rng), b = random_matrix(3, 7, rng);
  const auto tr = talstm_trace(m, a);
  CHECK(tr.beta.cols() == 10);
  double s = 0.0;
  for (double x : tr.beta.values()) s += x;
  CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(tr.output == talstm_forward(m, a));
  const std::vector<const Matrix*> batch{&a, &b};
  const double ya = talstm_forward(m, a), yb = talstm_forward(m, b);
  const std::vector<double> targets{ya + 1.0, yb - 2.0};
  CHECK(talstm_batch_loss(m, batch, targets, nullptr) == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("predictor training fits, is deterministic and round-trips through TSAF") {
  const auto recs = cohort(24, 2, 30, 1);
  PredictorTrainConfig tc;
  tc.epochs = 6;
  tc.batch = 8;
  tc.lr = 3e-3;
  tc.seed = 9;
  for (auto kind : {PredictorKind::cnn, PredictorKind::cnn_attention, PredictorKind::talstm}) {
    CAPTURE(to_string(kind));
    PredictorConfig arch = kind == PredictorKind::talstm ? fixture::tiny_talstm(0) : fixture::tiny_cnn(false, 0, 0);
    arch.kind = kind;
    std::size_t epochs_seen = 0;
    const auto a = train_predictor(arch, recs, tc, [&](std::size_t, double) { ++epochs_seen; });
    const auto b = train_predictor(arch, recs, tc);
    CHECK(epochs_seen == 6);
    CHECK(a.loss_log.back() < a.loss_log.front());
    CHECK(a.model.config.channels == 2);
    CHECK(encode_tsaf(to_container(a.model)) == encode_tsaf(to_container(b.model)));
    const auto p = scratch(std::string(to_string(kind)) + ".tsaf");
    save_predictor(a.model, p);
    CHECK(static_cast<int>(read_file(p)[8]) == static_cast<int>(model_kind(kind)));
    const auto back = load_predictor(p);
    CHECK(back.target_offset == a.model.target_offset);
    CHECK(back.target_scale == a.model.target_scale);
    for (const auto& r : recs) CHECK(back.predict(r.series) == a.model.predict(r.series));
    CHECK(evaluate_mae(back, recs) == evaluate_mae(a.model, recs));
  }
  auto poisoned = recs;
  poisoned[0].series(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(train_predictor(fixture::tiny_talstm(0), poisoned, tc), NumericalError);
  CHECK_THROWS(predictor_kind_from_string("rnn"));
  CHECK(predictor_kind_from_string("cnn-att") == PredictorKind::cnn_attention);
}
