#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "tsaug/binary_io.hpp"
#include "tsaug/pipeline.hpp"

using namespace tsaug;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "tsaug_unit" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.synthetic = SyntheticSpec{12, 2, 36, 2.0};
  c.forecaster.epochs = 1;
  c.forecaster.hidden = 6;
  c.forecaster.batch = 32;
  c.steps = {4, 8};
  c.predictors = {PredictorKind::talstm};
  c.predictor_arch.lstm_layers = 1;
  c.predictor_arch.lstm_hidden = 4;
  c.predictor_arch.attention_dim = 4;
  c.predictor_train.epochs = 1;
  c.predictor_train.batch = 8;
  c.folds = 3;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("config JSON round-trips and rejects unknown keys") {
  const auto c = tiny_config();
  const auto j = to_json(c);
  const auto back = experiment_config_from_json(j);
  CHECK(to_json(back) == j);
  CHECK(back.steps == c.steps);
  CHECK(back.folds == 3);

  auto bad = j;
  bad["predictor"]["dropout"] = 0.5;
  CHECK_THROWS_WITH(experiment_config_from_json(bad), doctest::Contains("predictor.dropout"));
  CHECK_THROWS_WITH(experiment_config_from_json(nlohmann::json{{"sed", 1}}), doctest::Contains("sed"));
  CHECK_THROWS(experiment_config_from_json(nlohmann::json{{"kfold", "ten"}}));

  const auto partial = experiment_config_from_json(nlohmann::json{{"seed", 9}, {"augment", {{"steps", {6}}}}});
  CHECK(partial.seed == 9);
  CHECK(partial.steps == std::vector<std::size_t>{6});
  CHECK(partial.folds == 10);

  ExperimentConfig only;
  only.augment_train_only = true;
  CHECK_THROWS(only.validate());
  only.predictors = {PredictorKind::talstm};
  CHECK_NOTHROW(only.validate());
  ExperimentConfig zero;
  zero.steps = {0};
  CHECK_THROWS(zero.validate());
}

TEST_CASE("aggregate uses the sample standard deviation") {
  const auto row = aggregate_folds({2.0, 4.0, 9.0}, "talstm", "augmented", 4);
  CHECK(row.mean_mae == 5.0);
  // Σ(x − 5)² = 9 + 1 + 16 = 26, n − 1 = 2.
  CHECK(row.std_mae == doctest::Approx(std::sqrt(13.0)).epsilon(1e-15));
  CHECK(aggregate_folds({3.0}, "cnn", "baseline", 0).std_mae == 0.0);
  CHECK_THROWS(aggregate_folds({}, "cnn", "baseline", 0));
}

TEST_CASE("augmentation keeps the original prefix bit-exact") {
  auto c = tiny_config();
  const auto recs = load_records(c);
  const auto stage = run_augment_stage(c, recs);
  REQUIRE(stage.forecasters.size() == 2);
  std::set<std::string> test_ids(stage.split.test_subjects.begin(), stage.split.test_subjects.end());
  for (const auto& id : stage.training_subjects_seen) CHECK(test_ids.count(id) == 0);

  const auto& rec = stage.forecasters.at(ForecastMode::recursive).checkpoint;
  const auto& sl = stage.forecasters.at(ForecastMode::stateless).checkpoint;
  const auto out = augment_dataset(recs, rec, 6);
  REQUIRE(out.size() == recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(out[i].subject_id == recs[i].subject_id);
    CHECK(out[i].age == recs[i].age);
    CHECK(out[i].length() == recs[i].length() + 6);
    bool prefix = true;
    for (std::size_t ch = 0; ch < recs[i].channels(); ++ch)
      for (std::size_t t = 0; t < recs[i].length(); ++t)
        prefix = prefix && std::bit_cast<std::uint64_t>(out[i].series(ch, t)) ==
                               std::bit_cast<std::uint64_t>(recs[i].series(ch, t));
    CHECK(prefix);
  }
  // The extension is the forecast of the z-scored tail, mapped back to raw units.
  const auto z = zscore(recs[0]);
  const auto st = channel_stats(recs[0]);
  const Matrix f = rec.forecast(augment_seed(z, c.geometry.input).tail_window, 6);
  for (std::size_t ch = 0; ch < 2; ++ch)
    CHECK(out[0].series(ch, 36) == doctest::Approx(f(0, ch) * st.stddev[ch] + st.mean[ch]).epsilon(1e-12));

  CHECK_NOTHROW(check_steps(sl, {4, 8}));
  CHECK_THROWS(check_steps(sl, {6}));
  CHECK_THROWS(check_steps(rec, {0}));
}

TEST_CASE("validation pairs arms and rejects mismatched subjects") {
  auto c = tiny_config();
  const auto recs = load_records(c);
  auto other = recs;
  other.pop_back();
  CHECK_THROWS(run_validation(c, recs, other));
  other = recs;
  other[0].subject_id = "stranger";
  CHECK_THROWS(require_same_subjects(recs, other));

  const auto plans = validation_folds(c, recs);
  CHECK(plans.size() == 3);
  const auto a = evaluate_arm(c, recs, recs, plans, "baseline", 0);
  const auto b = evaluate_arm(c, recs, recs, plans, "baseline", 0);
  REQUIRE(a.folds.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(a.folds[i].mae == b.folds[i].mae);
  CHECK(a.aggregate.size() == 1);
}

TEST_CASE("step sweep reports every arm and the CSVs are recomputable") {
  auto c = tiny_config();
  const auto recs = load_records(c);
  const auto stage = run_augment_stage(c, recs);
  const auto report = step_sweep(c, recs, stage.forecasters.at(ForecastMode::recursive).checkpoint, c.steps);
  CHECK(report.folds.size() == 3 * 3);
  REQUIRE(report.aggregate.size() == 3);
  CHECK(report.aggregate[0].dataset == "baseline");
  CHECK(report.aggregate[0].step == 0);
  CHECK(report.aggregate[2].step == 8);

  const auto dir = scratch_dir("csv");
  write_fold_csv(report, dir / "folds.csv");
  write_aggregate_csv(report, dir / "agg.csv");
  const auto folds = lines_of(dir / "folds.csv");
  const auto agg = lines_of(dir / "agg.csv");
  CHECK(folds[0] == "model,dataset,step,fold,mae");
  CHECK(agg[0] == "model,dataset,step,mean_mae,std_mae");
  CHECK(folds.size() == 10);
  // Parse back and recompute the first aggregate row.
  std::vector<double> maes;
  for (std::size_t i = 1; i < folds.size(); ++i) {
    std::stringstream ss(folds[i]);
    std::string model, dataset, step, fold, mae;
    std::getline(ss, model, ',');
    std::getline(ss, dataset, ',');
    std::getline(ss, step, ',');
    std::getline(ss, fold, ',');
    std::getline(ss, mae, ',');
    if (dataset == "baseline") maes.push_back(std::stod(mae));
  }
  REQUIRE(maes.size() == 3);
  double m = 0.0;
  for (double x : maes) m += x;
  m /= 3.0;
  CHECK(std::abs(m - report.aggregate[0].mean_mae) < 1e-12);
}

TEST_CASE("manifest records a failed stage") {
  const auto dir = scratch_dir("manifest");
  RunManifest man(dir, "evaluate");
  man.begin_stage("load");
  man.end_stage();
  man.begin_stage("validate");
  man.fail("N < k");
  man.write();
  const auto j = nlohmann::json::parse(read_file(dir / "manifest.json"));
  CHECK(j["status"] == "failed");
  CHECK(j["failed_stage"] == "validate");
  CHECK(j["error"] == "N < k");
  CHECK(fs::exists(dir / "timings.json"));
}

TEST_CASE("end-to-end run is reproducible") {
  auto c = tiny_config();
  c.steps = {4};
  const auto a = scratch_dir("run_a"), b = scratch_dir("run_b");
  run_experiment(c, a);
  run_experiment(c, b);
  std::size_t compared = 0;
  for (const auto& entry : fs::directory_iterator(a)) {
    const auto name = entry.path().filename();
    if (name == "timings.json") continue;
    CAPTURE(name.string());
    CHECK(read_file(entry.path()) == read_file(b / name));
    ++compared;
  }
  CHECK(compared >= 7);
  const auto man = nlohmann::json::parse(read_file(a / "manifest.json"));
  CHECK(man["status"] == "ok");
}
