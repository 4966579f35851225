#pragma once

// Two-stage protocol: train forecasters on an 80:20 subject split, extend
// every series by forecasting past its end, then compare age regressors on
// the original and extended datasets under paired k-fold cross-validation.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tsaug/dataset.hpp"
#include "tsaug/forecast.hpp"
#include "tsaug/predict.hpp"

namespace tsaug {

struct ExperimentConfig {
  std::string data_path;  // empty: generate from `synthetic`
  SyntheticSpec synthetic;
  WindowGeometry geometry;

  std::vector<ForecastMode> forecaster_modes{ForecastMode::stateless, ForecastMode::recursive};
  ForecasterConfig forecaster;  // seed is ignored; derived from `seed`
  double train_fraction = 0.8;

  ForecastMode augment_mode = ForecastMode::recursive;
  std::vector<std::size_t> steps{4, 6, 8, 10, 12, 14};
  bool augment_train_only = false;

  std::vector<PredictorKind> predictors{PredictorKind::cnn, PredictorKind::cnn_attention, PredictorKind::talstm};
  PredictorConfig predictor_arch;       // kind, channels and length are filled per run
  PredictorTrainConfig predictor_train;  // seed is ignored; derived per fold
  std::size_t folds = 10;

  std::uint64_t seed = 0;

  void validate() const;
};

/// Every key is optional; unknown keys throw std::invalid_argument naming the
/// key path.
nlohmann::json to_json(const ExperimentConfig& config);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j, ExperimentConfig base = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path, ExperimentConfig base = {});

using LogFn = std::function<void(const std::string&)>;

/// Records from `data_path` (TSDS, or CSV by extension) or the synthetic spec.
std::vector<TimeSeriesRecord> load_records(const ExperimentConfig& config);

/// Z-scores each record per channel, then slides windows over it.
std::vector<WindowSample> build_windows(const std::vector<TimeSeriesRecord>& records, const WindowGeometry& geometry);

struct AugmentStageResult {
  SplitPlan split;
  std::map<ForecastMode, ForecasterTrainResult> forecasters;
  std::vector<std::string> training_subjects_seen;  // audit: ids of every training window, in order
};

AugmentStageResult run_augment_stage(const ExperimentConfig& config, const std::vector<TimeSeriesRecord>& records,
                                     const LogFn& log = {});

/// Appends `steps` forecast points to every record. The forecaster runs in
/// z-scored units of each record; the forecast is mapped back with that
/// record's channel mean and std, so columns [0, T) are untouched.
std::vector<TimeSeriesRecord> augment_dataset(const std::vector<TimeSeriesRecord>& records,
                                              const ForecasterCheckpoint& checkpoint, std::size_t steps);

/// Rejects steps that the checkpoint cannot produce.
void check_steps(const ForecasterCheckpoint& checkpoint, const std::vector<std::size_t>& steps);

struct FoldRow {
  std::string model;
  std::string dataset;  // "baseline" or "augmented"
  std::size_t step = 0;
  std::size_t fold = 0;
  double mae = 0.0;
};

struct AggregateRow {
  std::string model;
  std::string dataset;
  std::size_t step = 0;
  double mean_mae = 0.0;
  double std_mae = 0.0;  // sample standard deviation over folds
};

struct EvalReport {
  std::vector<FoldRow> folds;
  std::vector<AggregateRow> aggregate;
  std::vector<SplitPlan> plans;

  void append(const EvalReport& other);
};

/// Mean and sample std (n − 1; 0 for a single fold).
AggregateRow aggregate_folds(const std::vector<double>& maes, std::string model, std::string dataset,
                             std::size_t step);

std::vector<SplitPlan> validation_folds(const ExperimentConfig& config,
                                        const std::vector<TimeSeriesRecord>& records);

/// One arm: for each fold and model, train on the fold's train subjects taken
/// from `train_source` and score on its test subjects taken from
/// `test_source`. The predictor seed depends on (seed, model, fold) only, so
/// arms evaluated with the same plans are paired.
EvalReport evaluate_arm(const ExperimentConfig& config, const std::vector<TimeSeriesRecord>& train_source,
                        const std::vector<TimeSeriesRecord>& test_source, const std::vector<SplitPlan>& plans,
                        const std::string& dataset, std::size_t step, const LogFn& log = {});

/// Baseline and augmented arms on shared folds. Subject sets must match.
EvalReport run_validation(const ExperimentConfig& config, const std::vector<TimeSeriesRecord>& baseline,
                          const std::vector<TimeSeriesRecord>& augmented, const LogFn& log = {});

/// Baseline arm computed once, then one augmented arm per step.
EvalReport step_sweep(const ExperimentConfig& config, const std::vector<TimeSeriesRecord>& baseline,
                      const ForecasterCheckpoint& checkpoint, const std::vector<std::size_t>& steps,
                      const LogFn& log = {});

void require_same_subjects(const std::vector<TimeSeriesRecord>& a, const std::vector<TimeSeriesRecord>& b);

void write_fold_csv(const EvalReport& report, const std::filesystem::path& path);
void write_aggregate_csv(const EvalReport& report, const std::filesystem::path& path);
void write_fold_plan_csv(const std::vector<SplitPlan>& plans, const std::filesystem::path& path);

/// Artifacts are recorded relative to the output directory so that two runs
/// in different directories produce the same manifest bytes. Wall-clock
/// timings go to a separate file.
class RunManifest {
 public:
  RunManifest(std::filesystem::path out_dir, std::string command);

  void set_config(nlohmann::json config);
  void set_field(const std::string& key, nlohmann::json value);
  void add_artifact(const std::string& role, const std::filesystem::path& path);
  void begin_stage(const std::string& stage);
  void end_stage();
  void fail(const std::string& message);

  const std::filesystem::path& out_dir() const noexcept { return out_dir_; }
  nlohmann::json to_json() const;
  /// Writes manifest.json and timings.json into the output directory.
  void write() const;

 private:
  std::filesystem::path out_dir_;
  std::string command_;
  nlohmann::json config_;
  nlohmann::json fields_ = nlohmann::json::object();
  nlohmann::json artifacts_ = nlohmann::json::array();
  std::vector<std::string> stages_;
  std::vector<double> seconds_;
  std::string current_;
  double stage_start_ = 0.0;
  std::string failed_stage_;
  std::string error_;
};

struct ExperimentOutputs {
  AugmentStageResult augment;
  EvalReport report;
};

/// Full protocol into `out_dir`: forecaster checkpoints and loss CSVs,
/// sweep over `config.steps` with the `augment_mode` forecaster, reports and
/// manifest.
ExperimentOutputs run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                                 const LogFn& log = {});

}  // namespace tsaug
