#include "tsaug/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "tsaug/binary_io.hpp"

namespace tsaug {

using nlohmann::json;

// ---- config ----

void ExperimentConfig::validate() const {
  geometry.validate();
  if (data_path.empty()) {
    if (synthetic.subjects < 2 || synthetic.channels < 1) throw std::invalid_argument("synthetic: need >= 2 subjects and >= 1 channel");
    if (synthetic.length < geometry.window + 1) {
      throw std::invalid_argument("synthetic: length " + std::to_string(synthetic.length) + " below the minimum " +
                                  std::to_string(geometry.window + 1));
    }
  }
  if (forecaster_modes.empty()) throw std::invalid_argument("config: at least one forecaster mode is required");
  if (std::find(forecaster_modes.begin(), forecaster_modes.end(), augment_mode) == forecaster_modes.end()) {
    throw std::invalid_argument("config: augment_mode '" + std::string(to_string(augment_mode)) +
                                "' is not among the trained forecaster modes");
  }
  if (forecaster.epochs < 1 || forecaster.batch < 1 || forecaster.hidden < 1) {
    throw std::invalid_argument("config: forecaster epochs, batch and hidden must be >= 1");
  }
  if (!(forecaster.lr > 0.0) || !(predictor_train.lr > 0.0)) throw std::invalid_argument("config: learning rates must be > 0");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw std::invalid_argument("config: train_fraction must be in (0, 1)");
  for (auto s : steps) {
    if (s < 1) throw std::invalid_argument("config: steps must be >= 1");
  }
  if (predictors.empty()) throw std::invalid_argument("config: at least one predictor is required");
  if (predictor_train.epochs < 1 || predictor_train.batch < 1) {
    throw std::invalid_argument("config: predictor epochs and batch must be >= 1");
  }
  if (folds < 2) throw std::invalid_argument("config: kfold must be >= 2");
  if (augment_train_only) {
    for (auto k : predictors) {
      if (k != PredictorKind::talstm) {
        throw std::invalid_argument("config: augment_train_only needs variable-length inputs; '" +
                                    std::string(to_string(k)) + "' takes fixed-length series");
      }
    }
  }
}

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument("config: '" + where + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw std::invalid_argument("config: unknown key '" + (where.empty() ? key : where + "." + key) + "'");
  }
}

template <typename T>
void read_opt(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument("config: bad value for '" + (where.empty() ? std::string(key) : where + "." + key) +
                                "': " + j.at(key).dump());
  }
}

}  // namespace

json to_json(const ExperimentConfig& c) {
  json modes = json::array();
  for (auto m : c.forecaster_modes) modes.push_back(std::string(to_string(m)));
  json models = json::array();
  for (auto k : c.predictors) models.push_back(std::string(to_string(k)));
  const auto& a = c.predictor_arch;
  return json{
      {"data", c.data_path},
      {"synthetic",
       {{"subjects", c.synthetic.subjects},
        {"channels", c.synthetic.channels},
        {"length", c.synthetic.length},
        {"tr_seconds", c.synthetic.tr_seconds}}},
      {"window", {{"length", c.geometry.window}, {"input", c.geometry.input}, {"stride", c.geometry.stride}}},
      {"forecaster",
       {{"modes", modes},
        {"epochs", c.forecaster.epochs},
        {"batch", c.forecaster.batch},
        {"lr", c.forecaster.lr},
        {"hidden", c.forecaster.hidden},
        {"target_test_mse", c.forecaster.target_test_mse},
        {"train_fraction", c.train_fraction}}},
      {"augment",
       {{"mode", std::string(to_string(c.augment_mode))}, {"steps", c.steps}, {"train_only", c.augment_train_only}}},
      {"predictor",
       {{"models", models},
        {"epochs", c.predictor_train.epochs},
        {"batch", c.predictor_train.batch},
        {"lr", c.predictor_train.lr},
        {"conv1_filters", a.conv1_filters},
        {"conv2_filters", a.conv2_filters},
        {"kernel", a.kernel},
        {"fc_width", a.fc_width},
        {"heads", a.heads},
        {"shared_towers", a.shared_towers},
        {"lstm_layers", a.lstm_layers},
        {"lstm_hidden", a.lstm_hidden},
        {"attention_dim", a.attention_dim},
        {"eq1_literal", a.eq1_literal}}},
      {"kfold", c.folds},
      {"seed", c.seed},
  };
}

ExperimentConfig experiment_config_from_json(const json& j, ExperimentConfig c) {
  reject_unknown(j, {"data", "synthetic", "window", "forecaster", "augment", "predictor", "kfold", "seed"}, "");
  read_opt(j, "data", c.data_path, "");
  read_opt(j, "kfold", c.folds, "");
  read_opt(j, "seed", c.seed, "");
  if (j.contains("synthetic")) {
    const auto& s = j.at("synthetic");
    reject_unknown(s, {"subjects", "channels", "length", "tr_seconds"}, "synthetic");
    read_opt(s, "subjects", c.synthetic.subjects, "synthetic");
    read_opt(s, "channels", c.synthetic.channels, "synthetic");
    read_opt(s, "length", c.synthetic.length, "synthetic");
    read_opt(s, "tr_seconds", c.synthetic.tr_seconds, "synthetic");
  }
  if (j.contains("window")) {
    const auto& w = j.at("window");
    reject_unknown(w, {"length", "input", "stride"}, "window");
    read_opt(w, "length", c.geometry.window, "window");
    read_opt(w, "input", c.geometry.input, "window");
    read_opt(w, "stride", c.geometry.stride, "window");
  }
  if (j.contains("forecaster")) {
    const auto& f = j.at("forecaster");
    reject_unknown(f, {"modes", "epochs", "batch", "lr", "hidden", "target_test_mse", "train_fraction"}, "forecaster");
    if (f.contains("modes")) {
      std::vector<std::string> names;
      read_opt(f, "modes", names, "forecaster");
      c.forecaster_modes.clear();
      for (const auto& n : names) c.forecaster_modes.push_back(forecast_mode_from_string(n));
    }
    read_opt(f, "epochs", c.forecaster.epochs, "forecaster");
    read_opt(f, "batch", c.forecaster.batch, "forecaster");
    read_opt(f, "lr", c.forecaster.lr, "forecaster");
    read_opt(f, "hidden", c.forecaster.hidden, "forecaster");
    read_opt(f, "target_test_mse", c.forecaster.target_test_mse, "forecaster");
    read_opt(f, "train_fraction", c.train_fraction, "forecaster");
  }
  if (j.contains("augment")) {
    const auto& a = j.at("augment");
    reject_unknown(a, {"mode", "steps", "train_only"}, "augment");
    if (a.contains("mode")) {
      std::string m;
      read_opt(a, "mode", m, "augment");
      c.augment_mode = forecast_mode_from_string(m);
    }
    read_opt(a, "steps", c.steps, "augment");
    read_opt(a, "train_only", c.augment_train_only, "augment");
  }
  if (j.contains("predictor")) {
    const auto& p = j.at("predictor");
    reject_unknown(p,
                   {"models", "epochs", "batch", "lr", "conv1_filters", "conv2_filters", "kernel", "fc_width", "heads",
                    "shared_towers", "lstm_layers", "lstm_hidden", "attention_dim", "eq1_literal"},
                   "predictor");
    if (p.contains("models")) {
      std::vector<std::string> names;
      read_opt(p, "models", names, "predictor");
      c.predictors.clear();
      for (const auto& n : names) c.predictors.push_back(predictor_kind_from_string(n));
    }
    auto& a = c.predictor_arch;
    read_opt(p, "epochs", c.predictor_train.epochs, "predictor");
    read_opt(p, "batch", c.predictor_train.batch, "predictor");
    read_opt(p, "lr", c.predictor_train.lr, "predictor");
    read_opt(p, "conv1_filters", a.conv1_filters, "predictor");
    read_opt(p, "conv2_filters", a.conv2_filters, "predictor");
    read_opt(p, "kernel", a.kernel, "predictor");
    read_opt(p, "fc_width", a.fc_width, "predictor");
    read_opt(p, "heads", a.heads, "predictor");
    read_opt(p, "shared_towers", a.shared_towers, "predictor");
    read_opt(p, "lstm_layers", a.lstm_layers, "predictor");
    read_opt(p, "lstm_hidden", a.lstm_hidden, "predictor");
    read_opt(p, "attention_dim", a.attention_dim, "predictor");
    read_opt(p, "eq1_literal", a.eq1_literal, "predictor");
  }
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return experiment_config_from_json(j, std::move(base));
}

// ---- augmentation stage ----

std::vector<TimeSeriesRecord> load_records(const ExperimentConfig& config) {
  if (config.data_path.empty()) {
    RngStream rng(config.seed, "data/synthetic");
    return gen_synthetic(config.synthetic, rng);
  }
  const std::filesystem::path p(config.data_path);
  if (p.extension() == ".csv") return load_csv(p);
  return load_tsds(p);
}

std::vector<WindowSample> build_windows(const std::vector<TimeSeriesRecord>& records, const WindowGeometry& geometry) {
  std::vector<WindowSample> out;
  for (const auto& r : records) {
    auto w = slide_windows(zscore(r), geometry);
    std::move(w.begin(), w.end(), std::back_inserter(out));
  }
  return out;
}

AugmentStageResult run_augment_stage(const ExperimentConfig& config, const std::vector<TimeSeriesRecord>& records,
                                     const LogFn& log) {
  config.validate();
  AugmentStageResult result;
  RngStream split_rng(config.seed, "augment/split");
  result.split = subject_split(records, config.train_fraction, split_rng);
  const auto train_windows = build_windows(select_subjects(records, result.split.train_subjects), config.geometry);
  const auto test_windows = build_windows(select_subjects(records, result.split.test_subjects), config.geometry);
  for (const auto& w : train_windows) {
    if (result.training_subjects_seen.empty() || result.training_subjects_seen.back() != w.subject_id) {
      result.training_subjects_seen.push_back(w.subject_id);
    }
  }
  if (log) {
    log("augment: " + std::to_string(result.split.train_subjects.size()) + " train / " +
        std::to_string(result.split.test_subjects.size()) + " test subjects, " + std::to_string(train_windows.size()) +
        " / " + std::to_string(test_windows.size()) + " windows");
  }
  for (auto mode : config.forecaster_modes) {
    ForecasterConfig fc = config.forecaster;
    fc.geometry = config.geometry;
    fc.seed = derive_seed(config.seed, std::string("augment/") + std::string(to_string(mode)));
    const std::size_t every = std::max<std::size_t>(1, fc.epochs / 10);
    auto on_epoch = [&](const LossRow& row) {
      if (log && (row.epoch % every == 0 || row.epoch == 1)) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "augment/%s: epoch %zu train %.6f test %.6f", std::string(to_string(mode)).c_str(),
                      row.epoch, row.train_mse, row.test_mse);
        log(buf);
      }
    };
    result.forecasters.emplace(mode, train_forecaster(mode, train_windows, test_windows, fc, on_epoch));
  }
  return result;
}

void check_steps(const ForecasterCheckpoint& checkpoint, const std::vector<std::size_t>& steps) {
  if (steps.empty()) throw std::invalid_argument("no augmentation steps given");
  for (auto s : steps) {
    if (s < 1) throw std::invalid_argument("augmentation steps must be >= 1");
    if (checkpoint.mode == ForecastMode::stateless) {
      const std::size_t h = checkpoint.stateless().horizon;
      if (s % h != 0) {
        throw std::invalid_argument("stateless checkpoint emits blocks of " + std::to_string(h) + " points; step " +
                                    std::to_string(s) + " is not a multiple");
      }
    }
  }
}

std::vector<TimeSeriesRecord> augment_dataset(const std::vector<TimeSeriesRecord>& records,
                                              const ForecasterCheckpoint& checkpoint, std::size_t steps) {
  check_steps(checkpoint, {steps});
  std::vector<TimeSeriesRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    if (r.channels() != checkpoint.channels()) {
      throw std::invalid_argument("subject '" + r.subject_id + "' has " + std::to_string(r.channels()) +
                                  " channels; checkpoint expects " + std::to_string(checkpoint.channels()));
    }
    const auto stats = channel_stats(r);
    const auto seed = augment_seed(zscore(r), checkpoint.input_length());
    const Matrix tail = checkpoint.forecast(seed.tail_window, steps);
    require_finite(tail, "forecast for subject '" + r.subject_id + "'");
    TimeSeriesRecord ext{r.subject_id, r.age, r.tr_seconds, Matrix(r.channels(), r.length() + steps)};
    for (std::size_t c = 0; c < r.channels(); ++c) {
      auto src = r.series.row(c);
      auto dst = ext.series.row(c);
      std::copy(src.begin(), src.end(), dst.begin());
      for (std::size_t t = 0; t < steps; ++t) dst[r.length() + t] = tail(t, c) * stats.stddev[c] + stats.mean[c];
    }
    out.push_back(std::move(ext));
  }
  return out;
}

// ---- validation ----

void EvalReport::append(const EvalReport& other) {
  folds.insert(folds.end(), other.folds.begin(), other.folds.end());
  aggregate.insert(aggregate.end(), other.aggregate.begin(), other.aggregate.end());
  if (plans.empty()) plans = other.plans;
}

AggregateRow aggregate_folds(const std::vector<double>& maes, std::string model, std::string dataset,
                             std::size_t step) {
  if (maes.empty()) throw std::invalid_argument("aggregate_folds: no folds");
  const double n = static_cast<double>(maes.size());
  double mean = 0.0;
  for (double m : maes) mean += m;
  mean /= n;
  double ss = 0.0;
  for (double m : maes) ss += (m - mean) * (m - mean);
  const double sd = maes.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  return AggregateRow{std::move(model), std::move(dataset), step, mean, sd};
}

std::vector<SplitPlan> validation_folds(const ExperimentConfig& config, const std::vector<TimeSeriesRecord>& records) {
  RngStream rng(config.seed, "validation/folds");
  return kfold_split(records, config.folds, rng);
}

void require_same_subjects(const std::vector<TimeSeriesRecord>& a, const std::vector<TimeSeriesRecord>& b) {
  auto ids_a = subject_ids(a);
  auto ids_b = subject_ids(b);
  std::sort(ids_a.begin(), ids_a.end());
  std::sort(ids_b.begin(), ids_b.end());
  if (ids_a == ids_b) return;
  std::vector<std::string> diff;
  std::set_symmetric_difference(ids_a.begin(), ids_a.end(), ids_b.begin(), ids_b.end(), std::back_inserter(diff));
  std::string msg = "datasets cover different subjects (" + std::to_string(diff.size()) + " differ";
  if (!diff.empty()) msg += ", e.g. '" + diff.front() + "'";
  throw std::invalid_argument(msg + ")");
}

namespace {

std::vector<TimeSeriesRecord> normalized(const std::vector<TimeSeriesRecord>& records) {
  std::vector<TimeSeriesRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(zscore(r));
  return out;
}

}  // namespace

EvalReport evaluate_arm(const ExperimentConfig& config, const std::vector<TimeSeriesRecord>& train_source,
                        const std::vector<TimeSeriesRecord>& test_source, const std::vector<SplitPlan>& plans,
                        const std::string& dataset, std::size_t step, const LogFn& log) {
  require_same_subjects(train_source, test_source);
  const auto train_norm = normalized(train_source);
  const auto test_norm = &train_source == &test_source ? train_norm : normalized(test_source);
  EvalReport report;
  report.plans = plans;
  for (auto kind : config.predictors) {
    const std::string model(to_string(kind));
    std::vector<double> maes;
    for (std::size_t f = 0; f < plans.size(); ++f) {
      const auto& plan = plans[f];
      const std::set<std::string> test_ids(plan.test_subjects.begin(), plan.test_subjects.end());
      for (const auto& id : plan.train_subjects) {
        if (test_ids.count(id) != 0) throw std::logic_error("fold " + std::to_string(f) + " leaks subject '" + id + "'");
      }
      const auto train = select_subjects(train_norm, plan.train_subjects);
      const auto test = select_subjects(test_norm, plan.test_subjects);
      PredictorConfig arch = config.predictor_arch;
      arch.kind = kind;
      arch.channels = 0;
      arch.length = 0;
      PredictorTrainConfig tc = config.predictor_train;
      tc.seed = derive_seed(config.seed, "validation/" + model, f);
      const auto trained = train_predictor(arch, train, tc);
      const double m = evaluate_mae(trained.model, test);
      maes.push_back(m);
      report.folds.push_back(FoldRow{model, dataset, step, f, m});
      if (log) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "validate %s/%s step %zu fold %zu: mae %.4f (train mse %.4f)", model.c_str(),
                      dataset.c_str(), step, f, m, trained.loss_log.back());
        log(buf);
      }
    }
    report.aggregate.push_back(aggregate_folds(maes, model, dataset, step));
  }
  return report;
}

EvalReport run_validation(const ExperimentConfig& config, const std::vector<TimeSeriesRecord>& baseline,
                          const std::vector<TimeSeriesRecord>& augmented, const LogFn& log) {
  config.validate();
  require_same_subjects(baseline, augmented);
  std::size_t step = 0;
  if (!augmented.empty() && !baseline.empty()) {
    const auto& b = baseline.front();
    const auto it = std::find_if(augmented.begin(), augmented.end(),
                                 [&](const TimeSeriesRecord& r) { return r.subject_id == b.subject_id; });
    if (it->length() > b.length()) step = it->length() - b.length();
  }
  const auto plans = validation_folds(config, baseline);
  EvalReport report = evaluate_arm(config, baseline, baseline, plans, "baseline", 0, log);
  const auto& test_source = config.augment_train_only ? baseline : augmented;
  report.append(evaluate_arm(config, augmented, test_source, plans, "augmented", step, log));
  return report;
}

EvalReport step_sweep(const ExperimentConfig& config, const std::vector<TimeSeriesRecord>& baseline,
                      const ForecasterCheckpoint& checkpoint, const std::vector<std::size_t>& steps, const LogFn& log) {
  config.validate();
  check_steps(checkpoint, steps);
  const auto plans = validation_folds(config, baseline);
  EvalReport report = evaluate_arm(config, baseline, baseline, plans, "baseline", 0, log);
  for (auto s : steps) {
    const auto augmented = augment_dataset(baseline, checkpoint, s);
    const auto& test_source = config.augment_train_only ? baseline : augmented;
    report.append(evaluate_arm(config, augmented, test_source, plans, "augmented", s, log));
  }
  return report;
}

// ---- reports ----

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  return out;
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void close_out(std::ofstream& out, const std::filesystem::path& path) {
  out.close();
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

}  // namespace

void write_fold_csv(const EvalReport& report, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "model,dataset,step,fold,mae\n";
  for (const auto& r : report.folds) {
    out << r.model << ',' << r.dataset << ',' << r.step << ',' << r.fold << ',' << fmt_double(r.mae) << '\n';
  }
  close_out(out, path);
}

void write_aggregate_csv(const EvalReport& report, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "model,dataset,step,mean_mae,std_mae\n";
  for (const auto& r : report.aggregate) {
    out << r.model << ',' << r.dataset << ',' << r.step << ',' << fmt_double(r.mean_mae) << ','
        << fmt_double(r.std_mae) << '\n';
  }
  close_out(out, path);
}

void write_fold_plan_csv(const std::vector<SplitPlan>& plans, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "fold,subject_id\n";
  for (std::size_t f = 0; f < plans.size(); ++f) {
    for (const auto& id : plans[f].test_subjects) out << f << ',' << id << '\n';
  }
  close_out(out, path);
}

// ---- manifest ----

namespace {

double now_seconds() {
  using namespace std::chrono;
  return duration<double>(steady_clock::now().time_since_epoch()).count();
}

}  // namespace

RunManifest::RunManifest(std::filesystem::path out_dir, std::string command)
    : out_dir_(std::move(out_dir)), command_(std::move(command)) {}

void RunManifest::set_config(json config) { config_ = std::move(config); }

void RunManifest::set_field(const std::string& key, json value) { fields_[key] = std::move(value); }

void RunManifest::add_artifact(const std::string& role, const std::filesystem::path& path) {
  const auto rel = path.lexically_relative(out_dir_);
  const std::string shown = rel.empty() || rel.native().starts_with("..") ? path.generic_string() : rel.generic_string();
  artifacts_.push_back(json{{"role", role}, {"path", shown}, {"fnv1a64", file_digest(path)}});
}

void RunManifest::begin_stage(const std::string& stage) {
  if (!current_.empty()) end_stage();
  current_ = stage;
  stage_start_ = now_seconds();
}

void RunManifest::end_stage() {
  if (current_.empty()) return;
  stages_.push_back(current_);
  seconds_.push_back(now_seconds() - stage_start_);
  current_.clear();
}

void RunManifest::fail(const std::string& message) {
  failed_stage_ = current_.empty() ? "setup" : current_;
  error_ = message;
  end_stage();
}

json RunManifest::to_json() const {
  json j{
      {"command", command_},
      {"config", config_},
      {"stages", stages_},
      {"artifacts", artifacts_},
      {"status", failed_stage_.empty() ? "ok" : "failed"},
  };
  for (const auto& [k, v] : fields_.items()) j[k] = v;
  if (!failed_stage_.empty()) {
    j["failed_stage"] = failed_stage_;
    j["error"] = error_;
  }
  return j;
}

void RunManifest::write() const {
  std::filesystem::create_directories(out_dir_);
  {
    const auto path = out_dir_ / "manifest.json";
    auto out = open_out(path);
    out << to_json().dump(2) << '\n';
    close_out(out, path);
  }
  json t = json::object();
  for (std::size_t i = 0; i < stages_.size(); ++i) t[stages_[i]] = seconds_[i];
  const auto path = out_dir_ / "timings.json";
  auto out = open_out(path);
  out << t.dump(2) << '\n';
  close_out(out, path);
}

// ---- full run ----

ExperimentOutputs run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                                 const LogFn& log) {
  RunManifest manifest(out_dir, "run");
  manifest.set_config(to_json(config));
  ExperimentOutputs outputs;
  try {
    config.validate();
    std::filesystem::create_directories(out_dir);

    manifest.begin_stage("load");
    const auto records = load_records(config);
    if (config.data_path.empty()) {
      const auto p = out_dir / "baseline.tsds";
      save_tsds(records, p);
      manifest.add_artifact("baseline", p);
    }

    manifest.begin_stage("augment");
    outputs.augment = run_augment_stage(config, records, log);
    for (const auto& [mode, res] : outputs.augment.forecasters) {
      const std::string name(to_string(mode));
      const auto ckpt = out_dir / ("forecaster_" + name + ".tsaf");
      const auto loss = out_dir / ("loss_" + name + ".csv");
      save_checkpoint(res.checkpoint, ckpt);
      write_loss_csv(res.log, loss);
      manifest.add_artifact("checkpoint/" + name, ckpt);
      manifest.add_artifact("loss/" + name, loss);
    }
    manifest.set_field("augment_split", json{{"train", outputs.augment.split.train_subjects},
                                             {"test", outputs.augment.split.test_subjects}});

    manifest.begin_stage("validate");
    const auto& ckpt = outputs.augment.forecasters.at(config.augment_mode).checkpoint;
    outputs.report = step_sweep(config, records, ckpt, config.steps, log);

    manifest.begin_stage("report");
    const auto folds = out_dir / "report_folds.csv";
    const auto agg = out_dir / "report_aggregate.csv";
    const auto plan = out_dir / "fold_plan.csv";
    write_fold_csv(outputs.report, folds);
    write_aggregate_csv(outputs.report, agg);
    write_fold_plan_csv(outputs.report.plans, plan);
    manifest.add_artifact("report/folds", folds);
    manifest.add_artifact("report/aggregate", agg);
    manifest.add_artifact("fold_plan", plan);
    manifest.end_stage();
  } catch (const std::exception& e) {
    manifest.fail(e.what());
    manifest.write();
    throw;
  }
  manifest.write();
  return outputs;
}

}  // namespace tsaug
