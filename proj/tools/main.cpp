// tsaug command-line interface. Exit codes: 0 success, 1 usage or config
// error, 2 numerical failure. Data paths go to stdout, diagnostics to stderr.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tsaug/pipeline.hpp"

namespace fs = std::filesystem;
using namespace tsaug;

namespace {

constexpr std::size_t kMinLength = 25;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void log_line(const std::string& s) { std::cerr << s << '\n'; }

std::vector<std::size_t> normalize_steps(const std::vector<std::size_t>& steps) {
  std::vector<std::size_t> out;
  std::set<std::size_t> seen;
  for (auto s : steps) {
    if (s == 0) throw UsageError("--steps: 0 is not a valid step count");
    if (!seen.insert(s).second) {
      std::cerr << "warning: duplicate step " << s << " ignored\n";
      continue;
    }
    out.push_back(s);
  }
  return out;
}

std::vector<PredictorKind> parse_models(const std::vector<std::string>& names) {
  std::vector<PredictorKind> out;
  for (const auto& n : names) {
    const auto k = predictor_kind_from_string(n);
    if (std::find(out.begin(), out.end(), k) == out.end()) out.push_back(k);
  }
  return out;
}

std::vector<TimeSeriesRecord> read_dataset(const fs::path& path) {
  if (!fs::exists(path)) throw UsageError("no such file: '" + path.string() + "'");
  if (path.extension() == ".csv") return load_csv(path);
  return load_tsds(path);
}

void write_dataset(const std::vector<TimeSeriesRecord>& records, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (path.extension() == ".csv") {
    save_csv(records, path);
  } else {
    save_tsds(records, path);
  }
}

void require_file(const fs::path& path) {
  if (!fs::exists(path)) throw UsageError("no such file: '" + path.string() + "'");
}

// Options shared by the commands that train predictors.
struct TrainingFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> kfold;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch;
  std::optional<double> lr;
  std::vector<std::string> models;
  bool train_only = false;

  void attach(CLI::App* app, const char* default_models) {
    app->add_option("--config", config, "JSON experiment config; flags override its values");
    app->add_option("--seed", seed, "master seed");
    app->add_option("--kfold", kfold, "number of cross-validation folds");
    app->add_option("--epochs", epochs, "predictor training epochs");
    app->add_option("--batch", batch, "predictor mini-batch size");
    app->add_option("--lr", lr, "predictor learning rate");
    app->add_option("--models", models, std::string("predictors, comma separated (default ") + default_models + ")")
        ->delimiter(',');
    app->add_flag("--augment-train-only", train_only, "score test folds on original series (talstm only)");
  }

  ExperimentConfig resolve(std::vector<PredictorKind> default_models) const {
    ExperimentConfig c;
    c.predictors = std::move(default_models);
    if (!config.empty()) c = load_experiment_config(config, c);
    if (seed) c.seed = *seed;
    if (kfold) c.folds = *kfold;
    if (epochs) c.predictor_train.epochs = *epochs;
    if (batch) c.predictor_train.batch = *batch;
    if (lr) c.predictor_train.lr = *lr;
    if (!models.empty()) c.predictors = parse_models(models);
    if (train_only) c.augment_train_only = true;
    return c;
  }
};

void write_reports(RunManifest& manifest, const EvalReport& report) {
  const auto& dir = manifest.out_dir();
  const auto folds = dir / "report_folds.csv";
  const auto agg = dir / "report_aggregate.csv";
  const auto plan = dir / "fold_plan.csv";
  write_fold_csv(report, folds);
  write_aggregate_csv(report, agg);
  write_fold_plan_csv(report.plans, plan);
  manifest.add_artifact("report/folds", folds);
  manifest.add_artifact("report/aggregate", agg);
  manifest.add_artifact("fold_plan", plan);
  std::cout << folds.string() << '\n' << agg.string() << '\n';
}

// Runs `body` under the manifest, recording the failing stage before rethrowing.
template <typename Body>
void with_manifest(RunManifest& manifest, Body&& body) {
  try {
    body();
    manifest.end_stage();
  } catch (const std::exception& e) {
    manifest.fail(e.what());
    manifest.write();
    throw;
  }
  manifest.write();
  std::cout << (manifest.out_dir() / "manifest.json").string() << '\n';
}

int run(int argc, char** argv) {
  CLI::App app{"Dynamic-forecasting augmentation for multivariate time series"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write a synthetic AR(2) dataset");
  SyntheticSpec spec;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  gen->add_option("--subjects", spec.subjects, "number of subjects")->capture_default_str();
  gen->add_option("--channels", spec.channels, "channels per subject")->capture_default_str();
  gen->add_option("--length", spec.length, "time points per series")->capture_default_str();
  gen->add_option("--tr", spec.tr_seconds, "sampling interval in seconds")->capture_default_str();
  gen->add_option("--seed", gen_seed, "seed")->capture_default_str();
  gen->add_option("--out", gen_out, "output path (.tsds, or .csv)")->required();

  // train-forecaster
  auto* tf = app.add_subcommand("train-forecaster", "train a forecaster on an 80:20 subject split");
  std::string tf_mode, tf_data, tf_config, tf_out, tf_loss;
  std::optional<std::size_t> tf_epochs, tf_batch, tf_hidden;
  std::optional<double> tf_lr, tf_target;
  std::optional<std::uint64_t> tf_seed;
  tf->add_option("--mode", tf_mode, "stateless or recursive")->required()->check(CLI::IsMember({"stateless", "recursive"}));
  tf->add_option("--data", tf_data, "dataset (.tsds or .csv)")->required();
  tf->add_option("--config", tf_config, "JSON experiment config");
  tf->add_option("--out", tf_out, "checkpoint path")->required();
  tf->add_option("--loss", tf_loss, "loss CSV path (default: <out>.loss.csv)");
  tf->add_option("--epochs", tf_epochs, "training epochs");
  tf->add_option("--batch", tf_batch, "mini-batch size");
  tf->add_option("--hidden", tf_hidden, "LSTM hidden units");
  tf->add_option("--lr", tf_lr, "learning rate");
  tf->add_option("--target-mse", tf_target, "stop once test MSE falls below this (0 disables)");
  tf->add_option("--seed", tf_seed, "master seed");

  // augment
  auto* aug = app.add_subcommand("augment", "append forecast points to every series");
  std::string aug_data, aug_ckpt, aug_out;
  std::size_t aug_steps = 0;
  aug->add_option("--data", aug_data, "dataset to extend")->required();
  aug->add_option("--ckpt", aug_ckpt, "forecaster checkpoint")->required();
  aug->add_option("--steps", aug_steps, "points to append")->required();
  aug->add_option("--out", aug_out, "output dataset")->required();

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "paired k-fold comparison of original and extended datasets");
  std::string ev_base, ev_aug, ev_out;
  TrainingFlags ev_flags;
  ev->add_option("--baseline", ev_base, "original dataset")->required();
  ev->add_option("--augmented", ev_aug, "extended dataset")->required();
  ev->add_option("--out", ev_out, "output directory")->required();
  ev_flags.attach(ev, "cnn,cnn-att,talstm");

  // sweep
  auto* sw = app.add_subcommand("sweep", "evaluate a range of augmentation step counts");
  std::string sw_data, sw_ckpt, sw_out;
  std::vector<std::size_t> sw_steps{4, 6, 8, 10, 12, 14};
  TrainingFlags sw_flags;
  sw->add_option("--data", sw_data, "original dataset")->required();
  sw->add_option("--ckpt", sw_ckpt, "forecaster checkpoint")->required();
  sw->add_option("--steps", sw_steps, "step counts, comma separated")->delimiter(',')->capture_default_str();
  sw->add_option("--out", sw_out, "output directory")->required();
  sw_flags.attach(sw, "talstm");

  // run
  auto* rn = app.add_subcommand("run", "full protocol: forecasters, augmentation sweep, validation");
  std::string rn_config, rn_out;
  std::optional<std::uint64_t> rn_seed;
  rn->add_option("--config", rn_config, "JSON experiment config");
  rn->add_option("--seed", rn_seed, "master seed");
  rn->add_option("--out", rn_out, "output directory")->required();

  // verify
  auto* vf = app.add_subcommand("verify", "check TSDS/TSAF integrity and augmentation prefixes");
  std::vector<std::string> vf_files;
  std::vector<std::string> vf_prefix;
  vf->add_option("files", vf_files, "TSDS or TSAF files to check");
  vf->add_option("--prefix", vf_prefix, "ORIGINAL EXTENDED: check the extension is append-only")->expected(2);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  if (gen->parsed()) {
    if (spec.length < kMinLength) {
      throw UsageError("--length " + std::to_string(spec.length) + " is below the minimum " + std::to_string(kMinLength));
    }
    if (spec.subjects < 1 || spec.channels < 1) throw UsageError("--subjects and --channels must be >= 1");
    if (!(spec.tr_seconds > 0.0)) throw UsageError("--tr must be > 0");
    RngStream rng(gen_seed, "data/synthetic");
    write_dataset(gen_synthetic(spec, rng), gen_out);
    std::cout << gen_out << '\n';
    return 0;
  }

  if (tf->parsed()) {
    require_file(tf_data);
    ExperimentConfig c;
    if (!tf_config.empty()) c = load_experiment_config(tf_config, c);
    const auto mode = forecast_mode_from_string(tf_mode);
    if (tf_seed) c.seed = *tf_seed;
    if (tf_epochs) c.forecaster.epochs = *tf_epochs;
    if (tf_batch) c.forecaster.batch = *tf_batch;
    if (tf_hidden) c.forecaster.hidden = *tf_hidden;
    if (tf_lr) c.forecaster.lr = *tf_lr;
    if (tf_target) c.forecaster.target_test_mse = *tf_target;
    c.data_path = tf_data;
    c.forecaster_modes = {mode};
    c.augment_mode = mode;
    const auto records = read_dataset(tf_data);
    const auto result = run_augment_stage(c, records, log_line);
    const auto& trained = result.forecasters.at(mode);
    const fs::path out(tf_out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    const fs::path loss = tf_loss.empty() ? fs::path(tf_out + ".loss.csv") : fs::path(tf_loss);
    save_checkpoint(trained.checkpoint, out);
    write_loss_csv(trained.log, loss);
    std::cout << out.string() << '\n' << loss.string() << '\n';
    return 0;
  }

  if (aug->parsed()) {
    if (aug_steps == 0) throw UsageError("--steps must be >= 1");
    require_file(aug_ckpt);
    const auto records = read_dataset(aug_data);
    const auto ckpt = load_checkpoint(aug_ckpt);
    write_dataset(augment_dataset(records, ckpt, aug_steps), aug_out);
    std::cout << aug_out << '\n';
    return 0;
  }

  if (ev->parsed()) {
    auto c = ev_flags.resolve({PredictorKind::cnn, PredictorKind::cnn_attention, PredictorKind::talstm});
    c.data_path = ev_base;
    const auto baseline = read_dataset(ev_base);
    const auto augmented = read_dataset(ev_aug);
    RunManifest manifest(ev_out, "evaluate");
    manifest.set_config(to_json(c));
    fs::create_directories(ev_out);
    with_manifest(manifest, [&] {
      manifest.begin_stage("validate");
      manifest.set_field("inputs", {{"baseline", file_digest(ev_base)}, {"augmented", file_digest(ev_aug)}});
      if (baseline.size() < c.folds) {
        throw UsageError("N < k: " + std::to_string(baseline.size()) + " subjects for " + std::to_string(c.folds) +
                         " folds");
      }
      const auto report = run_validation(c, baseline, augmented, log_line);
      manifest.begin_stage("report");
      write_reports(manifest, report);
    });
    return 0;
  }

  if (sw->parsed()) {
    auto c = sw_flags.resolve({PredictorKind::talstm});
    c.data_path = sw_data;
    c.steps = normalize_steps(sw_steps);
    require_file(sw_ckpt);
    const auto baseline = read_dataset(sw_data);
    const auto ckpt = load_checkpoint(sw_ckpt);
    check_steps(ckpt, c.steps);
    c.augment_mode = ckpt.mode;
    RunManifest manifest(sw_out, "sweep");
    manifest.set_config(to_json(c));
    fs::create_directories(sw_out);
    with_manifest(manifest, [&] {
      manifest.begin_stage("validate");
      manifest.set_field("inputs", {{"data", file_digest(sw_data)}, {"checkpoint", file_digest(sw_ckpt)}});
      if (baseline.size() < c.folds) {
        throw UsageError("N < k: " + std::to_string(baseline.size()) + " subjects for " + std::to_string(c.folds) +
                         " folds");
      }
      const auto report = step_sweep(c, baseline, ckpt, c.steps, log_line);
      manifest.begin_stage("report");
      write_reports(manifest, report);
    });
    return 0;
  }

  if (rn->parsed()) {
    ExperimentConfig c;
    if (!rn_config.empty()) c = load_experiment_config(rn_config, c);
    if (rn_seed) c.seed = *rn_seed;
    c.steps = normalize_steps(c.steps);
    run_experiment(c, rn_out, log_line);
    std::cout << (fs::path(rn_out) / "manifest.json").string() << '\n';
    return 0;
  }

  if (vf->parsed()) {
    if (vf_files.empty() && vf_prefix.empty()) throw UsageError("verify: nothing to check");
    for (const auto& f : vf_files) {
      require_file(f);
      const std::string bytes = read_file(f);
      if (bytes.starts_with("TSDS")) {
        const auto recs = decode_tsds(bytes);
        std::cout << "ok " << f << " TSDS " << recs.size() << " subjects\n";
      } else if (bytes.starts_with("TSAF")) {
        const auto c = decode_tsaf(bytes);
        if (c.kind == ModelKind::stateless || c.kind == ModelKind::recursive) {
          forecaster_from_container(c);
        } else {
          predictor_from_container(c);
        }
        std::cout << "ok " << f << " TSAF " << to_string(c.kind) << ' ' << c.tensors.size() << " tensors\n";
      } else {
        throw FormatError("'" + f + "' is neither a TSDS nor a TSAF file");
      }
    }
    if (!vf_prefix.empty()) {
      const auto original = read_dataset(vf_prefix[0]);
      const auto extended = read_dataset(vf_prefix[1]);
      require_same_subjects(original, extended);
      for (const auto& o : original) {
        const auto& e = *std::find_if(extended.begin(), extended.end(),
                                      [&](const TimeSeriesRecord& r) { return r.subject_id == o.subject_id; });
        if (e.channels() != o.channels() || e.length() < o.length()) {
          throw FormatError("subject '" + o.subject_id + "': extended series is not longer than the original");
        }
        for (std::size_t ch = 0; ch < o.channels(); ++ch) {
          for (std::size_t t = 0; t < o.length(); ++t) {
            if (std::bit_cast<std::uint64_t>(o.series(ch, t)) != std::bit_cast<std::uint64_t>(e.series(ch, t))) {
              throw FormatError("subject '" + o.subject_id + "': prefix differs at channel " + std::to_string(ch) +
                                ", t=" + std::to_string(t));
            }
          }
        }
      }
      std::cout << "ok prefix " << vf_prefix[0] << " -> " << vf_prefix[1] << ' ' << original.size() << " subjects\n";
    }
    return 0;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const NumericalError& e) {
    std::cerr << "error: numerical failure: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
