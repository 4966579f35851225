#pragma once

// Multivariate time-series records and everything that reshapes them before
// a model sees them: CSV/binary I/O, z-scoring, decimation, sliding windows,
// subject-level splits, and the synthetic age-coded generator.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsaug/binary_io.hpp"
#include "tsaug/numerics.hpp"

namespace tsaug {

/// One subject. `series` is channels × time points.
struct TimeSeriesRecord {
  std::string subject_id;
  double age = 0.0;
  double tr_seconds = 1.0;
  Matrix series;

  std::size_t channels() const noexcept { return series.rows(); }
  std::size_t length() const noexcept { return series.cols(); }
};

/// Checks C ≥ 1, T ≥ 1, age > 0, finite samples.
void validate_record(const TimeSeriesRecord& r);

struct WindowGeometry {
  std::size_t window = 24;
  std::size_t input = 20;
  std::size_t stride = 1;

  std::size_t target() const noexcept { return window - input; }
  void validate() const;
};

/// One training instance. Blocks are time-major: rows are time points.
struct WindowSample {
  std::string subject_id;
  std::size_t origin = 0;
  Matrix input;   // L_in × C
  Matrix target;  // L_out × C
};

/// The final L_in points of a record (time × channel), from which the
/// appended tail is forecast.
struct AugmentSeed {
  std::string subject_id;
  Matrix tail_window;
};

struct SplitPlan {
  std::vector<std::string> train_subjects;
  std::vector<std::string> test_subjects;
};

// ---- I/O ----

/// Header `subject_id,age,tr,channel,t0,t1,...`; one row per channel, rows of
/// a subject contiguous and in channel order.
std::vector<TimeSeriesRecord> load_csv(const std::filesystem::path& path);
void save_csv(const std::vector<TimeSeriesRecord>& records, const std::filesystem::path& path);

/// Binary `TSDS` container, little-endian, bit-exact.
void save_tsds(const std::vector<TimeSeriesRecord>& records, const std::filesystem::path& path);
std::vector<TimeSeriesRecord> load_tsds(const std::filesystem::path& path);
std::string encode_tsds(const std::vector<TimeSeriesRecord>& records);
std::vector<TimeSeriesRecord> decode_tsds(const std::string& bytes);

inline constexpr std::uint32_t kTsdsVersion = 1;

// ---- transforms ----

/// Per-channel standardization with population std.
TimeSeriesRecord zscore(const TimeSeriesRecord& record);

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};
/// Per-channel mean and population std; throws on a constant channel.
ChannelStats channel_stats(const TimeSeriesRecord& record);

/// Keeps every `factor`-th sample starting at index 0.
TimeSeriesRecord downsample(const TimeSeriesRecord& record, int factor);

/// Number of windows for a series of length T; 0 when T < window.
std::size_t window_count(std::size_t length, const WindowGeometry& geometry) noexcept;
std::vector<WindowSample> slide_windows(const TimeSeriesRecord& record, const WindowGeometry& geometry = {});
AugmentSeed augment_seed(const TimeSeriesRecord& record, std::size_t input_length);

// ---- splits ----

SplitPlan subject_split(const std::vector<TimeSeriesRecord>& records, double train_fraction, RngStream& rng);
/// Fold i tests on partition i and trains on the rest. Sizes differ by ≤ 1.
std::vector<SplitPlan> kfold_split(const std::vector<TimeSeriesRecord>& records, std::size_t k, RngStream& rng);

std::vector<std::string> subject_ids(const std::vector<TimeSeriesRecord>& records);
/// Records whose ids appear in `ids`, in `ids` order.
std::vector<TimeSeriesRecord> select_subjects(const std::vector<TimeSeriesRecord>& records,
                                              const std::vector<std::string>& ids);

// ---- synthetic data ----

struct SyntheticSpec {
  std::size_t subjects = 100;
  std::size_t channels = 8;
  std::size_t length = 122;
  double tr_seconds = 2.94;
};

inline constexpr double kSyntheticAgeMean = 59.17;
inline constexpr double kSyntheticAgeStd = 4.87;

/// Age ~ Normal(59.17, 4.87) clipped to [40, 80]. Each channel is an AR(2)
/// damped oscillator whose frequency rises and damping falls with age, so
/// age is recoverable from the dynamics. Not a model of fMRI.
std::vector<TimeSeriesRecord> gen_synthetic(const SyntheticSpec& spec, RngStream& rng);

}  // namespace tsaug
