#include "tsaug/dataset.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "tsaug/binary_io.hpp"

namespace tsaug {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

[[noreturn]] void csv_error(const std::filesystem::path& path, std::size_t line, const std::string& what) {
  throw FormatError(path.string() + ":" + std::to_string(line) + ": " + what);
}

double parse_cell(const std::string& text, const std::filesystem::path& path, std::size_t line, std::size_t column) {
  const std::string cell = trim(text);
  double value = 0.0;
  const auto* first = cell.data();
  const auto* last = cell.data() + cell.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (cell.empty() || ec != std::errc() || ptr != last) {
    csv_error(path, line, "column " + std::to_string(column) + ": non-numeric cell '" + cell + "'");
  }
  if (!std::isfinite(value)) {
    csv_error(path, line, "column " + std::to_string(column) + ": non-finite value '" + cell + "'");
  }
  return value;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

void validate_record(const TimeSeriesRecord& r) {
  if (r.channels() == 0 || r.length() == 0) {
    throw std::invalid_argument("record '" + r.subject_id + "': empty series " + r.series.shape_string());
  }
  if (!(r.age > 0.0) || !std::isfinite(r.age)) {
    throw std::invalid_argument("record '" + r.subject_id + "': age must be positive and finite");
  }
  if (!(r.tr_seconds > 0.0) || !std::isfinite(r.tr_seconds)) {
    throw std::invalid_argument("record '" + r.subject_id + "': tr must be positive and finite");
  }
  require_finite(r.series, "record '" + r.subject_id + "'");
}

void WindowGeometry::validate() const {
  if (stride < 1) throw std::invalid_argument("window stride must be >= 1");
  if (input < 1 || input >= window) {
    throw std::invalid_argument("window geometry: need 1 <= input < window (got input " + std::to_string(input) +
                                ", window " + std::to_string(window) + ")");
  }
}

// ---- CSV ----

std::vector<TimeSeriesRecord> load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");

  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) csv_error(path, 1, "missing header");
  ++line_no;
  const auto header = split_csv_line(line);
  if (header.size() < 5 || trim(header[0]) != "subject_id" || trim(header[1]) != "age" || trim(header[2]) != "tr" ||
      trim(header[3]) != "channel") {
    csv_error(path, line_no, "header must start with subject_id,age,tr,channel,t0");
  }
  const std::size_t length = header.size() - 4;

  std::vector<TimeSeriesRecord> records;
  std::unordered_set<std::string> seen;
  std::vector<std::vector<double>> rows;
  std::size_t channels = 0;

  auto finish_subject = [&](std::size_t at_line) {
    if (records.empty() || rows.empty()) return;
    auto& rec = records.back();
    if (channels == 0) {
      channels = rows.size();
    } else if (rows.size() != channels) {
      csv_error(path, at_line,
                "subject '" + rec.subject_id + "' has " + std::to_string(rows.size()) + " channels, expected " +
                    std::to_string(channels));
    }
    Matrix m(rows.size(), length);
    for (std::size_t c = 0; c < rows.size(); ++c) std::copy(rows[c].begin(), rows[c].end(), m.row(c).begin());
    rec.series = std::move(m);
    rows.clear();
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      csv_error(path, line_no,
                "ragged row: " + std::to_string(cells.size()) + " cells, header has " + std::to_string(header.size()));
    }
    const std::string id = trim(cells[0]);
    if (id.empty()) csv_error(path, line_no, "empty subject_id");
    const double age = parse_cell(cells[1], path, line_no, 1);
    const double tr = parse_cell(cells[2], path, line_no, 2);
    const double channel = parse_cell(cells[3], path, line_no, 3);

    if (records.empty() || records.back().subject_id != id) {
      finish_subject(line_no);
      if (!seen.insert(id).second) csv_error(path, line_no, "duplicate or non-contiguous subject_id '" + id + "'");
      records.push_back(TimeSeriesRecord{id, age, tr, {}});
    } else if (records.back().age != age || records.back().tr_seconds != tr) {
      csv_error(path, line_no, "age/tr differ between rows of subject '" + id + "'");
    }
    if (channel != static_cast<double>(rows.size())) {
      csv_error(path, line_no, "expected channel " + std::to_string(rows.size()) + " for subject '" + id + "'");
    }
    std::vector<double> values(length);
    for (std::size_t t = 0; t < length; ++t) values[t] = parse_cell(cells[4 + t], path, line_no, 4 + t);
    rows.push_back(std::move(values));
  }
  finish_subject(line_no);
  if (records.empty()) csv_error(path, line_no, "no subjects");
  for (const auto& r : records) validate_record(r);
  return records;
}

void save_csv(const std::vector<TimeSeriesRecord>& records, const std::filesystem::path& path) {
  if (records.empty()) throw std::invalid_argument("save_csv: no records");
  const std::size_t length = records.front().length();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << "subject_id,age,tr,channel";
  for (std::size_t t = 0; t < length; ++t) out << ",t" << t;
  out << '\n';
  for (const auto& r : records) {
    if (r.length() != length) throw std::invalid_argument("save_csv: records differ in length");
    for (std::size_t c = 0; c < r.channels(); ++c) {
      out << r.subject_id << ',' << format_double(r.age) << ',' << format_double(r.tr_seconds) << ',' << c;
      for (double v : r.series.row(c)) out << ',' << format_double(v);
      out << '\n';
    }
  }
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

// ---- TSDS ----

std::string encode_tsds(const std::vector<TimeSeriesRecord>& records) {
  ByteWriter w;
  w.raw("TSDS");
  w.u32(kTsdsVersion);
  w.u32(static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    w.str(r.subject_id);
    w.f64(r.age);
    w.f64(r.tr_seconds);
    w.u32(static_cast<std::uint32_t>(r.channels()));
    w.u32(static_cast<std::uint32_t>(r.length()));
    for (double v : r.series.values()) w.f64(v);
  }
  return w.take();
}

std::vector<TimeSeriesRecord> decode_tsds(const std::string& bytes) {
  ByteReader rd(bytes, "TSDS");
  if (rd.raw(4) != "TSDS") throw FormatError("TSDS: bad magic");
  const auto version = rd.u32();
  if (version != kTsdsVersion) throw FormatError("TSDS: unsupported version " + std::to_string(version));
  const auto count = rd.u32();
  std::vector<TimeSeriesRecord> records;
  records.reserve(std::min<std::uint32_t>(count, 1u << 16));
  for (std::uint32_t i = 0; i < count; ++i) {
    TimeSeriesRecord r;
    r.subject_id = rd.str();
    r.age = rd.f64();
    r.tr_seconds = rd.f64();
    const std::size_t c = rd.u32();
    const std::size_t t = rd.u32();
    rd.require(c * t * 8, "series of subject '" + r.subject_id + "'");
    Matrix m(c, t);
    for (double& v : m.values()) v = rd.f64();
    r.series = std::move(m);
    records.push_back(std::move(r));
  }
  if (!rd.at_end()) throw FormatError("TSDS: " + std::to_string(rd.remaining()) + " trailing bytes");
  return records;
}

void save_tsds(const std::vector<TimeSeriesRecord>& records, const std::filesystem::path& path) {
  write_file(path, encode_tsds(records));
}

std::vector<TimeSeriesRecord> load_tsds(const std::filesystem::path& path) {
  auto records = decode_tsds(read_file(path));
  for (const auto& r : records) validate_record(r);
  return records;
}

// ---- transforms ----

ChannelStats channel_stats(const TimeSeriesRecord& record) {
  ChannelStats s;
  const std::size_t len = record.length();
  if (len == 0) throw std::invalid_argument("channel_stats: empty series");
  for (std::size_t c = 0; c < record.channels(); ++c) {
    const auto row = record.series.row(c);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(len);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(len);
    if (!(var > 0.0)) {
      throw std::invalid_argument("zscore: channel " + std::to_string(c) + " of subject '" + record.subject_id +
                                  "' is constant");
    }
    s.mean.push_back(mean);
    s.stddev.push_back(std::sqrt(var));
  }
  return s;
}

TimeSeriesRecord zscore(const TimeSeriesRecord& record) {
  const auto stats = channel_stats(record);
  TimeSeriesRecord out = record;
  for (std::size_t c = 0; c < record.channels(); ++c) {
    for (double& v : out.series.row(c)) v = (v - stats.mean[c]) / stats.stddev[c];
  }
  return out;
}

TimeSeriesRecord downsample(const TimeSeriesRecord& record, int factor) {
  if (factor <= 0) throw std::invalid_argument("downsample: factor must be >= 1, got " + std::to_string(factor));
  const auto f = static_cast<std::size_t>(factor);
  const std::size_t new_len = (record.length() + f - 1) / f;
  TimeSeriesRecord out{record.subject_id, record.age, record.tr_seconds * static_cast<double>(factor),
                       Matrix(record.channels(), new_len)};
  for (std::size_t c = 0; c < record.channels(); ++c)
    for (std::size_t t = 0; t < new_len; ++t) out.series(c, t) = record.series(c, t * f);
  return out;
}

std::size_t window_count(std::size_t length, const WindowGeometry& g) noexcept {
  if (length < g.window || g.stride == 0) return 0;
  return (length - g.window) / g.stride + 1;
}

std::vector<WindowSample> slide_windows(const TimeSeriesRecord& record, const WindowGeometry& g) {
  g.validate();
  if (record.length() < g.window) {
    throw std::invalid_argument("series shorter than window: subject '" + record.subject_id + "' has " +
                                std::to_string(record.length()) + " points, window is " + std::to_string(g.window));
  }
  const std::size_t n = window_count(record.length(), g);
  const std::size_t channels = record.channels();
  std::vector<WindowSample> out;
  out.reserve(n);
  for (std::size_t w = 0; w < n; ++w) {
    const std::size_t origin = w * g.stride;
    WindowSample s{record.subject_id, origin, Matrix(g.input, channels), Matrix(g.target(), channels)};
    for (std::size_t t = 0; t < g.window; ++t) {
      for (std::size_t c = 0; c < channels; ++c) {
        const double v = record.series(c, origin + t);
        if (t < g.input) {
          s.input(t, c) = v;
        } else {
          s.target(t - g.input, c) = v;
        }
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

AugmentSeed augment_seed(const TimeSeriesRecord& record, std::size_t input_length) {
  if (record.length() < input_length) {
    throw std::invalid_argument("subject '" + record.subject_id + "' has " + std::to_string(record.length()) +
                                " points, fewer than the forecaster input length " + std::to_string(input_length));
  }
  AugmentSeed seed{record.subject_id, Matrix(input_length, record.channels())};
  const std::size_t start = record.length() - input_length;
  for (std::size_t t = 0; t < input_length; ++t)
    for (std::size_t c = 0; c < record.channels(); ++c) seed.tail_window(t, c) = record.series(c, start + t);
  return seed;
}

// ---- splits ----

std::vector<std::string> subject_ids(const std::vector<TimeSeriesRecord>& records) {
  std::vector<std::string> ids;
  ids.reserve(records.size());
  for (const auto& r : records) ids.push_back(r.subject_id);
  return ids;
}

std::vector<TimeSeriesRecord> select_subjects(const std::vector<TimeSeriesRecord>& records,
                                              const std::vector<std::string>& ids) {
  std::map<std::string, const TimeSeriesRecord*> by_id;
  for (const auto& r : records) by_id.emplace(r.subject_id, &r);
  std::vector<TimeSeriesRecord> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw std::invalid_argument("unknown subject '" + id + "'");
    out.push_back(*it->second);
  }
  return out;
}

namespace {
void require_unique_ids(const std::vector<std::string>& ids) {
  std::set<std::string> uniq(ids.begin(), ids.end());
  if (uniq.size() != ids.size()) throw std::invalid_argument("duplicate subject ids in record set");
}
}  // namespace

SplitPlan subject_split(const std::vector<TimeSeriesRecord>& records, double train_fraction, RngStream& rng) {
  const std::size_t n = records.size();
  if (n < 2) throw std::invalid_argument("subject_split: need at least 2 subjects, got " + std::to_string(n));
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw std::invalid_argument("subject_split: train fraction must lie in (0, 1)");
  }
  auto ids = subject_ids(records);
  require_unique_ids(ids);
  rng.shuffle(ids);
  auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  SplitPlan plan;
  plan.train_subjects.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  plan.test_subjects.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  return plan;
}

std::vector<SplitPlan> kfold_split(const std::vector<TimeSeriesRecord>& records, std::size_t k, RngStream& rng) {
  const std::size_t n = records.size();
  if (k < 2) throw std::invalid_argument("kfold_split: k must be >= 2");
  if (n < k) {
    throw std::invalid_argument("kfold_split: N < k (" + std::to_string(n) + " subjects, " + std::to_string(k) +
                                " folds)");
  }
  auto ids = subject_ids(records);
  require_unique_ids(ids);
  rng.shuffle(ids);

  std::vector<std::vector<std::string>> parts(k);
  const std::size_t base = n / k;
  const std::size_t extra = n % k;
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = base + (f < extra ? 1 : 0);
    parts[f].assign(ids.begin() + static_cast<std::ptrdiff_t>(pos),
                    ids.begin() + static_cast<std::ptrdiff_t>(pos + size));
    pos += size;
  }

  std::vector<SplitPlan> plans(k);
  for (std::size_t f = 0; f < k; ++f) {
    plans[f].test_subjects = parts[f];
    for (std::size_t g = 0; g < k; ++g) {
      if (g == f) continue;
      plans[f].train_subjects.insert(plans[f].train_subjects.end(), parts[g].begin(), parts[g].end());
    }
  }
  return plans;
}

// ---- synthetic ----

std::vector<TimeSeriesRecord> gen_synthetic(const SyntheticSpec& spec, RngStream& rng) {
  if (spec.subjects < 1 || spec.channels < 1 || spec.length < 25) {
    throw std::invalid_argument("gen_synthetic: need subjects >= 1, channels >= 1, length >= 25");
  }
  if (!(spec.tr_seconds > 0.0)) throw std::invalid_argument("gen_synthetic: tr must be positive");

  // Channel-level oscillator parameters are shared by every subject.
  RngStream channel_rng = rng.derive("channels");
  std::vector<double> base_freq(spec.channels);
  std::vector<double> base_radius(spec.channels);
  for (std::size_t c = 0; c < spec.channels; ++c) {
    base_freq[c] = channel_rng.uniform(0.25, 0.85);
    base_radius[c] = channel_rng.uniform(0.88, 0.95);
  }

  constexpr std::size_t kBurnIn = 64;
  std::vector<TimeSeriesRecord> out;
  out.reserve(spec.subjects);
  const int width = static_cast<int>(std::to_string(spec.subjects).size());
  for (std::size_t s = 0; s < spec.subjects; ++s) {
    RngStream subject_rng = rng.derive("subject-" + std::to_string(s));
    const double age = std::clamp(subject_rng.normal(kSyntheticAgeMean, kSyntheticAgeStd), 40.0, 80.0);
    const double z = (age - kSyntheticAgeMean) / kSyntheticAgeStd;

    std::string id = std::to_string(s);
    id.insert(0, static_cast<std::size_t>(std::max(0, width - static_cast<int>(id.size()))), '0');
    TimeSeriesRecord rec{"sub-" + id, age, spec.tr_seconds, Matrix(spec.channels, spec.length)};

    for (std::size_t c = 0; c < spec.channels; ++c) {
      const double freq = std::clamp(base_freq[c] * (1.0 + 0.12 * z) + 0.01 * subject_rng.normal(), 0.05, 2.5);
      const double radius = std::clamp(base_radius[c] - 0.015 * z, 0.7, 0.985);
      const double a1 = 2.0 * radius * std::cos(freq);
      const double a2 = -radius * radius;
      double x1 = 0.0;
      double x2 = 0.0;
      for (std::size_t t = 0; t < kBurnIn + spec.length; ++t) {
        const double x = a1 * x1 + a2 * x2 + subject_rng.normal();
        x2 = x1;
        x1 = x;
        if (t >= kBurnIn) rec.series(c, t - kBurnIn) = x;
      }
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace tsaug
