#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dcsm/errors.hpp"
#include "dcsm/io.hpp"
#include "dcsm/rng.hpp"

namespace dcsm {

struct SurvivalRecord {
  std::vector<double> features;
  double time = 0.0;
  bool event = false;  // true = event observed, false = right-censored
};

// Per-feature affine transform plus the time divisor, recorded when a
// training split is standardized and replayed onto held-out data.
struct Standardization {
  std::vector<double> mean;
  std::vector<double> stddev;
  double time_scale = 1.0;
};

struct SurvivalDataset {
  std::vector<SurvivalRecord> records;
  std::vector<std::string> feature_names;
  Standardization transform;  // identity until standardize_and_scale
  bool standardized = false;

  std::size_t size() const { return records.size(); }

  std::size_t dim() const {
    return records.empty() ? feature_names.size() : records.front().features.size();
  }

  std::size_t event_count() const {
    std::size_t n = 0;
    for (const auto& r : records) n += r.event ? 1 : 0;
    return n;
  }

  std::vector<double> times() const {
    std::vector<double> t(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) t[i] = records[i].time;
    return t;
  }

  std::vector<std::uint8_t> events() const {
    std::vector<std::uint8_t> e(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) e[i] = records[i].event ? 1 : 0;
    return e;
  }
};

struct FoldSplit {
  int fold_count = 0;
  std::vector<int> assignments;  // per-record fold index in [0, fold_count)
};

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      cells.push_back(line.substr(start));
      break;
    }
    cells.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return cells;
}

inline bool parse_event_cell(std::string_view cell, bool& out) {
  std::string_view t = trim(cell);
  if (t == "true") {
    out = true;
    return true;
  }
  if (t == "false") {
    out = false;
    return true;
  }
  double v = 0.0;
  if (!parse_double(t, v)) return false;
  if (v == 0.0) {
    out = false;
    return true;
  }
  if (v == 1.0) {
    out = true;
    return true;
  }
  return false;
}

}  // namespace detail

// Loads a UTF-8, comma-separated, header-first CSV. Every column other than
// the named time/event columns is taken as a numeric feature, in header
// order. Row numbers in error messages are 1-based data rows (header
// excluded). Record i corresponds to data row i.
inline SurvivalDataset load_csv(const std::filesystem::path& path,
                                const std::string& time_column = "time",
                                const std::string& event_column = "event") {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw DataError("empty file: " + path.string());

  auto header = detail::split_csv_line(line);
  int time_col = -1;
  int event_col = -1;
  std::vector<int> feature_cols;
  std::vector<std::string> feature_names;
  for (std::size_t c = 0; c < header.size(); ++c) {
    std::string name(trim(header[c]));
    if (name == time_column || name == event_column) {
      int& slot = name == time_column ? time_col : event_col;
      if (slot >= 0) throw DataError(path.string() + ": duplicate column '" + name + "'");
      slot = static_cast<int>(c);
    } else {
      feature_cols.push_back(static_cast<int>(c));
      feature_names.push_back(name);
    }
  }
  if (time_col < 0) throw DataError(path.string() + ": missing column '" + time_column + "'");
  if (event_col < 0) throw DataError(path.string() + ": missing column '" + event_column + "'");

  SurvivalDataset ds;
  ds.feature_names = std::move(feature_names);

  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size()) {
      throw DataError(path.string() + ": row " + std::to_string(row) + " has " +
                      std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(header.size()));
    }
    SurvivalRecord rec;
    rec.features.resize(feature_cols.size());
    for (std::size_t j = 0; j < feature_cols.size(); ++j) {
      double v = 0.0;
      if (!parse_double(cells[feature_cols[j]], v)) {
        throw DataError(path.string() + ": row " + std::to_string(row) + ", column '" +
                        ds.feature_names[j] + "': cannot parse '" +
                        std::string(trim(cells[feature_cols[j]])) + "'");
      }
      if (!std::isfinite(v)) {
        throw DataError(path.string() + ": row " + std::to_string(row) + ", column '" +
                        ds.feature_names[j] + "': non-finite value");
      }
      rec.features[j] = v;
    }
    double t = 0.0;
    if (!parse_double(cells[time_col], t) || !std::isfinite(t)) {
      throw DataError(path.string() + ": row " + std::to_string(row) + ", column '" +
                      time_column + "': cannot parse '" + std::string(trim(cells[time_col])) + "'");
    }
    if (t < 0.0) {
      throw DataError(path.string() + ": row " + std::to_string(row) + ", column '" +
                      time_column + "': time must be nonnegative");
    }
    rec.time = t;
    bool ev = false;
    if (!detail::parse_event_cell(cells[event_col], ev)) {
      throw DataError(path.string() + ": row " + std::to_string(row) + ", column '" +
                      event_column + "': event must be 0 or 1");
    }
    rec.event = ev;
    ds.records.push_back(std::move(rec));
  }
  if (ds.records.empty()) throw DataError(path.string() + ": no data rows");
  return ds;
}

// Replays a recorded transform onto raw data: zero times floored to
// 1e-9 * time_scale, times divided by time_scale, features centered and
// scaled per column. Held-out times may map above 1.
inline SurvivalDataset apply_transform(const SurvivalDataset& raw, const Standardization& tf) {
  if (raw.dim() != tf.mean.size()) {
    throw DataError("apply_transform: dataset has " + std::to_string(raw.dim()) +
                    " features, transform expects " + std::to_string(tf.mean.size()));
  }
  SurvivalDataset out;
  out.feature_names = raw.feature_names;
  out.transform = tf;
  out.standardized = true;
  out.records.reserve(raw.size());
  for (const auto& r : raw.records) {
    SurvivalRecord rec;
    rec.features.resize(r.features.size());
    for (std::size_t j = 0; j < r.features.size(); ++j) {
      rec.features[j] = (r.features[j] - tf.mean[j]) / tf.stddev[j];
    }
    double t = r.time;
    if (t == 0.0) t = 1e-9 * tf.time_scale;
    rec.time = t / tf.time_scale;
    rec.event = r.event;
    out.records.push_back(std::move(rec));
  }
  return out;
}

// Standardizes features to zero mean / unit std (population convention, std
// floored at 1e-8) and scales times by the max time of this dataset, so the
// largest stored time is exactly 1. The statistics are recorded for replay.
inline SurvivalDataset standardize_and_scale(const SurvivalDataset& ds) {
  if (ds.standardized) throw DataError("dataset is already standardized");
  const std::size_t n = ds.size();
  if (n < 2) throw DataError("standardize_and_scale requires at least 2 records");
  const std::size_t d = ds.dim();

  Standardization tf;
  tf.mean.assign(d, 0.0);
  tf.stddev.assign(d, 0.0);
  for (const auto& r : ds.records) {
    for (std::size_t j = 0; j < d; ++j) tf.mean[j] += r.features[j];
  }
  for (std::size_t j = 0; j < d; ++j) tf.mean[j] /= static_cast<double>(n);
  for (const auto& r : ds.records) {
    for (std::size_t j = 0; j < d; ++j) {
      const double c = r.features[j] - tf.mean[j];
      tf.stddev[j] += c * c;
    }
  }
  for (std::size_t j = 0; j < d; ++j) {
    tf.stddev[j] = std::max(std::sqrt(tf.stddev[j] / static_cast<double>(n)), 1e-8);
  }

  double max_time = 0.0;
  for (const auto& r : ds.records) {
    if (r.time < 0.0) throw DataError("standardize_and_scale: negative time");
    max_time = std::max(max_time, r.time);
  }
  if (max_time <= 0.0) throw DataError("standardize_and_scale: all times are zero");
  tf.time_scale = max_time;

  return apply_transform(ds, tf);
}

inline SurvivalDataset subset(const SurvivalDataset& ds, std::span<const int> indices) {
  SurvivalDataset out;
  out.feature_names = ds.feature_names;
  out.transform = ds.transform;
  out.standardized = ds.standardized;
  out.records.reserve(indices.size());
  for (int i : indices) out.records.push_back(ds.records.at(static_cast<std::size_t>(i)));
  return out;
}

// Seeded shuffled partition into fold_count folds whose sizes differ by at
// most one; the first (N mod fold_count) folds take the extra record.
inline FoldSplit kfold(const SurvivalDataset& ds, int fold_count, std::uint64_t seed) {
  const int n = static_cast<int>(ds.size());
  if (fold_count < 2 || fold_count > n) {
    throw DataError("fold_count must be in [2, " + std::to_string(n) + "], got " +
                    std::to_string(fold_count));
  }
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  rng.shuffle(perm);

  FoldSplit split;
  split.fold_count = fold_count;
  split.assignments.assign(n, 0);
  const int base = n / fold_count;
  const int rem = n % fold_count;
  int pos = 0;
  for (int f = 0; f < fold_count; ++f) {
    const int len = base + (f < rem ? 1 : 0);
    for (int k = 0; k < len; ++k) split.assignments[perm[pos++]] = f;
  }
  return split;
}

inline std::vector<int> fold_members(const FoldSplit& split, int fold) {
  std::vector<int> out;
  for (std::size_t i = 0; i < split.assignments.size(); ++i) {
    if (split.assignments[i] == fold) out.push_back(static_cast<int>(i));
  }
  return out;
}

inline std::vector<int> fold_complement(const FoldSplit& split, int fold) {
  std::vector<int> out;
  for (std::size_t i = 0; i < split.assignments.size(); ++i) {
    if (split.assignments[i] != fold) out.push_back(static_cast<int>(i));
  }
  return out;
}

// Writes the dataset in the same schema load_csv reads: feature columns in
// order, then time, then event as 0/1.
inline void write_csv(const SurvivalDataset& ds, const std::filesystem::path& path) {
  AtomicFile file(path);
  auto& out = file.stream();
  std::string line;
  for (std::size_t j = 0; j < ds.feature_names.size(); ++j) {
    if (j > 0) line += ',';
    line += ds.feature_names[j];
  }
  line += ",time,event\n";
  out << line;
  for (const auto& r : ds.records) {
    line.clear();
    for (std::size_t j = 0; j < r.features.size(); ++j) {
      if (j > 0) line += ',';
      append_double(line, r.features[j]);
    }
    line += ',';
    append_double(line, r.time);
    line += r.event ? ",1\n" : ",0\n";
    out << line;
  }
  file.commit();
}

}  // namespace dcsm
