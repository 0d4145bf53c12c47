#pragma once
// Spatial-temporal records: CSV ingestion, a synthetic generator following the
// stream-temperature feature schema, temporal / region splits, per-variable
// normalization and multi-granularity history windows.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace lite {

struct FeatureSchema {
  std::vector<std::string> names;
  std::vector<std::string> units;
  std::string target_name;

  std::size_t size() const { return names.size(); }
  /// Index of a feature by name; throws DataError when unknown.
  std::size_t index_of(const std::string& name) const;
  void validate() const;

  /// Eight meteorological drivers with a water-temperature target.
  static FeatureSchema default_schema();
};

struct Record {
  std::string region_id;
  std::int64_t day_index = 0;  // negative only for pad records
  std::vector<double> features;
  std::vector<bool> feature_present;
  std::optional<double> target;

  std::size_t absent_count() const;
  static Record pad(std::string region, std::int64_t day, std::size_t n_features);
};

/// Per-variable (mean, std) for the K features followed by the target.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;

  double normalize(std::size_t var, double x) const { return (x - mean[var]) / std[var]; }
  double denormalize(std::size_t var, double z) const { return z * std[var] + mean[var]; }
  std::size_t target_index() const { return mean.size() - 1; }
};

/// Z-normalizes a series with one variable's statistics.
std::vector<double> znormalize(const std::vector<double>& series, double mean, double std);

/// Statistics of a single series (population convention, std floored to 1 when
/// fewer than two distinct values are present).
std::pair<double, double> series_stats(const std::vector<double>& series);

class Dataset {
 public:
  Dataset() = default;
  Dataset(FeatureSchema schema, std::vector<Record> records, std::int64_t total_days);

  const FeatureSchema& schema() const { return schema_; }
  const std::vector<Record>& records() const { return records_; }
  const std::vector<std::string>& regions() const { return regions_; }
  std::int64_t total_days() const { return total_days_; }
  const NormStats& norm_stats() const { return stats_; }

  const Record* find(const std::string& region, std::int64_t day) const;

  /// Records eligible as prediction anchors (current day). Defaults to all.
  const std::vector<std::size_t>& anchors() const { return anchors_; }
  /// Anchors that carry an observed target.
  std::vector<std::size_t> target_anchors() const;

  void set_anchors(std::vector<std::size_t> anchors) { anchors_ = std::move(anchors); }
  void set_norm_stats(NormStats stats) { stats_ = std::move(stats); }
  /// Recomputes statistics from present values of anchor records.
  NormStats compute_norm_stats() const;

  /// Copy with the given features forced absent in every record.
  Dataset with_hidden_features(const std::vector<std::size_t>& features) const;

  /// Stable content hash (hex) over schema, records, anchors and statistics.
  std::string content_hash() const;

 private:
  FeatureSchema schema_;
  std::vector<Record> records_;
  std::vector<std::string> regions_;
  std::int64_t total_days_ = 0;
  std::map<std::pair<std::string, std::int64_t>, std::size_t> index_;
  std::vector<std::size_t> anchors_;
  NormStats stats_;
};

Dataset load_csv(const std::string& path, const FeatureSchema& schema);
void write_csv(const Dataset& ds, const std::string& path);

struct ShiftSpec {
  std::vector<std::string> features;
  std::int64_t after_day = 0;
  double delta = 0.0;
};

struct SyntheticSpec {
  std::uint64_t seed = 7;
  std::size_t n_regions = 4;
  std::int64_t total_days = 800;
  double missing_rate = 0.2;
  // Base probability that a (region, day) carries a target observation; it
  // decreases linearly to half this value across regions.
  double target_rate = 0.5;
  std::optional<ShiftSpec> shift;
};

Dataset generate_synthetic(const SyntheticSpec& spec);

/// Train = days [0, floor(f * total)), test = the rest. The test split keeps
/// earlier records as history context but anchors only on its own days; both
/// carry the train statistics.
std::pair<Dataset, Dataset> split_temporal(const Dataset& ds, double train_fraction);

/// Train = the n regions with most observed targets (ties by region id).
std::pair<Dataset, Dataset> split_ood_regions(const Dataset& ds, std::size_t n_train_regions);

struct WindowBundle {
  Record current;
  std::vector<Record> weekly;        // days t-1 .. t-7
  std::vector<Record> yearly;        // days t-30, t-60, .. t-360
  std::vector<Record> image_window;  // days t-1 .. t-beta
};

inline constexpr std::size_t kWeeklySpan = 7;
inline constexpr std::size_t kYearlySpan = 12;
inline constexpr std::int64_t kYearlyStride = 30;

WindowBundle assemble_window(const Dataset& ds, const std::string& region, std::int64_t day,
                             std::size_t beta);

}  // namespace lite
