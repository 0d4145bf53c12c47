#include "lite/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "lite/errors.hpp"
#include "lite/util.hpp"

namespace lite {

std::size_t FeatureSchema::index_of(const std::string& name) const {
  for (std::size_t k = 0; k < names.size(); ++k)
    if (names[k] == name) return k;
  throw DataError("unknown feature '" + name + "'");
}

void FeatureSchema::validate() const {
  if (names.empty()) throw DataError("schema must have at least one feature");
  if (units.size() != names.size()) throw DataError("schema units do not match feature names");
  std::set<std::string> seen;
  for (const auto& n : names) {
    if (n.empty()) throw DataError("empty feature name");
    if (!seen.insert(n).second) throw DataError("duplicate feature name '" + n + "'");
  }
  if (target_name.empty()) throw DataError("schema target name is empty");
}

FeatureSchema FeatureSchema::default_schema() {
  FeatureSchema s;
  s.names = {"day of the year",
             "rainfall",
             "daily average air temperature",
             "solar radiation",
             "average cloud cover fraction",
             "groundwater temperature",
             "subsurface temperature",
             "potential evapotranspiration"};
  s.units = {"day", "inches", "degrees Celsius", "W/m2", "fraction",
             "degrees Celsius", "degrees Celsius", "mm"};
  s.target_name = "water temperature";
  return s;
}

std::size_t Record::absent_count() const {
  return static_cast<std::size_t>(std::count(feature_present.begin(), feature_present.end(), false));
}

Record Record::pad(std::string region, std::int64_t day, std::size_t n_features) {
  Record r;
  r.region_id = std::move(region);
  r.day_index = day;
  r.features.assign(n_features, 0.0);
  r.feature_present.assign(n_features, false);
  return r;
}

std::pair<double, double> series_stats(const std::vector<double>& series) {
  if (series.empty()) return {0.0, 1.0};
  double mean = 0.0;
  for (double v : series) mean += v;
  mean /= static_cast<double>(series.size());
  double var = 0.0;
  for (double v : series) var += (v - mean) * (v - mean);
  var /= static_cast<double>(series.size());
  const bool distinct = std::any_of(series.begin(), series.end(),
                                    [&](double v) { return v != series.front(); });
  const double sd = std::sqrt(var);
  if (!distinct || !(sd > 0.0)) return {mean, 1.0};
  return {mean, sd};
}

std::vector<double> znormalize(const std::vector<double>& series, double mean, double std) {
  std::vector<double> out(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) out[i] = (series[i] - mean) / std;
  return out;
}

Dataset::Dataset(FeatureSchema schema, std::vector<Record> records, std::int64_t total_days)
    : schema_(std::move(schema)), records_(std::move(records)), total_days_(total_days) {
  schema_.validate();
  std::sort(records_.begin(), records_.end(), [](const Record& a, const Record& b) {
    return std::tie(a.region_id, a.day_index) < std::tie(b.region_id, b.day_index);
  });
  std::set<std::string> regions;
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    if (r.features.size() != schema_.size() || r.feature_present.size() != schema_.size())
      throw DataError("record for " + r.region_id + " day " + std::to_string(r.day_index) +
                      " does not match the schema width");
    if (r.day_index < 0 || r.day_index >= total_days_)
      throw DataError("record day " + std::to_string(r.day_index) + " outside [0, " +
                      std::to_string(total_days_) + ")");
    if (!index_.emplace(std::pair{r.region_id, r.day_index}, i).second)
      throw DataError("duplicate record for (" + r.region_id + ", " + std::to_string(r.day_index) + ")");
    regions.insert(r.region_id);
  }
  regions_.assign(regions.begin(), regions.end());
  anchors_.resize(records_.size());
  for (std::size_t i = 0; i < anchors_.size(); ++i) anchors_[i] = i;
  stats_ = compute_norm_stats();
}

const Record* Dataset::find(const std::string& region, std::int64_t day) const {
  const auto it = index_.find({region, day});
  return it == index_.end() ? nullptr : &records_[it->second];
}

std::vector<std::size_t> Dataset::target_anchors() const {
  std::vector<std::size_t> out;
  for (auto i : anchors_)
    if (records_[i].target) out.push_back(i);
  return out;
}

NormStats Dataset::compute_norm_stats() const {
  const std::size_t k = schema_.size();
  NormStats stats;
  for (std::size_t var = 0; var <= k; ++var) {
    std::vector<double> series;
    for (auto i : anchors_) {
      const auto& r = records_[i];
      if (var < k) {
        if (r.feature_present[var]) series.push_back(r.features[var]);
      } else if (r.target) {
        series.push_back(*r.target);
      }
    }
    const auto [m, s] = series_stats(series);
    stats.mean.push_back(m);
    stats.std.push_back(s);
  }
  return stats;
}

Dataset Dataset::with_hidden_features(const std::vector<std::size_t>& features) const {
  Dataset copy = *this;
  for (auto k : features) {
    if (k >= schema_.size()) throw DataError("hidden feature index out of range");
    for (auto& r : copy.records_) r.feature_present[k] = false;
  }
  return copy;
}

std::string Dataset::content_hash() const {
  std::ostringstream os;
  for (std::size_t k = 0; k < schema_.size(); ++k) os << schema_.names[k] << '|' << schema_.units[k] << '\n';
  os << schema_.target_name << '\n' << total_days_ << '\n';
  for (const auto& r : records_) {
    os << r.region_id << ',' << r.day_index;
    for (std::size_t k = 0; k < r.features.size(); ++k)
      os << ',' << (r.feature_present[k] ? format_exact(r.features[k]) : "");
    os << ',' << (r.target ? format_exact(*r.target) : "") << '\n';
  }
  for (auto a : anchors_) os << a << ' ';
  os << '\n';
  for (std::size_t v = 0; v < stats_.mean.size(); ++v)
    os << format_exact(stats_.mean[v]) << ' ' << format_exact(stats_.std[v]) << '\n';
  return git_blob_hash(os.str());
}

// ---- CSV ------------------------------------------------------------------

namespace {

double parse_double(const std::string& field, std::size_t line, const std::string& column) {
  double value = 0.0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  if (begin != end && *begin == '+') ++begin;
  const auto res = std::from_chars(begin, end, value);
  if (res.ec != std::errc() || res.ptr != end || !std::isfinite(value))
    throw ParseError("line " + std::to_string(line) + ": cannot parse '" + field + "' in column '" +
                     column + "'");
  return value;
}

}  // namespace

Dataset load_csv(const std::string& path, const FeatureSchema& schema) {
  schema.validate();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError("line 1: empty file " + path);
  ++line_no;
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
  if (!line.empty() && line.back() == '\r') line.pop_back();

  std::vector<std::string> expected = {"region_id", "day_index"};
  expected.insert(expected.end(), schema.names.begin(), schema.names.end());
  expected.push_back("target");
  const auto header = split(line, ',');
  for (std::size_t i = 0; i < header.size(); ++i) {
    const auto name = trim(header[i]);
    if (std::find(expected.begin(), expected.end(), name) == expected.end())
      throw ParseError("line 1: unknown column '" + name + "'");
  }
  if (header.size() != expected.size())
    throw ParseError("line 1: expected " + std::to_string(expected.size()) + " columns, found " +
                     std::to_string(header.size()));
  for (std::size_t i = 0; i < header.size(); ++i)
    if (trim(header[i]) != expected[i])
      throw ParseError("line 1: column " + std::to_string(i + 1) + " is '" + trim(header[i]) +
                       "', expected '" + expected[i] + "'");

  std::vector<Record> records;
  std::set<std::pair<std::string, std::int64_t>> seen;
  std::int64_t max_day = -1;
  const std::size_t k = schema.size();
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto fields = split(line, ',');
    if (fields.size() != expected.size())
      throw ParseError("line " + std::to_string(line_no) + ": expected " +
                       std::to_string(expected.size()) + " fields, found " +
                       std::to_string(fields.size()));
    Record r;
    r.region_id = trim(fields[0]);
    if (r.region_id.empty()) throw ParseError("line " + std::to_string(line_no) + ": empty region_id");
    const auto day_text = trim(fields[1]);
    std::int64_t day = 0;
    const auto res = std::from_chars(day_text.data(), day_text.data() + day_text.size(), day);
    if (res.ec != std::errc() || res.ptr != day_text.data() + day_text.size() || day < 0)
      throw ParseError("line " + std::to_string(line_no) + ": invalid day_index '" + day_text + "'");
    r.day_index = day;
    r.features.assign(k, 0.0);
    r.feature_present.assign(k, false);
    for (std::size_t f = 0; f < k; ++f) {
      const auto cell = trim(fields[2 + f]);
      if (cell.empty()) continue;
      r.features[f] = parse_double(cell, line_no, schema.names[f]);
      r.feature_present[f] = true;
    }
    const auto target_cell = trim(fields[2 + k]);
    if (!target_cell.empty()) r.target = parse_double(target_cell, line_no, "target");
    if (!seen.insert({r.region_id, r.day_index}).second)
      throw DataError("line " + std::to_string(line_no) + ": duplicate record for (" + r.region_id +
                      ", " + std::to_string(r.day_index) + ")");
    max_day = std::max(max_day, r.day_index);
    records.push_back(std::move(r));
  }
  if (records.empty()) throw ParseError("no data rows in " + path);
  return Dataset(schema, std::move(records), max_day + 1);
}

void write_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "region_id,day_index";
  for (const auto& n : ds.schema().names) out << ',' << n;
  out << ",target\n";
  for (const auto& r : ds.records()) {
    out << r.region_id << ',' << r.day_index;
    for (std::size_t k = 0; k < r.features.size(); ++k) {
      out << ',';
      if (r.feature_present[k]) out << format_exact(r.features[k]);
    }
    out << ',';
    if (r.target) out << format_exact(*r.target);
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path);
}

// ---- synthetic ------------------------------------------------------------

Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n_regions == 0) throw ConfigError("synthetic: n_regions must be positive");
  if (spec.total_days < 1) throw ConfigError("synthetic: total_days must be positive");
  if (!(spec.missing_rate >= 0.0 && spec.missing_rate < 1.0))
    throw ConfigError("synthetic: missing_rate must lie in [0, 1)");
  if (!(spec.target_rate > 0.0 && spec.target_rate <= 1.0))
    throw ConfigError("synthetic: target_rate must lie in (0, 1]");

  const FeatureSchema schema = FeatureSchema::default_schema();
  std::vector<std::size_t> shifted;
  if (spec.shift)
    for (const auto& name : spec.shift->features) shifted.push_back(schema.index_of(name));

  enum : std::size_t { kDoy, kRain, kAir, kSolar, kCloud, kGround, kSub, kPet };
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  Rng rng(spec.seed);
  std::vector<Record> records;
  records.reserve(spec.n_regions * static_cast<std::size_t>(spec.total_days));
  for (std::size_t reg = 0; reg < spec.n_regions; ++reg) {
    const std::string region = "seg" + std::to_string(reg + 1);
    const double temp_offset = rng.uniform(-2.0, 2.0);
    const double amplitude = rng.uniform(8.0, 12.0);
    const double phase = rng.uniform(-10.0, 10.0);
    const double ground_offset = rng.uniform(-1.0, 1.0);
    const double solar_scale = rng.uniform(0.9, 1.1);
    const double rain_scale = rng.uniform(0.7, 1.3);
    const double target_rate =
        spec.target_rate *
        (1.0 - 0.5 * static_cast<double>(reg) / static_cast<double>(std::max<std::size_t>(1, spec.n_regions - 1)));
    double subsurface = 12.0 + temp_offset;
    for (std::int64_t day = 0; day < spec.total_days; ++day) {
      const double doy = static_cast<double>(day % 365 + 1);
      const double season = std::sin(kTwoPi * (doy - 110.0 + phase) / 365.0);
      std::vector<double> x(schema.size());
      x[kDoy] = doy;
      x[kAir] = 12.0 + temp_offset + amplitude * season + 1.5 * rng.normal();
      x[kSolar] = std::max(0.0, 180.0 * solar_scale +
                                    90.0 * std::sin(kTwoPi * (doy - 80.0) / 365.0) + 15.0 * rng.normal());
      x[kCloud] = std::clamp(0.5 - 0.15 * season + 0.12 * rng.normal(), 0.0, 1.0);
      const bool rains = rng.bernoulli(0.25 + 0.2 * x[kCloud]);
      const double rain_amount = rng.exponential(0.3);
      x[kRain] = rains ? rain_scale * rain_amount : 0.0;
      subsurface = 0.9 * subsurface + 0.1 * x[kAir];
      x[kSub] = subsurface;
      x[kGround] = 11.0 + ground_offset + 2.5 * std::sin(kTwoPi * (doy - 150.0 + phase) / 365.0) +
                   0.2 * rng.normal();
      x[kPet] = std::max(0.0, 0.02 * (x[kAir] + 5.0) * x[kSolar] / 200.0 + 0.05 * rng.normal());
      if (spec.shift && day >= spec.shift->after_day)
        for (auto k : shifted) x[k] += spec.shift->delta;

      const double y = 0.55 * x[kAir] + 0.35 * x[kSub] + 1.5 * std::sin(kTwoPi * doy / 365.0) +
                       0.1 * rng.normal();
      const bool has_target = rng.bernoulli(target_rate);

      Record r;
      r.region_id = region;
      r.day_index = day;
      r.features = x;
      r.feature_present.assign(schema.size(), true);
      for (std::size_t k = 1; k < schema.size(); ++k)
        if (rng.bernoulli(spec.missing_rate)) r.feature_present[k] = false;
      for (std::size_t k = 0; k < schema.size(); ++k)
        if (!r.feature_present[k]) r.features[k] = 0.0;
      if (has_target) r.target = y;
      records.push_back(std::move(r));
    }
  }
  return Dataset(schema, std::move(records), spec.total_days);
}

// ---- splits ---------------------------------------------------------------

std::pair<Dataset, Dataset> split_temporal(const Dataset& ds, double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ConfigError("train_fraction must lie in (0, 1)");
  const auto cut = static_cast<std::int64_t>(std::floor(train_fraction * static_cast<double>(ds.total_days())));
  std::vector<Record> train_records;
  for (const auto& r : ds.records())
    if (r.day_index < cut) train_records.push_back(r);
  if (cut <= 0 || train_records.empty()) throw DataError("temporal split leaves the train split empty");
  Dataset train(ds.schema(), std::move(train_records), cut);

  Dataset test = ds;
  std::vector<std::size_t> anchors;
  for (std::size_t i = 0; i < test.records().size(); ++i)
    if (test.records()[i].day_index >= cut) anchors.push_back(i);
  if (anchors.empty()) throw DataError("temporal split leaves the test split empty");
  test.set_anchors(std::move(anchors));
  test.set_norm_stats(train.norm_stats());
  return {std::move(train), std::move(test)};
}

std::pair<Dataset, Dataset> split_ood_regions(const Dataset& ds, std::size_t n_train_regions) {
  std::map<std::string, std::size_t> counts;
  for (const auto& r : ds.records())
    if (r.target) ++counts[r.region_id];
  if (n_train_regions == 0 || n_train_regions >= counts.size())
    throw DataError("OOD split needs fewer train regions (" + std::to_string(n_train_regions) +
                    ") than regions with targets (" + std::to_string(counts.size()) + ")");
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::set<std::string> train_regions;
  for (std::size_t i = 0; i < n_train_regions; ++i) train_regions.insert(ranked[i].first);

  std::vector<Record> train_records, test_records;
  for (const auto& r : ds.records())
    (train_regions.count(r.region_id) ? train_records : test_records).push_back(r);
  Dataset train(ds.schema(), std::move(train_records), ds.total_days());
  Dataset test(ds.schema(), std::move(test_records), ds.total_days());
  test.set_norm_stats(train.norm_stats());
  return {std::move(train), std::move(test)};
}

// ---- windows --------------------------------------------------------------

WindowBundle assemble_window(const Dataset& ds, const std::string& region, std::int64_t day,
                             std::size_t beta) {
  const Record* anchor = ds.find(region, day);
  if (anchor == nullptr)
    throw DataError("no record for anchor (" + region + ", " + std::to_string(day) + ")");
  const std::size_t k = ds.schema().size();
  auto fetch = [&](std::int64_t d) {
    const Record* r = d >= 0 ? ds.find(region, d) : nullptr;
    return r ? *r : Record::pad(region, d, k);
  };
  WindowBundle bundle;
  bundle.current = *anchor;
  for (std::size_t i = 1; i <= kWeeklySpan; ++i) bundle.weekly.push_back(fetch(day - static_cast<std::int64_t>(i)));
  for (std::size_t i = 1; i <= kYearlySpan; ++i)
    bundle.yearly.push_back(fetch(day - kYearlyStride * static_cast<std::int64_t>(i)));
  for (std::size_t i = 1; i <= beta; ++i)
    bundle.image_window.push_back(fetch(day - static_cast<std::int64_t>(i)));
  return bundle;
}

}  // namespace lite
