#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "lite/dataset.hpp"
#include "lite/errors.hpp"

using namespace lite;
namespace fs = std::filesystem;

namespace {

std::string header() {
  std::string h = "region_id,day_index";
  for (const auto& n : FeatureSchema::default_schema().names) h += "," + n;
  return h + ",target\n";
}

std::string write_tmp(const std::string& name, const std::string& body) {
  const fs::path p = fs::temp_directory_path() / ("lite_ds_" + name);
  std::ofstream(p, std::ios::binary) << body;
  return p.string();
}

Record make_record(const std::string& region, std::int64_t day, std::optional<double> target, double fill = 1.0) {
  Record r;
  r.region_id = region;
  r.day_index = day;
  r.features.assign(8, fill);
  r.feature_present.assign(8, true);
  r.target = target;
  return r;
}

}  // namespace

TEST_CASE("default schema") {
  const auto s = FeatureSchema::default_schema();
  REQUIRE(s.size() == 8);
  CHECK(s.names[0] == "day of the year");
  CHECK(s.names[7] == "potential evapotranspiration");
  CHECK(s.index_of("rainfall") == 1);
  CHECK_THROWS_AS(s.index_of("humidity"), Error);
}

TEST_CASE("load_csv parses present, absent and target cells") {
  const auto path = write_tmp("ok.csv", header() + "seg1,0,1,0.00152,,125.3,0.5,10,11,0.03,8.4\n"
                                                   "seg1,1,2,0,3,120,0.4,10,11,0.03,\n");
  const Dataset ds = load_csv(path, FeatureSchema::default_schema());
  const Record* r = ds.find("seg1", 0);
  REQUIRE(r != nullptr);
  CHECK(r->feature_present[1]);
  CHECK(r->features[1] == 0.00152);
  CHECK_FALSE(r->feature_present[2]);
  REQUIRE(r->target.has_value());
  CHECK(*r->target == 8.4);
  const Record* r1 = ds.find("seg1", 1);
  REQUIRE(r1 != nullptr);
  CHECK_FALSE(r1->target.has_value());
  CHECK(ds.total_days() == 2);
}

TEST_CASE("load_csv errors") {
  const auto dup = write_tmp("dup.csv", header() + "seg1,5,1,0,1,1,1,1,1,1,1\nseg1,5,1,0,1,1,1,1,1,1,2\n");
  CHECK_THROWS_AS(load_csv(dup, FeatureSchema::default_schema()), DataError);
  const auto bad = write_tmp("bad.csv", header() + "seg1,0,1,abc,1,1,1,1,1,1,1\n");
  try {
    load_csv(bad, FeatureSchema::default_schema());
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  const auto unknown = write_tmp("unk.csv", "region_id,day_index,humidity,target\nseg1,0,1,1\n");
  CHECK_THROWS_AS(load_csv(unknown, FeatureSchema::default_schema()), ParseError);
}

TEST_CASE("csv round trip") {
  SyntheticSpec spec;
  spec.n_regions = 2;
  spec.total_days = 40;
  const Dataset ds = generate_synthetic(spec);
  const auto path = (fs::temp_directory_path() / "lite_ds_rt.csv").string();
  write_csv(ds, path);
  const Dataset back = load_csv(path, ds.schema());
  CHECK(back.content_hash() == ds.content_hash());
}

TEST_CASE("synthetic generator") {
  SyntheticSpec spec;
  spec.total_days = 120;
  const Dataset a = generate_synthetic(spec), b = generate_synthetic(spec);
  CHECK(a.content_hash() == b.content_hash());
  CHECK(a.regions().size() == 4);

  spec.missing_rate = 0.0;
  const Dataset complete = generate_synthetic(spec);
  for (const auto& r : complete.records())
    for (bool p : r.feature_present) CHECK(p);

  spec.missing_rate = 0.5;
  spec.n_regions = 2;
  spec.total_days = 715;  // 2 * 715 * 7 sensor cells, about 10^4
  std::size_t cells = 0, missing = 0;
  const Dataset sparse = generate_synthetic(spec);
  for (const auto& r : sparse.records()) {
    CHECK(r.feature_present[0]);  // the calendar column is never missing
    for (std::size_t k = 1; k < r.feature_present.size(); ++k) ++cells, missing += !r.feature_present[k];
  }
  CHECK(cells == 10010);
  CHECK(std::abs(static_cast<double>(missing) / static_cast<double>(cells) - 0.5) <= 0.02);
}

TEST_CASE("synthetic level shift") {
  SyntheticSpec spec;
  spec.total_days = 800;
  spec.missing_rate = 0.0;
  auto half_means = [](const Dataset& ds, std::size_t k) {
    double a = 0, b = 0;
    std::size_t na = 0, nb = 0;
    for (const auto& r : ds.records()) {
      if (r.day_index < ds.total_days() / 2) {
        a += r.features[k];
        ++na;
      } else {
        b += r.features[k];
        ++nb;
      }
    }
    return std::pair{a / static_cast<double>(na), b / static_cast<double>(nb)};
  };
  const Dataset base = generate_synthetic(spec);
  // The calendar column is deterministic, not a stationary sensor, so it is skipped.
  for (std::size_t f = 1; f < base.schema().size(); ++f) {
    std::vector<double> vals;
    for (const auto& r : base.records()) vals.push_back(r.features[f]);
    const auto [mu, sd] = series_stats(vals);
    const auto [m1, m2] = half_means(base, f);
    INFO(base.schema().names[f] << " " << m1 << " " << m2 << " sd " << sd);
    CHECK(std::abs(m1 - m2) < 3.0 * sd / std::sqrt(static_cast<double>(vals.size())));
  }
  const std::size_t k = base.schema().index_of("groundwater temperature");
  spec.shift = ShiftSpec{{"groundwater temperature"}, 400, 2.0};
  auto [s1, s2] = half_means(generate_synthetic(spec), k);
  CHECK(s2 - s1 > 1.5);
}

TEST_CASE("temporal split") {
  SyntheticSpec spec;
  spec.n_regions = 1;
  spec.total_days = 4900;
  spec.target_rate = 1.0;
  const Dataset ds = generate_synthetic(spec);
  const auto [train, test] = split_temporal(ds, 0.5);
  std::int64_t max_train = -1, min_test = 1 << 30;
  for (const auto& r : train.records()) max_train = std::max(max_train, r.day_index);
  for (auto i : test.anchors()) min_test = std::min(min_test, test.records()[i].day_index);
  CHECK(max_train == 2449);
  CHECK(min_test == 2450);
  CHECK(test.norm_stats().mean == train.norm_stats().mean);
  CHECK(test.norm_stats().std == train.norm_stats().std);

  spec.total_days = 10;
  const auto [tr2, te2] = split_temporal(generate_synthetic(spec), 0.9);
  CHECK(tr2.total_days() == 9);
  REQUIRE(te2.anchors().size() == 1);
  CHECK(te2.records()[te2.anchors()[0]].day_index == 9);
}

TEST_CASE("normalization statistics come from the train split only") {
  SyntheticSpec spec;
  spec.total_days = 200;
  spec.shift = ShiftSpec{{"rainfall", "groundwater temperature"}, 100, 5.0};
  const Dataset ds = generate_synthetic(spec);
  const auto [train, test] = split_temporal(ds, 0.5);
  // Independent oracle: statistics recomputed from records before the cut.
  const std::size_t k = ds.schema().index_of("groundwater temperature");
  std::vector<double> vals;
  for (const auto& r : ds.records())
    if (r.day_index < 100 && r.feature_present[k]) vals.push_back(r.features[k]);
  const auto [m, s] = series_stats(vals);
  CHECK(test.norm_stats().mean[k] == doctest::Approx(m).epsilon(1e-12));
  CHECK(test.norm_stats().std[k] == doctest::Approx(s).epsilon(1e-12));
}

TEST_CASE("OOD split ranks regions by target count") {
  std::vector<Record> recs;
  const std::vector<std::pair<std::string, int>> counts = {{"a", 10}, {"b", 7}, {"c", 7}, {"d", 1}};
  for (const auto& [region, n] : counts)
    for (int d = 0; d < 12; ++d) recs.push_back(make_record(region, d, d < n ? std::optional<double>(d) : std::nullopt));
  const Dataset ds(FeatureSchema::default_schema(), recs, 12);
  const auto [train, test] = split_ood_regions(ds, 3);
  CHECK(train.regions() == std::vector<std::string>{"a", "b", "c"});
  CHECK(test.regions() == std::vector<std::string>{"d"});

  const auto [tr2, te2] = split_ood_regions(ds, 2);
  CHECK(tr2.regions() == std::vector<std::string>{"a", "b"});
  CHECK(te2.regions() == std::vector<std::string>{"c", "d"});
}

TEST_CASE("OOD split is always region-disjoint") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SyntheticSpec spec;
    spec.seed = seed;
    spec.n_regions = 3 + seed % 3;
    spec.total_days = 60;
    const Dataset ds = generate_synthetic(spec);
    const auto [train, test] = split_ood_regions(ds, ds.regions().size() - 1);
    CHECK(test.regions().size() == 1);
    std::set<std::string> tr(train.regions().begin(), train.regions().end());
    for (const auto& r : test.regions()) CHECK(tr.count(r) == 0);
  }
}

TEST_CASE("z-normalization") {
  const auto [m, s] = series_stats({1, 2, 3});
  const auto z = znormalize({1, 2, 3}, m, s);
  CHECK(std::abs(z[0] + 1.224745) <= 1e-6);
  CHECK(z[1] == 0.0);
  CHECK(std::abs(z[2] - 1.224745) <= 1e-6);
  const auto [cm, cs] = series_stats({4, 4, 4});
  CHECK(cs == 1.0);
  for (double v : znormalize({4, 4, 4}, cm, cs)) CHECK(v == 0.0);
  const auto [zm, zs] = series_stats(z);
  const auto again = znormalize(z, zm, zs);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(again[i] - z[i]) <= 1e-12);
}

TEST_CASE("window assembly") {
  SyntheticSpec spec;
  spec.n_regions = 1;
  spec.total_days = 500;
  const Dataset ds = generate_synthetic(spec);
  const std::string region = ds.regions()[0];
  const WindowBundle b = assemble_window(ds, region, 400, 30);
  REQUIRE(b.yearly.size() == 12);
  for (std::size_t i = 0; i < 12; ++i) CHECK(b.yearly[i].day_index == 400 - 30 * static_cast<std::int64_t>(i + 1));
  CHECK(b.yearly.back().day_index == 40);
  REQUIRE(b.weekly.size() == 7);
  for (std::size_t i = 1; i < 7; ++i) CHECK(b.weekly[i].day_index < b.weekly[i - 1].day_index);
  CHECK(b.image_window.size() == 30);

  const WindowBundle early = assemble_window(ds, region, 3, 30);
  std::size_t pads = 0;
  for (const auto& r : early.weekly)
    if (r.day_index < 0) {
      ++pads;
      CHECK(r.absent_count() == 8);
    }
  CHECK(pads == 4);
  CHECK(early.weekly.back().day_index == -4);
}

TEST_CASE("hiding features copies the dataset") {
  SyntheticSpec spec;
  spec.total_days = 50;
  const Dataset ds = generate_synthetic(spec);
  const std::string before = ds.content_hash();
  const Dataset hidden = ds.with_hidden_features({1, 4});
  CHECK(ds.content_hash() == before);
  CHECK(hidden.content_hash() != before);
  for (const auto& r : hidden.records()) {
    CHECK_FALSE(r.feature_present[1]);
    CHECK_FALSE(r.feature_present[4]);
  }
}
