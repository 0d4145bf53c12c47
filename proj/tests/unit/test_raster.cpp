#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "lite/errors.hpp"
#include "lite/raster.hpp"
#include "lite/util.hpp"

using namespace lite;

namespace {

// One feature plus the target over `values.size()` days, oldest value first.
WindowBundle two_var_bundle(const std::vector<double>& values) {
  WindowBundle b;
  b.current.features = {0.0};
  b.current.feature_present = {true};
  for (std::size_t j = 0; j < values.size(); ++j) {
    Record r;
    r.day_index = static_cast<std::int64_t>(values.size() - j);
    r.features = {values[j]};
    r.feature_present = {true};
    r.target = values[j];
    b.image_window.insert(b.image_window.begin(), r);  // image_window runs backwards in time
  }
  return b;
}

NormStats unit_stats(std::size_t n_vars) { return NormStats{std::vector<double>(n_vars, 0.0), std::vector<double>(n_vars, 1.0)}; }

std::vector<std::size_t> stroke_rows(const TrendImage& img, std::size_t x) {
  std::vector<std::size_t> rows;
  for (std::size_t y = 0; y < img.cell_h; ++y)
    if (img.at(y, x) == 1.0) rows.push_back(y);
  return rows;
}

}  // namespace

TEST_CASE("interpolation") {
  CHECK(interpolate_missing(std::vector<double>{1, 0, 0, 4}, {true, false, false, true}) ==
        std::vector<double>{1, 2, 3, 4});
  CHECK(interpolate_missing(std::vector<double>{0, 2, 3}, {false, true, true}) == std::vector<double>{2, 2, 3});
  CHECK(interpolate_missing(std::vector<double>{5, 0, 0}, {true, false, false}) == std::vector<double>{5, 5, 5});
  CHECK(interpolate_missing(std::vector<double>(5, 9.0), std::vector<bool>(5, false)) == std::vector<double>(5, 0.0));
  CHECK_THROWS_AS(interpolate_missing(std::vector<double>{1, 2}, {true}), ShapeError);
}

TEST_CASE("interpolation keeps present values and stays within neighbours") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(40);
    std::vector<double> v(n);
    std::vector<bool> p(n);
    for (std::size_t i = 0; i < n; ++i) {
      v[i] = rng.uniform(-5, 5);
      p[i] = rng.bernoulli(0.4);
    }
    const auto out = interpolate_missing(v, p);
    double lo = 1e300, hi = -1e300;
    bool any = false;
    for (std::size_t i = 0; i < n; ++i)
      if (p[i]) {
        CHECK(out[i] == v[i]);
        lo = std::min(lo, v[i]);
        hi = std::max(hi, v[i]);
        any = true;
      }
    for (double x : out) {
      if (any) CHECK((x >= lo && x <= hi));
      else CHECK(x == 0.0);
    }
  }
}

TEST_CASE("grid shape") {
  RasterConfig cfg;
  CHECK(grid_shape(9, cfg) == std::pair<std::size_t, std::size_t>{3, 3});
  CHECK(grid_shape(2, cfg) == std::pair<std::size_t, std::size_t>{2, 1});
  CHECK(grid_shape(10, cfg) == std::pair<std::size_t, std::size_t>{4, 3});
  cfg.grid_cols = 2;
  cfg.grid_rows = 2;
  CHECK_THROWS_AS(grid_shape(9, cfg), ConfigError);
}

TEST_CASE("default schema gives a 3x3 grid of 64 pixel cells") {
  SyntheticSpec spec;
  spec.total_days = 120;
  const Dataset ds = generate_synthetic(spec);
  const auto b = assemble_window(ds, ds.regions()[0], 100, 30);
  const TrendImage img = rasterize(b, ds.norm_stats(), RasterConfig{});
  CHECK(img.cols == 3);
  CHECK(img.rows == 3);
  CHECK(img.width == 192);
  CHECK(img.height == 192);
  for (double p : img.pixels) CHECK((p == 0.0 || p == 1.0));
  // Every variable has data in the window, so every cell carries a stroke.
  for (std::size_t cell = 0; cell < 9; ++cell) {
    const std::size_t x0 = (cell % 3) * 64, y0 = (cell / 3) * 64;
    bool stroke = false;
    for (std::size_t y = y0; y < y0 + 64; ++y)
      for (std::size_t x = x0; x < x0 + 64; ++x) stroke = stroke || img.at(y, x) == 1.0;
    CHECK(stroke);
  }
}

TEST_CASE("value to row mapping") {
  RasterConfig cfg;
  const TrendImage mid = rasterize(two_var_bundle(std::vector<double>(30, 0.0)), unit_stats(2), cfg);
  // floor(3/6 * 63) = 31 for every column
  for (std::size_t x = 0; x < 64; ++x) CHECK(stroke_rows(mid, x) == std::vector<std::size_t>{31});

  const TrendImage top = rasterize(two_var_bundle(std::vector<double>(30, 3.0)), unit_stats(2), cfg);
  CHECK(stroke_rows(top, 10) == std::vector<std::size_t>{0});
  const TrendImage bottom = rasterize(two_var_bundle(std::vector<double>(30, -3.0)), unit_stats(2), cfg);
  CHECK(stroke_rows(bottom, 10) == std::vector<std::size_t>{63});
  const TrendImage clamped = rasterize(two_var_bundle(std::vector<double>(30, 50.0)), unit_stats(2), cfg);
  CHECK(stroke_rows(clamped, 10) == std::vector<std::size_t>{0});
}

TEST_CASE("oldest day is the leftmost column") {
  std::vector<double> v(30, -1.0);
  v[0] = 2.0;  // oldest
  const TrendImage img = rasterize(two_var_bundle(v), unit_stats(2), RasterConfig{});
  // floor((3-2)/6*63) = 10
  CHECK(stroke_rows(img, 0).front() == 10);
  CHECK(stroke_rows(img, 63) == std::vector<std::size_t>{42});  // floor(4/6*63)
}

TEST_CASE("a shift in value moves the stroke by the mapped amount") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const double base = rng.uniform(-1.0, 1.0);
    const double c = rng.uniform(-1.5, 1.5);
    const TrendImage a = rasterize(two_var_bundle(std::vector<double>(30, base)), unit_stats(2), RasterConfig{});
    const TrendImage b = rasterize(two_var_bundle(std::vector<double>(30, base + c)), unit_stats(2), RasterConfig{});
    const long ra = static_cast<long>(stroke_rows(a, 5).front());
    const long rb = static_cast<long>(stroke_rows(b, 5).front());
    const double expected = -c / 6.0 * 63.0;
    CHECK(std::abs(static_cast<double>(rb - ra) - expected) <= 1.0);
  }
}

TEST_CASE("PGM encoding") {
  TrendImage img;
  img.width = img.height = img.cell_w = img.cell_h = 2;
  img.cols = img.rows = 1;
  img.pixels = {0, 1, 1, 0};
  const std::string bytes = encode_pgm(img);
  REQUIRE(bytes.size() == 4 + std::string("P5\n2 2\n255\n").size());
  CHECK(bytes.substr(0, 11) == "P5\n2 2\n255\n");
  CHECK(bytes.substr(11) == std::string("\x00\xFF\xFF\x00", 4));
  CHECK(decode_pgm(bytes).pixels == img.pixels);
  CHECK_THROWS_AS(decode_pgm("P5\n2 2\n15\n" + std::string(4, '\0')), ParseError);
  CHECK_THROWS_AS(decode_pgm("P6\n2 2\n255\n" + std::string(4, '\0')), ParseError);
  CHECK_THROWS_AS(decode_pgm("P5\n2 2\n255\n" + std::string(3, '\0')), ParseError);
}

TEST_CASE("PGM file round trip") {
  SyntheticSpec spec;
  spec.total_days = 90;
  spec.missing_rate = 0.3;
  const Dataset ds = generate_synthetic(spec);
  const TrendImage img = rasterize(assemble_window(ds, ds.regions()[1], 80, 30), ds.norm_stats(), RasterConfig{});
  const auto path = (std::filesystem::temp_directory_path() / "lite_raster_rt.pgm").string();
  write_pgm(img, path);
  const TrendImage back = read_pgm(path);
  CHECK(back.width == img.width);
  CHECK(back.height == img.height);
  CHECK(back.pixels == img.pixels);
  CHECK_THROWS_AS(read_pgm("/nonexistent/dir/x.pgm"), IoError);
}

TEST_CASE("golden image hash") {
  SyntheticSpec spec;
  spec.seed = 7;
  spec.total_days = 400;
  spec.missing_rate = 0.2;
  const Dataset ds = generate_synthetic(spec);
  const auto bundle = assemble_window(ds, "seg2", 365, 30);
  const std::string a = encode_pgm(rasterize(bundle, ds.norm_stats(), RasterConfig{}));
  const std::string b = encode_pgm(rasterize(bundle, ds.norm_stats(), RasterConfig{}));
  CHECK(a == b);
  const std::vector<WindowBundle> many(6, bundle);
  for (const auto& img : rasterize_batch(many, ds.norm_stats(), RasterConfig{})) CHECK(encode_pgm(img) == a);
  // Pinned so that a change in generator, interpolation or drawing shows up here.
  CHECK(sha256_hex(a) == "5de89a2d8fb0f012559d6603931426053205123fa5fa18ff83b516d095c565e1");
}
