#include "lite/raster.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>

#include "lite/errors.hpp"

namespace lite {

std::vector<double> interpolate_missing(std::span<const double> values, const std::vector<bool>& present) {
  const std::size_t n = values.size();
  if (present.size() != n) throw ShapeError("interpolate_missing: mask length differs from series length");
  std::vector<double> out(n, 0.0);
  std::vector<std::size_t> known;
  for (std::size_t i = 0; i < n; ++i)
    if (present[i]) known.push_back(i);
  if (known.empty()) return out;
  for (std::size_t i = 0; i <= known.front(); ++i) out[i] = values[known.front()];
  for (std::size_t i = known.back(); i < n; ++i) out[i] = values[known.back()];
  for (std::size_t j = 0; j + 1 < known.size(); ++j) {
    const std::size_t a = known[j], b = known[j + 1];
    out[a] = values[a];
    for (std::size_t i = a + 1; i < b; ++i) {
      const double w = static_cast<double>(i - a) / static_cast<double>(b - a);
      out[i] = values[a] + w * (values[b] - values[a]);
    }
  }
  return out;
}

std::pair<std::size_t, std::size_t> grid_shape(std::size_t n_vars, const RasterConfig& config) {
  if (config.cell_w < 2 || config.cell_h < 2) throw ConfigError("raster cells must be at least 2x2 pixels");
  std::size_t cols = config.grid_cols;
  if (cols == 0) {
    cols = 1;
    while (cols * cols < n_vars) ++cols;
  }
  std::size_t rows = config.grid_rows;
  if (rows == 0) rows = (n_vars + cols - 1) / cols;
  if (rows * cols < n_vars)
    throw ConfigError("raster grid " + std::to_string(cols) + "x" + std::to_string(rows) + " cannot hold " +
                      std::to_string(n_vars) + " variables");
  return {cols, rows};
}

namespace {

void set_pixel(TrendImage& img, std::size_t x0, std::size_t y0, long x, long y) {
  img.pixels[(y0 + static_cast<std::size_t>(y)) * img.width + x0 + static_cast<std::size_t>(x)] = 1.0;
}

void line(TrendImage& img, std::size_t x0, std::size_t y0, long ax, long ay, long bx, long by) {
  const long dx = std::labs(bx - ax), sx = ax < bx ? 1 : -1;
  const long dy = -std::labs(by - ay), sy = ay < by ? 1 : -1;
  long err = dx + dy;
  while (true) {
    set_pixel(img, x0, y0, ax, ay);
    if (ax == bx && ay == by) break;
    const long e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      ax += sx;
    }
    if (e2 <= dx) {
      err += dx;
      ay += sy;
    }
  }
}

long value_row(double v, std::size_t cell_h) {
  const double c = std::clamp(v, -3.0, 3.0);
  return static_cast<long>(std::floor((3.0 - c) / 6.0 * static_cast<double>(cell_h - 1)));
}

long day_col(std::size_t j, std::size_t beta, std::size_t cell_w) {
  if (beta <= 1) return 0;
  return static_cast<long>(std::floor(static_cast<double>(j) / static_cast<double>(beta - 1) *
                                      static_cast<double>(cell_w - 1)));
}

}  // namespace

void draw_series(TrendImage& img, std::size_t cell, std::span<const double> normalized) {
  if (cell >= img.cols * img.rows) throw ShapeError("draw_series: cell index outside the grid");
  const std::size_t x0 = (cell % img.cols) * img.cell_w;
  const std::size_t y0 = (cell / img.cols) * img.cell_h;
  const std::size_t beta = normalized.size();
  long px = 0, py = 0;
  for (std::size_t j = 0; j < beta; ++j) {
    const long x = day_col(j, beta, img.cell_w);
    const long y = value_row(normalized[j], img.cell_h);
    if (j == 0) set_pixel(img, x0, y0, x, y);
    else line(img, x0, y0, px, py, x, y);
    px = x;
    py = y;
  }
}

TrendImage rasterize(const WindowBundle& bundle, const NormStats& stats, const RasterConfig& config) {
  const std::size_t beta = bundle.image_window.size();
  if (beta == 0) throw ShapeError("rasterize: empty image window");
  const std::size_t k_features = bundle.current.features.size();
  const std::size_t n_vars = k_features + 1;
  if (stats.mean.size() != n_vars) throw ShapeError("rasterize: statistics do not match the feature count");
  const auto [cols, rows] = grid_shape(n_vars, config);
  TrendImage img;
  img.cell_w = config.cell_w;
  img.cell_h = config.cell_h;
  img.cols = cols;
  img.rows = rows;
  img.width = cols * config.cell_w;
  img.height = rows * config.cell_h;
  img.pixels.assign(img.width * img.height, 0.0);

  std::vector<double> values(beta);
  std::vector<bool> present(beta);
  for (std::size_t var = 0; var < n_vars; ++var) {
    for (std::size_t j = 0; j < beta; ++j) {
      // Column j is chronological: image_window runs backwards from t-1.
      const Record& r = bundle.image_window[beta - 1 - j];
      if (var < k_features) {
        present[j] = r.feature_present[var];
        values[j] = present[j] ? r.features[var] : 0.0;
      } else {
        present[j] = r.target.has_value();
        values[j] = present[j] ? *r.target : 0.0;
      }
    }
    auto series = interpolate_missing(values, present);
    for (double& v : series) v = stats.normalize(var, v);
    draw_series(img, var, series);
  }
  return img;
}

std::vector<TrendImage> rasterize_batch(const std::vector<WindowBundle>& bundles, const NormStats& stats,
                                        const RasterConfig& config) {
  std::vector<TrendImage> out(bundles.size());
  const long n = static_cast<long>(bundles.size());
#pragma omp parallel for schedule(dynamic, 8)
  for (long i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = rasterize(bundles[static_cast<std::size_t>(i)], stats, config);
  return out;
}

std::string encode_pgm(const TrendImage& img) {
  std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.reserve(out.size() + img.pixels.size());
  for (double p : img.pixels) {
    if (p != 0.0 && p != 1.0) throw DataError("encode_pgm: pixels must be 0 or 1");
    out.push_back(p == 1.0 ? static_cast<char>(0xFF) : '\0');
  }
  return out;
}

TrendImage decode_pgm(const std::string& bytes) {
  std::size_t pos = 0;
  auto next_token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw ParseError("malformed PGM: truncated header");
    return bytes.substr(start, pos - start);
  };
  auto number = [&](const char* what) {
    const std::string t = next_token();
    if (t.find_first_not_of("0123456789") != std::string::npos || t.size() > 9)
      throw ParseError(std::string("malformed PGM: bad ") + what);
    return static_cast<std::size_t>(std::stoul(t));
  };
  if (next_token() != "P5") throw ParseError("malformed PGM: expected P5 magic");
  TrendImage img;
  img.width = number("width");
  img.height = number("height");
  const std::size_t maxval = number("maxval");
  if (maxval != 255) throw ParseError("malformed PGM: maxval must be 255, got " + std::to_string(maxval));
  ++pos;  // single whitespace before the payload
  const std::size_t n = img.width * img.height;
  if (bytes.size() - std::min(pos, bytes.size()) != n) throw ParseError("malformed PGM: payload size mismatch");
  img.pixels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto b = static_cast<unsigned char>(bytes[pos + i]);
    if (b != 0 && b != 255) throw ParseError("malformed PGM: non-binary pixel value");
    img.pixels[i] = b == 255 ? 1.0 : 0.0;
  }
  img.cell_w = img.width;
  img.cell_h = img.height;
  img.cols = img.rows = 1;
  return img;
}

void write_pgm(const TrendImage& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << encode_pgm(img);
  if (!out) throw IoError("write failed for " + path);
}

TrendImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_pgm(bytes);
}

}  // namespace lite
