#pragma once
// Temporal trend images: one binary line graph per variable over the look-back
// window, tiled into a single grayscale raster.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lite/dataset.hpp"

namespace lite {

struct RasterConfig {
  std::size_t cell_w = 64;
  std::size_t cell_h = 64;
  // 0 selects the default grid: cols = ceil(sqrt(n_vars)), rows as needed.
  std::size_t grid_cols = 0;
  std::size_t grid_rows = 0;
};

struct TrendImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t cell_w = 0;
  std::size_t cell_h = 0;
  std::size_t cols = 0;
  std::size_t rows = 0;
  std::vector<double> pixels;  // row-major, each 0.0 or 1.0

  double at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
};

/// Fills interior gaps linearly, edge gaps with the nearest present value;
/// an all-absent series becomes all zeros.
std::vector<double> interpolate_missing(std::span<const double> values, const std::vector<bool>& present);

/// Grid shape (cols, rows) for n_vars subimages; ConfigError if too small.
std::pair<std::size_t, std::size_t> grid_shape(std::size_t n_vars, const RasterConfig& config);

/// Draws one series (already normalized) into cell `cell` of `img`.
void draw_series(TrendImage& img, std::size_t cell, std::span<const double> normalized);

/// Features in schema order, then the target history, over the bundle's
/// image window (oldest day in the leftmost column).
TrendImage rasterize(const WindowBundle& bundle, const NormStats& stats, const RasterConfig& config);

/// Rasterizes many bundles, in parallel when OpenMP is active.
std::vector<TrendImage> rasterize_batch(const std::vector<WindowBundle>& bundles, const NormStats& stats,
                                        const RasterConfig& config);

std::string encode_pgm(const TrendImage& img);
TrendImage decode_pgm(const std::string& bytes);
void write_pgm(const TrendImage& img, const std::string& path);
TrendImage read_pgm(const std::string& path);

}  // namespace lite
