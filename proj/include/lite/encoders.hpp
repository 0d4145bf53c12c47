#pragma once
// Small transformer encoders for semantic token sequences and trend images.
// Both operate on batches stacked along rows; each sequence (or image) is an
// independent attention segment.

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "lite/nn.hpp"
#include "lite/raster.hpp"
#include "lite/textual.hpp"

namespace lite {

struct EncoderConfig {
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t ffn_hidden = 256;
  std::size_t max_seq_len = 256;
  std::size_t patch_size = 8;

  void validate() const;
  nn::BlockConfig block() const { return {d_model, n_heads, ffn_hidden}; }
};

/// Token sequences stacked row-wise.
struct TextBatch {
  std::vector<std::int32_t> ids;
  std::vector<std::int32_t> positions;
  std::vector<kernels::Segment> segments;

  /// Appends a sequence; returns the global row of its first token.
  std::size_t append(std::span<const std::int32_t> seq_ids);
  std::size_t rows() const { return ids.size(); }
  std::size_t count() const { return segments.size(); }
};

/// Token states of a batch plus per-sequence pooled vectors.
struct SemanticEncoding {
  ad::Var token_states;  // [rows x d]
  ad::Var pooled;        // [sequences x d]
};

class TextEncoder {
 public:
  TextEncoder() = default;
  static TextEncoder create(nn::ParameterStore& store, const std::string& path, const EncoderConfig& cfg,
                            std::size_t vocab_size, Rng& rng);

  /// Contextual token states for every row of the batch.
  ad::Var states(nn::Binder& bind, const TextBatch& batch) const;
  SemanticEncoding encode(nn::Binder& bind, const TextBatch& batch) const;

  const EncoderConfig& config() const { return cfg_; }
  Tensor& token_table() const { return *token_emb_; }

 private:
  EncoderConfig cfg_;
  Tensor* token_emb_ = nullptr;
  Tensor* pos_emb_ = nullptr;
  nn::TransformerStack stack_;
};

/// Mean over rows of each sequence, skipping [PAD] tokens.
ad::Var pool_sequences(ad::Var states, const TextBatch& batch);

/// Binary images cut into non-overlapping patches, stacked row-wise.
struct ImageBatch {
  std::size_t patch = 0;
  std::size_t grid_w = 0;  // patches per image row
  std::size_t grid_h = 0;
  std::size_t n_images = 0;
  std::vector<double> patches;  // [n_images * grid_h * grid_w x patch * patch]

  std::size_t patches_per_image() const { return grid_w * grid_h; }
};

/// Builds a patch batch from 8-bit pixel buffers (0 or 255) of identical size.
ImageBatch make_image_batch(const std::vector<std::span<const std::uint8_t>>& images, std::size_t width,
                            std::size_t height, std::size_t patch);
ImageBatch make_image_batch(const std::vector<const TrendImage*>& images, std::size_t patch);

struct VisualEncoding {
  ad::Var patch_states;  // [n_images * P x d]
  ad::Var pooled;        // [n_images x d]
};

class ImageEncoder {
 public:
  ImageEncoder() = default;
  static ImageEncoder create(nn::ParameterStore& store, const std::string& path, const EncoderConfig& cfg,
                             std::size_t width, std::size_t height, Rng& rng);

  VisualEncoding encode(nn::Binder& bind, const ImageBatch& batch) const;
  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
  std::size_t grid_w_ = 0, grid_h_ = 0;
  nn::Linear patch_proj_;
  Tensor* row_emb_ = nullptr;
  Tensor* col_emb_ = nullptr;
  nn::TransformerStack stack_;
};

/// Records per prediction anchor in the text batch: current, 7 weekly, 12 yearly.
inline constexpr std::size_t kRecordsPerAnchor = 1 + 7 + 12;

/// U = [U^c | mean(weekly) | mean(yearly)] per anchor from pooled record
/// encodings laid out kRecordsPerAnchor rows per anchor; U^c only when
/// multi-granularity is disabled.
ad::Var encode_granularities(ad::Var pooled, std::size_t n_anchors, bool multi_granularity);

}  // namespace lite
