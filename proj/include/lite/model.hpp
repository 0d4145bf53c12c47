#pragma once
// The full predictor: text encoder + imputer over the 20 records of each
// anchor's window, image encoder over its trend image, and the fusion module.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lite/encoders.hpp"
#include "lite/fusion.hpp"
#include "lite/raster.hpp"
#include "lite/smoe.hpp"

namespace lite {

struct ModelConfig {
  EncoderConfig encoder;
  SmoeConfig smoe;
  FusionConfig fusion;
  RasterConfig raster;
  std::size_t beta = 30;
  Variant variant = Variant::Full;

  bool text_on() const { return variant != Variant::TextOff; }
  bool image_on() const { return variant != Variant::ImageOff; }
  bool decoder_on() const { return variant != Variant::LlmOff; }
  bool multi_granularity() const { return variant != Variant::MtgOff; }
  /// Mask states are replaced by imputed ones (SMoE or the linear stand-in).
  bool imputation_on() const { return text_on() && variant != Variant::ImpOff; }

  void validate(std::size_t n_features) const;
};

/// One forward batch, stacked. Text holds kRecordsPerAnchor sequences per
/// anchor (current record first).
struct ForwardBatch {
  std::size_t n = 0;
  TextBatch text;
  std::vector<std::size_t> mask_rows;   // global rows of every [MASK] token
  std::vector<std::size_t> supervised;  // indices into mask_rows with a teacher row
  ImageBatch images;
  TextBatch instructions;
  std::vector<double> targets;  // normalized, one per anchor
};

struct ForwardResult {
  ad::Var preds;                           // [n x 1]
  std::optional<ad::Var> supervised_imputed;  // [supervised x d]
  std::optional<ad::Var> u;                // [n x u_dim]
  std::optional<ad::Var> o;                // [n x d]
  ad::Var q;                               // [n x decoder_d]
};

class LiteModel {
 public:
  LiteModel(const ModelConfig& cfg, std::size_t n_features, std::size_t vocab_size, std::uint64_t seed);
  LiteModel(const LiteModel&) = delete;
  LiteModel& operator=(const LiteModel&) = delete;

  /// `noise` drives the gating noise; null disables it (evaluation).
  ForwardResult forward(nn::Binder& bind, const ForwardBatch& batch, Rng* noise) const;

  /// Teacher rows for artificially masked features: mean encoder state over
  /// each value span of the unmasked sequences, computed without gradient.
  Tensor teacher_states(const TextBatch& originals,
                        const std::vector<std::pair<std::size_t, std::pair<std::size_t, std::size_t>>>& spans) const;

  const ModelConfig& config() const { return cfg_; }
  nn::ParameterStore& params() { return store_; }
  const nn::ParameterStore& params() const { return store_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t image_width() const { return image_w_; }
  std::size_t image_height() const { return image_h_; }

  /// SHA-256 over the frozen decoder parameters.
  std::string frozen_hash() const;

  const TextEncoder& text_encoder() const { return text_; }
  const ImageEncoder& image_encoder() const { return image_; }
  const ExpertBank& experts() const { return bank_; }
  const FusionModule& fusion() const { return fusion_; }

 private:
  ModelConfig cfg_;
  std::uint64_t seed_;
  std::size_t image_w_ = 0, image_h_ = 0;
  nn::ParameterStore store_;
  TextEncoder text_;
  ImageEncoder image_;
  ExpertBank bank_;
  nn::Linear linear_imputer_;
  FusionModule fusion_;
};

}  // namespace lite
