#pragma once
// Fusion of text (U), image (O) and domain-instruction inputs through a frozen
// causal decoder, the prediction head, and the training objective.

#include <optional>
#include <string>
#include <vector>

#include "lite/encoders.hpp"
#include "lite/nn.hpp"

namespace lite {

enum class Variant { Full, TextOff, ImageOff, LlmOff, ImpOff, SmoeLinear, MtgOff };

const std::vector<Variant>& all_variants();
std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);  // ConfigError when unknown

struct FusionConfig {
  std::size_t decoder_layers = 2;
  std::size_t decoder_d = 64;
  std::size_t decoder_heads = 4;
  std::size_t decoder_ffn = 256;
  std::size_t max_instruction_len = 192;
  double eta1 = 1.0;
  double eta2 = 0.5;

  void validate() const;
};

/// Per-anchor inputs to the fuser; absent parts follow the ablation variant.
struct FusionInput {
  std::optional<ad::Var> u;  // [B x u_dim]
  std::optional<ad::Var> o;  // [B x d_model]
  const TextBatch* instructions = nullptr;  // B sequences
};

class FusionModule {
 public:
  FusionModule() = default;
  /// Trainable adapters come from `rng`; frozen decoder weights from `decoder_rng`.
  static FusionModule create(nn::ParameterStore& store, const FusionConfig& cfg, std::size_t u_dim,
                             std::size_t o_dim, bool use_text, bool use_image, bool use_decoder,
                             std::size_t vocab_size, Rng& rng, Rng& decoder_rng);

  /// Q [B x decoder_d].
  ad::Var fuse(nn::Binder& bind, const FusionInput& input) const;
  /// Normalized predictions [B x 1].
  ad::Var predict(nn::Binder& bind, ad::Var q) const { return head_(bind, q); }

  bool has_decoder() const { return use_decoder_; }
  const nn::Linear& head() const { return head_; }
  const FusionConfig& config() const { return cfg_; }

 private:
  FusionConfig cfg_;
  bool use_text_ = true, use_image_ = true, use_decoder_ = true;
  nn::Linear proj_u_, proj_o_;
  Tensor* instr_emb_ = nullptr;
  Tensor* pos_emb_ = nullptr;  // frozen
  nn::TransformerStack decoder_;  // frozen
  nn::Linear direct_;  // replaces the decoder when it is disabled
  nn::Linear head_;
};

/// sqrt(mean((pred - target)^2)); DataError when there are no pairs.
ad::Var prediction_loss(ad::Graph& g, ad::Var preds, const std::vector<double>& targets);

/// eta1 * l_r + eta2 * l_i (the imputation term is skipped when absent).
ad::Var total_loss(ad::Var l_r, std::optional<ad::Var> l_i, double eta1, double eta2);

}  // namespace lite
