#include "lite/model.hpp"

#include <cstring>

#include "lite/errors.hpp"

namespace lite {

void ModelConfig::validate(std::size_t n_features) const {
  encoder.validate();
  smoe.validate();
  fusion.validate();
  if (beta == 0) throw ConfigError("look-back window beta must be positive");
  if (encoder.max_seq_len > 4096) throw ConfigError("max_seq_len is limited to 4096");
  grid_shape(n_features + 1, raster);
  if (raster.cell_w % encoder.patch_size != 0 || raster.cell_h % encoder.patch_size != 0)
    throw ConfigError("patch_size " + std::to_string(encoder.patch_size) + " does not divide the " +
                      std::to_string(raster.cell_w) + "x" + std::to_string(raster.cell_h) + " raster cells");
}

namespace {
constexpr std::uint64_t kDecoderSeedSalt = 0x5DEECE66DULL;
}

LiteModel::LiteModel(const ModelConfig& cfg, std::size_t n_features, std::size_t vocab_size, std::uint64_t seed)
    : cfg_(cfg), seed_(seed) {
  cfg_.validate(n_features);
  const auto [cols, rows] = grid_shape(n_features + 1, cfg_.raster);
  image_w_ = cols * cfg_.raster.cell_w;
  image_h_ = rows * cfg_.raster.cell_h;
  Rng rng(seed);
  Rng decoder_rng(seed ^ kDecoderSeedSalt);
  const std::size_t d = cfg_.encoder.d_model;
  if (cfg_.text_on()) {
    text_ = TextEncoder::create(store_, "text", cfg_.encoder, vocab_size, rng);
    if (cfg_.variant == Variant::SmoeLinear)
      linear_imputer_ = nn::Linear::create(store_, "imputer_linear", d, d, rng);
    else if (cfg_.imputation_on())
      bank_ = ExpertBank::create(store_, "smoe", d, cfg_.smoe, rng);
  }
  if (cfg_.image_on()) image_ = ImageEncoder::create(store_, "image", cfg_.encoder, image_w_, image_h_, rng);
  const std::size_t u_dim = cfg_.multi_granularity() ? 3 * d : d;
  fusion_ = FusionModule::create(store_, cfg_.fusion, u_dim, d, cfg_.text_on(), cfg_.image_on(), cfg_.decoder_on(),
                                 vocab_size, rng, decoder_rng);
}

ForwardResult LiteModel::forward(nn::Binder& bind, const ForwardBatch& batch, Rng* noise) const {
  ForwardResult res;
  FusionInput input;
  input.instructions = &batch.instructions;
  if (batch.instructions.count() != batch.n) throw ShapeError("forward: instruction count mismatch");
  if (cfg_.text_on()) {
    if (batch.text.count() != batch.n * kRecordsPerAnchor) throw ShapeError("forward: text sequence count mismatch");
    ad::Var states = text_.states(bind, batch.text);
    if (cfg_.imputation_on() && !batch.mask_rows.empty()) {
      const ad::Var m = ad::gather_rows(states, batch.mask_rows);
      const ad::Var imputed = cfg_.variant == Variant::SmoeLinear ? linear_imputer_(bind, m)
                                                                  : bank_.impute(bind, m, cfg_.smoe.noise_enabled ? noise : nullptr);
      if (!batch.supervised.empty()) res.supervised_imputed = ad::gather_rows(imputed, batch.supervised);
      states = substitute_masks(states, batch.mask_rows, imputed);
    }
    const ad::Var pooled = pool_sequences(states, batch.text);
    res.u = encode_granularities(pooled, batch.n, cfg_.multi_granularity());
    input.u = res.u;
  }
  if (cfg_.image_on()) {
    if (batch.images.n_images != batch.n) throw ShapeError("forward: image count mismatch");
    res.o = image_.encode(bind, batch.images).pooled;
    input.o = res.o;
  }
  res.q = fusion_.fuse(bind, input);
  res.preds = fusion_.predict(bind, res.q);
  return res;
}

Tensor LiteModel::teacher_states(
    const TextBatch& originals,
    const std::vector<std::pair<std::size_t, std::pair<std::size_t, std::size_t>>>& spans) const {
  const std::size_t d = cfg_.encoder.d_model;
  ad::Graph g(false);
  nn::Binder bind(g);
  const Tensor& states = text_.states(bind, originals).value();
  std::vector<double> out(spans.size() * d, 0.0);
  for (std::size_t i = 0; i < spans.size(); ++i) {
    const auto& [seq, span] = spans[i];
    const auto [first, count] = span;
    if (count == 0) throw DataError("teacher span is empty");
    const std::size_t base = originals.segments.at(seq).start;
    for (std::size_t r = base + first; r < base + first + count; ++r)
      for (std::size_t c = 0; c < d; ++c) out[i * d + c] += states.values()[r * d + c];
    for (std::size_t c = 0; c < d; ++c) out[i * d + c] /= static_cast<double>(count);
  }
  return Tensor({spans.size(), d}, std::move(out));
}

std::string LiteModel::frozen_hash() const {
  std::string bytes;
  for (const auto& path : store_.frozen_paths()) {
    const Tensor& t = store_.get(path);
    bytes += path;
    bytes.push_back('\0');
    const auto* raw = reinterpret_cast<const char*>(t.values().data());
    bytes.append(raw, t.size() * sizeof(double));
  }
  return sha256_hex(bytes);
}

}  // namespace lite
