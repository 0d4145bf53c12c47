#include "lite/encoders.hpp"

#include "lite/errors.hpp"

namespace lite {

void EncoderConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
    throw ConfigError("encoder d_model must be a positive multiple of n_heads");
  if (n_layers == 0) throw ConfigError("encoder needs at least one layer");
  if (ffn_hidden == 0 || max_seq_len == 0 || patch_size == 0)
    throw ConfigError("encoder ffn_hidden, max_seq_len and patch_size must be positive");
}

std::size_t TextBatch::append(std::span<const std::int32_t> seq_ids) {
  if (seq_ids.empty()) throw ShapeError("TextBatch: empty sequence");
  const std::size_t start = ids.size();
  for (std::size_t i = 0; i < seq_ids.size(); ++i) {
    ids.push_back(seq_ids[i]);
    positions.push_back(static_cast<std::int32_t>(i));
  }
  segments.push_back({start, seq_ids.size()});
  return start;
}

TextEncoder TextEncoder::create(nn::ParameterStore& store, const std::string& path, const EncoderConfig& cfg,
                                std::size_t vocab_size, Rng& rng) {
  cfg.validate();
  TextEncoder enc;
  enc.cfg_ = cfg;
  enc.token_emb_ = &store.add(path + ".token_emb", nn::normal({vocab_size, cfg.d_model}, 0.5, rng, true));
  enc.pos_emb_ = &store.add(path + ".pos_emb", nn::normal({cfg.max_seq_len, cfg.d_model}, 0.5, rng, true));
  enc.stack_ = nn::TransformerStack::create(store, path, cfg.block(), cfg.n_layers, rng);
  return enc;
}

ad::Var TextEncoder::states(nn::Binder& bind, const TextBatch& batch) const {
  for (const auto& seg : batch.segments)
    if (seg.length > cfg_.max_seq_len)
      throw ShapeError("sequence of " + std::to_string(seg.length) + " tokens exceeds max_seq_len " +
                       std::to_string(cfg_.max_seq_len));
  auto layout = std::make_shared<kernels::AttentionLayout>();
  layout->segments = batch.segments;
  layout->n_heads = cfg_.n_heads;
  bool any_pad = false;
  for (auto id : batch.ids) any_pad = any_pad || id == kPadId;
  if (any_pad) {
    layout->key_valid.resize(batch.rows());
    for (std::size_t i = 0; i < batch.rows(); ++i) layout->key_valid[i] = batch.ids[i] != kPadId;
  }
  const ad::Var x = ad::add(ad::embedding(bind(*token_emb_), batch.ids), ad::embedding(bind(*pos_emb_), batch.positions));
  return stack_(bind, x, layout);
}

ad::Var pool_sequences(ad::Var states, const TextBatch& batch) {
  bool any_pad = false;
  for (auto id : batch.ids) any_pad = any_pad || id == kPadId;
  if (!any_pad) return ad::segment_mean(states, batch.segments);
  std::vector<std::uint8_t> valid(batch.rows());
  for (std::size_t i = 0; i < batch.rows(); ++i) valid[i] = batch.ids[i] != kPadId;
  return ad::segment_mean(states, batch.segments, valid);
}

SemanticEncoding TextEncoder::encode(nn::Binder& bind, const TextBatch& batch) const {
  const ad::Var s = states(bind, batch);
  return {s, pool_sequences(s, batch)};
}

ImageBatch make_image_batch(const std::vector<std::span<const std::uint8_t>>& images, std::size_t width,
                            std::size_t height, std::size_t patch) {
  if (patch == 0 || width % patch != 0 || height % patch != 0)
    throw ShapeError("image " + std::to_string(width) + "x" + std::to_string(height) +
                     " is not divisible into " + std::to_string(patch) + "-pixel patches");
  ImageBatch b;
  b.patch = patch;
  b.grid_w = width / patch;
  b.grid_h = height / patch;
  b.n_images = images.size();
  const std::size_t pd = patch * patch;
  b.patches.resize(b.n_images * b.patches_per_image() * pd);
  std::size_t row = 0;
  for (const auto& img : images) {
    if (img.size() != width * height) throw ShapeError("make_image_batch: image size mismatch");
    for (std::size_t gy = 0; gy < b.grid_h; ++gy)
      for (std::size_t gx = 0; gx < b.grid_w; ++gx, ++row)
        for (std::size_t py = 0; py < patch; ++py)
          for (std::size_t px = 0; px < patch; ++px)
            b.patches[row * pd + py * patch + px] =
                img[(gy * patch + py) * width + gx * patch + px] ? 1.0 : 0.0;
  }
  return b;
}

ImageBatch make_image_batch(const std::vector<const TrendImage*>& images, std::size_t patch) {
  if (images.empty()) throw ShapeError("make_image_batch: no images");
  const std::size_t w = images.front()->width, h = images.front()->height;
  std::vector<std::vector<std::uint8_t>> bytes;
  for (const auto* img : images) {
    if (img->width != w || img->height != h) throw ShapeError("make_image_batch: image size mismatch");
    std::vector<std::uint8_t> b(img->pixels.size());
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = img->pixels[i] != 0.0 ? 255 : 0;
    bytes.push_back(std::move(b));
  }
  std::vector<std::span<const std::uint8_t>> views(bytes.begin(), bytes.end());
  return make_image_batch(views, w, h, patch);
}

ImageEncoder ImageEncoder::create(nn::ParameterStore& store, const std::string& path, const EncoderConfig& cfg,
                                  std::size_t width, std::size_t height, Rng& rng) {
  cfg.validate();
  if (width % cfg.patch_size != 0 || height % cfg.patch_size != 0)
    throw ConfigError("patch_size " + std::to_string(cfg.patch_size) + " does not divide the " +
                      std::to_string(width) + "x" + std::to_string(height) + " image");
  ImageEncoder enc;
  enc.cfg_ = cfg;
  enc.grid_w_ = width / cfg.patch_size;
  enc.grid_h_ = height / cfg.patch_size;
  enc.patch_proj_ = nn::Linear::create(store, path + ".patch_proj", cfg.patch_size * cfg.patch_size,
                                       cfg.d_model, rng);
  enc.row_emb_ = &store.add(path + ".row_emb", nn::normal({enc.grid_h_, cfg.d_model}, 0.5, rng, true));
  enc.col_emb_ = &store.add(path + ".col_emb", nn::normal({enc.grid_w_, cfg.d_model}, 0.5, rng, true));
  enc.stack_ = nn::TransformerStack::create(store, path, cfg.block(), cfg.n_layers, rng);
  return enc;
}

VisualEncoding ImageEncoder::encode(nn::Binder& bind, const ImageBatch& batch) const {
  if (batch.grid_w != grid_w_ || batch.grid_h != grid_h_ || batch.patch != cfg_.patch_size)
    throw ShapeError("image batch geometry does not match the encoder");
  const std::size_t per = batch.patches_per_image();
  const std::size_t rows = batch.n_images * per;
  const std::size_t pd = batch.patch * batch.patch;
  std::vector<std::int32_t> prow(rows), pcol(rows);
  auto layout = std::make_shared<kernels::AttentionLayout>();
  layout->n_heads = cfg_.n_heads;
  std::vector<kernels::Segment> segments;
  for (std::size_t i = 0; i < batch.n_images; ++i) {
    segments.push_back({i * per, per});
    for (std::size_t p = 0; p < per; ++p) {
      prow[i * per + p] = static_cast<std::int32_t>(p / grid_w_);
      pcol[i * per + p] = static_cast<std::int32_t>(p % grid_w_);
    }
  }
  layout->segments = segments;
  ad::Graph& g = bind.graph();
  const ad::Var x0 = g.constant(Tensor({rows, pd}, batch.patches));
  ad::Var x = patch_proj_(bind, x0);
  x = ad::add(x, ad::add(ad::embedding(bind(*row_emb_), prow), ad::embedding(bind(*col_emb_), pcol)));
  const ad::Var states = stack_(bind, x, layout);
  return {states, ad::segment_mean(states, segments)};
}

ad::Var encode_granularities(ad::Var pooled, std::size_t n_anchors, bool multi_granularity) {
  if (pooled.value().rows() != n_anchors * kRecordsPerAnchor)
    throw ShapeError("encode_granularities: expected " + std::to_string(n_anchors * kRecordsPerAnchor) +
                     " pooled rows, got " + std::to_string(pooled.value().rows()));
  std::vector<std::size_t> current;
  std::vector<kernels::Segment> weekly, yearly;
  for (std::size_t a = 0; a < n_anchors; ++a) {
    const std::size_t base = a * kRecordsPerAnchor;
    current.push_back(base);
    weekly.push_back({base + 1, kWeeklySpan});
    yearly.push_back({base + 1 + kWeeklySpan, kYearlySpan});
  }
  const ad::Var uc = ad::gather_rows(pooled, current);
  if (!multi_granularity) return uc;
  return ad::concat({uc, ad::segment_mean(pooled, weekly), ad::segment_mean(pooled, yearly)}, 1);
}

}  // namespace lite
