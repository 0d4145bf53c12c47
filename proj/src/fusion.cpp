#include "lite/fusion.hpp"

#include "lite/errors.hpp"

namespace lite {

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v = {Variant::Full,   Variant::TextOff,    Variant::ImageOff, Variant::LlmOff,
                                         Variant::ImpOff, Variant::SmoeLinear, Variant::MtgOff};
  return v;
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::TextOff: return "text_off";
    case Variant::ImageOff: return "image_off";
    case Variant::LlmOff: return "llm_off";
    case Variant::ImpOff: return "imp_off";
    case Variant::SmoeLinear: return "smoe_linear";
    case Variant::MtgOff: return "mtg_off";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  for (Variant v : all_variants())
    if (variant_name(v) == name) return v;
  throw ConfigError("unknown ablation variant '" + name + "'");
}

void FusionConfig::validate() const {
  if (decoder_d == 0 || decoder_heads == 0 || decoder_d % decoder_heads != 0)
    throw ConfigError("decoder_d must be a positive multiple of decoder_heads");
  if (decoder_layers == 0 || decoder_ffn == 0) throw ConfigError("decoder layers and ffn width must be positive");
  if (max_instruction_len == 0) throw ConfigError("max_instruction_len must be positive");
  if (eta1 < 0 || eta2 < 0) throw ConfigError("loss coefficients must be non-negative");
  if (eta1 == 0 && eta2 == 0) throw ConfigError("at least one loss coefficient must be positive");
}

FusionModule FusionModule::create(nn::ParameterStore& store, const FusionConfig& cfg, std::size_t u_dim,
                                  std::size_t o_dim, bool use_text, bool use_image, bool use_decoder,
                                  std::size_t vocab_size, Rng& rng, Rng& decoder_rng) {
  cfg.validate();
  if (!use_text && !use_image) throw ConfigError("fusion needs text or image input");
  FusionModule f;
  f.cfg_ = cfg;
  f.use_text_ = use_text;
  f.use_image_ = use_image;
  f.use_decoder_ = use_decoder;
  const std::size_t dd = cfg.decoder_d;
  f.instr_emb_ = &store.add("fusion.instr_emb", nn::normal({vocab_size, dd}, 0.5, rng, true));
  if (use_decoder) {
    if (use_text) f.proj_u_ = nn::Linear::create(store, "fusion.proj_u", u_dim, dd, rng);
    if (use_image) f.proj_o_ = nn::Linear::create(store, "fusion.proj_o", o_dim, dd, rng);
    f.pos_emb_ = &store.add("decoder.pos_emb",
                            nn::normal({cfg.max_instruction_len + 2, dd}, 0.5, decoder_rng, false));
    f.decoder_ = nn::TransformerStack::create(store, "decoder", {dd, cfg.decoder_heads, cfg.decoder_ffn},
                                              cfg.decoder_layers, decoder_rng, false);
  } else {
    const std::size_t in = (use_text ? u_dim : 0) + (use_image ? o_dim : 0) + dd;
    f.direct_ = nn::Linear::create(store, "fusion.direct", in, dd, rng);
  }
  f.head_ = nn::Linear::create(store, "head", dd, 1, rng);
  return f;
}

ad::Var FusionModule::fuse(nn::Binder& bind, const FusionInput& input) const {
  if (input.instructions == nullptr) throw ShapeError("fuse: missing instruction batch");
  if (use_text_ != input.u.has_value() || use_image_ != input.o.has_value())
    throw ShapeError("fuse: inputs do not match the configured variant");
  const TextBatch& instr = *input.instructions;
  const std::size_t batch = instr.count();
  const ad::Var emb = ad::embedding(bind(*instr_emb_), instr.ids);

  if (!use_decoder_) {
    std::vector<ad::Var> parts;
    if (input.u) parts.push_back(*input.u);
    if (input.o) parts.push_back(*input.o);
    parts.push_back(pool_sequences(emb, instr));
    return direct_(bind, ad::concat(parts, 1));
  }

  const std::size_t prefix = (use_text_ ? 1 : 0) + (use_image_ ? 1 : 0);
  const std::size_t dd = cfg_.decoder_d;
  std::vector<std::size_t> u_rows, o_rows, instr_rows, last_rows;
  std::vector<std::int32_t> positions;
  auto layout = std::make_shared<kernels::AttentionLayout>();
  layout->n_heads = cfg_.decoder_heads;
  layout->causal = true;
  std::size_t row = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    const auto& seg = instr.segments[b];
    const std::size_t len = prefix + seg.length;
    if (len > cfg_.max_instruction_len + 2)
      throw ShapeError("instruction of " + std::to_string(seg.length) + " tokens exceeds max_instruction_len " +
                       std::to_string(cfg_.max_instruction_len));
    layout->segments.push_back({row, len});
    std::size_t p = row;
    if (use_text_) u_rows.push_back(p++);
    if (use_image_) o_rows.push_back(p++);
    for (std::size_t i = 0; i < seg.length; ++i) instr_rows.push_back(p++);
    for (std::size_t i = 0; i < len; ++i) positions.push_back(static_cast<std::int32_t>(i));
    row += len;
    last_rows.push_back(row - 1);
  }
  std::vector<ad::RowPlacement> pieces;
  if (use_text_) pieces.push_back({proj_u_(bind, *input.u), u_rows});
  if (use_image_) pieces.push_back({proj_o_(bind, *input.o), o_rows});
  pieces.push_back({emb, instr_rows});
  ad::Var x = ad::place_rows(bind.graph(), row, dd, pieces);
  x = ad::add(x, ad::embedding(bind(*pos_emb_), positions));
  const ad::Var h = decoder_(bind, x, layout);
  return ad::gather_rows(h, last_rows);
}

ad::Var prediction_loss(ad::Graph& g, ad::Var preds, const std::vector<double>& targets) {
  if (targets.empty()) throw DataError("prediction loss needs at least one observed target");
  if (preds.value().size() != targets.size())
    throw ShapeError("prediction_loss: " + std::to_string(preds.value().size()) + " predictions vs " +
                     std::to_string(targets.size()) + " targets");
  const ad::Var t = g.constant(Tensor(preds.value().shape(), targets));
  return ad::sqrt(ad::mean(ad::square(ad::sub(preds, t))));
}

ad::Var total_loss(ad::Var l_r, std::optional<ad::Var> l_i, double eta1, double eta2) {
  ad::Var total = ad::scale(l_r, eta1);
  if (l_i && eta2 != 0.0) total = ad::add(total, ad::scale(*l_i, eta2));
  return total;
}

}  // namespace lite
