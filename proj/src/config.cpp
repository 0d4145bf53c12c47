#include "lite/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "lite/errors.hpp"
#include "lite/util.hpp"

namespace lite {

namespace {

const std::vector<std::pair<std::string, std::string>>& defaults() {
  static const std::vector<std::pair<std::string, std::string>> d = {
      {"seed", "7"},
      {"data.csv", ""},
      {"data.domain", "SYN-Temp"},
      {"data.train_fraction", "0.5"},
      {"synthetic.seed", ""},
      {"synthetic.regions", "4"},
      {"synthetic.days", "800"},
      {"synthetic.missing_rate", "0.2"},
      {"synthetic.target_rate", "0.5"},
      {"synthetic.shift.features", ""},
      {"synthetic.shift.after_day", "0"},
      {"synthetic.shift.delta", "0"},
      {"window.beta", "30"},
      {"raster.cell_w", "64"},
      {"raster.cell_h", "64"},
      {"encoder.d_model", "64"},
      {"encoder.layers", "2"},
      {"encoder.heads", "4"},
      {"encoder.ffn", "256"},
      {"encoder.max_seq_len", "256"},
      {"encoder.patch", "8"},
      {"smoe.experts", "4"},
      {"smoe.top_k", "2"},
      {"smoe.hidden", "256"},
      {"smoe.noise", "true"},
      {"fusion.decoder_layers", "2"},
      {"fusion.decoder_d", "64"},
      {"fusion.decoder_heads", "4"},
      {"fusion.decoder_ffn", "256"},
      {"fusion.max_instruction_len", "192"},
      {"fusion.eta1", "1.0"},
      {"fusion.eta2", "0.5"},
      {"ablation.variant", "full"},
      {"train.lr", "0.001"},
      {"train.weight_decay", "0.01"},
      {"train.batch_size", "16"},
      {"train.epochs", "10"},
      {"train.p_mask", "0.15"},
      {"train.grad_clip", "1.0"},
      {"eval.batch_size", "32"},
      {"mask.mode", "fixed"},
      {"mask.features", "rainfall,average cloud cover fraction,groundwater temperature,subsurface temperature"},
      {"mask.max_count", "4"},
      {"mask.seed", ""},
      {"ood.train_regions", "3"},
      {"checkpoint.path", ""},
      {"cache.enabled", "true"},
  };
  return d;
}

std::optional<std::uint64_t> parse_uint(const std::string& s) {
  std::uint64_t v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (s.empty() || ec != std::errc() || ptr != end) return std::nullopt;
  return v;
}

std::optional<std::int64_t> parse_int(const std::string& s) {
  std::int64_t v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (s.empty() || ec != std::errc() || ptr != end) return std::nullopt;
  return v;
}

std::optional<double> parse_double(const std::string& s) {
  double v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (s.empty() || ec != std::errc() || ptr != end || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::optional<bool> parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  return std::nullopt;
}

std::vector<std::string> parse_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  for (const auto& item : split(s, ',')) out.push_back(trim(item));
  return out;
}

// Type and range rule per key; returns an error message or "".
using Rule = std::function<std::string(const std::string&)>;

Rule uint_rule(std::uint64_t lo, std::uint64_t hi = UINT64_MAX) {
  return [=](const std::string& s) -> std::string {
    const auto v = parse_uint(s);
    if (!v) return "expected a non-negative integer";
    if (*v < lo || *v > hi) return "must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]";
    return "";
  };
}

Rule optional_uint_rule() {
  return [](const std::string& s) -> std::string {
    if (s.empty()) return "";
    return parse_uint(s) ? "" : "expected a non-negative integer or empty";
  };
}

Rule double_rule(double lo, double hi, bool lo_open = false, bool hi_open = false) {
  return [=](const std::string& s) -> std::string {
    const auto v = parse_double(s);
    if (!v) return "expected a finite number";
    if ((lo_open ? *v <= lo : *v < lo) || (hi_open ? *v >= hi : *v > hi))
      return std::string("must lie in ") + (lo_open ? "(" : "[") + format_exact(lo) + ", " + format_exact(hi) +
             (hi_open ? ")" : "]");
    return "";
  };
}

Rule bool_rule() {
  return [](const std::string& s) -> std::string { return parse_bool(s) ? "" : "expected true or false"; };
}

Rule any_rule() {
  return [](const std::string&) -> std::string { return ""; };
}

const std::map<std::string, Rule>& rules() {
  constexpr double kInf = 1e300;
  static const std::map<std::string, Rule> r = {
      {"seed", uint_rule(0)},
      {"data.csv", any_rule()},
      {"data.domain",
       [](const std::string& s) -> std::string {
         try {
           DomainDescription::preset(s);
           return "";
         } catch (const ConfigError&) {
           return "unknown domain (expected SYN-Temp, CRW-Temp, CRW-Flow or AGR)";
         }
       }},
      {"data.train_fraction", double_rule(0.0, 1.0, true, true)},
      {"synthetic.seed", optional_uint_rule()},
      {"synthetic.regions", uint_rule(1, 1000)},
      {"synthetic.days", uint_rule(1, 1000000)},
      {"synthetic.missing_rate", double_rule(0.0, 1.0, false, true)},
      {"synthetic.target_rate", double_rule(0.0, 1.0, true, false)},
      {"synthetic.shift.features", any_rule()},
      {"synthetic.shift.after_day",
       [](const std::string& s) -> std::string { return parse_int(s) ? "" : "expected an integer"; }},
      {"synthetic.shift.delta", double_rule(-kInf, kInf)},
      {"window.beta", uint_rule(1, 4096)},
      {"raster.cell_w", uint_rule(2, 4096)},
      {"raster.cell_h", uint_rule(2, 4096)},
      {"encoder.d_model", uint_rule(1, 4096)},
      {"encoder.layers", uint_rule(1, 64)},
      {"encoder.heads", uint_rule(1, 256)},
      {"encoder.ffn", uint_rule(1, 65536)},
      {"encoder.max_seq_len", uint_rule(1, 4096)},
      {"encoder.patch", uint_rule(1, 4096)},
      {"smoe.experts", uint_rule(1, 256)},
      {"smoe.top_k", uint_rule(1, 256)},
      {"smoe.hidden", uint_rule(1, 65536)},
      {"smoe.noise", bool_rule()},
      {"fusion.decoder_layers", uint_rule(1, 64)},
      {"fusion.decoder_d", uint_rule(1, 4096)},
      {"fusion.decoder_heads", uint_rule(1, 256)},
      {"fusion.decoder_ffn", uint_rule(1, 65536)},
      {"fusion.max_instruction_len", uint_rule(1, 4096)},
      {"fusion.eta1", double_rule(0.0, kInf)},
      {"fusion.eta2", double_rule(0.0, kInf)},
      {"ablation.variant",
       [](const std::string& s) -> std::string {
         try {
           parse_variant(s);
           return "";
         } catch (const ConfigError&) {
           return "unknown variant (expected full, text_off, image_off, llm_off, imp_off, smoe_linear or mtg_off)";
         }
       }},
      {"train.lr", double_rule(0.0, kInf, true)},
      {"train.weight_decay", double_rule(0.0, kInf)},
      {"train.batch_size", uint_rule(1, 1u << 20)},
      {"train.epochs", uint_rule(0, 1u << 20)},
      {"train.p_mask", double_rule(0.0, 1.0, false, true)},
      {"train.grad_clip", double_rule(0.0, kInf, true)},
      {"eval.batch_size", uint_rule(1, 1u << 20)},
      {"mask.mode",
       [](const std::string& s) -> std::string { return s == "fixed" || s == "random" ? "" : "expected fixed or random"; }},
      {"mask.features", any_rule()},
      {"mask.max_count", uint_rule(1, 1024)},
      {"mask.seed", optional_uint_rule()},
      {"ood.train_regions", uint_rule(1, 1000)},
      {"checkpoint.path", any_rule()},
      {"cache.enabled", bool_rule()},
  };
  return r;
}

std::uint64_t u64(const RunConfig& c, const std::string& key) { return *parse_uint(c.get(key)); }
std::size_t sz(const RunConfig& c, const std::string& key) { return static_cast<std::size_t>(u64(c, key)); }
double dbl(const RunConfig& c, const std::string& key) { return *parse_double(c.get(key)); }
bool boolean(const RunConfig& c, const std::string& key) { return *parse_bool(c.get(key)); }

}  // namespace

RunConfig::RunConfig() {
  for (const auto& [k, v] : defaults()) values_[k] = v;
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig cfg;
  std::vector<std::string> assignments;
  std::vector<std::string> errors;
  std::size_t line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (line.find('=') == std::string::npos) {
      errors.push_back("line " + std::to_string(line_no) + ": expected key=value");
      continue;
    }
    assignments.push_back(line);
  }
  try {
    cfg.apply(assignments);
  } catch (const ConfigError& e) {
    errors.push_back(e.what());
  }
  if (!errors.empty()) {
    std::string msg;
    for (const auto& e : errors) msg += (msg.empty() ? "" : "; ") + e;
    throw ConfigError(msg);
  }
  return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

void RunConfig::apply(const std::vector<std::string>& assignments) {
  std::vector<std::string> errors;
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos) {
      errors.push_back("'" + a + "' is not key=value");
      continue;
    }
    const std::string key = trim(a.substr(0, eq));
    if (!values_.count(key)) {
      errors.push_back("unknown key '" + key + "'");
      continue;
    }
    values_[key] = trim(a.substr(eq + 1));
  }
  if (!errors.empty()) {
    std::string msg;
    for (const auto& e : errors) msg += (msg.empty() ? "" : "; ") + e;
    throw ConfigError(msg);
  }
}

void RunConfig::set(const std::string& key, const std::string& value) { apply({key + "=" + value}); }

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown key '" + key + "'");
  return it->second;
}

void RunConfig::validate() const {
  std::vector<std::string> errors;
  for (const auto& [key, value] : values_) {
    const std::string err = rules().at(key)(value);
    if (!err.empty()) errors.push_back(key + ": " + err);
  }
  // Cross-field rules run whenever the keys they read are well-typed, so one
  // pass reports every problem.
  std::vector<std::string> bad_keys;
  for (const auto& e : errors) bad_keys.push_back(e.substr(0, e.find(':')));
  auto check = [&](const std::string& keys, std::initializer_list<const char*> reads, auto&& fn) {
    for (const auto& k : bad_keys)
      for (const char* prefix : reads)
        if (k.starts_with(prefix)) return;
    try {
      fn();
    } catch (const Error& e) {
      errors.push_back(keys + ": " + e.what());
    }
  };
  const auto model_keys = {"ablation.", "encoder.", "fusion.", "raster.", "smoe.", "window.", "seed"};
  check("encoder.*", model_keys, [&] { model().encoder.validate(); });
  check("smoe.experts,smoe.top_k", model_keys, [&] { model().smoe.validate(); });
  check("fusion.*", model_keys, [&] { model().fusion.validate(); });
  check("raster.*,encoder.patch", model_keys, [&] { model().validate(FeatureSchema::default_schema().size()); });
  check("train.*", {"train.", "eval.", "seed"}, [&] { train().validate(); });
  check("mask.*", {"mask.", "seed"}, [&] {
    const auto spec = mask(FeatureSchema::default_schema());
    if (spec.mode == MaskMode::Fixed && spec.features.size() < spec.max_count)
      throw ConfigError("fixed mode lists fewer features than mask.max_count");
  });
  check("synthetic.shift.features", {"synthetic.shift.features"}, [&] {
    const auto schema = FeatureSchema::default_schema();
    for (const auto& f : parse_list(get("synthetic.shift.features"))) schema.index_of(f);
  });
  if (!errors.empty()) {
    std::string msg = "invalid configuration: ";
    for (std::size_t i = 0; i < errors.size(); ++i) msg += (i ? "; " : "") + errors[i];
    throw ConfigError(msg);
  }
}

std::string RunConfig::serialize() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

std::uint64_t RunConfig::seed() const { return u64(*this, "seed"); }

ModelConfig RunConfig::model() const {
  ModelConfig m;
  m.encoder.d_model = sz(*this, "encoder.d_model");
  m.encoder.n_layers = sz(*this, "encoder.layers");
  m.encoder.n_heads = sz(*this, "encoder.heads");
  m.encoder.ffn_hidden = sz(*this, "encoder.ffn");
  m.encoder.max_seq_len = sz(*this, "encoder.max_seq_len");
  m.encoder.patch_size = sz(*this, "encoder.patch");
  m.smoe.n_experts = sz(*this, "smoe.experts");
  m.smoe.top_k = sz(*this, "smoe.top_k");
  m.smoe.expert_hidden = sz(*this, "smoe.hidden");
  m.smoe.noise_enabled = boolean(*this, "smoe.noise");
  m.fusion.decoder_layers = sz(*this, "fusion.decoder_layers");
  m.fusion.decoder_d = sz(*this, "fusion.decoder_d");
  m.fusion.decoder_heads = sz(*this, "fusion.decoder_heads");
  m.fusion.decoder_ffn = sz(*this, "fusion.decoder_ffn");
  m.fusion.max_instruction_len = sz(*this, "fusion.max_instruction_len");
  m.fusion.eta1 = dbl(*this, "fusion.eta1");
  m.fusion.eta2 = dbl(*this, "fusion.eta2");
  m.raster.cell_w = sz(*this, "raster.cell_w");
  m.raster.cell_h = sz(*this, "raster.cell_h");
  m.beta = sz(*this, "window.beta");
  m.variant = parse_variant(get("ablation.variant"));
  return m;
}

void TrainConfig::validate() const {
  if (!(lr > 0)) throw ConfigError("learning rate must be positive");
  if (weight_decay < 0) throw ConfigError("weight decay must be non-negative");
  if (batch_size == 0 || eval_batch == 0) throw ConfigError("batch sizes must be positive");
  if (p_mask < 0 || p_mask >= 1) throw ConfigError("p_mask must lie in [0, 1)");
  if (!(grad_clip > 0)) throw ConfigError("grad_clip must be positive");
}

TrainConfig RunConfig::train() const {
  TrainConfig t;
  t.lr = dbl(*this, "train.lr");
  t.weight_decay = dbl(*this, "train.weight_decay");
  t.batch_size = sz(*this, "train.batch_size");
  t.epochs = sz(*this, "train.epochs");
  t.seed = seed();
  t.p_mask = dbl(*this, "train.p_mask");
  t.grad_clip = dbl(*this, "train.grad_clip");
  t.eval_batch = sz(*this, "eval.batch_size");
  return t;
}

SyntheticSpec RunConfig::synthetic() const {
  SyntheticSpec s;
  s.seed = get("synthetic.seed").empty() ? seed() : u64(*this, "synthetic.seed");
  s.n_regions = sz(*this, "synthetic.regions");
  s.total_days = static_cast<std::int64_t>(u64(*this, "synthetic.days"));
  s.missing_rate = dbl(*this, "synthetic.missing_rate");
  s.target_rate = dbl(*this, "synthetic.target_rate");
  const auto features = parse_list(get("synthetic.shift.features"));
  if (!features.empty()) {
    ShiftSpec shift;
    shift.features = features;
    shift.after_day = *parse_int(get("synthetic.shift.after_day"));
    shift.delta = dbl(*this, "synthetic.shift.delta");
    s.shift = shift;
  }
  return s;
}

MaskSpec RunConfig::mask(const FeatureSchema& schema) const {
  MaskSpec m;
  m.mode = get("mask.mode") == "random" ? MaskMode::Random : MaskMode::Fixed;
  m.features = parse_list(get("mask.features"));
  for (const auto& f : m.features) schema.index_of(f);
  m.max_count = sz(*this, "mask.max_count");
  if (m.max_count >= schema.size()) throw ConfigError("mask.max_count must be smaller than the feature count");
  m.seed = get("mask.seed").empty() ? seed() : u64(*this, "mask.seed");
  return m;
}

DomainDescription RunConfig::domain() const { return DomainDescription::preset(get("data.domain")); }
double RunConfig::train_fraction() const { return dbl(*this, "data.train_fraction"); }
std::size_t RunConfig::ood_train_regions() const { return sz(*this, "ood.train_regions"); }
bool RunConfig::cache_enabled() const { return boolean(*this, "cache.enabled"); }

std::vector<std::string> desk_overrides() {
  return {"raster.cell_w=16",        "raster.cell_h=16",         "encoder.d_model=16",    "encoder.layers=1",
          "encoder.heads=2",         "encoder.ffn=32",           "encoder.patch=8",       "smoe.hidden=32",
          "fusion.decoder_layers=1", "fusion.decoder_d=16",      "fusion.decoder_heads=2", "fusion.decoder_ffn=32",
          "train.epochs=20"};
}

}  // namespace lite
