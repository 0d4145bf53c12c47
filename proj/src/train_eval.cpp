#include "lite/train_eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <mutex>
#include <json.hpp>
#include <sstream>

#include "lite/errors.hpp"
#include "lite/util.hpp"

namespace fs = std::filesystem;

namespace lite {

namespace {

constexpr std::uint64_t kShuffleSalt = 0x9E3779B97F4A7C15ULL;
constexpr std::uint64_t kNoiseSalt = 0xD1B54A32D192ED03ULL;

/// Runs fn(i) for i in [0, n) on OpenMP threads and rethrows the first error.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  std::exception_ptr error;
  std::mutex mu;
  const long count = static_cast<long>(n);
#pragma omp parallel for schedule(dynamic, 4)
  for (long i = 0; i < count; ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
      std::lock_guard<std::mutex> lock(mu);
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path);
}

// Little-endian binary helpers for the corpus cache and parameter files.
class Writer {
 public:
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    u64(bits);
  }
  void bytes(const void* data, std::size_t n) { out_.append(static_cast<const char*>(data), n); }
  template <class T>
  void ints(const std::vector<T>& v) {
    u64(v.size());
    for (T x : v) u64(static_cast<std::uint64_t>(static_cast<std::int64_t>(x)));
  }
  std::string& str() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}
  std::uint64_t u64() {
    if (pos_ + 8 > in_.size()) throw ParseError("corpus cache truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
  void bytes(void* data, std::size_t n) {
    if (pos_ + n > in_.size()) throw ParseError("corpus cache truncated");
    std::memcpy(data, in_.data() + pos_, n);
    pos_ += n;
  }
  template <class T>
  std::vector<T> ints() {
    const std::size_t n = u64();
    if (n > in_.size()) throw ParseError("corpus cache corrupt");
    std::vector<T> v(n);
    for (auto& x : v) x = static_cast<T>(static_cast<std::int64_t>(u64()));
    return v;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::string& in_;
  std::size_t pos_ = 0;
};

std::string encode_doubles(std::span<const double> values) {
  Writer w;
  for (double v : values) w.f64(v);
  return std::move(w.str());
}

}  // namespace

// ---- phase 1 ----------------------------------------------------------------

std::string corpus_key(const Dataset& ds, const Vocabulary& vocab, const ModelConfig& cfg,
                       const DomainDescription& domain) {
  std::ostringstream os;
  os << "corpus-v1\n" << ds.content_hash() << "\n" << sha256_hex(vocab.serialize()) << "\n"
     << cfg.beta << " " << cfg.raster.cell_w << " " << cfg.raster.cell_h << " " << cfg.raster.grid_cols << " "
     << cfg.raster.grid_rows << " " << cfg.encoder.max_seq_len << " " << cfg.fusion.max_instruction_len << "\n"
     << domain.dataset << "\n" << domain.task << "\n";
  return sha256_hex(os.str()).substr(0, 32);
}

Corpus build_corpus(const Dataset& ds, const Vocabulary& vocab, const ModelConfig& cfg,
                    const DomainDescription& domain) {
  Corpus corpus;
  corpus.key = corpus_key(ds, vocab, cfg, domain);
  const auto [cols, rows] = grid_shape(ds.schema().size() + 1, cfg.raster);
  corpus.image_w = cols * cfg.raster.cell_w;
  corpus.image_h = rows * cfg.raster.cell_h;

  const auto anchor_ids = ds.target_anchors();
  std::vector<WindowBundle> bundles(anchor_ids.size());
  parallel_for(anchor_ids.size(), [&](std::size_t i) {
    const Record& r = ds.records()[anchor_ids[i]];
    bundles[i] = assemble_window(ds, r.region_id, r.day_index, cfg.beta);
  });

  std::map<std::pair<std::string, std::int64_t>, std::uint32_t> text_index;
  std::vector<const Record*> text_records;
  corpus.anchors.resize(anchor_ids.size());
  for (std::size_t i = 0; i < anchor_ids.size(); ++i) {
    AnchorData& a = corpus.anchors[i];
    a.record = anchor_ids[i];
    a.target = *ds.records()[a.record].target;
    const WindowBundle& b = bundles[i];
    std::size_t slot = 0;
    auto add = [&](const Record& r) {
      const auto key = std::make_pair(r.region_id, r.day_index);
      auto it = text_index.find(key);
      if (it == text_index.end()) {
        it = text_index.emplace(key, static_cast<std::uint32_t>(text_records.size())).first;
        text_records.push_back(&r);
      }
      a.texts[slot++] = it->second;
    };
    add(b.current);
    for (const auto& r : b.weekly) add(r);
    for (const auto& r : b.yearly) add(r);
  }

  corpus.texts.resize(text_records.size());
  parallel_for(text_records.size(), [&](std::size_t i) {
    corpus.texts[i] = tokenize_record(*text_records[i], ds.schema(), vocab, cfg.encoder.max_seq_len);
  });

  parallel_for(anchor_ids.size(), [&](std::size_t i) {
    AnchorData& a = corpus.anchors[i];
    const TrendImage img = rasterize(bundles[i], ds.norm_stats(), cfg.raster);
    a.image.resize(img.pixels.size());
    for (std::size_t p = 0; p < img.pixels.size(); ++p) a.image[p] = img.pixels[p] != 0.0 ? 255 : 0;
    std::vector<TargetObservation> window;
    for (auto it = bundles[i].image_window.rbegin(); it != bundles[i].image_window.rend(); ++it)
      if (it->target) window.push_back({it->day_index, *it->target});
    const TokenSeq seq = tokenize(build_domain_instruction(domain, window), vocab, 1u << 20);
    if (seq.ids.size() > cfg.fusion.max_instruction_len)
      throw ConfigError("domain instruction needs " + std::to_string(seq.ids.size()) +
                        " tokens; raise fusion.max_instruction_len");
    a.instruction = seq.ids;
  });
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::string& path) {
  Writer w;
  w.bytes("LITECORP", 8);
  w.u64(corpus.key.size());
  w.bytes(corpus.key.data(), corpus.key.size());
  w.u64(corpus.image_w);
  w.u64(corpus.image_h);
  w.u64(corpus.texts.size());
  for (const auto& t : corpus.texts) {
    w.ints(t.seq.ids);
    w.ints(t.seq.mask_positions);
    w.ints(t.mask_features);
    w.u64(t.value_spans.size());
    for (const auto& [first, count] : t.value_spans) {
      w.u64(first);
      w.u64(count);
    }
  }
  w.u64(corpus.anchors.size());
  for (const auto& a : corpus.anchors) {
    w.u64(a.record);
    for (auto t : a.texts) w.u64(t);
    w.u64(a.image.size());
    w.bytes(a.image.data(), a.image.size());
    w.ints(a.instruction);
    w.f64(a.target);
  }
  const std::string tmp = path + ".tmp";
  write_file(tmp, w.str());
  fs::rename(tmp, path);
}

Corpus load_corpus(const std::string& path) {
  const std::string bytes = read_file(path);
  Reader r(bytes);
  char magic[8];
  r.bytes(magic, 8);
  if (std::string(magic, 8) != "LITECORP") throw ParseError(path + ": not a corpus cache");
  Corpus c;
  c.key.resize(r.u64());
  r.bytes(c.key.data(), c.key.size());
  c.image_w = r.u64();
  c.image_h = r.u64();
  c.texts.resize(r.u64());
  for (auto& t : c.texts) {
    t.seq.ids = r.ints<std::int32_t>();
    t.seq.mask_positions = r.ints<std::size_t>();
    t.mask_features = r.ints<std::size_t>();
    t.value_spans.resize(r.u64());
    for (auto& [first, count] : t.value_spans) {
      first = r.u64();
      count = r.u64();
    }
  }
  c.anchors.resize(r.u64());
  for (auto& a : c.anchors) {
    a.record = r.u64();
    for (auto& t : a.texts) t = static_cast<std::uint32_t>(r.u64());
    a.image.resize(r.u64());
    r.bytes(a.image.data(), a.image.size());
    a.instruction = r.ints<std::int32_t>();
    a.target = r.f64();
  }
  if (!r.done()) throw ParseError(path + ": trailing bytes in corpus cache");
  return c;
}

Corpus load_or_build_corpus(const Dataset& ds, const Vocabulary& vocab, const ModelConfig& cfg,
                            const DomainDescription& domain, const std::string& cache_dir) {
  if (cache_dir.empty()) return build_corpus(ds, vocab, cfg, domain);
  const std::string key = corpus_key(ds, vocab, cfg, domain);
  const std::string path = (fs::path(cache_dir) / (key + ".bin")).string();
  if (fs::exists(path)) {
    Corpus c = load_corpus(path);
    if (c.key == key) return c;
  }
  fs::create_directories(cache_dir);
  Corpus c = build_corpus(ds, vocab, cfg, domain);
  save_corpus(c, path);
  return c;
}

// ---- phase 2 ----------------------------------------------------------------

ForwardBatch make_batch(const Corpus& corpus, const Dataset& ds, const Vocabulary& vocab, const ModelConfig& cfg,
                        const std::vector<std::size_t>& anchors, Rng* mask_rng, double p_mask,
                        TeacherPlan* teacher) {
  ForwardBatch fb;
  fb.n = anchors.size();
  const NormStats& stats = ds.norm_stats();
  std::vector<std::span<const std::uint8_t>> images;
  for (std::size_t ai : anchors) {
    const AnchorData& a = corpus.anchors.at(ai);
    if (cfg.text_on()) {
      for (std::size_t j = 0; j < kRecordsPerAnchor; ++j) {
        const SemanticTokens* st = &corpus.texts[a.texts[j]];
        SemanticTokens masked;
        std::vector<std::size_t> chosen;
        std::size_t teacher_seq = 0;
        if (j == 0 && mask_rng != nullptr) {
          const Record& rec = ds.records().at(a.record);
          for (std::size_t k = 0; k < rec.features.size(); ++k)
            if (rec.feature_present[k] && mask_rng->bernoulli(p_mask)) chosen.push_back(k);
          if (!chosen.empty()) {
            Record copy = rec;
            for (std::size_t k : chosen) copy.feature_present[k] = false;
            masked = tokenize_record(copy, ds.schema(), vocab, cfg.encoder.max_seq_len);
            if (teacher == nullptr) throw Error("make_batch: feature masking needs a teacher plan");
            teacher->originals.append(st->seq.ids);
            teacher_seq = teacher->originals.count() - 1;
            st = &masked;
          }
        }
        const std::size_t start = fb.text.append(st->seq.ids);
        for (std::size_t h = 0; h < st->seq.mask_positions.size(); ++h) {
          fb.mask_rows.push_back(start + st->seq.mask_positions[h]);
          const std::size_t k = st->mask_features[h];
          if (std::find(chosen.begin(), chosen.end(), k) != chosen.end()) {
            fb.supervised.push_back(fb.mask_rows.size() - 1);
            teacher->spans.push_back({teacher_seq, corpus.texts[a.texts[0]].value_spans[k]});
          }
        }
      }
    }
    images.emplace_back(a.image);
    fb.instructions.append(a.instruction);
    fb.targets.push_back(stats.normalize(stats.target_index(), a.target));
  }
  if (cfg.image_on()) fb.images = make_image_batch(images, corpus.image_w, corpus.image_h, cfg.encoder.patch_size);
  return fb;
}

void AdamW::step(nn::ParameterStore& store) {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (auto& [path, p] : store.all()) {
    if (!p.requires_grad() || !p.has_grad()) continue;
    auto& [m, v] = moments_[path];
    if (m.empty()) {
      m.assign(p.size(), 0.0);
      v.assign(p.size(), 0.0);
    }
    const auto g = p.grad();
    auto w = p.values();
    const bool decay = p.rank() >= 2;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1_ * m[i] + (1.0 - b1_) * g[i];
      v[i] = b2_ * v[i] + (1.0 - b2_) * g[i] * g[i];
      const double mh = m[i] / c1, vh = v[i] / c2;
      if (decay) w[i] -= lr_ * wd_ * w[i];
      w[i] -= lr_ * mh / (std::sqrt(vh) + eps_);
    }
  }
}

double clip_grad_norm(nn::ParameterStore& store, double max_norm) {
  double sq = 0.0;
  for (auto& [path, p] : store.all())
    if (p.requires_grad() && p.has_grad())
      for (double g : p.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& [path, p] : store.all())
      if (p.requires_grad() && p.has_grad())
        for (double& g : p.grad_mut()) g *= f;
  }
  return norm;
}

TrainState train(LiteModel& model, const Corpus& corpus, const Dataset& ds, const Vocabulary& vocab,
                 const TrainConfig& cfg, std::vector<EpochLog>* log,
                 const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate();
  if (corpus.anchors.empty()) throw DataError("training set has no observed targets");
  const ModelConfig& mc = model.config();
  Rng rng(cfg.seed ^ kShuffleSalt);
  Rng noise(cfg.seed ^ kNoiseSalt);
  AdamW opt(cfg.lr, cfg.weight_decay);
  const double eta2 = mc.imputation_on() ? mc.fusion.eta2 : 0.0;
  // Artificial masking is part of training for every variant that reads text;
  // only variants with imputation turn the masked positions into L_i pairs.
  const bool artificial = mc.text_on() && cfg.p_mask > 0.0;
  std::vector<std::size_t> order(corpus.anchors.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainState state;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    EpochLog entry;
    entry.epoch = epoch;
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::vector<std::size_t> ids(order.begin() + static_cast<long>(start),
                                         order.begin() + static_cast<long>(std::min(order.size(), start + cfg.batch_size)));
      TeacherPlan plan;
      const ForwardBatch fb = make_batch(corpus, ds, vocab, mc, ids, artificial ? &rng : nullptr, cfg.p_mask, &plan);
      ad::Graph g;
      nn::Binder bind(g);
      const ForwardResult res = model.forward(bind, fb, &noise);
      const ad::Var l_r = prediction_loss(g, res.preds, fb.targets);
      std::optional<ad::Var> l_i;
      if (res.supervised_imputed) {
        l_i = imputation_loss(g, *res.supervised_imputed, model.teacher_states(plan.originals, plan.spans));
      }
      const ad::Var total = total_loss(l_r, l_i, mc.fusion.eta1, eta2);
      const double value = total.value().item();
      if (!std::isfinite(value))
        throw Error("training diverged: non-finite loss at epoch " + std::to_string(epoch));
      model.params().zero_grad();
      g.backward(total);
      clip_grad_norm(model.params(), cfg.grad_clip);
      opt.step(model.params());

      if (entry.batches == 0) entry.first_batch_loss = value;
      entry.last_batch_loss = value;
      loss_sum += value;
      ++entry.batches;
      if (res.supervised_imputed) entry.li_pairs += fb.supervised.size();
      entry.artificial_masks += plan.spans.size();
    }
    model.params().zero_grad();
    entry.mean_loss = loss_sum / static_cast<double>(std::max<std::size_t>(entry.batches, 1));
    entry.frozen_hash = model.frozen_hash();
    state.epoch = epoch;
    if (log) log->push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  state.rng_state = rng.state();
  state.noise_state = noise.state();
  return state;
}

Metrics compute_metrics(const std::vector<double>& preds, const std::vector<double>& targets,
                        const std::vector<std::string>& regions) {
  if (preds.empty()) throw DataError("no observed targets to evaluate");
  if (preds.size() != targets.size() || (!regions.empty() && regions.size() != preds.size()))
    throw ShapeError("compute_metrics: misaligned inputs");
  Metrics m;
  std::map<std::string, std::pair<double, double>> acc;
  double se = 0.0, ae = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double e = preds[i] - targets[i];
    se += e * e;
    ae += std::fabs(e);
    if (!regions.empty()) {
      auto& [s, a] = acc[regions[i]];
      s += e * e;
      a += std::fabs(e);
      ++m.per_region[regions[i]].count;
    }
  }
  m.count = preds.size();
  m.rmse = std::sqrt(se / static_cast<double>(m.count));
  m.mae = ae / static_cast<double>(m.count);
  for (auto& [region, rm] : m.per_region) {
    rm.rmse = std::sqrt(acc[region].first / static_cast<double>(rm.count));
    rm.mae = acc[region].second / static_cast<double>(rm.count);
  }
  return m;
}

std::vector<double> predict_all(const LiteModel& model, const Corpus& corpus, const Dataset& ds,
                                const Vocabulary& vocab, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("evaluation batch size must be positive");
  const std::size_t n = corpus.anchors.size();
  const std::size_t n_batches = (n + batch_size - 1) / batch_size;
  std::vector<double> out(n);
  const NormStats& stats = ds.norm_stats();
  parallel_for(n_batches, [&](std::size_t b) {
    std::vector<std::size_t> ids;
    for (std::size_t i = b * batch_size; i < std::min(n, (b + 1) * batch_size); ++i) ids.push_back(i);
    const ForwardBatch fb = make_batch(corpus, ds, vocab, model.config(), ids, nullptr, 0.0, nullptr);
    ad::Graph g(false);
    nn::Binder bind(g);
    const ForwardResult res = model.forward(bind, fb, nullptr);
    for (std::size_t i = 0; i < ids.size(); ++i)
      out[ids[i]] = stats.denormalize(stats.target_index(), res.preds.value().values()[i]);
  });
  return out;
}

Metrics evaluate(const LiteModel& model, const Corpus& corpus, const Dataset& ds, const Vocabulary& vocab,
                 std::size_t batch_size) {
  if (corpus.anchors.empty()) throw DataError("no observed targets to evaluate");
  const auto preds = predict_all(model, corpus, ds, vocab, batch_size);
  std::vector<double> targets;
  std::vector<std::string> regions;
  for (const auto& a : corpus.anchors) {
    targets.push_back(a.target);
    regions.push_back(ds.records()[a.record].region_id);
  }
  return compute_metrics(preds, targets, regions);
}

// ---- checkpoints --------------------------------------------------------------

namespace {

std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format_exact(v[i]);
  return out;
}

std::vector<double> parse_doubles(const std::string& s) {
  std::vector<double> out;
  if (s.empty()) return out;
  for (const auto& item : split(s, ',')) out.push_back(std::stod(item));
  return out;
}

std::string param_file(const std::string& path) { return "params/" + path + ".f64"; }

}  // namespace

std::string schema_hash(const FeatureSchema& schema) {
  std::string text;
  for (std::size_t i = 0; i < schema.size(); ++i)
    text += schema.names[i] + "\t" + (i < schema.units.size() ? schema.units[i] : "") + "\n";
  text += "target\t" + schema.target_name + "\n";
  return git_blob_hash(text);
}

void save_checkpoint(const std::string& dir, const LiteModel& model, const RunConfig& config,
                     const Vocabulary& vocab, const NormStats& stats, const TrainState& state,
                     const std::string& schema_hash_value) {
  fs::create_directories(fs::path(dir) / "params");
  std::string manifest = "format=lite-checkpoint-v1\n";
  manifest += "epoch=" + std::to_string(state.epoch) + "\n";
  manifest += "seed=" + std::to_string(model.seed()) + "\n";
  manifest += "decoder.seed=" + std::to_string(model.seed()) + "\n";
  manifest += "decoder.hash=" + model.frozen_hash() + "\n";
  manifest += "schema_hash=" + schema_hash_value + "\n";
  manifest += "rng_state=" + state.rng_state + "\n";
  manifest += "noise_state=" + state.noise_state + "\n";
  manifest += "stats.mean=" + join_doubles(stats.mean) + "\n";
  manifest += "stats.std=" + join_doubles(stats.std) + "\n";
  manifest += "vocab.size=" + std::to_string(vocab.size()) + "\n";
  for (const auto& [k, v] : config.values()) manifest += "config." + k + "=" + v + "\n";
  for (const auto& path : model.params().trainable_paths()) {
    const Tensor& t = model.params().get(path);
    std::string dims;
    for (std::size_t i = 0; i < t.rank(); ++i) dims += (i ? "x" : "") + std::to_string(t.dim(i));
    manifest += "param." + path + "=" + dims + "\n";
    write_file((fs::path(dir) / param_file(path)).string(), encode_doubles(t.values()));
  }
  write_file((fs::path(dir) / "manifest.txt").string(), manifest);
  vocab.save((fs::path(dir) / "vocab.txt").string());
}

LoadedCheckpoint load_checkpoint(const std::string& dir) {
  const std::string text = read_file((fs::path(dir) / "manifest.txt").string());
  std::map<std::string, std::string> kv;
  std::vector<std::string> config_lines;
  for (const auto& line : split(text, '\n')) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("checkpoint manifest: malformed line '" + line + "'");
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key.rfind("config.", 0) == 0) config_lines.push_back(key.substr(7) + "=" + value);
    else kv[key] = value;
  }
  if (kv["format"] != "lite-checkpoint-v1") throw ParseError("checkpoint manifest: unsupported format");
  LoadedCheckpoint out;
  out.config.apply(config_lines);
  out.config.validate();
  out.vocab = Vocabulary::load((fs::path(dir) / "vocab.txt").string());
  out.stats.mean = parse_doubles(kv["stats.mean"]);
  out.stats.std = parse_doubles(kv["stats.std"]);
  if (out.stats.mean.size() < 2 || out.stats.mean.size() != out.stats.std.size())
    throw ParseError("checkpoint manifest: malformed statistics");
  out.state.epoch = std::stoul(kv["epoch"]);
  out.state.rng_state = kv["rng_state"];
  out.state.noise_state = kv["noise_state"];
  const std::uint64_t seed = std::stoull(kv["seed"]);
  out.model = std::make_unique<LiteModel>(out.config.model(), out.stats.mean.size() - 1, out.vocab.size(), seed);
  if (out.model->frozen_hash() != kv["decoder.hash"])
    throw DataError("checkpoint: frozen decoder hash does not match the rebuilt decoder");
  for (const auto& path : out.model->params().trainable_paths()) {
    if (!kv.count("param." + path)) throw ParseError("checkpoint: missing parameter " + path);
    Tensor& t = out.model->params().get(path);
    const std::string bytes = read_file((fs::path(dir) / param_file(path)).string());
    if (bytes.size() != t.size() * 8) throw ParseError("checkpoint: parameter " + path + " has the wrong size");
    Reader r(bytes);
    for (double& v : t.values()) v = r.f64();
  }
  for (const auto& [key, value] : kv)
    if (key.rfind("param.", 0) == 0 && !out.model->params().contains(key.substr(6)))
      throw ParseError("checkpoint: unexpected parameter " + key.substr(6));
  return out;
}

// ---- protocols ---------------------------------------------------------------

Experiment prepare_experiment(const RunConfig& config) {
  config.validate();
  Experiment e;
  const FeatureSchema schema = FeatureSchema::default_schema();
  e.full = config.csv_path().empty() ? generate_synthetic(config.synthetic()) : load_csv(config.csv_path(), schema);
  e.domain = config.domain();
  e.vocab = build_vocabulary(e.full.schema(), e.full.regions(), e.domain);
  return e;
}

std::string MetricsRow::to_json() const {
  nlohmann::ordered_json j;
  j["protocol"] = protocol;
  j["variant"] = variant;
  j["missing_count"] = missing_count;
  j["rmse"] = rmse;
  j["mae"] = mae;
  j["seed"] = seed;
  return j.dump();
}

std::vector<std::size_t> sensors_out_order(const MaskSpec& spec, const FeatureSchema& schema) {
  std::vector<std::size_t> order;
  if (spec.max_count >= schema.size()) throw ConfigError("cannot hide that many features");
  if (spec.mode == MaskMode::Fixed) {
    if (spec.features.size() < spec.max_count) throw ConfigError("fixed mask list is shorter than max_count");
    for (std::size_t i = 0; i < spec.max_count; ++i) {
      const std::size_t k = schema.index_of(spec.features[i]);
      if (std::find(order.begin(), order.end(), k) != order.end())
        throw ConfigError("feature '" + spec.features[i] + "' listed twice");
      order.push_back(k);
    }
    return order;
  }
  // Random mode draws among measured sensors; the calendar feature is not a sensor.
  std::vector<std::size_t> candidates;
  for (std::size_t k = 0; k < schema.size(); ++k)
    if (schema.names[k] != "day of the year") candidates.push_back(k);
  if (candidates.size() < spec.max_count) throw ConfigError("not enough sensors to hide");
  Rng rng(spec.seed);
  rng.shuffle(candidates);
  order.assign(candidates.begin(), candidates.begin() + static_cast<long>(spec.max_count));
  return order;
}

SensorsOutResult leave_sensors_out(const LiteModel& model, const Dataset& test, const Vocabulary& vocab,
                                   const DomainDescription& domain, const MaskSpec& spec, std::size_t batch_size,
                                   const std::string& cache_dir) {
  const auto order = sensors_out_order(spec, test.schema());
  SensorsOutResult res;
  for (std::size_t c = 1; c <= order.size(); ++c) {
    const std::vector<std::size_t> hidden(order.begin(), order.begin() + static_cast<long>(c));
    const Dataset masked = test.with_hidden_features(hidden);
    const Corpus corpus = load_or_build_corpus(masked, vocab, model.config(), domain, cache_dir);
    res.metrics.push_back(evaluate(model, corpus, masked, vocab, batch_size));
  }
  for (std::size_t k : order) res.hidden.push_back(test.schema().names[k]);
  return res;
}

}  // namespace lite
