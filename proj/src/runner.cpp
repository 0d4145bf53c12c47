#include "lite/runner.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <json.hpp>

#include "lite/errors.hpp"
#include "lite/raster.hpp"
#include "lite/train_eval.hpp"
#include "lite/util.hpp"

namespace fs = std::filesystem;

namespace lite {

namespace {

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string input_hash(const RunConfig& config, const Dataset& full) {
  if (config.csv_path().empty()) return full.content_hash();
  std::ifstream in(config.csv_path(), std::ios::binary);
  if (!in) throw IoError("cannot open " + config.csv_path());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return git_blob_hash(bytes);
}

void write_manifest(const fs::path& out, const std::string& command, const RunConfig& config,
                    const std::string& inputs, const std::vector<std::pair<std::string, std::string>>& extra) {
  std::string text = "command=" + command + "\ninput_hash=" + inputs + "\n";
  for (const auto& [k, v] : extra) text += k + "=" + v + "\n";
  for (const auto& [k, v] : config.values()) text += "config." + k + "=" + v + "\n";
  write_text(out / "manifest.txt", text);
}

class Progress {
 public:
  explicit Progress(bool on) : on_(on), start_(std::chrono::steady_clock::now()) {}
  void operator()(const std::string& msg) const {
    if (!on_) return;
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    std::cerr << "[" << format_significant(s, 4, true) << " s] " << msg << "\n";
  }

 private:
  bool on_;
  std::chrono::steady_clock::time_point start_;
};

std::string join(const std::vector<std::string>& items, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? sep : "") + items[i];
  return out;
}

std::string cache_dir(const RunConfig& config, const fs::path& out) {
  return config.cache_enabled() ? (out / "cache").string() : "";
}

struct TrainedRun {
  std::unique_ptr<LiteModel> model;
  Metrics metrics;
};

/// Trains on `train_ds`, checkpoints into ckpt_dir, evaluates on `test_ds`.
TrainedRun train_and_evaluate(const RunConfig& config, const Experiment& exp, const Dataset& train_ds,
                              const Dataset& test_ds, const fs::path& out, const fs::path& ckpt_dir,
                              const Progress& progress) {
  const ModelConfig mc = config.model();
  const TrainConfig tc = config.train();
  const std::string cache = cache_dir(config, out);
  const Corpus train_corpus = load_or_build_corpus(train_ds, exp.vocab, mc, exp.domain, cache);
  const Corpus test_corpus = load_or_build_corpus(test_ds, exp.vocab, mc, exp.domain, cache);
  progress("corpus ready: " + std::to_string(train_corpus.anchors.size()) + " train / " +
           std::to_string(test_corpus.anchors.size()) + " test anchors");
  TrainedRun run;
  run.model = std::make_unique<LiteModel>(mc, train_ds.schema().size(), exp.vocab.size(), tc.seed);
  std::string log_text;
  const TrainState state = train(*run.model, train_corpus, train_ds, exp.vocab, tc, nullptr, [&](const EpochLog& e) {
    nlohmann::ordered_json j;
    j["epoch"] = e.epoch;
    j["batches"] = e.batches;
    j["mean_loss"] = e.mean_loss;
    j["first_batch_loss"] = e.first_batch_loss;
    j["last_batch_loss"] = e.last_batch_loss;
    j["artificial_masks"] = e.artificial_masks;
    j["li_pairs"] = e.li_pairs;
    j["frozen_hash"] = e.frozen_hash;
    log_text += j.dump() + "\n";
    progress(variant_name(mc.variant) + " epoch " + std::to_string(e.epoch) + "/" + std::to_string(tc.epochs) +
             " mean loss " + format_significant(e.mean_loss, 5, true));
  });
  write_text(ckpt_dir / "train_log.jsonl", log_text);
  save_checkpoint(ckpt_dir.string(), *run.model, config, exp.vocab, train_ds.norm_stats(), state,
                  schema_hash(train_ds.schema()));
  run.metrics = evaluate(*run.model, test_corpus, test_ds, exp.vocab, tc.eval_batch);
  progress(variant_name(mc.variant) + " test rmse " + format_significant(run.metrics.rmse, 5, true) + " mae " +
           format_significant(run.metrics.mae, 5, true));
  return run;
}

std::string region_table(const Metrics& m) {
  std::string out = "region,count,rmse,mae\n";
  for (const auto& [region, rm] : m.per_region)
    out += region + "," + std::to_string(rm.count) + "," + format_exact(rm.rmse) + "," + format_exact(rm.mae) + "\n";
  return out;
}

MetricsRow row(const std::string& protocol, const RunConfig& config, std::size_t missing, const Metrics& m) {
  return {protocol, config.get("ablation.variant"), missing, m.rmse, m.mae, config.seed()};
}

std::pair<std::string, std::int64_t> require_target(const RunOptions& opt) {
  if (!opt.region || !opt.day) throw ConfigError("this subcommand needs --region and --day");
  return {*opt.region, *opt.day};
}

void cmd_generate(const RunConfig& config, const fs::path& out, const Progress& progress) {
  if (!config.csv_path().empty()) throw ConfigError("generate-synthetic ignores data.csv; leave it empty");
  const Dataset ds = generate_synthetic(config.synthetic());
  write_manifest(out, "generate-synthetic", config, ds.content_hash(), {});
  write_csv(ds, (out / "data.csv").string());
  progress("wrote " + std::to_string(ds.records().size()) + " records to " + (out / "data.csv").string());
}

void cmd_prepare(const RunConfig& config, const fs::path& out, const Progress& progress) {
  const Experiment exp = prepare_experiment(config);
  const auto [train_ds, test_ds] = split_temporal(exp.full, config.train_fraction());
  write_manifest(out, "prepare", config, input_hash(config, exp.full), {});
  const ModelConfig mc = config.model();
  const std::string cache = (out / "cache").string();
  const Corpus a = load_or_build_corpus(train_ds, exp.vocab, mc, exp.domain, cache);
  const Corpus b = load_or_build_corpus(test_ds, exp.vocab, mc, exp.domain, cache);
  exp.vocab.save((out / "vocab.txt").string());
  std::string stats = "variable,mean,std\n";
  const auto& s = train_ds.norm_stats();
  for (std::size_t v = 0; v < s.mean.size(); ++v) {
    const std::string name = v < train_ds.schema().size() ? train_ds.schema().names[v] : train_ds.schema().target_name;
    stats += name + "," + format_exact(s.mean[v]) + "," + format_exact(s.std[v]) + "\n";
  }
  write_text(out / "norm_stats.csv", stats);
  write_text(out / "split.txt", "train_days=" + std::to_string(train_ds.total_days()) + "\ntrain_anchors=" +
                                    std::to_string(a.anchors.size()) + "\ntest_anchors=" +
                                    std::to_string(b.anchors.size()) + "\ntrain_corpus=" + a.key +
                                    "\ntest_corpus=" + b.key + "\n");
  progress("prepared " + std::to_string(a.anchors.size()) + " train and " + std::to_string(b.anchors.size()) +
           " test anchors");
}

void cmd_render_text(const RunConfig& config, const fs::path& out, const RunOptions& opt) {
  const auto [region, day] = require_target(opt);
  const Experiment exp = prepare_experiment(config);
  const Record* rec = exp.full.find(region, day);
  if (!rec) throw DataError("no record for region " + region + " day " + std::to_string(day));
  write_manifest(out, "render-text", config, input_hash(config, exp.full),
                 {{"region", region}, {"day", std::to_string(day)}});
  const std::string text = render_semantic(linearize(*rec, exp.full.schema()), region, day);
  const SemanticTokens tokens = tokenize_record(*rec, exp.full.schema(), exp.vocab, config.model().encoder.max_seq_len);
  const WindowBundle bundle = assemble_window(exp.full, region, day, config.model().beta);
  std::vector<TargetObservation> window;
  for (auto it = bundle.image_window.rbegin(); it != bundle.image_window.rend(); ++it)
    if (it->target) window.push_back({it->day_index, *it->target});
  const std::string instruction = build_domain_instruction(exp.domain, window);
  std::string ids;
  for (auto id : tokens.seq.ids) ids += (ids.empty() ? "" : " ") + std::to_string(id);
  std::string body = text + "\n" + ids + "\n" + instruction + "\n";
  const std::string name = "text_" + region + "_" + std::to_string(day) + ".txt";
  write_text(out / name, body);
  std::cout << body;
}

void cmd_render_image(const RunConfig& config, const fs::path& out, const RunOptions& opt) {
  const auto [region, day] = require_target(opt);
  const Experiment exp = prepare_experiment(config);
  const auto [train_ds, test_ds] = split_temporal(exp.full, config.train_fraction());
  const ModelConfig mc = config.model();
  const WindowBundle bundle = assemble_window(exp.full, region, day, mc.beta);
  write_manifest(out, "render-image", config, input_hash(config, exp.full),
                 {{"region", region}, {"day", std::to_string(day)}});
  const TrendImage img = rasterize(bundle, train_ds.norm_stats(), mc.raster);
  const fs::path path = out / ("image_" + region + "_" + std::to_string(day) + ".pgm");
  write_pgm(img, path.string());
  std::cout << path.string() << "\n";
}

void cmd_train(const RunConfig& config, const fs::path& out, const Progress& progress) {
  const Experiment exp = prepare_experiment(config);
  const auto [train_ds, test_ds] = split_temporal(exp.full, config.train_fraction());
  write_manifest(out, "train", config, input_hash(config, exp.full), {});
  const TrainedRun run = train_and_evaluate(config, exp, train_ds, test_ds, out, out / "checkpoint", progress);
  write_text(out / "metrics.jsonl", row("standard", config, 0, run.metrics).to_json() + "\n");
  write_text(out / "metrics_per_region.csv", region_table(run.metrics));
}

fs::path checkpoint_dir(const RunConfig& config, const fs::path& out) {
  const std::string p = config.get("checkpoint.path");
  return p.empty() ? out / "checkpoint" : fs::path(p);
}

void cmd_evaluate(const RunConfig& config, const fs::path& out, const Progress& progress) {
  LoadedCheckpoint ckpt = load_checkpoint(checkpoint_dir(config, out).string());
  const Experiment exp = prepare_experiment(ckpt.config);
  if (exp.vocab.serialize() != ckpt.vocab.serialize())
    throw DataError("checkpoint vocabulary does not match the configured data");
  const auto [train_ds, test_ds] = split_temporal(exp.full, ckpt.config.train_fraction());
  if (train_ds.norm_stats().mean != ckpt.stats.mean || train_ds.norm_stats().std != ckpt.stats.std)
    throw DataError("checkpoint statistics do not match the configured data");
  write_manifest(out, "evaluate", ckpt.config, input_hash(ckpt.config, exp.full),
                 {{"checkpoint", checkpoint_dir(config, out).string()}});
  const Corpus corpus = load_or_build_corpus(test_ds, exp.vocab, ckpt.model->config(), exp.domain,
                                             cache_dir(config, out));
  const Metrics m = evaluate(*ckpt.model, corpus, test_ds, exp.vocab, config.train().eval_batch);
  progress("test rmse " + format_significant(m.rmse, 5, true) + " mae " + format_significant(m.mae, 5, true));
  write_text(out / "eval_metrics.jsonl", row("standard", ckpt.config, 0, m).to_json() + "\n");
  write_text(out / "eval_per_region.csv", region_table(m));
}

void cmd_sensors_out(const RunConfig& config, const fs::path& out, const Progress& progress) {
  // With a checkpoint, data and model settings come from its config; the
  // protocol keys (mask.*, checkpoint.path, cache.*) still come from the command line.
  std::optional<LoadedCheckpoint> ckpt;
  RunConfig effective = config;
  if (!config.get("checkpoint.path").empty()) {
    ckpt = load_checkpoint(config.get("checkpoint.path"));
    effective = ckpt->config;
    for (const auto& [key, value] : config.values())
      if (key.starts_with("mask.") || key.starts_with("checkpoint.") || key.starts_with("cache."))
        effective.set(key, value);
  }
  const Experiment exp = prepare_experiment(effective);
  if (ckpt && exp.vocab.serialize() != ckpt->vocab.serialize())
    throw DataError("checkpoint vocabulary does not match the configured data");
  const auto [train_ds, test_ds] = split_temporal(exp.full, effective.train_fraction());
  const MaskSpec spec = effective.mask(exp.full.schema());
  write_manifest(out, "sensors-out", effective, input_hash(effective, exp.full), {});
  std::unique_ptr<LiteModel> model =
      ckpt ? std::move(ckpt->model)
           : train_and_evaluate(effective, exp, train_ds, test_ds, out, out / "checkpoint", progress).model;
  const SensorsOutResult res = leave_sensors_out(*model, test_ds, exp.vocab, exp.domain, spec,
                                                 effective.train().eval_batch, cache_dir(effective, out));
  const std::string protocol = spec.mode == MaskMode::Fixed ? "sensors_out_fixed" : "sensors_out_random";
  std::string jsonl, csv = "missing_count,missing_ratio,hidden_feature,rmse,mae,rmse_ratio\n";
  for (std::size_t c = 1; c <= res.metrics.size(); ++c) {
    const Metrics& m = res.metrics[c - 1];
    jsonl += row(protocol, effective, c, m).to_json() + "\n";
    csv += std::to_string(c) + "," +
           format_exact(static_cast<double>(c) / static_cast<double>(exp.full.schema().size())) + "," +
           res.hidden[c - 1] + "," + format_exact(m.rmse) + "," + format_exact(m.mae) + "," +
           format_exact(m.rmse / res.metrics.front().rmse) + "\n";
  }
  write_text(out / "sensors_out.jsonl", jsonl);
  write_text(out / "sensors_out.csv", csv);
  progress("rmse ratio " + std::to_string(res.metrics.size()) + " vs 1 hidden: " +
           format_significant(res.ratio(), 5, true));
}

void cmd_ood(const RunConfig& config, const fs::path& out, const Progress& progress) {
  const Experiment exp = prepare_experiment(config);
  const auto [train_ds, test_ds] = split_ood_regions(exp.full, config.ood_train_regions());
  write_manifest(out, "ood", config, input_hash(config, exp.full),
                 {{"train_regions", join(train_ds.regions(), ",")}, {"test_regions", join(test_ds.regions(), ",")}});
  const TrainedRun run = train_and_evaluate(config, exp, train_ds, test_ds, out, out / "checkpoint", progress);
  write_text(out / "ood.jsonl", row("ood", config, 0, run.metrics).to_json() + "\n");
  write_text(out / "ood_per_region.csv", region_table(run.metrics));
}

void cmd_ablate_all(const RunConfig& config, const fs::path& out, const Progress& progress) {
  const Experiment exp = prepare_experiment(config);
  const auto [train_ds, test_ds] = split_temporal(exp.full, config.train_fraction());
  write_manifest(out, "ablate-all", config, input_hash(config, exp.full), {});
  std::string jsonl, table = "variant,rmse,mae\n";
  for (Variant v : all_variants()) {
    RunConfig vc = config;
    vc.set("ablation.variant", variant_name(v));
    const fs::path dir = out / "ablation" / variant_name(v);
    const TrainedRun run = train_and_evaluate(vc, exp, train_ds, test_ds, out, dir, progress);
    jsonl += row("standard", vc, 0, run.metrics).to_json() + "\n";
    table += variant_name(v) + "," + format_exact(run.metrics.rmse) + "," + format_exact(run.metrics.mae) + "\n";
  }
  write_text(out / "ablation.jsonl", jsonl);
  write_text(out / "ablation.csv", table);
}

}  // namespace

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names = {"generate-synthetic", "prepare", "render-text",
                                                 "render-image",       "train",   "evaluate",
                                                 "sensors-out",        "ood",     "ablate-all"};
  return names;
}

void run_subcommand(const std::string& name, const RunConfig& config, const RunOptions& options) {
  config.validate();
  const fs::path out(options.out_dir);
  fs::create_directories(out);
  const Progress progress(options.verbose);
  if (name == "generate-synthetic") cmd_generate(config, out, progress);
  else if (name == "prepare") cmd_prepare(config, out, progress);
  else if (name == "render-text") cmd_render_text(config, out, options);
  else if (name == "render-image") cmd_render_image(config, out, options);
  else if (name == "train") cmd_train(config, out, progress);
  else if (name == "evaluate") cmd_evaluate(config, out, progress);
  else if (name == "sensors-out") cmd_sensors_out(config, out, progress);
  else if (name == "ood") cmd_ood(config, out, progress);
  else if (name == "ablate-all") cmd_ablate_all(config, out, progress);
  else throw ConfigError("unknown subcommand '" + name + "'");
}

}  // namespace lite
