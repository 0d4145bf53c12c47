#pragma once
// Two-phase training (precompute text / images / instructions, then minibatch
// optimization), evaluation, checkpoints and the evaluation protocols.

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "lite/config.hpp"
#include "lite/dataset.hpp"
#include "lite/model.hpp"
#include "lite/textual.hpp"

namespace lite {

// ---- phase 1 ----------------------------------------------------------------

struct AnchorData {
  std::size_t record = 0;  // index into the dataset's records
  std::array<std::uint32_t, kRecordsPerAnchor> texts{};  // indices into Corpus::texts
  std::vector<std::uint8_t> image;  // 0 / 255 pixels
  std::vector<std::int32_t> instruction;
  double target = 0.0;  // raw units
};

/// Precomputed inputs for every target-carrying anchor of a dataset.
struct Corpus {
  std::vector<SemanticTokens> texts;  // one per distinct (region, day) referenced
  std::vector<AnchorData> anchors;
  std::size_t image_w = 0;
  std::size_t image_h = 0;
  std::string key;  // hash of everything the corpus depends on
};

/// Identity of a corpus: dataset content, vocabulary, window and raster settings, domain texts.
std::string corpus_key(const Dataset& ds, const Vocabulary& vocab, const ModelConfig& cfg,
                       const DomainDescription& domain);

Corpus build_corpus(const Dataset& ds, const Vocabulary& vocab, const ModelConfig& cfg,
                    const DomainDescription& domain);

void save_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path);

/// Builds the corpus, or reuses `cache_dir/<key>.bin` when present.
Corpus load_or_build_corpus(const Dataset& ds, const Vocabulary& vocab, const ModelConfig& cfg,
                            const DomainDescription& domain, const std::string& cache_dir);

// ---- phase 2 ----------------------------------------------------------------

struct TeacherPlan {
  TextBatch originals;
  std::vector<std::pair<std::size_t, std::pair<std::size_t, std::size_t>>> spans;
};

/// Assembles one forward batch. With `mask_rng` set, each present feature of
/// an anchor's current record is additionally masked with probability p_mask
/// and the corresponding teacher spans are written to `teacher`.
ForwardBatch make_batch(const Corpus& corpus, const Dataset& ds, const Vocabulary& vocab, const ModelConfig& cfg,
                        const std::vector<std::size_t>& anchors, Rng* mask_rng, double p_mask,
                        TeacherPlan* teacher);

class AdamW {
 public:
  AdamW(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {}

  /// One update of every trainable parameter that holds a gradient. Matrices
  /// decay, vectors (biases, norms) do not.
  void step(nn::ParameterStore& store);
  std::size_t steps() const { return t_; }

 private:
  double lr_, wd_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments_;
};

/// Scales all gradients so their global L2 norm is at most max_norm; returns the norm before clipping.
double clip_grad_norm(nn::ParameterStore& store, double max_norm);

struct EpochLog {
  std::size_t epoch = 0;
  std::size_t batches = 0;
  double first_batch_loss = 0.0;
  double last_batch_loss = 0.0;
  double mean_loss = 0.0;
  std::size_t artificial_masks = 0;
  std::size_t li_pairs = 0;
  std::string frozen_hash;
};

struct TrainState {
  std::size_t epoch = 0;
  std::string rng_state;
  std::string noise_state;
};

/// Trains in place. Throws DataError on an empty dataset and Error when the
/// loss becomes non-finite.
TrainState train(LiteModel& model, const Corpus& corpus, const Dataset& ds, const Vocabulary& vocab,
                 const TrainConfig& cfg, std::vector<EpochLog>* log = nullptr,
                 const std::function<void(const EpochLog&)>& on_epoch = {});

struct RegionMetrics {
  double rmse = 0.0;
  double mae = 0.0;
  std::size_t count = 0;
};

struct Metrics {
  double rmse = 0.0;
  double mae = 0.0;
  std::size_t count = 0;
  std::map<std::string, RegionMetrics> per_region;
};

/// RMSE / MAE over raw-unit pairs.
Metrics compute_metrics(const std::vector<double>& preds, const std::vector<double>& targets,
                        const std::vector<std::string>& regions);

/// Denormalized predictions for every corpus anchor (noise off, no gradient).
std::vector<double> predict_all(const LiteModel& model, const Corpus& corpus, const Dataset& ds,
                                const Vocabulary& vocab, std::size_t batch_size);

Metrics evaluate(const LiteModel& model, const Corpus& corpus, const Dataset& ds, const Vocabulary& vocab,
                 std::size_t batch_size);

// ---- checkpoints --------------------------------------------------------------

/// Directory with manifest.txt, vocab.txt and params/<path>.f64 (raw little-endian doubles).
void save_checkpoint(const std::string& dir, const LiteModel& model, const RunConfig& config,
                     const Vocabulary& vocab, const NormStats& stats, const TrainState& state,
                     const std::string& schema_hash);

struct LoadedCheckpoint {
  RunConfig config;
  Vocabulary vocab;
  NormStats stats;
  TrainState state;
  std::unique_ptr<LiteModel> model;
};

LoadedCheckpoint load_checkpoint(const std::string& dir);

// ---- protocols ---------------------------------------------------------------

/// Data prepared from a run configuration: full dataset, vocabulary and domain.
struct Experiment {
  Dataset full;
  Vocabulary vocab;
  DomainDescription domain;
};

Experiment prepare_experiment(const RunConfig& config);

struct MetricsRow {
  std::string protocol;
  std::string variant;
  std::size_t missing_count = 0;
  double rmse = 0.0;
  double mae = 0.0;
  std::uint64_t seed = 0;

  std::string to_json() const;
};

/// Features hidden at each count 1..max_count, in hiding order.
std::vector<std::size_t> sensors_out_order(const MaskSpec& spec, const FeatureSchema& schema);

struct SensorsOutResult {
  std::vector<std::string> hidden;  // in hiding order
  std::vector<Metrics> metrics;     // index c-1 for c hidden features
  double ratio() const { return metrics.back().rmse / metrics.front().rmse; }
};

/// Evaluates with 1..max_count features hidden in test copies only.
SensorsOutResult leave_sensors_out(const LiteModel& model, const Dataset& test, const Vocabulary& vocab,
                                   const DomainDescription& domain, const MaskSpec& spec, std::size_t batch_size,
                                   const std::string& cache_dir = "");

std::string schema_hash(const FeatureSchema& schema);

}  // namespace lite
