#pragma once
// Flat key=value run configuration. Every key has a default; unknown keys and
// invalid values are rejected with all offending keys reported together.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lite/dataset.hpp"
#include "lite/model.hpp"
#include "lite/textual.hpp"

namespace lite {

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 0.01;
  std::size_t batch_size = 16;
  std::size_t epochs = 10;
  std::uint64_t seed = 7;
  double p_mask = 0.15;
  double grad_clip = 1.0;
  std::size_t eval_batch = 32;

  void validate() const;
};

enum class MaskMode { Fixed, Random };

struct MaskSpec {
  MaskMode mode = MaskMode::Fixed;
  std::vector<std::string> features;  // fixed mode, hidden incrementally in this order
  std::size_t max_count = 4;
  std::uint64_t seed = 7;
};

class RunConfig {
 public:
  RunConfig();

  /// Parses "key=value" lines ('#' starts a comment). Errors collect every
  /// offending line before throwing a single ConfigError.
  static RunConfig from_text(const std::string& text);
  static RunConfig from_file(const std::string& path);

  /// Applies overrides of the form key=value; throws ConfigError listing all bad entries.
  void apply(const std::vector<std::string>& assignments);
  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;

  /// Validates every value; throws one ConfigError naming all invalid keys.
  void validate() const;

  /// Canonical "key=value" lines in key order.
  std::string serialize() const;
  const std::map<std::string, std::string>& values() const { return values_; }

  std::uint64_t seed() const;
  ModelConfig model() const;
  TrainConfig train() const;
  SyntheticSpec synthetic() const;
  MaskSpec mask(const FeatureSchema& schema) const;
  DomainDescription domain() const;
  double train_fraction() const;
  std::size_t ood_train_regions() const;
  std::string csv_path() const { return get("data.csv"); }
  bool cache_enabled() const;

 private:
  std::map<std::string, std::string> values_;
};

/// Desk-scale settings used by the acceptance suite and the README examples.
std::vector<std::string> desk_overrides();

}  // namespace lite
