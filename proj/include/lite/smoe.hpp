#pragma once
// Sparse mixture-of-experts imputation of [MASK] token states: noisy top-k
// gating over a bank of feed-forward experts.

#include <cstdint>
#include <optional>
#include <vector>

#include "lite/nn.hpp"

namespace lite {

struct SmoeConfig {
  std::size_t n_experts = 4;
  std::size_t top_k = 2;
  std::size_t expert_hidden = 256;
  bool noise_enabled = true;

  void validate() const;
};

struct GateDecision {
  std::vector<std::size_t> indices;  // ascending expert order
  std::vector<double> weights;       // parallel to indices
};

/// Gate weights [n x E] for a batch of states: softmax over the top-k noisy
/// logits, exact zeros elsewhere. `noise` supplies one standard-normal draw
/// per row and expert when gating noise is active.
ad::Var gate_weights(nn::Binder& bind, ad::Var m, Tensor& w_gate, Tensor& w_noise, std::size_t top_k,
                     Rng* noise);

/// Reads the decision for row `row` out of a gate weight matrix.
GateDecision decision_of(const Tensor& weights, std::size_t row);

class ExpertBank {
 public:
  ExpertBank() = default;
  static ExpertBank create(nn::ParameterStore& store, const std::string& path, std::size_t d_model,
                           const SmoeConfig& cfg, Rng& rng);

  /// Imputed states [n x d] for mask states m [n x d]; each row evaluates
  /// only its selected experts. `noise` is null when gating noise is off.
  ad::Var impute(nn::Binder& bind, ad::Var m, Rng* noise, std::vector<GateDecision>* decisions = nullptr) const;

  const SmoeConfig& config() const { return cfg_; }
  Tensor& w_gate() const { return *w_gate_; }
  Tensor& w_noise() const { return *w_noise_; }
  const nn::FeedForward& expert(std::size_t e) const { return experts_.at(e); }

 private:
  SmoeConfig cfg_;
  std::vector<nn::FeedForward> experts_;
  Tensor* w_gate_ = nullptr;
  Tensor* w_noise_ = nullptr;
};

/// Replaces the states at `mask_rows` by `imputed` (rows in the same order).
ad::Var substitute_masks(ad::Var token_states, const std::vector<std::size_t>& mask_rows, ad::Var imputed);

/// sqrt(sum_rows ||imputed - teacher||^2 / M); 0 when there are no rows.
ad::Var imputation_loss(ad::Graph& g, ad::Var imputed, const Tensor& teacher);

}  // namespace lite
