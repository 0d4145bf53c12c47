#pragma once
// Named parameter storage and the small layers shared by the encoders, the
// expert bank and the fusion decoder.

#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "lite/tensor.hpp"
#include "lite/util.hpp"

namespace lite::nn {

/// Parameters keyed by stable path strings. References stay valid for the
/// lifetime of the store.
class ParameterStore {
 public:
  Tensor& add(const std::string& path, Tensor init);
  Tensor& get(const std::string& path);
  const Tensor& get(const std::string& path) const;
  bool contains(const std::string& path) const { return params_.count(path) != 0; }

  std::map<std::string, Tensor>& all() { return params_; }
  const std::map<std::string, Tensor>& all() const { return params_; }
  std::vector<std::string> trainable_paths() const;
  std::vector<std::string> frozen_paths() const;
  std::size_t trainable_count() const;

  void zero_grad();

 private:
  std::map<std::string, Tensor> params_;
};

/// Glorot-uniform matrix [fan_in x fan_out].
Tensor glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng, bool requires_grad);
/// Normal(0, stddev) tensor.
Tensor normal(Shape shape, double stddev, Rng& rng, bool requires_grad);

/// Binds each parameter tensor to a graph at most once.
class Binder {
 public:
  explicit Binder(ad::Graph& g) : g_(g) {}
  ad::Var operator()(Tensor& param);
  ad::Graph& graph() { return g_; }

 private:
  ad::Graph& g_;
  std::unordered_map<const Tensor*, ad::Var> bound_;
};

struct Linear {
  Tensor* w = nullptr;  // [in x out]
  Tensor* b = nullptr;  // [out]

  static Linear create(ParameterStore& store, const std::string& path, std::size_t in, std::size_t out,
                       Rng& rng, bool trainable = true);
  ad::Var operator()(Binder& bind, ad::Var x) const;
  std::size_t in() const { return w->dim(0); }
  std::size_t out() const { return w->dim(1); }
};

struct LayerNorm {
  Tensor* gamma = nullptr;
  Tensor* beta = nullptr;

  static LayerNorm create(ParameterStore& store, const std::string& path, std::size_t d, bool trainable = true);
  ad::Var operator()(Binder& bind, ad::Var x) const;
};

struct FeedForward {
  Linear up;
  Linear down;

  static FeedForward create(ParameterStore& store, const std::string& path, std::size_t d, std::size_t hidden,
                            Rng& rng, bool trainable = true);
  ad::Var operator()(Binder& bind, ad::Var x) const;  // down(gelu(up(x)))
};

struct BlockConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t ffn_hidden = 256;
};

/// Pre-norm transformer block: x + attn(ln1 x), then h + ffn(ln2 h).
struct TransformerBlock {
  LayerNorm ln1, ln2;
  Linear wq, wk, wv, wo;
  FeedForward ffn;

  static TransformerBlock create(ParameterStore& store, const std::string& path, const BlockConfig& cfg,
                                 Rng& rng, bool trainable = true);
  ad::Var operator()(Binder& bind, ad::Var x, std::shared_ptr<const kernels::AttentionLayout> layout) const;
};

/// Stack of blocks followed by a final layer norm.
struct TransformerStack {
  std::vector<TransformerBlock> blocks;
  LayerNorm final_ln;

  static TransformerStack create(ParameterStore& store, const std::string& path, const BlockConfig& cfg,
                                 std::size_t n_layers, Rng& rng, bool trainable = true);
  ad::Var operator()(Binder& bind, ad::Var x, std::shared_ptr<const kernels::AttentionLayout> layout) const;
};

}  // namespace lite::nn
