#include "lite/nn.hpp"

#include <cmath>

#include "lite/errors.hpp"

namespace lite::nn {

Tensor& ParameterStore::add(const std::string& path, Tensor init) {
  auto [it, inserted] = params_.emplace(path, std::move(init));
  if (!inserted) throw ConfigError("duplicate parameter path '" + path + "'");
  return it->second;
}

Tensor& ParameterStore::get(const std::string& path) {
  auto it = params_.find(path);
  if (it == params_.end()) throw ConfigError("unknown parameter path '" + path + "'");
  return it->second;
}

const Tensor& ParameterStore::get(const std::string& path) const {
  auto it = params_.find(path);
  if (it == params_.end()) throw ConfigError("unknown parameter path '" + path + "'");
  return it->second;
}

std::vector<std::string> ParameterStore::trainable_paths() const {
  std::vector<std::string> out;
  for (const auto& [path, t] : params_)
    if (t.requires_grad()) out.push_back(path);
  return out;
}

std::vector<std::string> ParameterStore::frozen_paths() const {
  std::vector<std::string> out;
  for (const auto& [path, t] : params_)
    if (!t.requires_grad()) out.push_back(path);
  return out;
}

std::size_t ParameterStore::trainable_count() const {
  std::size_t n = 0;
  for (const auto& [path, t] : params_)
    if (t.requires_grad()) n += t.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [path, t] : params_) t.clear_grad();
}

Tensor glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng, bool requires_grad) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(fan_in * fan_out);
  for (double& x : v) x = rng.uniform(-limit, limit);
  return Tensor({fan_in, fan_out}, std::move(v), requires_grad);
}

Tensor normal(Shape shape, double stddev, Rng& rng, bool requires_grad) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = stddev * rng.normal();
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

ad::Var Binder::operator()(Tensor& param) {
  auto it = bound_.find(&param);
  if (it != bound_.end()) return it->second;
  const ad::Var v = g_.parameter(param);
  bound_.emplace(&param, v);
  return v;
}

Linear Linear::create(ParameterStore& store, const std::string& path, std::size_t in, std::size_t out,
                      Rng& rng, bool trainable) {
  Linear l;
  l.w = &store.add(path + ".w", glorot(in, out, rng, trainable));
  l.b = &store.add(path + ".b", Tensor::zeros({out}, trainable));
  return l;
}

ad::Var Linear::operator()(Binder& bind, ad::Var x) const {
  return ad::add_row_bias(ad::matmul(x, bind(*w)), bind(*b));
}

LayerNorm LayerNorm::create(ParameterStore& store, const std::string& path, std::size_t d, bool trainable) {
  LayerNorm ln;
  Tensor ones = Tensor::filled({d}, 1.0);
  ones.set_requires_grad(trainable);
  ln.gamma = &store.add(path + ".gamma", std::move(ones));
  ln.beta = &store.add(path + ".beta", Tensor::zeros({d}, trainable));
  return ln;
}

ad::Var LayerNorm::operator()(Binder& bind, ad::Var x) const {
  return ad::layer_norm(x, bind(*gamma), bind(*beta));
}

FeedForward FeedForward::create(ParameterStore& store, const std::string& path, std::size_t d,
                                std::size_t hidden, Rng& rng, bool trainable) {
  return {Linear::create(store, path + ".up", d, hidden, rng, trainable),
          Linear::create(store, path + ".down", hidden, d, rng, trainable)};
}

ad::Var FeedForward::operator()(Binder& bind, ad::Var x) const { return down(bind, ad::gelu(up(bind, x))); }

TransformerBlock TransformerBlock::create(ParameterStore& store, const std::string& path,
                                          const BlockConfig& cfg, Rng& rng, bool trainable) {
  if (cfg.n_heads == 0 || cfg.d_model % cfg.n_heads != 0)
    throw ConfigError("d_model " + std::to_string(cfg.d_model) + " is not divisible by n_heads " +
                      std::to_string(cfg.n_heads));
  TransformerBlock b;
  b.ln1 = LayerNorm::create(store, path + ".ln1", cfg.d_model, trainable);
  b.wq = Linear::create(store, path + ".attn.q", cfg.d_model, cfg.d_model, rng, trainable);
  b.wk = Linear::create(store, path + ".attn.k", cfg.d_model, cfg.d_model, rng, trainable);
  b.wv = Linear::create(store, path + ".attn.v", cfg.d_model, cfg.d_model, rng, trainable);
  b.wo = Linear::create(store, path + ".attn.o", cfg.d_model, cfg.d_model, rng, trainable);
  b.ln2 = LayerNorm::create(store, path + ".ln2", cfg.d_model, trainable);
  b.ffn = FeedForward::create(store, path + ".ffn", cfg.d_model, cfg.ffn_hidden, rng, trainable);
  return b;
}

ad::Var TransformerBlock::operator()(Binder& bind, ad::Var x,
                                     std::shared_ptr<const kernels::AttentionLayout> layout) const {
  const ad::Var h = ln1(bind, x);
  const ad::Var a = ad::attention(wq(bind, h), wk(bind, h), wv(bind, h), std::move(layout));
  const ad::Var x1 = ad::add(x, wo(bind, a));
  return ad::add(x1, ffn(bind, ln2(bind, x1)));
}

TransformerStack TransformerStack::create(ParameterStore& store, const std::string& path,
                                          const BlockConfig& cfg, std::size_t n_layers, Rng& rng,
                                          bool trainable) {
  TransformerStack s;
  for (std::size_t i = 0; i < n_layers; ++i)
    s.blocks.push_back(TransformerBlock::create(store, path + ".block" + std::to_string(i), cfg, rng, trainable));
  s.final_ln = LayerNorm::create(store, path + ".ln_final", cfg.d_model, trainable);
  return s;
}

ad::Var TransformerStack::operator()(Binder& bind, ad::Var x,
                                     std::shared_ptr<const kernels::AttentionLayout> layout) const {
  for (const auto& b : blocks) x = b(bind, x, layout);
  return final_ln(bind, x);
}

}  // namespace lite::nn
