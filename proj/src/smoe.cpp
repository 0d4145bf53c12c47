#include "lite/smoe.hpp"

#include "lite/errors.hpp"

namespace lite {

void SmoeConfig::validate() const {
  if (n_experts == 0) throw ConfigError("smoe needs at least one expert");
  if (top_k == 0 || top_k > n_experts) throw ConfigError("smoe top_k must lie in [1, n_experts]");
  if (expert_hidden == 0) throw ConfigError("smoe expert_hidden must be positive");
}

ad::Var gate_weights(nn::Binder& bind, ad::Var m, Tensor& w_gate, Tensor& w_noise, std::size_t top_k,
                     Rng* noise) {
  ad::Var logits = ad::matmul(m, bind(w_gate));
  if (noise != nullptr) {
    const std::size_t n = m.value().rows(), e = w_gate.cols();
    std::vector<double> mu(n * e);
    for (double& x : mu) x = noise->normal();
    const ad::Var mu_var = bind.graph().constant(Tensor({n, e}, std::move(mu)));
    logits = ad::add(logits, ad::mul(mu_var, ad::softplus(ad::matmul(m, bind(w_noise)))));
  }
  return ad::softmax(ad::topk_mask(logits, top_k));
}

GateDecision decision_of(const Tensor& weights, std::size_t row) {
  GateDecision d;
  const std::size_t e = weights.cols();
  for (std::size_t j = 0; j < e; ++j) {
    const double w = weights.values()[row * e + j];
    if (w > 0.0) {
      d.indices.push_back(j);
      d.weights.push_back(w);
    }
  }
  return d;
}

ExpertBank ExpertBank::create(nn::ParameterStore& store, const std::string& path, std::size_t d_model,
                              const SmoeConfig& cfg, Rng& rng) {
  cfg.validate();
  ExpertBank bank;
  bank.cfg_ = cfg;
  for (std::size_t e = 0; e < cfg.n_experts; ++e)
    bank.experts_.push_back(
        nn::FeedForward::create(store, path + ".expert" + std::to_string(e), d_model, cfg.expert_hidden, rng));
  bank.w_gate_ = &store.add(path + ".w_gate", nn::glorot(d_model, cfg.n_experts, rng, true));
  bank.w_noise_ = &store.add(path + ".w_noise", nn::glorot(d_model, cfg.n_experts, rng, true));
  return bank;
}

ad::Var ExpertBank::impute(nn::Binder& bind, ad::Var m, Rng* noise, std::vector<GateDecision>* decisions) const {
  const std::size_t n = m.value().rows(), d = m.value().cols();
  const ad::Var g = gate_weights(bind, m, *w_gate_, *w_noise_, cfg_.top_k, noise);
  const Tensor& G = g.value();
  if (decisions) {
    decisions->clear();
    for (std::size_t r = 0; r < n; ++r) decisions->push_back(decision_of(G, r));
  }
  std::vector<ad::RowPlacement> pieces;
  for (std::size_t e = 0; e < cfg_.n_experts; ++e) {
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < n; ++r)
      if (G.values()[r * cfg_.n_experts + e] > 0.0) rows.push_back(r);
    if (rows.empty()) continue;
    const ad::Var out = experts_[e](bind, ad::gather_rows(m, rows));
    pieces.push_back({ad::mul_rowwise(out, ad::gather_column(g, rows, e)), rows});
  }
  return ad::place_rows(bind.graph(), n, d, pieces);
}

ad::Var substitute_masks(ad::Var token_states, const std::vector<std::size_t>& mask_rows, ad::Var imputed) {
  if (mask_rows.empty()) return token_states;
  return ad::replace_rows(token_states, mask_rows, imputed);
}

ad::Var imputation_loss(ad::Graph& g, ad::Var imputed, const Tensor& teacher) {
  const std::size_t m = imputed.value().rows();
  if (m == 0 || imputed.value().size() == 0) return g.constant(Tensor::scalar(0.0));
  if (teacher.shape() != imputed.value().shape())
    throw ShapeError("imputation_loss: teacher " + shape_str(teacher.shape()) + " vs imputed " +
                     shape_str(imputed.value().shape()));
  const ad::Var diff = ad::sub(imputed, g.constant(teacher));
  return ad::sqrt(ad::scale(ad::sum(ad::square(diff)), 1.0 / static_cast<double>(m)));
}

}  // namespace lite
