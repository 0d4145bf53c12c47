#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "lite/errors.hpp"
#include "lite/smoe.hpp"
#include "support.hpp"

using namespace lite;

namespace {

Tensor hand_weights() {
  // m = [1] picks out the logits row directly.
  ad::Graph g(false);
  nn::Binder bind(g);
  Tensor w_gate = Tensor::matrix(1, 4, {0.5, 2.0, 1.0, -1.0});
  Tensor w_noise = Tensor::zeros({1, 4});
  return gate_weights(bind, g.constant(Tensor::matrix(1, 1, {1.0})), w_gate, w_noise, 2, nullptr).value();
}

}  // namespace

TEST_CASE("config validation") {
  SmoeConfig c;
  c.top_k = 5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.top_k = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = SmoeConfig{};
  c.n_experts = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("hand gate example") {
  const Tensor w = hand_weights();
  const GateDecision d = decision_of(w, 0);
  CHECK(d.indices == std::vector<std::size_t>{1, 2});
  REQUIRE(d.weights.size() == 2);
  CHECK(std::abs(d.weights[0] - 0.731059) <= 1e-6);
  CHECK(std::abs(d.weights[1] - 0.268941) <= 1e-6);
  CHECK(w[0] == 0.0);
  CHECK(w[3] == 0.0);
}

TEST_CASE("ties at the k-th slot go to the lower expert") {
  ad::Graph g(false);
  nn::Binder bind(g);
  Tensor w_gate = Tensor::matrix(1, 4, {1.0, 2.0, 1.0, 1.0});
  Tensor w_noise = Tensor::zeros({1, 4});
  const Tensor& w = gate_weights(bind, g.constant(Tensor::matrix(1, 1, {1.0})), w_gate, w_noise, 2, nullptr).value();
  CHECK(decision_of(w, 0).indices == std::vector<std::size_t>{0, 1});
}

TEST_CASE("random gate calls keep exactly top_k weights summing to one") {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t e = 1 + rng.below(8);
    const std::size_t k = 1 + rng.below(e);
    const std::size_t d = 1 + rng.below(6), n = 1 + rng.below(10);
    Tensor w_gate = testing::random_tensor({d, e}, rng);
    Tensor w_noise = testing::random_tensor({d, e}, rng);
    ad::Graph g(false);
    nn::Binder bind(g);
    Rng noise(rng.next_u64());
    const Tensor& w =
        gate_weights(bind, g.constant(testing::random_tensor({n, d}, rng, -2, 2, false)), w_gate, w_noise, k,
                     rng.bernoulli(0.5) ? &noise : nullptr)
            .value();
    for (std::size_t r = 0; r < n; ++r) {
      const GateDecision dec = decision_of(w, r);
      CHECK(dec.indices.size() == k);
      double total = 0;
      for (double x : dec.weights) total += x;
      CHECK(std::abs(total - 1.0) <= 1e-10);
      std::set<std::size_t> distinct(dec.indices.begin(), dec.indices.end());
      CHECK(distinct.size() == k);
    }
  }
}

TEST_CASE("single expert always gets weight one") {
  Rng rng(22);
  Tensor w_gate = testing::random_tensor({3, 1}, rng);
  Tensor w_noise = testing::random_tensor({3, 1}, rng);
  ad::Graph g(false);
  nn::Binder bind(g);
  Rng noise(5);
  const Tensor& w =
      gate_weights(bind, g.constant(testing::random_tensor({6, 3}, rng, -2, 2, false)), w_gate, w_noise, 1, &noise)
          .value();
  for (double x : w.values()) CHECK(x == 1.0);
}

TEST_CASE("k equal to E is a dense softmax") {
  Rng rng(23);
  const std::size_t d = 4, e = 5, n = 7;
  Tensor w_gate = testing::random_tensor({d, e}, rng);
  Tensor w_noise = testing::random_tensor({d, e}, rng);
  const Tensor m = testing::random_tensor({n, d}, rng, -2, 2, false);
  ad::Graph g(false);
  nn::Binder bind(g);
  const Tensor& w = gate_weights(bind, g.constant(m), w_gate, w_noise, e, nullptr).value();
  for (std::size_t r = 0; r < n; ++r) {
    std::vector<double> logits(e, 0.0);
    for (std::size_t j = 0; j < e; ++j)
      for (std::size_t c = 0; c < d; ++c) logits[j] += m.at(r, c) * w_gate.at(c, j);
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0;
    for (double l : logits) z += std::exp(l - mx);
    for (std::size_t j = 0; j < e; ++j) CHECK(std::abs(w.at(r, j) - std::exp(logits[j] - mx) / z) <= 1e-12);
  }
}

TEST_CASE("noise-free gating is deterministic and scale invariant in argmax") {
  Rng rng(24);
  const std::size_t d = 3, e = 4;
  Tensor w_gate = testing::random_tensor({d, e}, rng);
  Tensor w_noise = testing::random_tensor({d, e}, rng);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor m = testing::random_tensor({1, d}, rng, -2, 2, false);
    std::vector<double> scaled(m.values().begin(), m.values().end());
    const double s = rng.uniform(0.1, 10.0);
    for (double& x : scaled) x *= s;
    ad::Graph g(false);
    nn::Binder bind(g);
    const Tensor& a = gate_weights(bind, g.constant(m), w_gate, w_noise, 1, nullptr).value();
    const Tensor& b = gate_weights(bind, g.constant(m), w_gate, w_noise, 1, nullptr).value();
    const Tensor& c = gate_weights(bind, g.constant(Tensor({1, d}, scaled)), w_gate, w_noise, 1, nullptr).value();
    CHECK(std::vector<double>(a.values().begin(), a.values().end()) ==
          std::vector<double>(b.values().begin(), b.values().end()));
    CHECK(decision_of(a, 0).indices == decision_of(c, 0).indices);
  }
}

TEST_CASE("imputation is the gate-weighted sum of the selected experts") {
  Rng rng(25);
  const std::size_t d = 3;
  SmoeConfig cfg;
  cfg.n_experts = 4;
  cfg.top_k = 2;
  cfg.expert_hidden = 5;
  nn::ParameterStore store;
  const ExpertBank bank = ExpertBank::create(store, "smoe", d, cfg, rng);
  const Tensor m = testing::random_tensor({5, d}, rng, -2, 2, false);
  ad::Graph g(false);
  nn::Binder bind(g);
  const ad::Var mv = g.constant(m);
  std::vector<GateDecision> decisions;
  const Tensor& out = bank.impute(bind, mv, nullptr, &decisions).value();
  REQUIRE(decisions.size() == 5);
  std::vector<Tensor> expert_out;
  for (std::size_t e = 0; e < cfg.n_experts; ++e) expert_out.push_back(bank.expert(e)(bind, mv).value());
  for (std::size_t r = 0; r < 5; ++r) {
    const auto& dec = decisions[r];
    CHECK(dec.indices.size() == 2);
    for (std::size_t c = 0; c < d; ++c) {
      double expected = 0;
      for (std::size_t i = 0; i < dec.indices.size(); ++i) expected += dec.weights[i] * expert_out[dec.indices[i]].at(r, c);
      CHECK(std::abs(out.at(r, c) - expected) <= 1e-12);
    }
  }
}

TEST_CASE("a single expert imputes its own output") {
  Rng rng(26);
  SmoeConfig cfg;
  cfg.n_experts = 1;
  cfg.top_k = 1;
  cfg.expert_hidden = 4;
  nn::ParameterStore store;
  const ExpertBank bank = ExpertBank::create(store, "smoe", 3, cfg, rng);
  ad::Graph g(false);
  nn::Binder bind(g);
  const ad::Var m = g.constant(testing::random_tensor({2, 3}, rng, -2, 2, false));
  Rng noise(1);
  const Tensor& a = bank.impute(bind, m, &noise).value();
  const Tensor& f = bank.expert(0)(bind, m).value();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - f[i]) <= 1e-15);
}

TEST_CASE("experts that are not selected receive exactly zero gradient") {
  Rng rng(27);
  SmoeConfig cfg;
  cfg.n_experts = 4;
  cfg.top_k = 2;
  cfg.expert_hidden = 5;
  nn::ParameterStore store;
  const ExpertBank bank = ExpertBank::create(store, "smoe", 3, cfg, rng);
  store.zero_grad();
  ad::Graph g;
  nn::Binder bind(g);
  std::vector<GateDecision> decisions;
  const ad::Var out = bank.impute(bind, g.constant(testing::random_tensor({1, 3}, rng, -2, 2, false)), nullptr, &decisions);
  g.backward(testing::probe_sum(g, out));
  const std::set<std::size_t> chosen(decisions[0].indices.begin(), decisions[0].indices.end());
  for (std::size_t e = 0; e < cfg.n_experts; ++e) {
    double mag = 0;
    for (const Tensor* t : {bank.expert(e).up.w, bank.expert(e).up.b, bank.expert(e).down.w, bank.expert(e).down.b})
      if (t->has_grad())
        for (double v : t->grad()) mag += std::abs(v);
    if (chosen.count(e)) CHECK(mag > 0.0);
    else CHECK(mag == 0.0);
  }
  double gate_mag = 0;
  for (double v : bank.w_gate().grad()) gate_mag += std::abs(v);
  CHECK(gate_mag > 0.0);
}

TEST_CASE("gate and expert gradients match finite differences") {
  Rng rng(28);
  SmoeConfig cfg;
  cfg.n_experts = 4;
  cfg.top_k = 2;
  cfg.expert_hidden = 5;
  nn::ParameterStore store;
  const ExpertBank bank = ExpertBank::create(store, "smoe", 3, cfg, rng);
  const Tensor m = testing::random_tensor({6, 3}, rng, -2, 2, false);
  Rng teacher_rng(29);
  const Tensor teacher = testing::random_tensor({6, 3}, teacher_rng, -1, 1, false);
  std::vector<Tensor*> params;
  for (auto& [path, t] : store.all()) params.push_back(&t);
  // Noise is drawn from a fresh stream on every evaluation so the selection is
  // the same for the analytic and the perturbed passes.
  auto loss = [&](ad::Graph& g) {
    nn::Binder bind(g);
    Rng noise(30);
    return imputation_loss(g, bank.impute(bind, g.constant(m), &noise), teacher);
  };
  const auto res = testing::check_gradients(loss, params, testing::all_entries({&bank.w_gate(), &bank.w_noise()}));
  INFO(res.worst);
  CHECK(res.max_rel_error <= 1e-4);
  const auto all = testing::check_gradients(loss, params, testing::all_entries(params));
  INFO(all.worst);
  CHECK(all.max_rel_error <= 1e-4);
}

TEST_CASE("mask substitution") {
  Rng rng(31);
  ad::Graph g(false);
  const Tensor states = testing::random_tensor({6, 3}, rng, -2, 2, false);
  const ad::Var s = g.constant(states);
  CHECK(substitute_masks(s, {}, g.constant(Tensor::zeros({1, 3}))).id == s.id);
  const Tensor& out = substitute_masks(s, {1, 4}, g.constant(Tensor::filled({2, 3}, 9.0))).value();
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 3; ++c) {
      if (r == 1 || r == 4) CHECK(out.at(r, c) == 9.0);
      else CHECK(out.at(r, c) == states.at(r, c));
    }
}

TEST_CASE("imputation loss") {
  ad::Graph g(false);
  const Tensor t = Tensor::matrix(1, 2, {3, 4});
  CHECK(imputation_loss(g, g.constant(Tensor::matrix(1, 2, {3, 4})), t).value().item() == 0.0);
  CHECK(std::abs(imputation_loss(g, g.constant(Tensor::matrix(1, 2, {0, 0})), t).value().item() - 5.0) <= 1e-9);
  CHECK(std::abs(imputation_loss(g, g.constant(Tensor::matrix(1, 2, {0, 0})), Tensor::matrix(1, 2, {6, 8})).value().item() -
                 10.0) <= 1e-9);
  // Two rows: sqrt((25 + 0) / 2)
  const double two = imputation_loss(g, g.constant(Tensor::matrix(2, 2, {0, 0, 1, 1})), Tensor::matrix(2, 2, {3, 4, 1, 1}))
                         .value()
                         .item();
  CHECK(std::abs(two - std::sqrt(12.5)) <= 1e-12);
  CHECK_THROWS_AS(imputation_loss(g, g.constant(Tensor::zeros({1, 3})), t), ShapeError);
}
