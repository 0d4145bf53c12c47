#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "lite/errors.hpp"
#include "lite/fusion.hpp"
#include "lite/train_eval.hpp"
#include "support.hpp"

using namespace lite;

namespace {

FusionConfig small_fusion() {
  FusionConfig c;
  c.decoder_layers = 1;
  c.decoder_d = 8;
  c.decoder_heads = 2;
  c.decoder_ffn = 16;
  c.max_instruction_len = 16;
  return c;
}

struct Rig {
  nn::ParameterStore store;
  FusionModule fusion;
  TextBatch instr;
  Tensor u, o;
  bool text, image;

  Rig(bool use_text, bool use_image, bool use_decoder, std::uint64_t seed = 1) : text(use_text), image(use_image) {
    Rng rng(seed), dec(seed + 100);
    fusion = FusionModule::create(store, small_fusion(), 6, 4, use_text, use_image, use_decoder, 12, rng, dec);
    instr.append(std::vector<std::int32_t>{4, 5, 6, 7});
    instr.append(std::vector<std::int32_t>{8, 9, 10});
    Rng data(seed + 200);
    u = testing::random_tensor({2, 6}, data, -1, 1, false);
    o = testing::random_tensor({2, 4}, data, -1, 1, false);
  }

  ad::Var fuse(nn::Binder& bind, const TextBatch* instructions = nullptr) {
    FusionInput in;
    if (text) in.u = bind.graph().constant(u);
    if (image) in.o = bind.graph().constant(o);
    in.instructions = instructions ? instructions : &instr;
    return fusion.fuse(bind, in);
  }
};

std::vector<double> values_of(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

TEST_CASE("variant names round trip") {
  for (Variant v : all_variants()) CHECK(parse_variant(variant_name(v)) == v);
  CHECK(all_variants().size() == 7);
  CHECK_THROWS_AS(parse_variant("everything"), ConfigError);
}

TEST_CASE("config validation") {
  FusionConfig c = small_fusion();
  c.eta1 = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_fusion();
  c.eta1 = c.eta2 = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  nn::ParameterStore store;
  Rng a(1), b(2);
  CHECK_THROWS_AS(FusionModule::create(store, small_fusion(), 6, 4, false, false, true, 12, a, b), ConfigError);
}

TEST_CASE("fused output has one row per anchor") {
  for (int variant = 0; variant < 3; ++variant) {
    Rig rig(variant != 1, variant != 2, true);
    ad::Graph g(false);
    nn::Binder bind(g);
    CHECK(rig.fuse(bind).shape() == Shape{2, 8});
  }
  Rig direct(true, true, false);
  ad::Graph g(false);
  nn::Binder bind(g);
  CHECK(direct.fuse(bind).shape() == Shape{2, 8});
}

TEST_CASE("decoder weights are frozen, adapters are not") {
  Rig rig(true, true, true);
  const auto frozen = rig.store.frozen_paths();
  REQUIRE_FALSE(frozen.empty());
  for (const auto& p : frozen) CHECK(p.rfind("decoder.", 0) == 0);
  for (const auto& p : rig.store.trainable_paths()) CHECK(p.rfind("decoder.", 0) != 0);
  CHECK(rig.store.contains("fusion.proj_u.w"));

  std::map<std::string, std::vector<double>> before;
  for (const auto& p : frozen) before[p] = values_of(rig.store.get(p));
  std::map<std::string, std::vector<double>> before_trainable;
  for (const auto& p : rig.store.trainable_paths()) before_trainable[p] = values_of(rig.store.get(p));

  AdamW opt(1e-2, 0.01);
  for (int step = 0; step < 3; ++step) {
    rig.store.zero_grad();
    ad::Graph g;
    nn::Binder bind(g);
    const ad::Var q = rig.fuse(bind);
    g.backward(prediction_loss(g, rig.fusion.predict(bind, q), {1.0, -1.0}));
    opt.step(rig.store);
  }
  for (const auto& p : frozen) CHECK(values_of(rig.store.get(p)) == before[p]);
  std::size_t changed = 0;
  for (const auto& [p, v] : before_trainable) changed += values_of(rig.store.get(p)) != v;
  CHECK(changed == before_trainable.size());
}

TEST_CASE("without a decoder no decoder parameters exist") {
  Rig rig(true, true, false);
  CHECK_FALSE(rig.fusion.has_decoder());
  CHECK(rig.store.frozen_paths().empty());
  for (const auto& [p, t] : rig.store.all()) CHECK(p.rfind("decoder.", 0) != 0);
  CHECK(rig.store.contains("fusion.direct.w"));
  CHECK(rig.store.get("fusion.direct.w").dim(0) == 6 + 4 + 8);
}

TEST_CASE("permuting instruction tokens changes Q") {
  Rig rig(true, true, true, 3);
  TextBatch swapped;
  swapped.append(std::vector<std::int32_t>{5, 4, 6, 7});
  swapped.append(std::vector<std::int32_t>{8, 9, 10});
  ad::Graph g(false);
  nn::Binder bind(g);
  const Tensor& a = rig.fuse(bind).value();
  const Tensor& b = rig.fuse(bind, &swapped).value();
  double diff = 0;
  for (std::size_t c = 0; c < 8; ++c) diff = std::max(diff, std::abs(a.at(0, c) - b.at(0, c)));
  CHECK(diff > 1e-6);
  // The second anchor is untouched.
  for (std::size_t c = 0; c < 8; ++c) CHECK(a.at(1, c) == b.at(1, c));
}

TEST_CASE("fusion gradients match finite differences") {
  for (bool decoder : {true, false}) {
    Rig rig(true, true, decoder, 4);
    std::vector<Tensor*> params;
    for (const auto& p : rig.store.trainable_paths()) params.push_back(&rig.store.get(p));
    auto loss = [&](ad::Graph& g) {
      nn::Binder bind(g);
      return prediction_loss(g, rig.fusion.predict(bind, rig.fuse(bind)), {0.3, -0.7});
    };
    std::vector<testing::Probe> probes;
    Rng pick(5);
    for (int i = 0; i < 50; ++i) {
      Tensor* t = params[pick.below(params.size())];
      probes.push_back({t, pick.below(t->size())});
    }
    const auto res = testing::check_gradients(loss, params, probes);
    INFO(res.worst);
    CHECK(res.max_rel_error <= 1e-4);
  }
}

TEST_CASE("prediction head") {
  Rig rig(true, true, true);
  const nn::Linear& head = rig.fusion.head();
  for (double& w : head.w->values()) w = 0.0;
  (*head.b)[0] = 2.5;
  Rng rng(6);
  ad::Graph g(false);
  nn::Binder bind(g);
  const Tensor& p = rig.fusion.predict(bind, g.constant(testing::random_tensor({5, 8}, rng, -3, 3, false))).value();
  for (double v : p.values()) CHECK(v == 2.5);

  // Affinity: predict(q1 + q2) = predict(q1) + predict(q2) - b.
  for (double& w : head.w->values()) w = rng.uniform(-1, 1);
  const Tensor q1 = testing::random_tensor({3, 8}, rng, -1, 1, false);
  const Tensor q2 = testing::random_tensor({3, 8}, rng, -1, 1, false);
  std::vector<double> qs(24);
  for (std::size_t i = 0; i < 24; ++i) qs[i] = q1[i] + q2[i];
  const Tensor& a = rig.fusion.predict(bind, g.constant(q1)).value();
  const Tensor& b = rig.fusion.predict(bind, g.constant(q2)).value();
  const Tensor& s = rig.fusion.predict(bind, g.constant(Tensor({3, 8}, qs))).value();
  for (std::size_t r = 0; r < 3; ++r) CHECK(std::abs(s[r] - (a[r] + b[r] - 2.5)) <= 1e-12);
}

TEST_CASE("head gradient matches finite differences") {
  Rig rig(true, true, true);
  Rng rng(7);
  const Tensor q = testing::random_tensor({4, 8}, rng, -1, 1, false);
  auto loss = [&](ad::Graph& g) {
    nn::Binder bind(g);
    return prediction_loss(g, rig.fusion.predict(bind, g.constant(q)), {1, 2, 3, 4});
  };
  const std::vector<Tensor*> params = {rig.fusion.head().w, rig.fusion.head().b};
  const auto res = testing::check_gradients(loss, params, testing::all_entries(params));
  INFO(res.worst);
  CHECK(res.max_rel_error <= 1e-4);
}

TEST_CASE("prediction loss") {
  ad::Graph g(false);
  CHECK(prediction_loss(g, g.constant(Tensor::matrix(2, 1, {3, 4})), {3, 4}).value().item() == 0.0);
  const double l = prediction_loss(g, g.constant(Tensor::matrix(2, 1, {0, 0})), {3, 4}).value().item();
  CHECK(std::abs(l - 3.535534) <= 1e-6);
  CHECK(l == prediction_loss(g, g.constant(Tensor::matrix(2, 1, {0, 0})), {4, 3}).value().item());
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(9);
    std::vector<double> p(n), t(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = rng.uniform(-3, 3), t[i] = rng.uniform(-3, 3);
    const double a = prediction_loss(g, g.constant(Tensor({n, 1}, p)), t).value().item();
    std::reverse(p.begin(), p.end());
    std::reverse(t.begin(), t.end());
    const double b = prediction_loss(g, g.constant(Tensor({n, 1}, p)), t).value().item();
    CHECK(a >= 0.0);
    CHECK(std::abs(a - b) <= 1e-12);
  }
  CHECK_THROWS_AS(prediction_loss(g, g.constant(Tensor::zeros({1, 1})), {}), DataError);
}

TEST_CASE("total loss") {
  ad::Graph g(false);
  const ad::Var lr = g.constant(Tensor::scalar(2.0));
  const ad::Var li = g.constant(Tensor::scalar(4.0));
  CHECK(total_loss(lr, li, 1.0, 0.5).value().item() == 4.0);
  CHECK(total_loss(lr, li, 1.0, 0.0).value().item() == 2.0);
  CHECK(total_loss(lr, std::nullopt, 1.0, 0.5).value().item() == 2.0);
  CHECK(total_loss(g.constant(Tensor::scalar(0.0)), g.constant(Tensor::scalar(0.0)), 1.0, 0.5).value().item() == 0.0);
}
