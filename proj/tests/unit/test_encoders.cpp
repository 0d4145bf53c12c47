#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "lite/encoders.hpp"
#include "lite/errors.hpp"
#include "support.hpp"

using namespace lite;

namespace {

EncoderConfig small_config() {
  EncoderConfig c;
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.ffn_hidden = 16;
  c.max_seq_len = 32;
  c.patch_size = 4;
  return c;
}

std::vector<double> row_of(const Tensor& t, std::size_t r) {
  return {t.values().begin() + static_cast<long>(r * t.cols()), t.values().begin() + static_cast<long>((r + 1) * t.cols())};
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::vector<std::uint8_t> blank(std::size_t w, std::size_t h) { return std::vector<std::uint8_t>(w * h, 0); }

}  // namespace

TEST_CASE("config validation") {
  EncoderConfig c = small_config();
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.n_layers = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("mask states are gathered one row per mask") {
  Rng rng(1);
  nn::ParameterStore store;
  const TextEncoder enc = TextEncoder::create(store, "text", small_config(), 12, rng);
  TextBatch batch;
  const std::vector<std::int32_t> ids = {4, 5, kMaskId, 6, kMaskId, 7};
  const std::size_t base = batch.append(ids);
  ad::Graph g(false);
  nn::Binder bind(g);
  const auto e = enc.encode(bind, batch);
  CHECK(e.token_states.shape() == Shape{6, 8});
  CHECK(e.pooled.shape() == Shape{1, 8});
  const std::vector<std::size_t> mask_rows = {base + 2, base + 4};
  const ad::Var m = ad::gather_rows(e.token_states, mask_rows);
  CHECK(m.shape() == Shape{2, 8});
}

TEST_CASE("sequences longer than max_seq_len are rejected") {
  Rng rng(1);
  nn::ParameterStore store;
  const TextEncoder enc = TextEncoder::create(store, "text", small_config(), 12, rng);
  TextBatch batch;
  batch.append(std::vector<std::int32_t>(33, 4));
  ad::Graph g(false);
  nn::Binder bind(g);
  CHECK_THROWS_AS(enc.encode(bind, batch), ShapeError);
}

TEST_CASE("swapping two tokens changes the pooled output") {
  Rng rng(2);
  nn::ParameterStore store;
  const TextEncoder enc = TextEncoder::create(store, "text", small_config(), 12, rng);
  TextBatch batch;
  batch.append(std::vector<std::int32_t>{4, 5, 6, 7});
  batch.append(std::vector<std::int32_t>{5, 4, 6, 7});
  ad::Graph g(false);
  nn::Binder bind(g);
  const Tensor& pooled = enc.encode(bind, batch).pooled.value();
  CHECK(max_abs_diff(row_of(pooled, 0), row_of(pooled, 1)) > 1e-6);
}

TEST_CASE("padding does not change the pooled output") {
  Rng rng(3);
  nn::ParameterStore store;
  const TextEncoder enc = TextEncoder::create(store, "text", small_config(), 12, rng);
  TextBatch plain, padded;
  plain.append(std::vector<std::int32_t>{4, 5, 6, 7, 8});
  padded.append(std::vector<std::int32_t>{4, 5, 6, 7, 8, kPadId, kPadId});
  ad::Graph g(false);
  nn::Binder bind(g);
  const Tensor& a = enc.encode(bind, plain).pooled.value();
  const Tensor& b = enc.encode(bind, padded).pooled.value();
  CHECK(max_abs_diff(a.values(), b.values()) <= 1e-12);
}

TEST_CASE("sequences in one batch do not interact") {
  Rng rng(4);
  nn::ParameterStore store;
  const TextEncoder enc = TextEncoder::create(store, "text", small_config(), 12, rng);
  TextBatch one, two;
  one.append(std::vector<std::int32_t>{4, 5, 6});
  two.append(std::vector<std::int32_t>{4, 5, 6});
  two.append(std::vector<std::int32_t>{9, 10, 11, 8});
  ad::Graph g(false);
  nn::Binder bind(g);
  const Tensor& a = enc.encode(bind, one).pooled.value();
  const Tensor& b = enc.encode(bind, two).pooled.value();
  CHECK(max_abs_diff(a.values(), row_of(b, 0)) == 0.0);
}

TEST_CASE("embedding table gradient matches finite differences") {
  Rng rng(5);
  nn::ParameterStore store;
  const TextEncoder enc = TextEncoder::create(store, "text", small_config(), 10, rng);
  TextBatch batch;
  batch.append(std::vector<std::int32_t>{4, 5, kMaskId, 6});
  batch.append(std::vector<std::int32_t>{7, 4, 8, kPadId});
  auto loss = [&](ad::Graph& g) {
    nn::Binder bind(g);
    return testing::probe_sum(g, enc.encode(bind, batch).pooled);
  };
  Tensor& table = enc.token_table();
  const auto res = testing::check_gradients(loss, {&table}, testing::all_entries({&table}));
  INFO(res.worst);
  CHECK(res.max_rel_error <= 1e-4);
}

TEST_CASE("full text encoder gradient matches finite differences") {
  Rng rng(6);
  nn::ParameterStore store;
  const TextEncoder enc = TextEncoder::create(store, "text", small_config(), 10, rng);
  TextBatch batch;
  batch.append(std::vector<std::int32_t>{4, 5, kMaskId, 6});
  batch.append(std::vector<std::int32_t>{7, 4, 8});
  std::vector<Tensor*> params;
  std::vector<Tensor*> probed;  // key biases are cancelled by the softmax, so their gradient is exactly zero
  for (auto& [path, t] : store.all()) {
    params.push_back(&t);
    if (!path.ends_with(".attn.k.b")) probed.push_back(&t);
  }
  auto loss = [&](ad::Graph& g) {
    nn::Binder bind(g);
    return testing::probe_sum(g, enc.encode(bind, batch).token_states);
  };
  std::vector<testing::Probe> probes;
  Rng pick(7);
  for (int i = 0; i < 60; ++i) {
    Tensor* t = probed[pick.below(probed.size())];
    probes.push_back({t, pick.below(t->size())});
  }
  const auto res = testing::check_gradients(loss, params, probes);
  INFO(res.worst);
  CHECK(res.max_rel_error <= 1e-4);
}

TEST_CASE("every encoder parameter receives gradient") {
  Rng rng(8);
  nn::ParameterStore store;
  const EncoderConfig cfg = small_config();
  const TextEncoder text = TextEncoder::create(store, "text", cfg, 12, rng);
  const ImageEncoder image = ImageEncoder::create(store, "image", cfg, 16, 16, rng);
  TextBatch tb;
  std::vector<std::int32_t> seq;
  for (int i = 0; i < 32; ++i) seq.push_back(static_cast<std::int32_t>(i % 12));
  tb.append(seq);
  auto img = blank(16, 16);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = rng.bernoulli(0.3) ? 255 : 0;
  const auto ib = make_image_batch({std::span<const std::uint8_t>(img)}, 16, 16, 4);
  store.zero_grad();
  ad::Graph g;
  nn::Binder bind(g);
  const ad::Var loss = ad::add(testing::probe_sum(g, text.encode(bind, tb).token_states, 1),
                               testing::probe_sum(g, image.encode(bind, ib).patch_states, 2));
  g.backward(loss);
  for (auto& [path, t] : store.all()) {
    // A key bias adds the same score to every key of a query, which softmax
    // cancels, so its gradient is zero by construction.
    if (path.ends_with(".attn.k.b")) continue;
    bool nonzero = false;
    for (double v : t.grad()) nonzero = nonzero || v != 0.0;
    INFO(path);
    CHECK(nonzero);
  }
}

TEST_CASE("image patches") {
  const auto img = blank(192, 192);
  const auto b = make_image_batch({std::span<const std::uint8_t>(img)}, 192, 192, 8);
  CHECK(b.patches_per_image() == 576);
  CHECK(b.patches.size() == 576 * 64);
  CHECK_THROWS_AS(make_image_batch({std::span<const std::uint8_t>(img)}, 192, 192, 7), ShapeError);

  std::vector<std::uint8_t> tiny = {0, 255, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 255};
  const auto t = make_image_batch({std::span<const std::uint8_t>(tiny)}, 4, 4, 2);
  REQUIRE(t.patches_per_image() == 4);
  CHECK(t.patches[1] == 1.0);        // patch (0,0), pixel (0,1)
  CHECK(t.patches[3 * 4 + 3] == 1.0);  // patch (1,1), pixel (1,1)
}

TEST_CASE("image encoder shapes and sensitivity") {
  Rng rng(9);
  nn::ParameterStore store;
  EncoderConfig cfg = small_config();
  cfg.patch_size = 8;
  const ImageEncoder enc = ImageEncoder::create(store, "image", cfg, 192, 192, rng);
  auto zero = blank(192, 192);
  auto stroke = blank(192, 192);
  for (std::size_t x = 0; x < 192; ++x) stroke[96 * 192 + x] = 255;
  const auto batch = make_image_batch(
      {std::span<const std::uint8_t>(zero), std::span<const std::uint8_t>(stroke), std::span<const std::uint8_t>(stroke)},
      192, 192, 8);
  ad::Graph g(false);
  nn::Binder bind(g);
  const auto e = enc.encode(bind, batch);
  CHECK(e.patch_states.shape() == Shape{3 * 576, 8});
  CHECK(e.pooled.shape() == Shape{3, 8});
  const Tensor& p = e.pooled.value();
  CHECK(max_abs_diff(row_of(p, 0), row_of(p, 1)) > 1e-6);
  CHECK(row_of(p, 1) == row_of(p, 2));
  nn::ParameterStore other;
  Rng rng2(9);
  CHECK_THROWS_AS(ImageEncoder::create(other, "image", cfg, 190, 192, rng2), ConfigError);
}

TEST_CASE("image encoder gradient matches finite differences") {
  Rng rng(10);
  nn::ParameterStore store;
  const ImageEncoder enc = ImageEncoder::create(store, "image", small_config(), 8, 8, rng);
  std::vector<std::uint8_t> img(64);
  for (auto& v : img) v = rng.bernoulli(0.4) ? 255 : 0;
  const auto batch = make_image_batch({std::span<const std::uint8_t>(img)}, 8, 8, 4);
  std::vector<Tensor*> params;
  std::vector<Tensor*> probed;  // key biases are cancelled by the softmax, so their gradient is exactly zero
  for (auto& [path, t] : store.all()) {
    params.push_back(&t);
    if (!path.ends_with(".attn.k.b")) probed.push_back(&t);
  }
  auto loss = [&](ad::Graph& g) {
    nn::Binder bind(g);
    return testing::probe_sum(g, enc.encode(bind, batch).pooled);
  };
  std::vector<testing::Probe> probes;
  Rng pick(11);
  for (int i = 0; i < 60; ++i) {
    Tensor* t = probed[pick.below(probed.size())];
    probes.push_back({t, pick.below(t->size())});
  }
  const auto res = testing::check_gradients(loss, params, probes);
  INFO(res.worst);
  CHECK(res.max_rel_error <= 1e-4);
}

TEST_CASE("shape contracts hold over random configs") {
  Rng rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    EncoderConfig cfg;
    cfg.n_heads = 1 + rng.below(3);
    cfg.d_model = cfg.n_heads * (1 + rng.below(4));
    cfg.n_layers = 1 + rng.below(2);
    cfg.ffn_hidden = 1 + rng.below(12);
    cfg.max_seq_len = 16;
    cfg.patch_size = 2 + 2 * rng.below(2);
    nn::ParameterStore store;
    const TextEncoder text = TextEncoder::create(store, "t", cfg, 9, rng);
    const std::size_t side = cfg.patch_size * (1 + rng.below(3));
    const ImageEncoder image = ImageEncoder::create(store, "i", cfg, side, side, rng);
    TextBatch tb;
    const std::size_t n_seq = 1 + rng.below(4);
    std::size_t rows = 0;
    for (std::size_t s = 0; s < n_seq; ++s) {
      std::vector<std::int32_t> ids(1 + rng.below(16));
      for (auto& id : ids) id = static_cast<std::int32_t>(4 + rng.below(5));
      rows += ids.size();
      tb.append(ids);
    }
    ad::Graph g(false);
    nn::Binder bind(g);
    const auto te = text.encode(bind, tb);
    CHECK(te.token_states.shape() == Shape{rows, cfg.d_model});
    CHECK(te.pooled.shape() == Shape{n_seq, cfg.d_model});
    const auto img = blank(side, side);
    const auto ib = make_image_batch({std::span<const std::uint8_t>(img)}, side, side, cfg.patch_size);
    const auto ie = image.encode(bind, ib);
    const std::size_t per = (side / cfg.patch_size) * (side / cfg.patch_size);
    CHECK(ie.patch_states.shape() == Shape{per, cfg.d_model});
  }
}

TEST_CASE("granularity integration") {
  const std::size_t d = 4, anchors = 2;
  Rng rng(13);
  std::vector<double> v(anchors * kRecordsPerAnchor * d);
  for (std::size_t a = 0; a < anchors; ++a)
    for (std::size_t r = 0; r < kRecordsPerAnchor; ++r)
      for (std::size_t c = 0; c < d; ++c) v[(a * kRecordsPerAnchor + r) * d + c] = a == 0 ? static_cast<double>(c) : rng.uniform(-1, 1);
  ad::Graph g(false);
  const ad::Var pooled = g.constant(Tensor({anchors * kRecordsPerAnchor, d}, v));
  const Tensor& u = encode_granularities(pooled, anchors, true).value();
  REQUIRE(u.shape() == Shape{2, 3 * d});
  // Anchor 0 repeats one record, so the three parts are equal.
  for (std::size_t c = 0; c < d; ++c) {
    CHECK(u.at(0, c) == static_cast<double>(c));
    CHECK(u.at(0, d + c) == doctest::Approx(static_cast<double>(c)).epsilon(1e-15));
    CHECK(u.at(0, 2 * d + c) == doctest::Approx(static_cast<double>(c)).epsilon(1e-15));
  }
  // Anchor 1: weekly part is the mean of rows 1..7.
  for (std::size_t c = 0; c < d; ++c) {
    double w = 0, y = 0;
    for (std::size_t r = 1; r <= 7; ++r) w += v[(kRecordsPerAnchor + r) * d + c];
    for (std::size_t r = 8; r < 20; ++r) y += v[(kRecordsPerAnchor + r) * d + c];
    CHECK(std::abs(u.at(1, d + c) - w / 7) <= 1e-12);
    CHECK(std::abs(u.at(1, 2 * d + c) - y / 12) <= 1e-12);
  }
  CHECK(encode_granularities(pooled, anchors, false).shape() == Shape{2, d});
  CHECK_THROWS_AS(encode_granularities(pooled, 3, true), ShapeError);

  ad::Graph g64(false);
  const ad::Var p64 = g64.constant(Tensor::zeros({kRecordsPerAnchor, 64}));
  CHECK(encode_granularities(p64, 1, true).shape() == Shape{1, 192});
}
