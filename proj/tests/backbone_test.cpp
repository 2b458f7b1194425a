#include <cmath>

#include "doctest.h"
#include "scalar/backbone/backbone.hpp"

using namespace scalar;

namespace {

DecoderConfig tiny(std::vector<int> sides = {1, 2, 3, 4}) {
  DecoderConfig c;
  c.layers = 2;
  c.d_model = 16;
  c.heads = 2;
  c.vocab = 12;
  c.num_classes = 3;
  c.code_dim = 4;
  c.schedule = ScaleSchedule::square(sides);
  return c;
}

template <class T>
std::vector<ClassMix> labels(std::vector<int> ls) {
  std::vector<ClassMix> out;
  for (int l : ls) out.push_back(ClassMix::label(l));
  return out;
}

}  // namespace

TEST_CASE("block-causal mask for schedule (1,2)") {
  const auto m = block_causal_mask(ScaleSchedule::square({1, 2}));
  const std::vector<std::uint8_t> want = {1, 0, 0, 0, 0,  //
                                          1, 1, 1, 1, 1,  //
                                          1, 1, 1, 1, 1,  //
                                          1, 1, 1, 1, 1,  //
                                          1, 1, 1, 1, 1};
  CHECK(m == want);
}

TEST_CASE("block-causal mask for schedule (1,2,3,4)") {
  // Row i may see column j iff the scale holding j starts no later than i's scale ends.
  const int ends[] = {1, 5, 14, 30};
  auto end_of = [&](int p) {
    for (int e : ends)
      if (p < e) return e;
    return -1;
  };
  const auto m = block_causal_mask(ScaleSchedule::square({1, 2, 3, 4}));
  REQUIRE(m.size() == 900);
  for (int i = 0; i < 30; ++i)
    for (int j = 0; j < 30; ++j) CHECK(m[static_cast<std::size_t>(i * 30 + j)] == (j < end_of(i) ? 1 : 0));
}

TEST_CASE("sequence length and class-only dependence of the inputs") {
  Rng rng(1);
  Decoder<double> dec(tiny({1, 2}), rng);
  CHECK(dec.config().schedule.total_tokens() == 5);
  auto in = randn<double>({2, 4, 4}, rng);
  auto a = dec.build_inputs(labels<double>({0, 1}), in).value();
  auto b = dec.build_inputs(labels<double>({2, 1}), in).value();
  for (int row = 0; row < 10; ++row) {
    bool same = true;
    for (int j = 0; j < 16; ++j) same = same && a[static_cast<std::size_t>(row * 16 + j)] == b[static_cast<std::size_t>(row * 16 + j)];
    CHECK(same == (row != 0));
  }
  CHECK_THROWS_AS(dec.build_inputs(labels<double>({4}), randn<double>({1, 4, 4}, rng)), std::out_of_range);
}

TEST_CASE("zero latent inputs embed to bias plus position terms") {
  Rng rng(2);
  Decoder<double> dec(tiny(), rng);
  auto x = dec.build_inputs(labels<double>({1}), Tensor<double>({1, 29, 4})).value();
  std::map<std::string, Tensor<double>> p;
  for (const auto& np : dec.params()) p[np.name] = np.var.value();
  const auto scale = dec.config().schedule.scale_of_position();
  for (int pos = 1; pos < 30; ++pos)
    for (int j = 0; j < 16; ++j) {
      const double want = p["word.b"][j] + (p["pos_emb"][pos * 16 + j] + p["lvl_emb"][scale[pos] * 16 + j]);
      CHECK(x[static_cast<std::size_t>(pos * 16 + j)] == want);
    }
}

TEST_CASE("permuting tokens within a scale leaves earlier scales' logits unchanged") {
  Rng rng(3);
  Decoder<double> dec(tiny(), rng);
  auto in = randn<double>({1, 29, 4}, rng);
  auto base = dec.forward_train(dec.build_inputs(labels<double>({0}), in), 1).value();
  // Scale 3 (0-based 2) occupies sequence positions 5..13, input rows 4..12.
  auto perm = in;
  for (int r = 0; r < 9; ++r)
    for (int c = 0; c < 4; ++c) perm[static_cast<std::size_t>((4 + r) * 4 + c)] = in[static_cast<std::size_t>((4 + (r * 4) % 9) * 4 + c)];
  auto out = dec.forward_train(dec.build_inputs(labels<double>({0}), perm), 1).value();
  for (int pos = 0; pos < 30; ++pos) {
    double d = 0;
    for (int v = 0; v < 12; ++v) d = std::max(d, std::abs(out[static_cast<std::size_t>(pos * 12 + v)] - base[static_cast<std::size_t>(pos * 12 + v)]));
    if (pos < 5) {
      CHECK(d == 0.0);
    } else {
      CHECK(d > 0.0);
    }
  }
}

TEST_CASE("zero head gives cross-entropy ln V") {
  Rng rng(4);
  Decoder<double> dec(tiny(), rng);
  for (auto& p : dec.params())
    if (p.name == "head.w") p.var.mutable_value() = Tensor<double>(p.var.shape());
  auto logits = dec.forward_train(dec.build_inputs(labels<double>({0, 2}), randn<double>({2, 29, 4}, rng)), 2);
  std::vector<std::int32_t> tgt(60);
  for (std::size_t i = 0; i < tgt.size(); ++i) tgt[i] = static_cast<std::int32_t>(i % 12);
  CHECK(ops::cross_entropy(logits, std::span<const std::int32_t>(tgt)).value().item() ==
        doctest::Approx(std::log(12.0)).epsilon(1e-12));
}

TEST_CASE("zero injections are the identity and shapes are checked") {
  Rng rng(5);
  Decoder<double> dec(tiny(), rng);
  auto seq = dec.build_inputs(labels<double>({1, 2}), randn<double>({2, 29, 4}, rng));
  auto plain = dec.forward_train(seq, 2).value();
  Injections<double> inj{{1, Var<double>::constant(Tensor<double>({60, 16}))},
                         {2, Var<double>::constant(Tensor<double>({60, 16}))}};
  CHECK(dec.forward_train(seq, 2, inj).value() == plain);
  Injections<double> bad{{1, Var<double>::constant(Tensor<double>({59, 16}))}};
  CHECK_THROWS_AS(dec.forward_train(seq, 2, bad), ShapeError);
  Injections<double> nolayer{{3, Var<double>::constant(Tensor<double>({60, 16}))}};
  CHECK_THROWS(dec.forward_train(seq, 2, nolayer));
}

TEST_CASE("cached scale-wise decoding matches the full forward") {
  Rng rng(6);
  DecoderConfig c = tiny();
  c.layers = 3;
  Decoder<float> dec(c, rng);
  const auto& s = c.schedule;
  for (int trial = 0; trial < 5; ++trial) {
    auto in = randn<float>({2, 29, 4}, rng);
    auto cls = labels<float>({trial % 3, (trial + 1) % 3});
    Injections<float> inj{{2, Var<float>::constant(randn<float>({60, 16}, rng, 0.5))}};
    auto full = dec.forward_train(dec.build_inputs(cls, in), 2, inj).value();
    auto cache = dec.new_cache(2, 77);
    for (int k = 0; k < s.num_scales(); ++k) {
      const int n = s.tokens(k);
      Tensor<float> part({2, n, 4});
      if (k > 0)
        for (int b = 0; b < 2; ++b)
          std::copy_n(in.data() + (b * 29 + s.offset(k) - 1) * 4, n * 4, part.data() + b * n * 4);
      Tensor<float> injk({2 * n, 16});
      for (int b = 0; b < 2; ++b)
        std::copy_n(inj.at(2).value().data() + (b * 30 + s.offset(k)) * 16, n * 16, injk.data() + b * n * 16);
      auto logits = dec.forward_step(dec.embed_scale(k, cls, part), k, cache, 77,
                                     {{2, Var<float>::constant(injk)}}).value();
      float d = 0;
      for (int b = 0; b < 2; ++b)
        for (int i = 0; i < n * 12; ++i)
          d = std::max(d, std::abs(logits[static_cast<std::size_t>(b * n * 12 + i)] -
                                   full[static_cast<std::size_t>((b * 30 + s.offset(k)) * 12 + i)]));
      CHECK(d < 1e-4f);
    }
    CHECK(cache.length == 30);
  }
}

TEST_CASE("cache guards") {
  Rng rng(7);
  Decoder<float> dec(tiny(), rng);
  auto cls = labels<float>({0});
  auto cache = dec.new_cache(1, 5);
  CHECK_NOTHROW(dec.forward_step(dec.embed_scale(0, cls, {}), 0, cache, 5));
  CHECK_THROWS_AS(dec.forward_step(dec.embed_scale(1, cls, Tensor<float>({1, 4, 4})), 1, cache, 6),
                  std::invalid_argument);
  CHECK_THROWS_AS(dec.forward_step(dec.embed_scale(2, cls, Tensor<float>({1, 9, 4})), 2, cache, 5),
                  std::invalid_argument);
}

TEST_CASE("attention parameter subset") {
  Rng rng(8);
  Decoder<float> dec(tiny(), rng);
  int attn = 0;
  for (const auto& p : dec.params()) attn += Decoder<float>::is_attention_param(p.name);
  CHECK(attn == 2 * 8);
}
