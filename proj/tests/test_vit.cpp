#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "vitmat/grad_check.hpp"
#include "vitmat/vit.hpp"

using namespace vitmat;
using Td = Tensor<double>;

namespace {

ViTParams<double> tiny_params(std::size_t classes, std::uint64_t seed, ViTConfig* out_cfg = nullptr) {
  const auto cfg = ViTConfig::tiny(classes);
  if (out_cfg) *out_cfg = cfg;
  Rng rng(seed);
  return init_params<double>(cfg, rng);
}

void zero_block(ViTParams<double>& p, std::size_t block) {
  const std::string prefix = block_prefix(block);
  for (auto& [name, t] : p.arrays)
    if (name.starts_with(prefix)) t.fill(0.0);
}

// Sets every array to N(0, sd) so attention logits and LN inputs are far
// from the near-degenerate init regime.
void randomize(ViTParams<double>& p, Rng& rng, double sd) {
  for (auto& [name, t] : p.arrays)
    for (auto& v : t.data()) v = rng.normal(name.ends_with("gamma") ? 1.0 : 0.0, sd);
}

}  // namespace

TEST(Patchify, DefaultGeometry) {
  const auto p = patchify(Td({224, 224, 3}, 0.5), 16);
  EXPECT_EQ(p.shape(), (Shape{196, 768}));
  const auto q = patchify(Td({32, 32, 3}, 0.5), 8);
  EXPECT_EQ(q.shape(), (Shape{16, 192}));
}

TEST(Patchify, ConstantImageGivesConstantRows) {
  const auto p = patchify(Td({32, 32, 3}, -0.25), 8);
  for (double v : p.data()) EXPECT_EQ(v, -0.25);
}

TEST(Patchify, ElementOrder) {
  Td img({4, 4, 3});
  for (std::size_t i = 0; i < img.numel(); ++i) img[i] = static_cast<double>(i);
  const auto p = patchify(img, 2);
  // patch 1 = rows 0-1, cols 2-3; element (dy=1, dx=0, c=2) -> pixel (1, 2) channel 2
  EXPECT_EQ(p(1, (1 * 2 + 0) * 3 + 2), img[(1 * 4 + 2) * 3 + 2]);
  // patch 2 = rows 2-3, cols 0-1; first element is pixel (2, 0)
  EXPECT_EQ(p(2, 0), img[(2 * 4 + 0) * 3]);
}

TEST(Patchify, NonDivisibleIsConfigError) {
  EXPECT_THROW(patchify(Td({30, 30, 3}), 8), ConfigError);
}

TEST(Config, Validation) {
  auto c = ViTConfig::tiny(3);
  EXPECT_NO_THROW(c.validate());
  c.heads = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ViTConfig::tiny(3);
  c.image_size = 30;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(ViTConfig::base16(11).num_patches(), 196u);
  EXPECT_EQ(ViTConfig::base16(11).hidden_dim(), 3072u);
}

TEST(Embed, ZeroPatchesAndPositionsGiveBias) {
  ViTConfig cfg;
  auto p = tiny_params(3, 1, &cfg);
  p.at("pos_embed").fill(0.0);
  const auto tokens = embed(Td({cfg.num_patches(), cfg.patch_dim()}), p);
  const auto& bias = p.at("patch_embed.bias");
  for (std::size_t r = 1; r < tokens.rows(); ++r)
    for (std::size_t c = 0; c < cfg.embed_dim; ++c) ASSERT_EQ(tokens(r, c), bias[c]);
}

TEST(Embed, ZeroProjectionGivesPositions) {
  ViTConfig cfg;
  auto p = tiny_params(3, 2, &cfg);
  p.at("patch_embed.weight").fill(0.0);
  p.at("patch_embed.bias").fill(0.0);
  Rng rng(3);
  const auto tokens = embed(rng_normal<double>(rng, {cfg.num_patches(), cfg.patch_dim()}, 0, 1), p);
  const auto& pos = p.at("pos_embed");
  const auto& cls = p.at("cls_token");
  for (std::size_t c = 0; c < cfg.embed_dim; ++c) EXPECT_EQ(tokens(0, c), cls[c] + pos(0, c));
  for (std::size_t r = 1; r < tokens.rows(); ++r)
    for (std::size_t c = 0; c < cfg.embed_dim; ++c) ASSERT_EQ(tokens(r, c), pos(r, c));
}

TEST(Embed, DefaultShape) {
  // Only the embedding arrays of the base config; the full model is ~86M values.
  const auto cfg = ViTConfig::base16(11);
  ViTParams<float> p;
  p.arrays.emplace("patch_embed.weight", Tensor<float>({cfg.patch_dim(), cfg.embed_dim}));
  p.arrays.emplace("patch_embed.bias", Tensor<float>({cfg.embed_dim}));
  p.arrays.emplace("cls_token", Tensor<float>({1, cfg.embed_dim}));
  p.arrays.emplace("pos_embed", Tensor<float>({cfg.num_tokens(), cfg.embed_dim}));
  const auto tokens = embed(patchify(Tensor<float>({224, 224, 3}), 16), p);
  EXPECT_EQ(tokens.shape(), (Shape{197, 768}));
}

TEST(Mhsa, ZeroQueryKeyGivesUniformAttention) {
  auto cfg = ViTConfig::tiny(3);
  cfg.heads = 1;
  Rng rng(4);
  auto p = init_params<double>(cfg, rng);
  p.at("block.0.attn.wq").fill(0.0);
  p.at("block.0.attn.wk").fill(0.0);
  const auto x = rng_normal<double>(rng, {5, cfg.embed_dim}, 0, 1);
  const auto out = mhsa(x, p, 0, 1);
  const auto v = ops::linear(x, p.at("block.0.attn.wv"), p.at("block.0.attn.bv"));
  Td mean_v({1, cfg.embed_dim});
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < cfg.embed_dim; ++c) mean_v(0, c) += v(r, c) / 5.0;
  const auto expected = ops::linear(mean_v, p.at("block.0.attn.wo"), p.at("block.0.attn.bo"));
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < cfg.embed_dim; ++c) ASSERT_NEAR(out(r, c), expected(0, c), 1e-12);
}

TEST(Mhsa, AttentionRowsSumToOne) {
  ViTConfig cfg;
  auto p = tiny_params(3, 5, &cfg);
  Rng rng(6);
  randomize(p, rng, 0.3);
  for (int trial = 0; trial < 10; ++trial) {
    const auto x = rng_normal<double>(rng, {cfg.num_tokens(), cfg.embed_dim}, 0, 2);
    for (const auto& probs : attention_probs(x, p, 1, cfg.heads))
      for (std::size_t r = 0; r < probs.rows(); ++r) {
        double s = 0;
        for (std::size_t c = 0; c < probs.cols(); ++c) s += probs(r, c);
        ASSERT_NEAR(s, 1.0, 1e-6);
      }
  }
}

// Independent straight-line recomputation with plain loops, head by head.
TEST(Mhsa, MatchesPerHeadReference) {
  ViTConfig cfg;
  auto p = tiny_params(3, 7, &cfg);
  Rng rng(8);
  randomize(p, rng, 0.2);
  const std::size_t s = 5, d = 64, heads = 4, dk = 16;
  const auto x = rng_normal<double>(rng, {s, d}, 0, 1);
  auto proj = [&](const std::string& w, const std::string& b) {
    std::vector<std::vector<double>> out(s, std::vector<double>(d));
    const auto& W = p.at("block.0.attn." + w);
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        double acc = b.empty() ? 0.0 : p.at("block.0.attn." + b)[j];
        for (std::size_t k = 0; k < d; ++k) acc += x(i, k) * W(k, j);
        out[i][j] = acc;
      }
    return out;
  };
  const auto q = proj("wq", "bq"), k = proj("wk", ""), v = proj("wv", "bv");
  std::vector<std::vector<double>> concat(s, std::vector<double>(d));
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < s; ++i) {
      std::vector<double> logits(s);
      for (std::size_t j = 0; j < s; ++j) {
        double dot = 0;
        for (std::size_t t = 0; t < dk; ++t) dot += q[i][h * dk + t] * k[j][h * dk + t];
        logits[j] = dot / std::sqrt(double(dk));
      }
      const double mx = *std::max_element(logits.begin(), logits.end());
      double z = 0;
      for (auto& l : logits) z += (l = std::exp(l - mx));
      for (std::size_t t = 0; t < dk; ++t) {
        double acc = 0;
        for (std::size_t j = 0; j < s; ++j) acc += logits[j] / z * v[j][h * dk + t];
        concat[i][h * dk + t] = acc;
      }
    }
  const auto& wo = p.at("block.0.attn.wo");
  const auto& bo = p.at("block.0.attn.bo");
  const auto out = mhsa(x, p, 0, heads);
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double acc = bo[j];
      for (std::size_t t = 0; t < d; ++t) acc += concat[i][t] * wo(t, j);
      ASSERT_LT(std::abs(out(i, j) - acc), 1e-5);
    }
}

TEST(Mhsa, HeadsMustDivideDim) {
  ViTConfig cfg;
  auto p = tiny_params(3, 9, &cfg);
  EXPECT_THROW(mhsa(Td({3, 64}), p, 0, 5), ConfigError);
}

TEST(EncoderBlock, ZeroWeightsAreIdentity) {
  ViTConfig cfg;
  auto p = tiny_params(3, 10, &cfg);
  zero_block(p, 0);
  Rng rng(11);
  const auto x = rng_normal<double>(rng, {cfg.num_tokens(), cfg.embed_dim}, 0, 1);
  const auto y = encoder_block(x, p, 0, cfg);
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_EQ(y, x);
}

TEST(EncoderBlock, GradientWrtInput) {
  ViTConfig cfg;
  auto p = tiny_params(3, 12, &cfg);
  Rng rng(13);
  randomize(p, rng, 0.15);
  const auto x = rng_normal<double>(rng, {cfg.num_tokens(), cfg.embed_dim}, 0, 1);
  auto f = [&](const Td& in) {
    BlockCache<double> cache;
    const auto out = encoder_block_forward(in, p, 0, cfg, cache);
    auto grads = p.zeros_like();
    const auto dx = encoder_block_backward(cache, p, 0, Td(out.shape(), 1.0), grads);
    return ValueAndGrad{ops::sum(out), dx};
  };
  EXPECT_LT(grad_check(f, x, GradCheckOptions{1e-5, 200, 1}), 1e-4);
}

TEST(EncoderBlock, GradientWrtBlockParameters) {
  ViTConfig cfg;
  auto p = tiny_params(3, 14, &cfg);
  Rng rng(15);
  randomize(p, rng, 0.15);
  const auto x = rng_normal<double>(rng, {cfg.num_tokens(), cfg.embed_dim}, 0, 1);
  const auto w = rng_normal<double>(rng, x.shape(), 0, 1);
  for (const auto& [name, arr] : p.arrays) {
    if (!name.starts_with("block.0.")) continue;
    auto f = [&, name = name](const Td& value) {
      auto q = p;
      q.at(name) = value;
      BlockCache<double> cache;
      const auto out = encoder_block_forward(x, q, 0, cfg, cache);
      auto grads = q.zeros_like();
      encoder_block_backward(cache, q, 0, w, grads);
      double obj = 0;
      for (std::size_t i = 0; i < out.numel(); ++i) obj += out[i] * w[i];
      return ValueAndGrad{obj, grads.at(name)};
    };
    EXPECT_LT(grad_check(f, arr, GradCheckOptions{1e-5, 40, 2}), 1e-4) << name;
  }
}

TEST(Forward, LogitsLengthMatchesClasses) {
  ViTConfig cfg;
  auto p = tiny_params(11, 16, &cfg);
  Rng rng(17);
  const auto img = rng_normal<double>(rng, {32, 32, 3}, 0, 1);
  EXPECT_EQ(forward(img, p, cfg).shape(), (Shape{11}));
}

TEST(Forward, HeadColumnPermutationPermutesLogits) {
  ViTConfig cfg;
  auto p = tiny_params(5, 18, &cfg);
  Rng rng(19);
  randomize(p, rng, 0.1);
  const auto img = rng_normal<double>(rng, {32, 32, 3}, 0, 1);
  const auto logits = forward(img, p, cfg);
  const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  auto q = p;
  for (std::size_t r = 0; r < cfg.embed_dim; ++r)
    for (std::size_t c = 0; c < 5; ++c) q.at("head.weight")(r, c) = p.at("head.weight")(r, perm[c]);
  for (std::size_t c = 0; c < 5; ++c) q.at("head.bias")[c] = p.at("head.bias")[perm[c]];
  const auto permuted = forward(img, q, cfg);
  for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(permuted[c], logits[perm[c]]);
}

TEST(Forward, InferModeIsDeterministic) {
  ViTConfig cfg;
  auto p = tiny_params(3, 20, &cfg);
  Rng rng(21);
  const auto img = rng_uniform<double>(rng, {32, 32, 3});
  EXPECT_EQ(forward(img, p, cfg), forward(img, p, cfg));
  auto pf = p.cast<float>();
  const auto imgf = img.cast<float>();
  EXPECT_EQ(forward(imgf, pf, cfg), forward(imgf, pf, cfg));
}

TEST(Forward, DropoutOnlyInTrainMode) {
  auto cfg = ViTConfig::tiny(3);
  cfg.dropout_rate = 0.3;
  Rng init(22);
  auto p = init_params<double>(cfg, init);
  Rng rng(23);
  randomize(p, rng, 0.1);
  const auto img = rng_normal<double>(rng, {32, 32, 3}, 0, 1);
  Rng d1(5), d2(5);
  const auto infer_a = forward(img, p, cfg, Mode::infer, &d1);
  const auto infer_b = forward(img, p, cfg);
  EXPECT_EQ(infer_a, infer_b);
  const auto train = forward(img, p, cfg, Mode::train, &d2);
  EXPECT_NE(train, infer_b);
}

TEST(Forward, ParamMismatchNamesArray) {
  ViTConfig cfg;
  auto p = tiny_params(3, 24, &cfg);
  p.arrays.erase("block.1.mlp.b1");
  try {
    forward(Td({32, 32, 3}), p, cfg);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("block.1.mlp.b1"), std::string::npos);
  }
  auto q = tiny_params(3, 24);
  q.at("head.bias") = Td({4});
  EXPECT_THROW(forward(Td({32, 32, 3}), q, cfg), ConfigError);
}

TEST(Forward, ShapeChainForTinyPreset) {
  ViTConfig cfg;
  auto p = tiny_params(3, 25, &cfg);
  Rng rng(26);
  const auto cache = forward_cached(rng_normal<double>(rng, {32, 32, 3}, 0, 1), p, cfg);
  EXPECT_EQ(cache.patches.shape(), (Shape{16, 192}));
  ASSERT_EQ(cache.blocks.size(), 2u);
  for (const auto& b : cache.blocks) EXPECT_EQ(b.input.shape(), (Shape{17, 64}));
  EXPECT_EQ(cache.logits.shape(), (Shape{3}));
}

TEST(Forward, ZeroBlocksPassTokensThrough) {
  ViTConfig cfg;
  auto p = tiny_params(3, 27, &cfg);
  zero_block(p, 0);
  zero_block(p, 1);
  Rng rng(28);
  const auto img = rng_normal<double>(rng, {32, 32, 3}, 0, 1);
  const auto cache = forward_cached(img, p, cfg);
  const auto tokens = embed(patchify(img, cfg.patch_size), p);
  EXPECT_EQ(cache.blocks[1].input, tokens);
}

TEST(Init, DeterministicAndWellFormed) {
  ViTConfig cfg;
  const auto a = tiny_params(3, 30, &cfg);
  const auto b = tiny_params(3, 30);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, tiny_params(3, 31));
  EXPECT_NO_THROW(validate_params(a, cfg));
  for (const auto& [name, t] : a.arrays) {
    if (name.ends_with("gamma")) {
      for (double v : t.data()) ASSERT_EQ(v, 1.0);
    }
    if (name.ends_with("beta") || name.ends_with(".bias") || name.ends_with(".bq") || name.ends_with(".b1")) {
      for (double v : t.data()) ASSERT_EQ(v, 0.0);
    }
    EXPECT_FALSE(name.ends_with("attn.bk")) << "key bias is not a parameter";
  }
}

TEST(Init, PatchProjectionStdForBaseWidth) {
  auto cfg = ViTConfig::base16(11);
  cfg.depth = 1;
  Rng rng(32);
  const auto p = init_params<float>(cfg, rng);
  const auto& w = p.at("patch_embed.weight");
  ASSERT_EQ(w.shape(), (Shape{768, 768}));
  double mean = 0;
  for (float v : w.data()) mean += v;
  mean /= w.numel();
  double var = 0;
  for (float v : w.data()) var += (v - mean) * (v - mean);
  EXPECT_NEAR(std::sqrt(var / w.numel()), 0.02, 0.002);
}

// Logit-weighted objective through the full model, every named array sampled.
TEST(Backward, FullModelGradientsMatchFiniteDifferences) {
  auto cfg = ViTConfig::tiny(3);
  cfg.depth = 1;
  Rng rng(33);
  auto p = init_params<double>(cfg, rng);
  randomize(p, rng, 0.1);
  const auto img = rng_normal<double>(rng, {32, 32, 3}, 0, 1);
  const auto w = Td::vector({0.7, -1.3, 0.4});
  for (const auto& [name, arr] : p.arrays) {
    auto f = [&, name = name](const Td& value) {
      auto q = p;
      q.at(name) = value;
      const auto cache = forward_cached(img, q, cfg);
      double obj = 0;
      for (std::size_t i = 0; i < 3; ++i) obj += w[i] * cache.logits[i];
      return ValueAndGrad{obj, backward(cache, q, cfg, w).at(name)};
    };
    EXPECT_LT(grad_check(f, arr, GradCheckOptions{1e-5, 24, 3}), 1e-4) << name;
  }
}
