#include <gtest/gtest.h>

#include <cmath>

#include "man/layers.hpp"
#include "man/rng.hpp"
#include "test_util.hpp"

using man::Activation;
using man::ManLayer;
using man::ManLayerConfig;
using man::MaskSpec;
using man::ParamRegistry;
using man::Rng;
using man::SublayerKind;
using man::Tensor;
using man_test::random_tensor;

namespace {

ManLayer make_layer(ManLayerConfig cfg, ParamRegistry& reg, std::uint64_t seed,
                    const std::string& prefix = "t") {
  Rng init(seed);
  return ManLayer(cfg, reg, prefix, init);
}

// direct multi-head attention with explicit loops, used as the oracle
Tensor brute_force_attention(const Tensor& q_in, const Tensor& kv_in,
                             const ManLayer& layer) {
  const auto& cfg = layer.config();
  const int t_q = q_in.rows(), t_k = kv_in.rows();
  Tensor concat({t_q, cfg.heads * cfg.value_dim});
  for (int i = 0; i < cfg.heads; ++i) {
    Tensor q = man::matmul(q_in, layer.wq(i));
    Tensor k = man::matmul(kv_in, layer.wk(i));
    Tensor v = man::matmul(kv_in, layer.wv(i));
    for (int t = 0; t < t_q; ++t) {
      std::vector<double> logits(static_cast<std::size_t>(t_k));
      double rowmax = -1e300;
      for (int s = 0; s < t_k; ++s) {
        double acc = 0.0;
        for (int j = 0; j < cfg.head_dim; ++j) acc += q.at(t, j) * k.at(s, j);
        logits[static_cast<std::size_t>(s)] = acc / std::sqrt(static_cast<double>(cfg.head_dim));
        rowmax = std::max(rowmax, logits[static_cast<std::size_t>(s)]);
      }
      double z = 0.0;
      for (int s = 0; s < t_k; ++s) {
        logits[static_cast<std::size_t>(s)] = std::exp(logits[static_cast<std::size_t>(s)] - rowmax);
        z += logits[static_cast<std::size_t>(s)];
      }
      for (int j = 0; j < cfg.value_dim; ++j) {
        double acc = 0.0;
        for (int s = 0; s < t_k; ++s) acc += logits[static_cast<std::size_t>(s)] / z * v.at(s, j);
        concat.at(t, i * cfg.value_dim + j) = acc;
      }
    }
  }
  return man::matmul(concat, layer.wh());
}

}  // namespace

TEST(ManLayer, AllOnesMaskEqualsPlainSelfAttention) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 100);
    ManLayerConfig cfg;
    cfg.model_dim = 8;
    cfg.heads = 2;
    cfg.head_dim = 4;
    cfg.value_dim = 4;
    cfg.mask = MaskSpec::all_ones();
    ParamRegistry reg;
    ManLayer layer = make_layer(cfg, reg, seed);
    Tensor h = random_tensor({5, 8}, rng);

    Tensor man_out = layer.attention(h, layer.build_masks(5, h));
    Tensor san = brute_force_attention(h, h, layer);
    for (std::size_t i = 0; i < san.numel(); ++i)
      EXPECT_NEAR(man_out.data()[i], san.data()[i], 1e-10);
  }
}

TEST(ManLayer, IdentityMaskReluSingleHeadEqualsFfn) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 500);
    const int d = 6, inner = 12;
    ManLayerConfig cfg;
    cfg.model_dim = d;
    cfg.heads = 1;
    cfg.head_dim = d;
    cfg.value_dim = inner;
    cfg.use_qk = false;
    cfg.activation = Activation::Relu;
    cfg.mask = MaskSpec::identity();
    ParamRegistry reg;
    ManLayer layer = make_layer(cfg, reg, seed);
    Tensor h = random_tensor({4, d}, rng);

    Tensor man_out = layer.attention(h, layer.build_masks(4, h));
    Tensor ffn = man::matmul(man::relu(man::matmul(h, layer.wv(0))), layer.wh());
    for (std::size_t i = 0; i < ffn.numel(); ++i)
      EXPECT_NEAR(man_out.data()[i], ffn.data()[i], 1e-10);
  }
}

TEST(ManLayer, BandZeroEqualsIdentityMask) {
  Rng rng(9);
  ManLayerConfig cfg;
  cfg.model_dim = 8;
  cfg.heads = 2;
  cfg.head_dim = 4;
  cfg.value_dim = 4;
  cfg.mask = MaskSpec::banded(0);
  ParamRegistry reg;
  ManLayer banded = make_layer(cfg, reg, 1);
  Tensor h = random_tensor({6, 8}, rng);

  Tensor out_banded = banded.attention(h, banded.build_masks(6, h));
  std::vector<Tensor> identity_masks(2, man::build_mask(MaskSpec::identity(), 6, 0));
  Tensor out_identity = banded.attention(h, identity_masks);
  for (std::size_t i = 0; i < out_banded.numel(); ++i)
    EXPECT_DOUBLE_EQ(out_banded.data()[i], out_identity.data()[i]);
}

TEST(ManLayer, CausalCompositeZeroesUpperTriangleScores) {
  Rng rng(31);
  ManLayerConfig cfg;
  cfg.model_dim = 4;
  cfg.heads = 2;
  cfg.head_dim = 2;
  cfg.value_dim = 2;
  cfg.mask = MaskSpec::dynamic();
  ParamRegistry reg;
  ManLayer layer = make_layer(cfg, reg, 77);
  Tensor h = random_tensor({5, 4}, rng);

  const MaskSpec causal = MaskSpec::causal();
  std::vector<Tensor> sink;
  layer.forward(h, &causal, 0.0, nullptr, &sink);
  ASSERT_EQ(sink.size(), 2u);
  for (const Tensor& s : sink)
    for (int t = 0; t < 5; ++t)
      for (int col = t + 1; col < 5; ++col) EXPECT_DOUBLE_EQ(s.at(t, col), 0.0);
}

TEST(ManLayer, ForwardAppliesResidualAndPostNorm) {
  Rng rng(15);
  ManLayerConfig cfg;
  cfg.model_dim = 6;
  cfg.heads = 1;
  cfg.head_dim = 6;
  cfg.value_dim = 6;
  cfg.mask = MaskSpec::all_ones();
  ParamRegistry reg;
  ManLayer layer = make_layer(cfg, reg, 3);
  Tensor h = random_tensor({3, 6}, rng);

  Tensor out = layer.forward(h, nullptr, 0.0, nullptr);
  Tensor core = layer.attention(h, layer.build_masks(3, h));
  Tensor expect = man::layer_norm(man::add(h, core), *reg.find("t.ln_g"), *reg.find("t.ln_b"));
  for (std::size_t i = 0; i < out.numel(); ++i)
    EXPECT_DOUBLE_EQ(out.data()[i], expect.data()[i]);
  // post-norm: rows of the output are standardized (unit gain, zero bias)
  for (int i = 0; i < 3; ++i) {
    double mean = 0.0;
    for (int j = 0; j < 6; ++j) mean += out.at(i, j);
    EXPECT_NEAR(mean / 6.0, 0.0, 1e-10);
  }
}

TEST(CrossAttention, SingleEncoderRowBroadcasts) {
  Rng rng(41);
  ManLayerConfig cfg;
  cfg.model_dim = 6;
  cfg.heads = 2;
  cfg.head_dim = 3;
  cfg.value_dim = 3;
  cfg.mask = MaskSpec::all_ones();
  ParamRegistry reg;
  ManLayer layer = make_layer(cfg, reg, 8);
  Tensor dec = random_tensor({4, 6}, rng);
  Tensor enc = random_tensor({1, 6}, rng);

  Tensor out = man::cross_attention_forward(dec, enc, layer);
  // with one key, attention is 1 and every output row equals (enc Wv) Wh
  Tensor vcat = man::concat_cols({man::matmul(enc, layer.wv(0)), man::matmul(enc, layer.wv(1))});
  Tensor expect = man::matmul(vcat, layer.wh());
  for (int t = 0; t < 4; ++t)
    for (int j = 0; j < 6; ++j) EXPECT_NEAR(out.at(t, j), expect.at(0, j), 1e-12);
}

TEST(CrossAttention, UniformLogitsAverageValueRows) {
  Rng rng(43);
  ManLayerConfig cfg;
  cfg.model_dim = 4;
  cfg.heads = 1;
  cfg.head_dim = 4;
  cfg.value_dim = 4;
  cfg.mask = MaskSpec::all_ones();
  ParamRegistry reg;
  ManLayer layer = make_layer(cfg, reg, 10);
  Tensor dec = Tensor::zeros({2, 4});  // zero queries -> uniform scores
  Tensor enc = random_tensor({5, 4}, rng);

  Tensor out = man::cross_attention_forward(dec, enc, layer);
  Tensor v = man::matmul(enc, layer.wv(0));
  for (int j = 0; j < 4; ++j) {
    double mean = 0.0;
    for (int s = 0; s < 5; ++s) mean += v.at(s, j);
    v.at(0, j) = mean / 5.0;
  }
  Tensor row({1, 4}, {v.at(0, 0), v.at(0, 1), v.at(0, 2), v.at(0, 3)});
  Tensor expect = man::matmul(row, layer.wh());
  for (int t = 0; t < 2; ++t)
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(out.at(t, j), expect.at(0, j), 1e-12);
}

TEST(CrossAttention, MatchesBruteForceOracle) {
  Rng rng(47);
  ManLayerConfig cfg;
  cfg.model_dim = 8;
  cfg.heads = 4;
  cfg.head_dim = 2;
  cfg.value_dim = 2;
  cfg.mask = MaskSpec::all_ones();
  ParamRegistry reg;
  ManLayer layer = make_layer(cfg, reg, 12);
  Tensor dec = random_tensor({3, 8}, rng);
  Tensor enc = random_tensor({6, 8}, rng);

  Tensor out = man::cross_attention_forward(dec, enc, layer);
  Tensor expect = brute_force_attention(dec, enc, layer);
  for (std::size_t i = 0; i < out.numel(); ++i)
    EXPECT_NEAR(out.data()[i], expect.data()[i], 1e-10);
}

TEST(ManLayer, ConfigValidation) {
  ManLayerConfig bad;
  bad.model_dim = 8;
  bad.heads = 3;
  bad.head_dim = 3;  // 3*3 != 8
  EXPECT_THROW(bad.validate(), std::invalid_argument);

  ManLayerConfig ffn;
  ffn.model_dim = 8;
  ffn.use_qk = false;
  ffn.heads = 2;  // degenerate config must be single-head
  ffn.head_dim = 4;
  ffn.value_dim = 16;
  EXPECT_THROW(ffn.validate(), std::invalid_argument);
}

TEST(ManLayer, FullSublayerGradientsMatchFiniteDifferences) {
  Rng rng(71);
  ManLayerConfig cfg;
  cfg.model_dim = 6;
  cfg.heads = 2;
  cfg.head_dim = 3;
  cfg.value_dim = 3;
  cfg.mask = MaskSpec::dynamic();
  cfg.clip_radius = 3;
  ParamRegistry reg;
  ManLayer layer = make_layer(cfg, reg, 99);
  // nudge mask params off zero so the sigmoid is not at its symmetric point
  for (auto& [name, t] : reg.entries())
    if (name.find("mask_") != std::string::npos)
      for (double& v : t.values()) v = rng.uniform(-0.3, 0.3);

  Tensor h = random_tensor({4, 6}, rng, -1.0, 1.0, true);
  const MaskSpec causal = MaskSpec::causal();
  auto fn = [&]() {
    Tensor out = layer.forward(h, &causal, 0.0, nullptr);
    return man::sum(man::mul(out, out));
  };
  std::vector<Tensor> leaves = {h};
  for (auto& [name, t] : reg.entries()) leaves.push_back(t);
  EXPECT_LE(man_test::grad_check(leaves, fn), 1e-4);
}
