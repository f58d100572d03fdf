#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "man/mask.hpp"
#include "man/rng.hpp"
#include "test_util.hpp"

#include <nlohmann/json.hpp>

using man::build_mask;
using man::DynamicMaskParams;
using man::MaskSpec;
using man::Rng;
using man::Tensor;
using man_test::random_tensor;

TEST(BuildMask, BandedOneIsTridiagonal) {
  Tensor m = build_mask(MaskSpec::banded(1), 4, 0);
  for (int t = 0; t < 4; ++t)
    for (int s = 0; s < 4; ++s)
      EXPECT_DOUBLE_EQ(m.at(t, s), std::abs(t - s) <= 1 ? 1.0 : 0.0);
}

TEST(BuildMask, BandedMatchesIndicatorOnGrid) {
  for (int b : {0, 1, 4}) {
    for (int t_len : {1, 8, 32}) {
      Tensor m = build_mask(MaskSpec::banded(b), t_len, 0);
      for (int t = 0; t < t_len; ++t)
        for (int s = 0; s < t_len; ++s)
          EXPECT_DOUBLE_EQ(m.at(t, s), std::abs(t - s) <= b ? 1.0 : 0.0);
    }
  }
}

TEST(BuildMask, BandedIsSymmetric) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const int t_len = rng.uniform_int(1, 16);
    const int b = rng.uniform_int(0, 6);
    Tensor m = build_mask(MaskSpec::banded(b), t_len, 0);
    for (int t = 0; t < t_len; ++t)
      for (int s = 0; s < t_len; ++s) EXPECT_DOUBLE_EQ(m.at(t, s), m.at(s, t));
  }
}

TEST(BuildMask, BandFromLengthRule) {
  // b = floor(sqrt(T) / 2)
  Tensor m16 = build_mask(MaskSpec::banded_from_length(), 16, 0);
  EXPECT_DOUBLE_EQ(m16.at(0, 2), 1.0);  // b = 2
  EXPECT_DOUBLE_EQ(m16.at(0, 3), 0.0);
  Tensor m4 = build_mask(MaskSpec::banded_from_length(), 4, 0);
  EXPECT_DOUBLE_EQ(m4.at(0, 1), 1.0);  // b = 1
  EXPECT_DOUBLE_EQ(m4.at(0, 2), 0.0);
}

TEST(BuildMask, NegativeBandRejected) {
  EXPECT_THROW(build_mask(MaskSpec::banded(-1), 4, 0), std::invalid_argument);
}

TEST(BuildMask, AllOnesAndIdentityAndCausal) {
  Tensor ones = build_mask(MaskSpec::all_ones(), 3, 0);
  for (std::size_t i = 0; i < ones.numel(); ++i) EXPECT_DOUBLE_EQ(ones.data()[i], 1.0);

  Tensor eye = build_mask(MaskSpec::identity(), 3, 0);
  for (int t = 0; t < 3; ++t)
    for (int s = 0; s < 3; ++s) EXPECT_DOUBLE_EQ(eye.at(t, s), t == s ? 1.0 : 0.0);

  Tensor causal = build_mask(MaskSpec::causal(), 3, 0);
  for (int t = 0; t < 3; ++t)
    for (int s = 0; s < 3; ++s) EXPECT_DOUBLE_EQ(causal.at(t, s), s <= t ? 1.0 : 0.0);
}

TEST(BuildMask, DynamicWithZeroParamsIsHalf) {
  DynamicMaskParams params(4, 2, 8);
  Rng rng(3);
  Tensor hidden = random_tensor({5, 4}, rng);
  Tensor m = build_mask(MaskSpec::dynamic(), 5, 1, &hidden, &params);
  for (std::size_t i = 0; i < m.numel(); ++i) EXPECT_DOUBLE_EQ(m.data()[i], 0.5);
}

TEST(BuildMask, DynamicOffsetTableControlsBand) {
  // P_0 = 2, P_{+-1} = -2, zero projection: diagonal sigma(2), off sigma(-2)
  DynamicMaskParams params(4, 1, 1);
  params.table.at(0) = -2.0;  // offset -1
  params.table.at(1) = 2.0;   // offset 0
  params.table.at(2) = -2.0;  // offset +1
  Tensor hidden = Tensor::zeros({3, 4});
  Tensor m = build_mask(MaskSpec::dynamic(), 3, 0, &hidden, &params);
  const double hi = 1.0 / (1.0 + std::exp(-2.0));
  const double lo = 1.0 / (1.0 + std::exp(2.0));
  EXPECT_NEAR(hi, 0.8808, 5e-5);
  EXPECT_NEAR(lo, 0.1192, 5e-5);
  for (int t = 0; t < 3; ++t)
    for (int s = 0; s < 3; ++s)
      EXPECT_NEAR(m.at(t, s), t == s ? hi : lo, 1e-15);
}

TEST(BuildMask, DynamicClipsOffsetsAtRadius) {
  DynamicMaskParams params(2, 1, 2);
  // distinct value at each table slot so clipping is observable
  for (int i = 0; i < 5; ++i) params.table.at(i) = static_cast<double>(i - 2);
  Tensor hidden = Tensor::zeros({8, 2});
  Tensor m = build_mask(MaskSpec::dynamic(), 8, 0, &hidden, &params);
  auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  // offsets beyond +-2 use the boundary entries
  EXPECT_DOUBLE_EQ(m.at(7, 0), sig(2.0));   // t-s = 7 -> clip to +2
  EXPECT_DOUBLE_EQ(m.at(0, 7), sig(-2.0));  // t-s = -7 -> clip to -2
  EXPECT_DOUBLE_EQ(m.at(5, 3), sig(2.0));
  EXPECT_DOUBLE_EQ(m.at(4, 3), sig(1.0));
}

TEST(BuildMask, DynamicEntriesStrictlyInsideUnitInterval) {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    DynamicMaskParams params(6, 3, 4);
    for (double& v : params.w.values()) v = rng.uniform(-2.0, 2.0);
    for (double& v : params.table.values()) v = rng.uniform(-4.0, 4.0);
    for (double& v : params.u.values()) v = rng.uniform(-2.0, 2.0);
    Tensor hidden = random_tensor({6, 6}, rng, -2.0, 2.0);
    Tensor m = build_mask(MaskSpec::dynamic(), 6, trial % 3, &hidden, &params);
    for (std::size_t i = 0; i < m.numel(); ++i) {
      EXPECT_GT(m.data()[i], 0.0);
      EXPECT_LT(m.data()[i], 1.0);
    }
  }
}

TEST(BuildMask, DynamicDependsOnlyOnQueryStateAndClippedOffset) {
  // rows with identical hidden states and identical clipped offsets get
  // bit-identical gate values
  DynamicMaskParams params(3, 2, 2);
  Rng rng(33);
  for (double& v : params.w.values()) v = rng.uniform(-1.0, 1.0);
  for (double& v : params.table.values()) v = rng.uniform(-1.0, 1.0);
  for (double& v : params.u.values()) v = rng.uniform(-1.0, 1.0);

  Tensor hidden({6, 3});
  for (int t = 0; t < 6; ++t)
    for (int c = 0; c < 3; ++c)
      hidden.at(t, c) = (t % 2 == 0) ? 0.25 * (c + 1) : -0.5 * (c + 1);

  Tensor m = build_mask(MaskSpec::dynamic(), 6, 1, &hidden, &params);
  auto clip = [](int v) { return std::max(-2, std::min(2, v)); };
  for (int t = 0; t < 6; ++t)
    for (int s = 0; s < 6; ++s)
      for (int t2 = 0; t2 < 6; ++t2)
        for (int s2 = 0; s2 < 6; ++s2) {
          if (t % 2 == t2 % 2 && clip(t - s) == clip(t2 - s2)) {
            EXPECT_EQ(m.at(t, s), m.at(t2, s2));
          }
        }
}

TEST(BuildMask, DynamicRequiresHiddenAndParams) {
  EXPECT_THROW(build_mask(MaskSpec::dynamic(), 4, 0), std::invalid_argument);
  Tensor hidden = Tensor::zeros({4, 2});
  EXPECT_THROW(build_mask(MaskSpec::dynamic(), 4, 0, &hidden, nullptr), std::invalid_argument);
}

TEST(BuildMask, CompositeIsElementwiseProduct) {
  DynamicMaskParams params(2, 1, 2);
  Tensor hidden = Tensor::zeros({4, 2});
  MaskSpec spec = MaskSpec::composite({MaskSpec::causal(), MaskSpec::dynamic()});
  Tensor m = build_mask(spec, 4, 0, &hidden, &params);
  for (int t = 0; t < 4; ++t)
    for (int s = 0; s < 4; ++s)
      EXPECT_DOUBLE_EQ(m.at(t, s), s <= t ? 0.5 : 0.0);
}

TEST(BuildMask, CompositeEntriesStayInUnitInterval) {
  Rng rng(55);
  DynamicMaskParams params(3, 2, 3);
  for (double& v : params.table.values()) v = rng.uniform(-3.0, 3.0);
  Tensor hidden = random_tensor({5, 3}, rng);
  MaskSpec spec = MaskSpec::composite({MaskSpec::banded(2), MaskSpec::dynamic(), MaskSpec::causal()});
  Tensor m = build_mask(spec, 5, 0, &hidden, &params);
  for (std::size_t i = 0; i < m.numel(); ++i) {
    EXPECT_GE(m.data()[i], 0.0);
    EXPECT_LE(m.data()[i], 1.0);
  }
}

TEST(MaskExport, CsvAndJsonRoundMatrixTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "man_mask_export";
  std::filesystem::create_directories(dir);
  Tensor m = build_mask(MaskSpec::banded(1), 3, 0);

  const std::string csv_path = (dir / "mask.csv").string();
  man::write_matrix_csv(m, csv_path);
  std::ifstream csv(csv_path);
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "1,1,0");
  std::getline(csv, line);
  EXPECT_EQ(line, "1,1,1");

  const std::string json_path = (dir / "mask.json").string();
  man::write_matrix_json(m, json_path);
  std::ifstream jf(json_path);
  nlohmann::json doc;
  jf >> doc;
  EXPECT_EQ(doc["rows"], 3);
  EXPECT_EQ(doc["cols"], 3);
  EXPECT_EQ(doc["data"][2][0], 0.0);
  EXPECT_EQ(doc["data"][2][1], 1.0);
}

TEST(BuildMask, GradientsFlowThroughDynamicMask) {
  Rng rng(88);
  DynamicMaskParams params(3, 2, 2);
  Tensor hidden = random_tensor({4, 3}, rng, -1.0, 1.0, true);
  for (double& v : params.w.values()) v = rng.uniform(-0.5, 0.5);
  for (double& v : params.table.values()) v = rng.uniform(-0.5, 0.5);
  for (double& v : params.u.values()) v = rng.uniform(-0.5, 0.5);

  auto fn = [&]() {
    Tensor logits = man::matmul(hidden, man::transpose(hidden));
    Tensor mask = build_mask(MaskSpec::dynamic(), 4, 1, &hidden, &params);
    Tensor scores = man::masked_softmax(logits, mask);
    return man::sum(man::mul(scores, scores));
  };
  EXPECT_LE(man_test::grad_check({params.w, params.table, params.u, hidden}, fn), 1e-4);
}
