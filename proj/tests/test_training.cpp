#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "man/model.hpp"
#include "man/rng.hpp"
#include "man/training.hpp"
#include "test_util.hpp"

using man::Adam;
using man::LrSchedule;
using man::ModelConfig;
using man::ParamRegistry;
using man::Rng;
using man::Sample;
using man::Seq2SeqModel;
using man::SyntheticTask;
using man::TaskConfig;
using man::TaskKind;
using man::Tensor;
using man::TrainConfig;
using man::TrainingReport;

namespace {

ModelConfig small_model(const std::string& preset, int vocab) {
  ModelConfig cfg;
  cfg.vocab = vocab;
  cfg.dim = 16;
  cfg.heads = 2;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.clip_radius = 8;
  cfg.dropout = 0.0;
  cfg.max_len = 16;
  man::apply_ordering_preset(cfg, preset);
  return cfg;
}

}  // namespace

TEST(LrSchedule, ClosedFormIdentities) {
  LrSchedule s{1e-3, 100};
  EXPECT_DOUBLE_EQ(s.lr(50), 5e-4);
  EXPECT_DOUBLE_EQ(s.lr(100), 1e-3);
  EXPECT_DOUBLE_EQ(s.lr(400), 5e-4);
}

TEST(LrSchedule, WarmupPeaksExactlyThenDecays) {
  LrSchedule s{2.5e-3, 37};
  EXPECT_DOUBLE_EQ(s.lr(37), s.peak);
  for (int t = 2; t <= 37; ++t) EXPECT_GT(s.lr(t), s.lr(t - 1));
  for (int t = 38; t < 200; ++t) EXPECT_LT(s.lr(t), s.lr(t - 1));
  EXPECT_THROW(s.lr(0), std::invalid_argument);
}

TEST(Adam, ThreeStepsMatchHandSteppedOracle) {
  // single parameter, loss (x - 3)^2, constant lr
  ParamRegistry reg;
  Tensor& x = reg.add("x", Tensor::scalar(0.0));
  Adam adam(reg);

  // independent scalar re-implementation
  double xo = 0.0, m = 0.0, v = 0.0;
  const double b1 = 0.9, b2 = 0.98, eps = 1e-9, lr = 0.1;

  for (int t = 1; t <= 3; ++t) {
    const double g = 2.0 * (x.values()[0] - 3.0);
    x.zero_grad();
    x.grad()[0] = g;
    adam.step(lr);

    const double go = 2.0 * (xo - 3.0);
    m = b1 * m + (1 - b1) * go;
    v = b2 * v + (1 - b2) * go * go;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    xo -= lr * mhat / (std::sqrt(vhat) + eps);

    EXPECT_NEAR(x.values()[0], xo, 1e-15) << "step " << t;
  }
}

TEST(Adam, ConvergesOnQuadratic) {
  ParamRegistry reg;
  Tensor& x = reg.add("x", Tensor::scalar(0.0));
  Adam adam(reg);
  for (int t = 0; t < 500; ++t) {
    x.zero_grad();
    x.grad()[0] = 2.0 * (x.values()[0] - 3.0);
    adam.step(0.05);
  }
  EXPECT_NEAR(x.values()[0], 3.0, 1e-3);
}

TEST(SyntheticTask, GeneratorIsPureFunctionOfSeed) {
  SyntheticTask task({TaskKind::Copy, 12, 3, 7, 2});
  Rng a(99), b(99);
  for (int i = 0; i < 50; ++i) {
    const Sample sa = task.draw_train(a);
    const Sample sb = task.draw_train(b);
    EXPECT_EQ(sa.src, sb.src);
    EXPECT_EQ(sa.tgt, sb.tgt);
  }
}

TEST(SyntheticTask, TrainAndEvalPoolsAreDisjointByConstruction) {
  SyntheticTask task({TaskKind::Copy, 12, 3, 7, 2});
  Rng rng(7);
  for (int i = 0; i < 300; ++i)
    EXPECT_FALSE(SyntheticTask::in_eval_pool(task.draw_train(rng).src));
  Rng erng(8);
  for (const Sample& s : task.eval_set(50, erng))
    EXPECT_TRUE(SyntheticTask::in_eval_pool(s.src));
}

TEST(SyntheticTask, TargetRules) {
  SyntheticTask copy({TaskKind::Copy, 10, 4, 4, 2});
  EXPECT_EQ(copy.target_for({2, 5, 3, 9}), (std::vector<int>{2, 5, 3, 9}));

  SyntheticTask rev({TaskKind::Reverse, 10, 4, 4, 2});
  EXPECT_EQ(rev.target_for({2, 5, 3, 9}), (std::vector<int>{9, 3, 5, 2}));

  // windowed majority (ties to the smallest symbol), window 1
  SyntheticTask local({TaskKind::LocalPattern, 10, 3, 4, 1});
  // all-distinct windows fall back to the smallest symbol in the window
  EXPECT_EQ(local.target_for({2, 5, 3, 9}), (std::vector<int>{2, 2, 3, 3}));
  // a repeated symbol outvotes a smaller singleton
  EXPECT_EQ(local.target_for({4, 3, 4}), (std::vector<int>{3, 4, 3}));
}

TEST(SyntheticTask, LocalPatternDependsOnlyOnWindow) {
  SyntheticTask task({TaskKind::LocalPattern, 12, 8, 8, 2});
  std::vector<int> a = {2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<int> b = a;
  b[7] = 2;  // outside the window of positions 0..4, inside that of 5..7
  const auto ta = task.target_for(a);
  const auto tb = task.target_for(b);
  for (int t = 0; t <= 4; ++t) EXPECT_EQ(ta[static_cast<std::size_t>(t)], tb[static_cast<std::size_t>(t)]);
  EXPECT_NE(ta[7], tb[7]);
}

TEST(Train, LossCurvesAreBitIdenticalAcrossRuns) {
  TaskConfig task_cfg{TaskKind::Copy, 8, 3, 5, 2};
  TrainConfig tc;
  tc.steps = 20;
  tc.batch = 4;
  tc.warmup = 10;
  tc.eval_every = 10;
  tc.eval_size = 8;
  tc.seed = 3;

  auto run = [&]() {
    Seq2SeqModel model(small_model("C5", 8), Rng::stream(tc.seed, "init").next_u64());
    SyntheticTask task(task_cfg);
    return man::train(model, task, tc);
  };
  const TrainingReport r1 = run();
  const TrainingReport r2 = run();
  EXPECT_EQ(r1.csv_string(), r2.csv_string());
  EXPECT_EQ(r1.final_token_acc, r2.final_token_acc);
}

TEST(Train, DropoutDrawsAreSeededAndReproducible) {
  TaskConfig task_cfg{TaskKind::Copy, 8, 3, 5, 2};
  TrainConfig tc;
  tc.steps = 6;
  tc.batch = 2;
  tc.eval_every = 6;
  tc.eval_size = 4;
  tc.seed = 11;

  auto run = [&]() {
    ModelConfig mc = small_model("C5", 8);
    mc.dropout = 0.1;
    Seq2SeqModel model(mc, Rng::stream(tc.seed, "init").next_u64());
    SyntheticTask task(task_cfg);
    return man::train(model, task, tc).csv_string();
  };
  EXPECT_EQ(run(), run());
}

TEST(Train, DivergenceGuardNamesTheStep) {
  Seq2SeqModel model(small_model("C2", 8), 1);
  // poison the output projection so the loss (not an attention row) goes NaN
  model.params().find("output.proj")->values()[0] = std::nan("");
  SyntheticTask task({TaskKind::Copy, 8, 3, 5, 2});
  TrainConfig tc;
  tc.steps = 5;
  tc.batch = 2;
  try {
    man::train(model, task, tc);
    FAIL() << "expected divergence";
  } catch (const man::DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos);
  }
}

TEST(Train, SmoothedLossNeverFallsBelowSmoothedTargetEntropy) {
  // cross-entropy against q is at least H(q)
  const int v = 6;
  const double s = 0.1;
  const double on = 1.0 - s, off = s / (v - 1);
  const double entropy = -(on * std::log(on) + (v - 1) * off * std::log(off));

  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor logits = man_test::random_tensor({3, v}, rng, -5.0, 5.0);
    const std::vector<int> targets = {rng.uniform_int(0, v - 1), rng.uniform_int(0, v - 1), rng.uniform_int(0, v - 1)};
    const double loss = man::cross_entropy_label_smoothed(logits, targets, s).item();
    EXPECT_GE(loss, entropy - 1e-12);
  }
}

TEST(Train, TinyCopyTaskConvergesAndGreedyDecodesItsInput) {
  ModelConfig mc = small_model("C5", 8);
  TaskConfig task_cfg{TaskKind::Copy, 8, 3, 5, 2};
  TrainConfig tc;
  tc.steps = 300;
  tc.batch = 8;
  tc.warmup = 30;
  tc.peak_lr = 2e-3;
  tc.eval_every = 50;
  tc.eval_size = 16;
  tc.early_stop_acc = 0.995;
  tc.seed = 1;

  Seq2SeqModel model(mc, Rng::stream(tc.seed, "init").next_u64());
  SyntheticTask task(task_cfg);
  const TrainingReport rep = man::train(model, task, tc);
  EXPECT_GE(rep.final_token_acc, 0.95) << "trained " << rep.trained_steps << " steps";

  Rng erng(42);
  int ok = 0;
  const auto samples = task.eval_set(10, erng);
  for (const Sample& s : samples)
    ok += model.greedy_decode(s.src, man::kBosToken, man::kEosToken) == s.tgt;
  EXPECT_GE(ok, 8);
}

TEST(Ablation, RequiresEnoughOrderingsAndSeeds) {
  ModelConfig mc = small_model("C5", 8);
  TaskConfig task_cfg{TaskKind::Copy, 8, 3, 5, 2};
  TrainConfig tc;
  EXPECT_THROW(man::run_ablation({"C5"}, mc, task_cfg, tc, {1, 2, 3}), std::invalid_argument);
  EXPECT_THROW(man::run_ablation({"C5", "C2"}, mc, task_cfg, tc, {1, 2}), std::invalid_argument);
}

TEST(Ablation, FivePresetTableStructure) {
  ModelConfig mc = small_model("C5", 8);
  mc.dim = 8;
  mc.heads = 2;
  TaskConfig task_cfg{TaskKind::Copy, 8, 3, 4, 2};
  TrainConfig tc;
  tc.steps = 2;
  tc.batch = 2;
  tc.eval_every = 2;
  tc.eval_size = 4;

  const man::AblationTable table =
      man::run_ablation({"C1", "C2", "C3", "C4", "C5"}, mc, task_cfg, tc, {1, 2, 3});
  ASSERT_EQ(table.rows.size(), 5u);
  EXPECT_EQ(table.rows[0].name, "C1");
  EXPECT_EQ(table.rows[4].ordering, "DMAN->SAN->FFN");
  for (const auto& row : table.rows) {
    EXPECT_EQ(row.runs.size(), 3u);
    EXPECT_EQ(row.failures, 0);
    EXPECT_GE(row.mean_token_acc, 0.0);
    EXPECT_LE(row.mean_token_acc, 1.0);
    EXPECT_LE(row.mean_exact_match, row.mean_token_acc + 1e-12);
  }

  const std::string csv = table.csv_string();
  EXPECT_NE(csv.find("name,ordering,runs,failures,mean_token_acc,std_token_acc,mean_exact_match,std_exact_match"), std::string::npos);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);  // header + 5 rows
}

TEST(Ablation, FailedRunIsRecordedNotFatal) {
  man::AblationTable table;
  man::AblationRow row;
  row.name = "C5";
  row.ordering = "DMAN->SAN->FFN";
  row.runs.push_back({1, 0.9, 0.5, false, ""});
  row.runs.push_back({2, 0.0, 0.0, true, "boom"});
  row.failures = 1;
  row.mean_token_acc = 0.9;
  row.mean_exact_match = 0.5;
  table.rows.push_back(row);
  const std::string csv = table.csv_string();
  EXPECT_NE(csv.find("C5,DMAN->SAN->FFN,2,1,"), std::string::npos);
}
