#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "man/model.hpp"
#include "man/params.hpp"
#include "man/rng.hpp"

namespace man {

// Special tokens shared by all synthetic tasks.
inline constexpr int kBosToken = 0;
inline constexpr int kEosToken = 1;
inline constexpr int kFirstSymbol = 2;

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

// Standard bias-corrected Adam over a parameter registry.
class Adam {
 public:
  explicit Adam(ParamRegistry& reg, AdamConfig cfg = {});
  void step(double lr);
  std::int64_t steps() const { return t_; }

 private:
  ParamRegistry* reg_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t t_ = 0;
};

// Inverse-sqrt schedule with linear warmup:
//   lr(t) = peak * min(t / warmup, sqrt(warmup / t)),  t >= 1
struct LrSchedule {
  double peak = 1e-3;
  int warmup = 100;
  double lr(std::int64_t step) const;
};

enum class TaskKind { Copy, Reverse, LocalPattern };

std::string task_kind_name(TaskKind k);
TaskKind task_kind_from(const std::string& name);

struct TaskConfig {
  TaskKind kind = TaskKind::Copy;
  int vocab = 16;  // includes bos/eos; payload symbols are [2, vocab)
  int min_len = 4;
  int max_len = 8;
  int window = 2;  // LocalPattern half-width b0

  void validate() const;
};

struct Sample {
  std::vector<int> src;
  std::vector<int> tgt;
};

// Seeded generator of (src, tgt) pairs. Copy: tgt == src. Reverse: tgt is
// src reversed. LocalPattern: tgt[t] depends only on src positions within
// [t - window, t + window] (majority symbol of the window, ties broken to
// the smallest symbol). Train and eval draws are disjoint by construction:
// a sequence belongs to the eval pool iff a hash of its tokens is 0 mod 4.
class SyntheticTask {
 public:
  explicit SyntheticTask(TaskConfig cfg);

  const TaskConfig& config() const { return cfg_; }

  Sample draw_train(Rng& rng) const;
  std::vector<Sample> eval_set(int n, Rng& rng) const;

  static bool in_eval_pool(const std::vector<int>& src);
  std::vector<int> target_for(const std::vector<int>& src) const;

 private:
  std::vector<int> draw_src(Rng& rng) const;
  TaskConfig cfg_;
};

struct TrainConfig {
  int steps = 2000;
  int batch = 32;
  int warmup = 100;
  double peak_lr = 1e-3;
  double smoothing = 0.1;
  double clip_norm = 1.0;
  int eval_every = 100;
  int eval_size = 64;
  double early_stop_acc = 0.0;  // stop once eval token accuracy reaches this; 0 disables
  std::uint64_t seed = 1;

  void validate() const;
};

struct StepStat {
  int step;
  double lr;
  double loss;
  double grad_norm;
};

struct EvalStat {
  int step;
  double token_acc;
  double exact_match;
};

struct TrainingReport {
  std::vector<StepStat> steps;
  std::vector<EvalStat> evals;
  double final_token_acc = 0.0;
  double final_exact_match = 0.0;
  int trained_steps = 0;
  bool early_stopped = false;

  std::string csv_string() const;
  void write_csv(const std::string& path) const;
  void write_json(const std::string& path) const;
};

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Teacher-forced token accuracy and greedy exact-match rate over samples.
struct EvalResult {
  double token_acc = 0.0;
  double exact_match = 0.0;
};
EvalResult evaluate(const Seq2SeqModel& model, const std::vector<Sample>& samples);

TrainingReport train(Seq2SeqModel& model, const SyntheticTask& task,
                     const TrainConfig& tc);

struct AblationRun {
  std::uint64_t seed = 0;
  double token_acc = 0.0;
  double exact_match = 0.0;
  bool failed = false;
  std::string error;
};

struct AblationRow {
  std::string name;
  std::string ordering;
  std::vector<AblationRun> runs;
  double mean_token_acc = 0.0;
  double std_token_acc = 0.0;
  double mean_exact_match = 0.0;
  double std_exact_match = 0.0;
  int failures = 0;
};

struct AblationTable {
  std::vector<AblationRow> rows;

  std::string csv_string() const;
  void write_csv(const std::string& path) const;
  void write_json(const std::string& path) const;
};

// Trains one model per (ordering preset, seed) and reports the final token
// accuracy per preset as mean +/- sample stddev. Single-run failures are
// recorded in the row instead of aborting the sweep. Requires at least two
// presets and three seeds.
AblationTable run_ablation(const std::vector<std::string>& presets,
                           const ModelConfig& base_model,
                           const TaskConfig& task_cfg,
                           const TrainConfig& base_train,
                           const std::vector<std::uint64_t>& seeds);

}  // namespace man
