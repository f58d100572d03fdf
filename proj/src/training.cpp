#include "man/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "man/io_util.hpp"

#include <nlohmann/json.hpp>

namespace man {

// --- Adam --------------------------------------------------------------------

Adam::Adam(ParamRegistry& reg, AdamConfig cfg) : reg_(&reg), cfg_(cfg) {
  m_.reserve(reg.size());
  v_.reserve(reg.size());
  for (const auto& [name, t] : reg.entries()) {
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

void Adam::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  auto& entries = reg_->entries();
  for (std::size_t p = 0; p < entries.size(); ++p) {
    Tensor& t = entries[p].second;
    if (!t.has_grad()) continue;
    const auto& g = t.grad_view();
    auto& m = m_[p];
    auto& v = v_[p];
    auto& w = t.values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

double LrSchedule::lr(std::int64_t step) const {
  if (step < 1) throw std::invalid_argument("LrSchedule: step must be >= 1");
  if (peak <= 0.0 || warmup <= 0) throw std::invalid_argument("LrSchedule: peak and warmup must be positive");
  const double t = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  return peak * std::min(t / w, std::sqrt(w / t));
}

// --- tasks ---------------------------------------------------------------------

std::string task_kind_name(TaskKind k) {
  switch (k) {
    case TaskKind::Copy: return "copy";
    case TaskKind::Reverse: return "reverse";
    case TaskKind::LocalPattern: return "local_pattern";
  }
  return "?";
}

TaskKind task_kind_from(const std::string& name) {
  if (name == "copy") return TaskKind::Copy;
  if (name == "reverse") return TaskKind::Reverse;
  if (name == "local_pattern") return TaskKind::LocalPattern;
  throw std::invalid_argument("unknown task '" + name + "' (expected copy, reverse or local_pattern)");
}

void TaskConfig::validate() const {
  if (vocab < kFirstSymbol + 2)
    throw std::invalid_argument("TaskConfig: vocab must leave at least two payload symbols");
  if (min_len < 1 || max_len < min_len)
    throw std::invalid_argument("TaskConfig: bad length range [" + std::to_string(min_len) + "," + std::to_string(max_len) + "]");
  if (window < 0) throw std::invalid_argument("TaskConfig: negative window");
}

SyntheticTask::SyntheticTask(TaskConfig cfg) : cfg_(cfg) { cfg_.validate(); }

bool SyntheticTask::in_eval_pool(const std::vector<int>& src) {
  std::string bytes;
  bytes.reserve(src.size());
  for (int t : src) bytes.push_back(static_cast<char>(t & 0xff));
  return fnv1a64(bytes) % 4 == 0;
}

std::vector<int> SyntheticTask::draw_src(Rng& rng) const {
  const int n = rng.uniform_int(cfg_.min_len, cfg_.max_len);
  std::vector<int> src(static_cast<std::size_t>(n));
  for (int& t : src) t = rng.uniform_int(kFirstSymbol, cfg_.vocab - 1);
  return src;
}

std::vector<int> SyntheticTask::target_for(const std::vector<int>& src) const {
  switch (cfg_.kind) {
    case TaskKind::Copy:
      return src;
    case TaskKind::Reverse: {
      std::vector<int> tgt(src.rbegin(), src.rend());
      return tgt;
    }
    case TaskKind::LocalPattern: {
      // majority symbol of the window, ties to the smallest symbol
      const int n = static_cast<int>(src.size());
      const int payload = cfg_.vocab - kFirstSymbol;
      std::vector<int> tgt(static_cast<std::size_t>(n));
      std::vector<int> count(static_cast<std::size_t>(payload));
      for (int t = 0; t < n; ++t) {
        std::fill(count.begin(), count.end(), 0);
        const int lo = std::max(0, t - cfg_.window);
        const int hi = std::min(n - 1, t + cfg_.window);
        for (int u = lo; u <= hi; ++u) ++count[static_cast<std::size_t>(src[static_cast<std::size_t>(u)] - kFirstSymbol)];
        int best = 0;
        for (int s = 1; s < payload; ++s)
          if (count[static_cast<std::size_t>(s)] > count[static_cast<std::size_t>(best)]) best = s;
        tgt[static_cast<std::size_t>(t)] = kFirstSymbol + best;
      }
      return tgt;
    }
  }
  throw std::logic_error("target_for: unhandled task kind");
}

Sample SyntheticTask::draw_train(Rng& rng) const {
  for (;;) {
    std::vector<int> src = draw_src(rng);
    if (!in_eval_pool(src)) return {src, target_for(src)};
  }
}

std::vector<Sample> SyntheticTask::eval_set(int n, Rng& rng) const {
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(n));
  while (static_cast<int>(out.size()) < n) {
    std::vector<int> src = draw_src(rng);
    if (in_eval_pool(src)) out.push_back({src, target_for(src)});
  }
  return out;
}

// --- training loop --------------------------------------------------------------

void TrainConfig::validate() const {
  if (steps <= 0 || batch <= 0) throw std::invalid_argument("TrainConfig: steps and batch must be positive");
  if (warmup <= 0 || peak_lr <= 0.0) throw std::invalid_argument("TrainConfig: warmup and peak_lr must be positive");
  if (smoothing < 0.0 || smoothing >= 1.0) throw std::invalid_argument("TrainConfig: smoothing must be in [0,1)");
  if (eval_every <= 0 || eval_size <= 0) throw std::invalid_argument("TrainConfig: eval cadence must be positive");
}

namespace {

std::vector<int> decoder_input(const std::vector<int>& tgt) {
  std::vector<int> in;
  in.reserve(tgt.size() + 1);
  in.push_back(kBosToken);
  in.insert(in.end(), tgt.begin(), tgt.end());
  return in;
}

std::vector<int> decoder_labels(const std::vector<int>& tgt) {
  std::vector<int> out = tgt;
  out.push_back(kEosToken);
  return out;
}

}  // namespace

EvalResult evaluate(const Seq2SeqModel& model, const std::vector<Sample>& samples) {
  std::size_t correct = 0, total = 0, matched = 0;
  for (const Sample& s : samples) {
    Tensor logits = model.forward(s.src, decoder_input(s.tgt));
    const std::vector<int> labels = decoder_labels(s.tgt);
    for (int i = 0; i < logits.rows(); ++i) {
      int best = 0;
      double best_v = logits.at(i, 0);
      for (int v = 1; v < logits.cols(); ++v)
        if (logits.at(i, v) > best_v) {
          best_v = logits.at(i, v);
          best = v;
        }
      correct += best == labels[static_cast<std::size_t>(i)];
      ++total;
    }
    if (model.greedy_decode(s.src, kBosToken, kEosToken) == s.tgt) ++matched;
  }
  EvalResult r;
  r.token_acc = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  r.exact_match = samples.empty() ? 0.0 : static_cast<double>(matched) / static_cast<double>(samples.size());
  return r;
}

TrainingReport train(Seq2SeqModel& model, const SyntheticTask& task,
                     const TrainConfig& tc) {
  tc.validate();
  Rng data_rng = Rng::stream(tc.seed, "data.train");
  Rng eval_rng = Rng::stream(tc.seed, "data.eval");
  Rng dropout_rng = Rng::stream(tc.seed, "dropout");

  const std::vector<Sample> eval_samples = task.eval_set(tc.eval_size, eval_rng);
  LrSchedule schedule{tc.peak_lr, tc.warmup};
  Adam adam(model.params());

  TrainingReport report;
  report.steps.reserve(static_cast<std::size_t>(tc.steps));

  for (int step = 1; step <= tc.steps; ++step) {
    model.params().zero_grads();
    double loss_value = 0.0;
    {
      GradTape tape;
      Tensor total = Tensor::scalar(0.0);
      for (int b = 0; b < tc.batch; ++b) {
        const Sample s = task.draw_train(data_rng);
        Tensor logits = model.forward(s.src, decoder_input(s.tgt), &dropout_rng);
        Tensor loss = cross_entropy_label_smoothed(logits, decoder_labels(s.tgt), tc.smoothing);
        total = add(total, loss);
      }
      Tensor mean_loss = scale(total, 1.0 / tc.batch);
      loss_value = mean_loss.item();
      if (!std::isfinite(loss_value))
        throw DivergenceError("training diverged: loss " + std::to_string(loss_value) + " at step " + std::to_string(step));
      backward(mean_loss);
    }
    const double grad_norm = model.params().clip_grad_norm(tc.clip_norm);
    const double lr = schedule.lr(step);
    adam.step(lr);
    report.steps.push_back({step, lr, loss_value, grad_norm});
    report.trained_steps = step;

    if (step % tc.eval_every == 0 || step == tc.steps) {
      const EvalResult ev = evaluate(model, eval_samples);
      report.evals.push_back({step, ev.token_acc, ev.exact_match});
      report.final_token_acc = ev.token_acc;
      report.final_exact_match = ev.exact_match;
      if (tc.early_stop_acc > 0.0 && ev.token_acc >= tc.early_stop_acc) {
        report.early_stopped = true;
        break;
      }
    }
  }
  return report;
}

std::string TrainingReport::csv_string() const {
  std::ostringstream out;
  out << "step,lr,loss,grad_norm\n";
  for (const StepStat& s : steps)
    out << s.step << ',' << format_double(s.lr) << ',' << format_double(s.loss)
        << ',' << format_double(s.grad_norm) << '\n';
  return out.str();
}

void TrainingReport::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << csv_string();
}

void TrainingReport::write_json(const std::string& path) const {
  nlohmann::json doc;
  doc["trained_steps"] = trained_steps;
  doc["early_stopped"] = early_stopped;
  doc["final_token_acc"] = final_token_acc;
  doc["final_exact_match"] = final_exact_match;
  nlohmann::json evs = nlohmann::json::array();
  for (const EvalStat& e : evals)
    evs.push_back({{"step", e.step}, {"token_acc", e.token_acc}, {"exact_match", e.exact_match}});
  doc["evals"] = std::move(evs);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << doc.dump(2) << '\n';
}

// --- ablation --------------------------------------------------------------------

AblationTable run_ablation(const std::vector<std::string>& presets,
                           const ModelConfig& base_model,
                           const TaskConfig& task_cfg,
                           const TrainConfig& base_train,
                           const std::vector<std::uint64_t>& seeds) {
  if (presets.size() < 2) throw std::invalid_argument("run_ablation: need at least two orderings");
  if (seeds.size() < 3) throw std::invalid_argument("run_ablation: need at least three seeds");

  AblationTable table;
  for (const std::string& preset : presets) {
    ModelConfig cfg = base_model;
    apply_ordering_preset(cfg, preset);

    AblationRow row;
    row.name = preset;
    row.ordering = cfg.ordering.kinds_str();

    std::vector<double> token_accs, exact_matches;
    for (std::uint64_t seed : seeds) {
      AblationRun run;
      run.seed = seed;
      try {
        Seq2SeqModel model(cfg, Rng::stream(seed, "init").next_u64());
        SyntheticTask task(task_cfg);
        TrainConfig tc = base_train;
        tc.seed = seed;
        const TrainingReport rep = train(model, task, tc);
        run.token_acc = rep.final_token_acc;
        run.exact_match = rep.final_exact_match;
        token_accs.push_back(run.token_acc);
        exact_matches.push_back(run.exact_match);
      } catch (const std::exception& e) {
        run.failed = true;
        run.error = e.what();
        ++row.failures;
      }
      row.runs.push_back(std::move(run));
    }

    auto mean_std = [](const std::vector<double>& xs, double& mean, double& stddev) {
      mean = 0.0;
      stddev = 0.0;
      if (xs.empty()) return;
      for (double x : xs) mean += x;
      mean /= static_cast<double>(xs.size());
      double var = 0.0;
      for (double x : xs) var += (x - mean) * (x - mean);
      stddev = xs.size() > 1 ? std::sqrt(var / static_cast<double>(xs.size() - 1)) : 0.0;
    };
    mean_std(token_accs, row.mean_token_acc, row.std_token_acc);
    mean_std(exact_matches, row.mean_exact_match, row.std_exact_match);
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::string AblationTable::csv_string() const {
  std::ostringstream out;
  out << "name,ordering,runs,failures,mean_token_acc,std_token_acc,mean_exact_match,std_exact_match\n";
  for (const AblationRow& r : rows)
    out << r.name << ',' << r.ordering << ',' << r.runs.size() << ',' << r.failures
        << ',' << format_double(r.mean_token_acc) << ',' << format_double(r.std_token_acc)
        << ',' << format_double(r.mean_exact_match) << ',' << format_double(r.std_exact_match) << '\n';
  return out.str();
}

void AblationTable::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << csv_string();
}

void AblationTable::write_json(const std::string& path) const {
  nlohmann::json doc = nlohmann::json::array();
  for (const AblationRow& r : rows) {
    nlohmann::json row;
    row["name"] = r.name;
    row["ordering"] = r.ordering;
    row["mean_token_acc"] = r.mean_token_acc;
    row["std_token_acc"] = r.std_token_acc;
    row["mean_exact_match"] = r.mean_exact_match;
    row["std_exact_match"] = r.std_exact_match;
    row["failures"] = r.failures;
    nlohmann::json runs = nlohmann::json::array();
    for (const AblationRun& run : r.runs) {
      nlohmann::json j;
      j["seed"] = run.seed;
      j["failed"] = run.failed;
      if (run.failed) j["error"] = run.error;
      else {
        j["token_acc"] = run.token_acc;
        j["exact_match"] = run.exact_match;
      }
      runs.push_back(std::move(j));
    }
    row["runs"] = std::move(runs);
    doc.push_back(std::move(row));
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << doc.dump(2) << '\n';
}

}  // namespace man
