#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "man/model.hpp"
#include "man/training.hpp"

namespace man {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Whole-experiment configuration backed by a plain-text `key = value` file
// ('#' starts a comment). Unknown keys are hard errors. The model vocabulary
// is derived from the task vocabulary.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::vector<std::uint64_t> seeds = {1, 2, 3};  // ablation runs
  std::string output_dir = "out";
  std::string ordering = "C5";

  TaskConfig task;
  ModelConfig model;
  TrainConfig train;

  // Model config with the ordering preset applied and vocab taken from the
  // task.
  ModelConfig resolved_model() const;

  static ExperimentConfig load(const std::string& path);
  static ExperimentConfig parse(const std::string& text, const std::string& origin = "<string>");
  void save(const std::string& path) const;
  std::string to_text() const;
};

}  // namespace man
