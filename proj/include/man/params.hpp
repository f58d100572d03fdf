#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "man/tensor.hpp"

namespace man {

// Ordered registry of trainable parameters with unique, stable names.
// Registration order defines checkpoint blob layout and optimizer state
// layout, so it must not depend on anything but the model configuration.
class ParamRegistry {
 public:
  Tensor& add(const std::string& name, Tensor t);
  Tensor* find(const std::string& name);
  const Tensor* find(const std::string& name) const;

  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t total_values() const;
  std::vector<std::string> names() const;

  void zero_grads();
  double grad_norm() const;
  // Scales every gradient by clip/norm when the global norm exceeds clip.
  // Returns the pre-clip norm.
  double clip_grad_norm(double clip);

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

}  // namespace man
