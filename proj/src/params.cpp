#include "man/params.hpp"

#include <cmath>
#include <stdexcept>

namespace man {

Tensor& ParamRegistry::add(const std::string& name, Tensor t) {
  if (find(name)) throw std::logic_error("ParamRegistry: duplicate parameter name '" + name + "'");
  t.set_requires_grad(true);
  entries_.emplace_back(name, std::move(t));
  return entries_.back().second;
}

Tensor* ParamRegistry::find(const std::string& name) {
  for (auto& [n, t] : entries_)
    if (n == name) return &t;
  return nullptr;
}

const Tensor* ParamRegistry::find(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return &t;
  return nullptr;
}

std::size_t ParamRegistry::total_values() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

std::vector<std::string> ParamRegistry::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [n, t] : entries_) out.push_back(n);
  return out;
}

void ParamRegistry::zero_grads() {
  for (auto& [n, t] : entries_) t.zero_grad();
}

double ParamRegistry::grad_norm() const {
  double sq = 0.0;
  for (const auto& [n, t] : entries_) {
    if (!t.has_grad()) continue;
    for (double g : t.grad_view()) sq += g * g;
  }
  return std::sqrt(sq);
}

double ParamRegistry::clip_grad_norm(double clip) {
  const double norm = grad_norm();
  if (clip > 0.0 && norm > clip) {
    const double s = clip / norm;
    for (auto& [n, t] : entries_) {
      if (!t.has_grad()) continue;
      for (double& g : t.grad()) g *= s;
    }
  }
  return norm;
}

}  // namespace man
