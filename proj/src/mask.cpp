#include "man/mask.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "man/io_util.hpp"

#include <nlohmann/json.hpp>

namespace man {

std::string mask_kind_name(MaskKind k) {
  switch (k) {
    case MaskKind::AllOnes: return "all_ones";
    case MaskKind::Identity: return "identity";
    case MaskKind::BandedStatic: return "banded";
    case MaskKind::Dynamic: return "dynamic";
    case MaskKind::Causal: return "causal";
    case MaskKind::Composite: return "composite";
  }
  return "unknown";
}

bool MaskSpec::contains_dynamic() const {
  if (kind == MaskKind::Dynamic) return true;
  for (const MaskSpec& p : parts)
    if (p.contains_dynamic()) return true;
  return false;
}

DynamicMaskParams::DynamicMaskParams(int model_dim, int heads, int clip_radius_)
    : w(Tensor::zeros({model_dim, 1}, true)),
      table(Tensor::zeros({2 * clip_radius_ + 1}, true)),
      u(Tensor::zeros({heads}, true)),
      clip_radius(clip_radius_) {
  if (clip_radius_ < 0) throw std::invalid_argument("DynamicMaskParams: negative clip radius");
}

namespace {

Tensor build_banded(int t_len, int b) {
  Tensor m({t_len, t_len});
  for (int t = 0; t < t_len; ++t)
    for (int s = 0; s < t_len; ++s)
      m.at(t, s) = std::abs(t - s) <= b ? 1.0 : 0.0;
  return m;
}

Tensor build_dynamic(int t_len, int head, const Tensor& hidden,
                     const DynamicMaskParams& params) {
  const int d = hidden.cols();
  if (params.w.dim(0) != d)
    throw std::invalid_argument("build_mask: dynamic projection is " + shape_str(params.w.shape()) + " but hidden is " + shape_str(hidden.shape()));
  Tensor q = matmul(hidden, params.w);  // T x 1 per-query scalar
  Tensor logits = relative_bias_matrix(q, params.table, params.u, head,
                                       params.clip_radius, t_len);
  return sigmoid(logits);
}

}  // namespace

Tensor build_mask(const MaskSpec& spec, int t_len, int head,
                  const Tensor* hidden, const DynamicMaskParams* params) {
  if (t_len <= 0) throw std::invalid_argument("build_mask: sequence length must be positive");
  switch (spec.kind) {
    case MaskKind::AllOnes:
      return Tensor::full({t_len, t_len}, 1.0);
    case MaskKind::Identity: {
      Tensor m({t_len, t_len});
      for (int t = 0; t < t_len; ++t) m.at(t, t) = 1.0;
      return m;
    }
    case MaskKind::BandedStatic: {
      int b = spec.band;
      if (spec.band_from_length)
        b = static_cast<int>(std::floor(std::sqrt(static_cast<double>(t_len)) / 2.0));
      if (b < 0) throw std::invalid_argument("build_mask: band width " + std::to_string(b) + " is negative");
      return build_banded(t_len, b);
    }
    case MaskKind::Causal: {
      Tensor m({t_len, t_len});
      for (int t = 0; t < t_len; ++t)
        for (int s = 0; s <= t; ++s) m.at(t, s) = 1.0;
      return m;
    }
    case MaskKind::Dynamic: {
      if (!hidden || !params)
        throw std::invalid_argument("build_mask: dynamic mask requires hidden states and parameters");
      if (hidden->rows() != t_len)
        throw std::invalid_argument("build_mask: hidden has " + std::to_string(hidden->rows()) + " rows, expected " + std::to_string(t_len));
      return build_dynamic(t_len, head, *hidden, *params);
    }
    case MaskKind::Composite: {
      if (spec.parts.empty())
        throw std::invalid_argument("build_mask: composite mask with no parts");
      Tensor m = build_mask(spec.parts[0], t_len, head, hidden, params);
      for (std::size_t i = 1; i < spec.parts.size(); ++i)
        m = mul(m, build_mask(spec.parts[i], t_len, head, hidden, params));
      return m;
    }
  }
  throw std::logic_error("build_mask: unhandled mask kind");
}

void write_matrix_csv(const Tensor& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_matrix_csv: cannot open " + path);
  const int r = m.rows(), c = m.cols();
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) {
      if (j) out << ',';
      out << format_double(m.at(i, j));
    }
    out << '\n';
  }
}

void write_matrix_json(const Tensor& m, const std::string& path) {
  nlohmann::json rows = nlohmann::json::array();
  const int r = m.rows(), c = m.cols();
  for (int i = 0; i < r; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int j = 0; j < c; ++j) row.push_back(m.at(i, j));
    rows.push_back(std::move(row));
  }
  nlohmann::json doc;
  doc["rows"] = r;
  doc["cols"] = c;
  doc["data"] = std::move(rows);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_matrix_json: cannot open " + path);
  out << doc.dump(2) << '\n';
}

}  // namespace man
