#pragma once

#include <optional>
#include <string>
#include <vector>

#include "man/tensor.hpp"

namespace man {

enum class MaskKind { AllOnes, Identity, BandedStatic, Dynamic, Causal, Composite };

std::string mask_kind_name(MaskKind k);

// Declarative description of one mask matrix. Static kinds produce constant
// 0/1 matrices; Dynamic produces a sigmoid-gated soft mask computed from the
// hidden states; Composite is the elementwise product of its parts.
struct MaskSpec {
  MaskKind kind = MaskKind::AllOnes;
  int band = 0;                  // BandedStatic half-width b >= 0
  bool band_from_length = false; // b = floor(sqrt(T) / 2) instead of fixed b
  std::vector<MaskSpec> parts;   // Composite only

  static MaskSpec all_ones() { return {}; }
  static MaskSpec identity() { return {MaskKind::Identity, 0, false, {}}; }
  static MaskSpec banded(int b) { return {MaskKind::BandedStatic, b, false, {}}; }
  static MaskSpec banded_from_length() { return {MaskKind::BandedStatic, 0, true, {}}; }
  static MaskSpec dynamic() { return {MaskKind::Dynamic, 0, false, {}}; }
  static MaskSpec causal() { return {MaskKind::Causal, 0, false, {}}; }
  static MaskSpec composite(std::vector<MaskSpec> parts) {
    MaskSpec s;
    s.kind = MaskKind::Composite;
    s.parts = std::move(parts);
    return s;
  }

  bool contains_dynamic() const;
};

// Trainable parameters of one dynamic mask provider:
//   gate[t][s] = sigmoid(h_t . w + table[clip(t-s)] + u[head])
// w projects the query hidden state to a scalar, table covers relative
// offsets in [-clip_radius, clip_radius] (clipped at the boundary), u holds
// one additive scalar per head. All start at zero so the initial mask is a
// uniform 0.5.
struct DynamicMaskParams {
  Tensor w;      // [d x 1] column projection
  Tensor table;  // [2 * clip_radius + 1]
  Tensor u;      // [heads]
  int clip_radius = 32;

  DynamicMaskParams() = default;
  DynamicMaskParams(int model_dim, int heads, int clip_radius);
};

// Builds the T x T mask for one (layer, head). `hidden` and `params` are
// required by Dynamic (and by Composites containing it) and ignored
// otherwise. Entries are in [0,1].
Tensor build_mask(const MaskSpec& spec, int t_len, int head,
                  const Tensor* hidden = nullptr,
                  const DynamicMaskParams* params = nullptr);

// Row-major CSV / JSON export of a mask (or any rank-2) matrix.
void write_matrix_csv(const Tensor& m, const std::string& path);
void write_matrix_json(const Tensor& m, const std::string& path);

}  // namespace man
