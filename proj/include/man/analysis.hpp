#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "man/model.hpp"
#include "man/tensor.hpp"

namespace man {

// Head-averaged row-normalized attention matrix of one sublayer for one
// sentence.
struct CapturedMatrix {
  int block = 0;
  int sub = 0;
  SublayerKind kind = SublayerKind::SAN;
  int t_len = 0;
  std::vector<double> mat;  // row-major t_len x t_len
};

struct SentenceAttn {
  int t_len = 0;
  std::vector<CapturedMatrix> mats;
};

struct AttnRecord {
  std::string dataset_id;
  int enc_blocks = 0;
  std::vector<SentenceAttn> sentences;
};

// Runs the encoder over each sentence and stores head-averaged attention
// scores per (block, sublayer).
AttnRecord capture_attention(const Seq2SeqModel& model,
                             const std::vector<std::vector<int>>& dataset,
                             const std::string& dataset_id = "");

// Average over the dataset of the per-sentence windowed attention mass:
//   (1/|D|) sum_i (1/T_i) sum_j sum_{|k-j|<=w} s_bar[j][k]
// `layer` is 1-based. Blocks holding several sublayers of the same kind
// contribute the mean of their matrices.
double locality_statistic(const AttnRecord& record, int w, int layer,
                          SublayerKind kind);

struct LocalityCell {
  SublayerKind kind;
  int w;
  int layer;               // 1-based
  double value_percent;    // statistic * 100
};

struct LocalityReport {
  std::vector<LocalityCell> cells;
  std::size_t dataset_size = 0;

  std::string csv_string() const;  // columns: kind,w,layer,value_percent
  void write_csv(const std::string& path) const;
  void write_json(const std::string& path) const;
};

// Evaluates the statistic on the full (kinds x windows x layers) grid.
// Kinds default to every attention kind present in the record.
LocalityReport build_locality_report(const AttnRecord& record,
                                     const std::vector<int>& windows,
                                     const std::vector<int>& layers,
                                     const std::vector<SublayerKind>& kinds = {});

// Writes each sentence's head-averaged matrices as row-major CSV files
// named <prefix>sent<i>_layer<l>_<kind><sub>.csv.
void dump_attention_csv(const AttnRecord& record, const std::string& prefix);

struct DegeneracyReport {
  int draws = 0;
  double tolerance = 1e-10;
  double max_dev_san = 0.0;
  double max_dev_ffn = 0.0;
  int worst_draw_san = -1;
  int worst_draw_ffn = -1;
  std::vector<int> failed_draws;
  bool pass = false;
};

// Checks both degeneracy identities over `draws` random weight draws:
//  - the mask-attention layer with an all-ones mask and identity activation
//    equals plain multi-head self-attention (independent direct evaluation);
//  - with an identity mask, relu and one head it equals ReLU(H Wv) Wh.
// perturb_mask flips one all-ones mask entry to 0.999 (negative control).
DegeneracyReport verify_degeneracy(std::uint64_t seed, int draws = 100,
                                   double tolerance = 1e-10,
                                   bool perturb_mask = false);

// Same SAN identity evaluated entirely in float32 reference arithmetic;
// returns the max absolute deviation (empirically ~1e-6, bounded by 1e-4).
double degeneracy_deviation_f32(std::uint64_t seed, int draws);

struct BoundCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;
};

// Triangle-style bound on key/query distances:
//   |a Wq - c Wk|^2 <= 3 (|a Wq - b Wk|^2 + |b Wk - b Wq|^2 + |b Wq - c Wk|^2)
// a, b, c are [d] vectors; wq, wk are [d x dk].
BoundCheck distance_bound_check(const Tensor& a, const Tensor& b,
                                const Tensor& c, const Tensor& wq,
                                const Tensor& wk);

}  // namespace man
