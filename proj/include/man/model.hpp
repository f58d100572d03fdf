#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "man/layers.hpp"
#include "man/params.hpp"

namespace man {

// Sequence of sublayer kinds inside one encoder/decoder block.
struct BlockOrdering {
  std::vector<SublayerKind> kinds;
  std::string name = "custom";

  // C1..C5 from the stacking-method ablation:
  //   C1 FFN->SAN->FFN   C2 SAN->SAN->FFN   C3 DMAN->DMAN->FFN
  //   C4 SAN->DMAN->FFN  C5 DMAN->SAN->FFN
  static BlockOrdering preset(const std::string& name);
  static const std::vector<std::string>& preset_names();

  std::string kinds_str() const;  // "DMAN->SAN->FFN"
  bool operator==(const BlockOrdering& o) const { return kinds == o.kinds; }
};

struct ModelConfig {
  int vocab = 16;
  int dim = 64;
  int heads = 4;
  int enc_layers = 2;
  int dec_layers = 2;
  BlockOrdering ordering = BlockOrdering::preset("C5");
  int band = 4;                  // SMAN half-width
  bool band_from_length = false; // SMAN b = floor(sqrt(T)/2)
  int clip_radius = 32;          // DMAN offset table extent
  int ffn_mult = 2;              // FFN inner dim = ffn_mult * dim
  double dropout = 0.1;
  int max_len = 32;

  int head_dim() const { return dim / heads; }
  void validate() const;
};

// Applies a named configuration preset. Accepts the C1..C5 orderings plus
//   SMAN1     SMAN->SAN->FFN with b = floor(sqrt(T)/2)
//   SMAN2     SMAN->SAN->FFN with b = 4
//   BASELINE  SAN->FFN with the classic 4x FFN inner dim
// Throws std::invalid_argument listing valid names for anything else.
void apply_ordering_preset(ModelConfig& cfg, const std::string& name);
const std::vector<std::string>& ordering_preset_names();

// One captured attention matrix (row-normalized scores of a single head).
struct AttnCaptureEntry {
  bool encoder = true;
  int block = 0;
  int sub = 0;
  SublayerKind kind = SublayerKind::SAN;
  int head = 0;
  Tensor scores;
};

struct AttnCapture {
  std::vector<AttnCaptureEntry> entries;
};

class Seq2SeqModel {
 public:
  Seq2SeqModel(const ModelConfig& cfg, std::uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  ParamRegistry& params() { return reg_; }
  const ParamRegistry& params() const { return reg_; }

  Tensor encode(const std::vector<int>& src, Rng* dropout_rng = nullptr,
                AttnCapture* capture = nullptr) const;
  Tensor decode(const Tensor& enc_out, const std::vector<int>& tgt_prefix,
                Rng* dropout_rng = nullptr, AttnCapture* capture = nullptr) const;
  // Next-token logits [len(tgt_prefix) x vocab]. Decoder self-attention is
  // causally masked regardless of the configured mask kind.
  Tensor forward(const std::vector<int>& src,
                 const std::vector<int>& tgt_prefix,
                 Rng* dropout_rng = nullptr, AttnCapture* capture = nullptr) const;

  // Appends argmax tokens (ties break to the lowest index) until eos_token
  // or the token limit. Returns emitted tokens without bos/eos.
  std::vector<int> greedy_decode(const std::vector<int>& src, int bos_token,
                                 int eos_token, int max_tokens = -1) const;

 private:
  struct Block {
    std::vector<ManLayer> subs;
    std::optional<ManLayer> cross;  // decoder only
    int cross_pos = 0;              // subs executed before cross runs
  };

  Tensor embed(const std::vector<int>& ids) const;
  Block make_block(bool is_decoder, int index, Rng& init);

  ModelConfig cfg_;
  ParamRegistry reg_;
  Tensor embedding_;  // vocab x dim
  Tensor out_proj_;   // dim x vocab
  Tensor pos_enc_;    // max_len x dim, constant
  std::vector<Block> encoder_;
  std::vector<Block> decoder_;
};

// Checkpoint = <base>.json manifest (names, shapes, dtype, offsets) plus
// <base>.bin little-endian float64 blob in registry order. Round-trips are
// bit-exact.
void save_checkpoint(const Seq2SeqModel& model, const std::string& base_path);
void load_checkpoint_into(Seq2SeqModel& model, const std::string& base_path);
Seq2SeqModel load_checkpoint(const std::string& base_path, const ModelConfig& cfg);

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace man
