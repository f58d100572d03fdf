#pragma once

#include <optional>
#include <string>
#include <vector>

#include "man/mask.hpp"
#include "man/params.hpp"
#include "man/tensor.hpp"

namespace man {

class Rng;

enum class SublayerKind { DMAN, SAN, FFN, SMAN };

std::string sublayer_kind_name(SublayerKind k);
SublayerKind sublayer_kind_from(const std::string& name);

enum class Activation { Identity, Relu };

// One mask-attention sublayer. SAN, FFN, DMAN and SMAN are all instances of
// this with different masks/activations:
//   SAN:  all-ones mask, identity activation, multi-head
//   FFN:  identity mask, relu, single head, wide value projection, no Q/K
//   SMAN: banded 0/1 mask, identity activation, multi-head
//   DMAN: learned sigmoid mask, identity activation, multi-head
struct ManLayerConfig {
  int model_dim = 64;
  int head_dim = 16;   // d_k
  int value_dim = 16;  // per-head value width
  int heads = 4;
  bool use_qk = true;  // false: scores come from the mask alone (FFN case)
  Activation activation = Activation::Identity;
  MaskSpec mask;
  int clip_radius = 32;  // dynamic mask offset table extent

  void validate() const;

  static ManLayerConfig for_kind(SublayerKind kind, int model_dim, int heads,
                                 int band, bool band_from_length,
                                 int clip_radius, int ffn_mult);
};

class ManLayer {
 public:
  ManLayer(const ManLayerConfig& cfg, ParamRegistry& reg,
           const std::string& prefix, Rng& init);

  // Per-head T x T masks from this layer's spec, elementwise-multiplied by
  // `extra` when given (the decoder passes a causal spec here).
  std::vector<Tensor> build_masks(int t_len, const Tensor& hidden,
                                  const MaskSpec* extra = nullptr) const;

  // Attention core: F([A^1,...,A^I]) W_H with A^i the mask-attention output
  // of head i. No residual or normalization. When score_sink is non-null it
  // receives each head's row-normalized score matrix.
  Tensor attention(const Tensor& h, const std::vector<Tensor>& masks,
                   std::vector<Tensor>* score_sink = nullptr) const;

  // Same core with queries from q_input and keys/values from kv_input.
  Tensor attention_kv(const Tensor& q_input, const Tensor& kv_input,
                      const std::vector<Tensor>& masks,
                      std::vector<Tensor>* score_sink = nullptr) const;

  // Post-norm sublayer: LayerNorm(h + dropout(attention(h))).
  Tensor forward(const Tensor& h, const MaskSpec* extra_mask,
                 double dropout_rate, Rng* dropout_rng,
                 std::vector<Tensor>* score_sink = nullptr) const;

  // Encoder-decoder attention wrapper (all-ones mask over encoder keys).
  Tensor forward_cross(const Tensor& h_dec, const Tensor& h_enc,
                       double dropout_rate, Rng* dropout_rng) const;

  const ManLayerConfig& config() const { return cfg_; }
  const DynamicMaskParams* dynamic_params() const {
    return mask_params_ ? &*mask_params_ : nullptr;
  }

  const Tensor& wq(int head) const { return wq_.at(static_cast<std::size_t>(head)); }
  const Tensor& wk(int head) const { return wk_.at(static_cast<std::size_t>(head)); }
  const Tensor& wv(int head) const { return wv_.at(static_cast<std::size_t>(head)); }
  const Tensor& wh() const { return wh_; }

 private:
  ManLayerConfig cfg_;
  std::vector<Tensor> wq_, wk_, wv_;
  Tensor wh_;
  Tensor ln_gain_, ln_bias_;
  std::optional<DynamicMaskParams> mask_params_;
};

// Standalone encoder-decoder attention over given weights; also used by the
// decoder blocks. Provided as a free operation mirroring ManLayer::attention_kv
// for an all-ones mask.
Tensor cross_attention_forward(const Tensor& h_dec, const Tensor& h_enc,
                               const ManLayer& layer);

}  // namespace man
