#include "man/layers.hpp"

#include <cmath>
#include <stdexcept>

#include "man/rng.hpp"

namespace man {

std::string sublayer_kind_name(SublayerKind k) {
  switch (k) {
    case SublayerKind::DMAN: return "DMAN";
    case SublayerKind::SAN: return "SAN";
    case SublayerKind::FFN: return "FFN";
    case SublayerKind::SMAN: return "SMAN";
  }
  return "?";
}

SublayerKind sublayer_kind_from(const std::string& name) {
  if (name == "DMAN") return SublayerKind::DMAN;
  if (name == "SAN") return SublayerKind::SAN;
  if (name == "FFN") return SublayerKind::FFN;
  if (name == "SMAN") return SublayerKind::SMAN;
  throw std::invalid_argument("unknown sublayer kind '" + name + "' (expected DMAN, SAN, FFN or SMAN)");
}

void ManLayerConfig::validate() const {
  if (model_dim <= 0 || head_dim <= 0 || value_dim <= 0 || heads <= 0)
    throw std::invalid_argument("ManLayerConfig: dimensions must be positive");
  if (use_qk && heads * head_dim != model_dim)
    throw std::invalid_argument("ManLayerConfig: heads * head_dim (" + std::to_string(heads * head_dim) + ") != model_dim (" + std::to_string(model_dim) + ")");
  if (!use_qk && heads != 1)
    throw std::invalid_argument("ManLayerConfig: the degenerate no-Q/K configuration is single-head");
}

ManLayerConfig ManLayerConfig::for_kind(SublayerKind kind, int model_dim,
                                        int heads, int band,
                                        bool band_from_length, int clip_radius,
                                        int ffn_mult) {
  ManLayerConfig c;
  c.model_dim = model_dim;
  c.heads = heads;
  c.head_dim = model_dim / heads;
  c.value_dim = c.head_dim;
  c.clip_radius = clip_radius;
  switch (kind) {
    case SublayerKind::SAN:
      c.mask = MaskSpec::all_ones();
      break;
    case SublayerKind::DMAN:
      c.mask = MaskSpec::dynamic();
      break;
    case SublayerKind::SMAN:
      c.mask = band_from_length ? MaskSpec::banded_from_length() : MaskSpec::banded(band);
      break;
    case SublayerKind::FFN:
      c.mask = MaskSpec::identity();
      c.heads = 1;
      c.head_dim = model_dim;
      c.value_dim = ffn_mult * model_dim;
      c.use_qk = false;
      c.activation = Activation::Relu;
      break;
  }
  c.validate();
  return c;
}

namespace {

Tensor init_projection(int in_dim, int out_dim, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
  Tensor t({in_dim, out_dim});
  for (double& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

ManLayer::ManLayer(const ManLayerConfig& cfg, ParamRegistry& reg,
                   const std::string& prefix, Rng& init)
    : cfg_(cfg) {
  cfg_.validate();
  const int d = cfg_.model_dim;
  for (int i = 0; i < cfg_.heads; ++i) {
    const std::string h = std::to_string(i);
    if (cfg_.use_qk) {
      wq_.push_back(reg.add(prefix + ".wq" + h, init_projection(d, cfg_.head_dim, init)));
      wk_.push_back(reg.add(prefix + ".wk" + h, init_projection(d, cfg_.head_dim, init)));
    }
    wv_.push_back(reg.add(prefix + ".wv" + h, init_projection(d, cfg_.value_dim, init)));
  }
  wh_ = reg.add(prefix + ".wh", init_projection(cfg_.heads * cfg_.value_dim, d, init));
  ln_gain_ = reg.add(prefix + ".ln_g", Tensor::full({d}, 1.0));
  ln_bias_ = reg.add(prefix + ".ln_b", Tensor::zeros({d}));
  if (cfg_.mask.contains_dynamic()) {
    mask_params_.emplace(d, cfg_.heads, cfg_.clip_radius);
    reg.add(prefix + ".mask_w", mask_params_->w);
    reg.add(prefix + ".mask_p", mask_params_->table);
    reg.add(prefix + ".mask_u", mask_params_->u);
  }
}

std::vector<Tensor> ManLayer::build_masks(int t_len, const Tensor& hidden,
                                          const MaskSpec* extra) const {
  MaskSpec spec = cfg_.mask;
  if (extra) spec = MaskSpec::composite({*extra, cfg_.mask});
  std::vector<Tensor> masks;
  masks.reserve(static_cast<std::size_t>(cfg_.heads));
  if (spec.contains_dynamic()) {
    for (int i = 0; i < cfg_.heads; ++i)
      masks.push_back(build_mask(spec, t_len, i, &hidden, dynamic_params()));
  } else {
    Tensor shared = build_mask(spec, t_len, 0);
    for (int i = 0; i < cfg_.heads; ++i) masks.push_back(shared);
  }
  return masks;
}

Tensor ManLayer::attention(const Tensor& h, const std::vector<Tensor>& masks,
                           std::vector<Tensor>* score_sink) const {
  return attention_kv(h, h, masks, score_sink);
}

Tensor ManLayer::attention_kv(const Tensor& q_input, const Tensor& kv_input,
                              const std::vector<Tensor>& masks,
                              std::vector<Tensor>* score_sink) const {
  if (static_cast<int>(masks.size()) != cfg_.heads)
    throw std::invalid_argument("ManLayer: " + std::to_string(masks.size()) + " masks for " + std::to_string(cfg_.heads) + " heads");
  const int t_q = q_input.rows();
  const int t_k = kv_input.rows();
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(cfg_.head_dim));

  std::vector<Tensor> head_outputs;
  head_outputs.reserve(static_cast<std::size_t>(cfg_.heads));
  for (int i = 0; i < cfg_.heads; ++i) {
    Tensor logits;
    if (cfg_.use_qk) {
      Tensor q = matmul(q_input, wq_[static_cast<std::size_t>(i)]);
      Tensor k = matmul(kv_input, wk_[static_cast<std::size_t>(i)]);
      logits = scale(matmul(q, transpose(k)), inv_sqrt_dk);
    } else {
      logits = Tensor::zeros({t_q, t_k});
    }
    Tensor scores = masked_softmax(logits, masks[static_cast<std::size_t>(i)]);
    if (score_sink) score_sink->push_back(scores);
    Tensor v = matmul(kv_input, wv_[static_cast<std::size_t>(i)]);
    head_outputs.push_back(matmul(scores, v));
  }

  Tensor concat = cfg_.heads == 1 ? head_outputs[0] : concat_cols(head_outputs);
  if (cfg_.activation == Activation::Relu) concat = relu(concat);
  return matmul(concat, wh_);
}

Tensor ManLayer::forward(const Tensor& h, const MaskSpec* extra_mask,
                         double dropout_rate, Rng* dropout_rng,
                         std::vector<Tensor>* score_sink) const {
  std::vector<Tensor> masks = build_masks(h.rows(), h, extra_mask);
  Tensor core = attention(h, masks, score_sink);
  if (dropout_rng && dropout_rate > 0.0)
    core = dropout(core, dropout_rate, *dropout_rng);
  return layer_norm(add(h, core), ln_gain_, ln_bias_);
}

Tensor ManLayer::forward_cross(const Tensor& h_dec, const Tensor& h_enc,
                               double dropout_rate, Rng* dropout_rng) const {
  Tensor ones = Tensor::full({h_dec.rows(), h_enc.rows()}, 1.0);
  std::vector<Tensor> masks(static_cast<std::size_t>(cfg_.heads), ones);
  Tensor core = attention_kv(h_dec, h_enc, masks);
  if (dropout_rng && dropout_rate > 0.0)
    core = dropout(core, dropout_rate, *dropout_rng);
  return layer_norm(add(h_dec, core), ln_gain_, ln_bias_);
}

Tensor cross_attention_forward(const Tensor& h_dec, const Tensor& h_enc,
                               const ManLayer& layer) {
  Tensor ones = Tensor::full({h_dec.rows(), h_enc.rows()}, 1.0);
  std::vector<Tensor> masks(static_cast<std::size_t>(layer.config().heads), ones);
  return layer.attention_kv(h_dec, h_enc, masks);
}

}  // namespace man
