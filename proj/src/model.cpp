#include "man/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "man/rng.hpp"

#include <nlohmann/json.hpp>

namespace man {

BlockOrdering BlockOrdering::preset(const std::string& name) {
  BlockOrdering o;
  o.name = name;
  using K = SublayerKind;
  if (name == "C1") o.kinds = {K::FFN, K::SAN, K::FFN};
  else if (name == "C2") o.kinds = {K::SAN, K::SAN, K::FFN};
  else if (name == "C3") o.kinds = {K::DMAN, K::DMAN, K::FFN};
  else if (name == "C4") o.kinds = {K::SAN, K::DMAN, K::FFN};
  else if (name == "C5") o.kinds = {K::DMAN, K::SAN, K::FFN};
  else {
    std::string valid;
    for (const auto& n : preset_names()) valid += (valid.empty() ? "" : ", ") + n;
    throw std::invalid_argument("unknown ordering preset '" + name + "' (valid: " + valid + ")");
  }
  return o;
}

const std::vector<std::string>& BlockOrdering::preset_names() {
  static const std::vector<std::string> names = {"C1", "C2", "C3", "C4", "C5"};
  return names;
}

std::string BlockOrdering::kinds_str() const {
  std::string s;
  for (std::size_t i = 0; i < kinds.size(); ++i) {
    if (i) s += "->";
    s += sublayer_kind_name(kinds[i]);
  }
  return s;
}

void ModelConfig::validate() const {
  if (vocab <= 0 || dim <= 0 || heads <= 0 || enc_layers <= 0 || dec_layers <= 0 || max_len <= 0)
    throw std::invalid_argument("ModelConfig: sizes must be positive");
  if (dim % heads != 0)
    throw std::invalid_argument("ModelConfig: dim " + std::to_string(dim) + " not divisible by " + std::to_string(heads) + " heads");
  if (ordering.kinds.empty())
    throw std::invalid_argument("ModelConfig: empty block ordering");
  if (band < 0) throw std::invalid_argument("ModelConfig: negative band");
  if (clip_radius < 0) throw std::invalid_argument("ModelConfig: negative clip radius");
  if (ffn_mult <= 0) throw std::invalid_argument("ModelConfig: ffn_mult must be positive");
  if (dropout < 0.0 || dropout >= 1.0)
    throw std::invalid_argument("ModelConfig: dropout must be in [0,1)");
}

void apply_ordering_preset(ModelConfig& cfg, const std::string& name) {
  using K = SublayerKind;
  if (name == "SMAN1") {
    cfg.ordering = BlockOrdering{{K::SMAN, K::SAN, K::FFN}, "SMAN1"};
    cfg.band_from_length = true;
  } else if (name == "SMAN2") {
    cfg.ordering = BlockOrdering{{K::SMAN, K::SAN, K::FFN}, "SMAN2"};
    cfg.band = 4;
    cfg.band_from_length = false;
  } else if (name == "BASELINE") {
    cfg.ordering = BlockOrdering{{K::SAN, K::FFN}, "BASELINE"};
    cfg.ffn_mult = 4;
  } else {
    // C1..C5; preset() reports valid names on failure, extend the message
    // with the model-level presets.
    try {
      cfg.ordering = BlockOrdering::preset(name);
    } catch (const std::invalid_argument&) {
      std::string valid;
      for (const auto& n : ordering_preset_names()) valid += (valid.empty() ? "" : ", ") + n;
      throw std::invalid_argument("unknown ordering preset '" + name + "' (valid: " + valid + ")");
    }
  }
}

const std::vector<std::string>& ordering_preset_names() {
  static const std::vector<std::string> names = {"C1", "C2", "C3", "C4", "C5", "SMAN1", "SMAN2", "BASELINE"};
  return names;
}

namespace {

Tensor sinusoidal_position_encoding(int max_len, int dim) {
  Tensor pe({max_len, dim});
  for (int pos = 0; pos < max_len; ++pos) {
    for (int i = 0; i < dim; i += 2) {
      const double angle = pos / std::pow(10000.0, static_cast<double>(i) / dim);
      pe.at(pos, i) = std::sin(angle);
      if (i + 1 < dim) pe.at(pos, i + 1) = std::cos(angle);
    }
  }
  return pe;
}

}  // namespace

Seq2SeqModel::Block Seq2SeqModel::make_block(bool is_decoder, int index, Rng& init) {
  Block block;
  const std::string stack = is_decoder ? "dec" : "enc";
  const auto& kinds = cfg_.ordering.kinds;
  block.subs.reserve(kinds.size());
  for (std::size_t s = 0; s < kinds.size(); ++s) {
    ManLayerConfig lc = ManLayerConfig::for_kind(kinds[s], cfg_.dim, cfg_.heads,
                                                 cfg_.band, cfg_.band_from_length,
                                                 cfg_.clip_radius, cfg_.ffn_mult);
    block.subs.emplace_back(lc, reg_, stack + ".b" + std::to_string(index) + ".s" + std::to_string(s), init);
  }
  if (is_decoder) {
    // Encoder-decoder attention sits before the trailing FFN, matching the
    // classic self->cross->ffn decoder layout; orderings without a trailing
    // FFN get it appended.
    block.cross_pos = kinds.back() == SublayerKind::FFN
                          ? static_cast<int>(kinds.size()) - 1
                          : static_cast<int>(kinds.size());
    ManLayerConfig cc;
    cc.model_dim = cfg_.dim;
    cc.heads = cfg_.heads;
    cc.head_dim = cfg_.head_dim();
    cc.value_dim = cfg_.head_dim();
    cc.mask = MaskSpec::all_ones();
    block.cross.emplace(cc, reg_, "dec.b" + std::to_string(index) + ".cross", init);
  }
  return block;
}

Seq2SeqModel::Seq2SeqModel(const ModelConfig& cfg, std::uint64_t init_seed)
    : cfg_(cfg) {
  cfg_.validate();
  Rng init(init_seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(cfg_.dim));
  Tensor emb({cfg_.vocab, cfg_.dim});
  for (double& v : emb.values()) v = init.uniform(-bound, bound);
  embedding_ = reg_.add("embedding.table", emb);

  for (int b = 0; b < cfg_.enc_layers; ++b) encoder_.push_back(make_block(false, b, init));
  for (int b = 0; b < cfg_.dec_layers; ++b) decoder_.push_back(make_block(true, b, init));

  Tensor proj({cfg_.dim, cfg_.vocab});
  for (double& v : proj.values()) v = init.uniform(-bound, bound);
  out_proj_ = reg_.add("output.proj", proj);

  pos_enc_ = sinusoidal_position_encoding(cfg_.max_len, cfg_.dim);
}

Tensor Seq2SeqModel::embed(const std::vector<int>& ids) const {
  const int t_len = static_cast<int>(ids.size());
  if (t_len > cfg_.max_len)
    throw std::invalid_argument("sequence of length " + std::to_string(t_len) + " exceeds max_len " + std::to_string(cfg_.max_len));
  Tensor e = scale(embedding_rows(embedding_, ids), std::sqrt(static_cast<double>(cfg_.dim)));
  Tensor pe({t_len, cfg_.dim});
  std::copy_n(pos_enc_.data(), static_cast<std::size_t>(t_len) * cfg_.dim, pe.data());
  return add(e, pe);
}

Tensor Seq2SeqModel::encode(const std::vector<int>& src, Rng* dropout_rng,
                            AttnCapture* capture) const {
  Tensor h = embed(src);
  for (std::size_t b = 0; b < encoder_.size(); ++b) {
    const Block& block = encoder_[b];
    for (std::size_t s = 0; s < block.subs.size(); ++s) {
      std::vector<Tensor> sink;
      h = block.subs[s].forward(h, nullptr, cfg_.dropout, dropout_rng,
                                capture ? &sink : nullptr);
      if (capture)
        for (std::size_t head = 0; head < sink.size(); ++head)
          capture->entries.push_back({true, static_cast<int>(b), static_cast<int>(s),
                                      cfg_.ordering.kinds[s], static_cast<int>(head),
                                      sink[head]});
    }
  }
  return h;
}

Tensor Seq2SeqModel::decode(const Tensor& enc_out, const std::vector<int>& tgt_prefix,
                            Rng* dropout_rng, AttnCapture* capture) const {
  Tensor h = embed(tgt_prefix);
  const MaskSpec causal = MaskSpec::causal();
  for (std::size_t b = 0; b < decoder_.size(); ++b) {
    const Block& block = decoder_[b];
    for (std::size_t s = 0; s <= block.subs.size(); ++s) {
      if (static_cast<int>(s) == block.cross_pos)
        h = block.cross->forward_cross(h, enc_out, cfg_.dropout, dropout_rng);
      if (s == block.subs.size()) break;
      std::vector<Tensor> sink;
      h = block.subs[s].forward(h, &causal, cfg_.dropout, dropout_rng,
                                capture ? &sink : nullptr);
      if (capture)
        for (std::size_t head = 0; head < sink.size(); ++head)
          capture->entries.push_back({false, static_cast<int>(b), static_cast<int>(s),
                                      cfg_.ordering.kinds[s], static_cast<int>(head),
                                      sink[head]});
    }
  }
  return matmul(h, out_proj_);
}

Tensor Seq2SeqModel::forward(const std::vector<int>& src,
                             const std::vector<int>& tgt_prefix,
                             Rng* dropout_rng, AttnCapture* capture) const {
  Tensor enc = encode(src, dropout_rng, capture);
  return decode(enc, tgt_prefix, dropout_rng, capture);
}

std::vector<int> Seq2SeqModel::greedy_decode(const std::vector<int>& src,
                                             int bos_token, int eos_token,
                                             int max_tokens) const {
  const int limit = max_tokens < 0 ? cfg_.max_len - 1
                                   : std::min(max_tokens, cfg_.max_len - 1);
  Tensor enc = encode(src);
  std::vector<int> prefix = {bos_token};
  std::vector<int> out;
  while (static_cast<int>(out.size()) < limit) {
    Tensor logits = decode(enc, prefix);
    const int last = logits.rows() - 1;
    int best = 0;
    double best_v = logits.at(last, 0);
    for (int v = 1; v < cfg_.vocab; ++v)
      if (logits.at(last, v) > best_v) {
        best_v = logits.at(last, v);
        best = v;
      }
    if (best == eos_token) break;
    out.push_back(best);
    prefix.push_back(best);
  }
  return out;
}

// --- checkpoints -------------------------------------------------------------

namespace {

void append_le_double(std::string& buf, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double read_le_double(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i)
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_checkpoint(const Seq2SeqModel& model, const std::string& base_path) {
  nlohmann::json manifest;
  manifest["format"] = "man.checkpoint";
  manifest["version"] = 1;
  manifest["dtype"] = "float64";
  nlohmann::json params = nlohmann::json::array();

  std::string blob;
  std::size_t offset = 0;
  for (const auto& [name, t] : model.params().entries()) {
    nlohmann::json p;
    p["name"] = name;
    p["shape"] = t.shape();
    p["offset"] = offset * 8;  // bytes
    params.push_back(std::move(p));
    for (double v : t.values()) append_le_double(blob, v);
    offset += t.numel();
  }
  manifest["params"] = std::move(params);
  manifest["total_bytes"] = blob.size();

  std::ofstream mf(base_path + ".json");
  if (!mf) throw CheckpointError("cannot write " + base_path + ".json");
  mf << manifest.dump(2) << '\n';
  std::ofstream bf(base_path + ".bin", std::ios::binary);
  if (!bf) throw CheckpointError("cannot write " + base_path + ".bin");
  bf.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

void load_checkpoint_into(Seq2SeqModel& model, const std::string& base_path) {
  std::ifstream mf(base_path + ".json");
  if (!mf) throw CheckpointError("cannot open manifest " + base_path + ".json");
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("corrupt manifest " + base_path + ".json: " + e.what());
  }
  if (manifest.value("format", "") != "man.checkpoint")
    throw CheckpointError("corrupt manifest: unexpected format tag");
  if (manifest.value("dtype", "") != "float64")
    throw CheckpointError("corrupt manifest: unsupported dtype");

  std::ifstream bf(base_path + ".bin", std::ios::binary);
  if (!bf) throw CheckpointError("cannot open blob " + base_path + ".bin");
  std::string blob((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());

  const auto expected_bytes = manifest.value("total_bytes", std::size_t{0});
  if (blob.size() != expected_bytes)
    throw CheckpointError("corrupt checkpoint: blob has " + std::to_string(blob.size()) + " bytes, manifest expects " + std::to_string(expected_bytes));

  std::size_t seen = 0;
  for (const auto& p : manifest.at("params")) {
    const std::string name = p.at("name").get<std::string>();
    Tensor* t = model.params().find(name);
    if (!t) throw CheckpointError("corrupt checkpoint: unknown parameter '" + name + "'");
    const auto shape = p.at("shape").get<std::vector<int>>();
    if (shape != t->shape())
      throw CheckpointError("corrupt checkpoint: parameter '" + name + "' has shape " + shape_str(shape) + ", model expects " + shape_str(t->shape()));
    const std::size_t offset = p.at("offset").get<std::size_t>();
    const std::size_t bytes = t->numel() * 8;
    if (offset + bytes > blob.size())
      throw CheckpointError("corrupt checkpoint: parameter '" + name + "' extends past blob end");
    for (std::size_t i = 0; i < t->numel(); ++i)
      t->values()[i] = read_le_double(blob.data() + offset + i * 8);
    ++seen;
  }
  if (seen != model.params().size())
    throw CheckpointError("corrupt checkpoint: manifest lists " + std::to_string(seen) + " parameters, model has " + std::to_string(model.params().size()));
}

Seq2SeqModel load_checkpoint(const std::string& base_path, const ModelConfig& cfg) {
  Seq2SeqModel model(cfg, /*init_seed=*/0);
  load_checkpoint_into(model, base_path);
  return model;
}

}  // namespace man
