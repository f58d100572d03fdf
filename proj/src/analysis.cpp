#include "man/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "man/io_util.hpp"
#include "man/rng.hpp"

#include <nlohmann/json.hpp>

namespace man {

AttnRecord capture_attention(const Seq2SeqModel& model,
                             const std::vector<std::vector<int>>& dataset,
                             const std::string& dataset_id) {
  AttnRecord record;
  record.dataset_id = dataset_id;
  record.enc_blocks = model.config().enc_layers;
  record.sentences.reserve(dataset.size());

  for (const std::vector<int>& src : dataset) {
    AttnCapture cap;
    model.encode(src, nullptr, &cap);

    SentenceAttn sent;
    sent.t_len = static_cast<int>(src.size());

    // head-average per (block, sub)
    std::map<std::pair<int, int>, CapturedMatrix> grouped;
    std::map<std::pair<int, int>, int> head_counts;
    for (const AttnCaptureEntry& e : cap.entries) {
      if (!e.encoder) continue;
      const auto key = std::make_pair(e.block, e.sub);
      auto it = grouped.find(key);
      if (it == grouped.end()) {
        CapturedMatrix m;
        m.block = e.block;
        m.sub = e.sub;
        m.kind = e.kind;
        m.t_len = e.scores.rows();
        m.mat.assign(e.scores.numel(), 0.0);
        it = grouped.emplace(key, std::move(m)).first;
      }
      for (std::size_t i = 0; i < e.scores.numel(); ++i)
        it->second.mat[i] += e.scores.data()[i];
      head_counts[key] += 1;
    }
    for (auto& [key, m] : grouped) {
      const double inv = 1.0 / head_counts[key];
      for (double& v : m.mat) v *= inv;
      sent.mats.push_back(std::move(m));
    }
    record.sentences.push_back(std::move(sent));
  }
  return record;
}

double locality_statistic(const AttnRecord& record, int w, int layer,
                          SublayerKind kind) {
  if (record.sentences.empty())
    throw std::invalid_argument("locality_statistic: empty record");
  if (w < 0) throw std::invalid_argument("locality_statistic: negative window");
  if (layer < 1 || layer > record.enc_blocks)
    throw std::invalid_argument("locality_statistic: layer " + std::to_string(layer) + " outside [1," + std::to_string(record.enc_blocks) + "]");

  double total = 0.0;
  for (const SentenceAttn& sent : record.sentences) {
    double sent_stat = 0.0;
    int matched = 0;
    for (const CapturedMatrix& m : sent.mats) {
      if (m.block != layer - 1 || m.kind != kind) continue;
      const int t_len = m.t_len;
      double mass = 0.0;
      for (int j = 0; j < t_len; ++j) {
        const int lo = std::max(0, j - w);
        const int hi = std::min(t_len - 1, j + w);
        for (int k = lo; k <= hi; ++k)
          mass += m.mat[static_cast<std::size_t>(j) * t_len + k];
      }
      sent_stat += mass / t_len;
      ++matched;
    }
    if (matched == 0)
      throw std::invalid_argument("locality_statistic: no " + sublayer_kind_name(kind) + " sublayer in layer " + std::to_string(layer));
    total += sent_stat / matched;
  }
  return total / static_cast<double>(record.sentences.size());
}

LocalityReport build_locality_report(const AttnRecord& record,
                                     const std::vector<int>& windows,
                                     const std::vector<int>& layers,
                                     const std::vector<SublayerKind>& kinds) {
  std::vector<SublayerKind> use_kinds = kinds;
  if (use_kinds.empty()) {
    std::set<int> seen;
    if (!record.sentences.empty())
      for (const CapturedMatrix& m : record.sentences.front().mats)
        seen.insert(static_cast<int>(m.kind));
    for (int k : seen) use_kinds.push_back(static_cast<SublayerKind>(k));
  }

  LocalityReport report;
  report.dataset_size = record.sentences.size();
  for (SublayerKind kind : use_kinds)
    for (int w : windows)
      for (int layer : layers)
        report.cells.push_back({kind, w, layer, 100.0 * locality_statistic(record, w, layer, kind)});
  return report;
}

std::string LocalityReport::csv_string() const {
  std::ostringstream out;
  out << "kind,w,layer,value_percent\n";
  for (const LocalityCell& c : cells)
    out << sublayer_kind_name(c.kind) << ',' << c.w << ',' << c.layer << ','
        << format_double(c.value_percent) << '\n';
  return out.str();
}

void LocalityReport::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << csv_string();
}

void LocalityReport::write_json(const std::string& path) const {
  nlohmann::json doc;
  doc["dataset_size"] = dataset_size;
  nlohmann::json cs = nlohmann::json::array();
  for (const LocalityCell& c : cells)
    cs.push_back({{"kind", sublayer_kind_name(c.kind)},
                  {"w", c.w},
                  {"layer", c.layer},
                  {"value_percent", c.value_percent}});
  doc["cells"] = std::move(cs);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << doc.dump(2) << '\n';
}

void dump_attention_csv(const AttnRecord& record, const std::string& prefix) {
  for (std::size_t i = 0; i < record.sentences.size(); ++i) {
    for (const CapturedMatrix& m : record.sentences[i].mats) {
      const std::string path = prefix + "sent" + std::to_string(i) + "_layer" +
                               std::to_string(m.block + 1) + "_" +
                               sublayer_kind_name(m.kind) + std::to_string(m.sub) + ".csv";
      Tensor t({m.t_len, m.t_len}, m.mat);
      write_matrix_csv(t, path);
    }
  }
}

// --- degeneracy verification --------------------------------------------------

namespace {

// Direct evaluation of multi-head self-attention (no masks) in plain scalar
// arithmetic; independent of the tensor/op path it is checked against.
template <typename S>
std::vector<S> reference_san(const std::vector<S>& h, int t_len, int d,
                             const std::vector<std::vector<S>>& wq,
                             const std::vector<std::vector<S>>& wk,
                             const std::vector<std::vector<S>>& wv,
                             const std::vector<S>& wh, int heads, int dk) {
  auto project = [&](const std::vector<S>& w) {
    std::vector<S> p(static_cast<std::size_t>(t_len) * dk, S(0));
    for (int t = 0; t < t_len; ++t)
      for (int j = 0; j < dk; ++j) {
        S acc = S(0);
        for (int c = 0; c < d; ++c)
          acc += h[static_cast<std::size_t>(t) * d + c] * w[static_cast<std::size_t>(c) * dk + j];
        p[static_cast<std::size_t>(t) * dk + j] = acc;
      }
    return p;
  };

  std::vector<S> concat(static_cast<std::size_t>(t_len) * heads * dk, S(0));
  const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(dk));
  for (int i = 0; i < heads; ++i) {
    const auto q = project(wq[static_cast<std::size_t>(i)]);
    const auto k = project(wk[static_cast<std::size_t>(i)]);
    const auto v = project(wv[static_cast<std::size_t>(i)]);
    for (int t = 0; t < t_len; ++t) {
      std::vector<S> logits(static_cast<std::size_t>(t_len), S(0));
      S rowmax = std::numeric_limits<S>::lowest();
      for (int s = 0; s < t_len; ++s) {
        S acc = S(0);
        for (int j = 0; j < dk; ++j)
          acc += q[static_cast<std::size_t>(t) * dk + j] * k[static_cast<std::size_t>(s) * dk + j];
        logits[static_cast<std::size_t>(s)] = acc * inv_sqrt;
        rowmax = std::max(rowmax, logits[static_cast<std::size_t>(s)]);
      }
      S z = S(0);
      for (int s = 0; s < t_len; ++s) {
        logits[static_cast<std::size_t>(s)] = std::exp(logits[static_cast<std::size_t>(s)] - rowmax);
        z += logits[static_cast<std::size_t>(s)];
      }
      for (int j = 0; j < dk; ++j) {
        S acc = S(0);
        for (int s = 0; s < t_len; ++s)
          acc += (logits[static_cast<std::size_t>(s)] / z) * v[static_cast<std::size_t>(s) * dk + j];
        concat[static_cast<std::size_t>(t) * heads * dk + static_cast<std::size_t>(i) * dk + j] = acc;
      }
    }
  }

  std::vector<S> out(static_cast<std::size_t>(t_len) * d, S(0));
  const int concat_dim = heads * dk;
  for (int t = 0; t < t_len; ++t)
    for (int j = 0; j < d; ++j) {
      S acc = S(0);
      for (int c = 0; c < concat_dim; ++c)
        acc += concat[static_cast<std::size_t>(t) * concat_dim + c] * wh[static_cast<std::size_t>(c) * d + j];
      out[static_cast<std::size_t>(t) * d + j] = acc;
    }
  return out;
}

// ReLU(H Wv) Wh in plain scalar arithmetic.
template <typename S>
std::vector<S> reference_ffn(const std::vector<S>& h, int t_len, int d,
                             const std::vector<S>& wv, int inner,
                             const std::vector<S>& wh) {
  std::vector<S> mid(static_cast<std::size_t>(t_len) * inner, S(0));
  for (int t = 0; t < t_len; ++t)
    for (int j = 0; j < inner; ++j) {
      S acc = S(0);
      for (int c = 0; c < d; ++c)
        acc += h[static_cast<std::size_t>(t) * d + c] * wv[static_cast<std::size_t>(c) * inner + j];
      mid[static_cast<std::size_t>(t) * inner + j] = acc > S(0) ? acc : S(0);
    }
  std::vector<S> out(static_cast<std::size_t>(t_len) * d, S(0));
  for (int t = 0; t < t_len; ++t)
    for (int j = 0; j < d; ++j) {
      S acc = S(0);
      for (int c = 0; c < inner; ++c)
        acc += mid[static_cast<std::size_t>(t) * inner + c] * wh[static_cast<std::size_t>(c) * d + j];
      out[static_cast<std::size_t>(t) * d + j] = acc;
    }
  return out;
}

template <typename S>
std::vector<S> random_values(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<S> out(n);
  for (S& v : out) v = static_cast<S>(rng.uniform(lo, hi));
  return out;
}

}  // namespace

DegeneracyReport verify_degeneracy(std::uint64_t seed, int draws,
                                   double tolerance, bool perturb_mask) {
  DegeneracyReport report;
  report.draws = draws;
  report.tolerance = tolerance;
  Rng rng(seed);

  for (int draw = 0; draw < draws; ++draw) {
    const int t_len = rng.uniform_int(2, 8);
    const int heads = rng.uniform_int(1, 4);
    const int dk = rng.uniform_int(1, 4);
    const int d = heads * dk;

    // --- SAN identity: all-ones mask, identity activation -------------------
    {
      ManLayerConfig cfg;
      cfg.model_dim = d;
      cfg.heads = heads;
      cfg.head_dim = dk;
      cfg.value_dim = dk;
      cfg.mask = MaskSpec::all_ones();
      ParamRegistry reg;
      Rng init(rng.next_u64());
      ManLayer layer(cfg, reg, "probe", init);

      Tensor h({t_len, d}, random_values<double>(static_cast<std::size_t>(t_len) * d, rng));
      std::vector<Tensor> masks = layer.build_masks(t_len, h);
      if (perturb_mask) {
        Tensor broken = masks[0].clone();
        broken.at(0, t_len - 1) = 0.999;
        masks[0] = broken;
      }
      Tensor man_out = layer.attention(h, masks);

      std::vector<std::vector<double>> wq, wk, wv;
      for (int i = 0; i < heads; ++i) {
        wq.push_back(layer.wq(i).values());
        wk.push_back(layer.wk(i).values());
        wv.push_back(layer.wv(i).values());
      }
      const std::vector<double> san = reference_san<double>(h.values(), t_len, d, wq, wk, wv, layer.wh().values(), heads, dk);

      double dev = 0.0;
      for (std::size_t i = 0; i < san.size(); ++i)
        dev = std::max(dev, std::abs(san[i] - man_out.data()[i]));
      if (dev > report.max_dev_san) {
        report.max_dev_san = dev;
        report.worst_draw_san = draw;
      }
      if (dev > tolerance) report.failed_draws.push_back(draw);
    }

    // --- FFN identity: identity mask, relu, one head -------------------------
    {
      const int inner = 2 * d;
      ManLayerConfig cfg;
      cfg.model_dim = d;
      cfg.heads = 1;
      cfg.head_dim = d;
      cfg.value_dim = inner;
      cfg.use_qk = false;
      cfg.activation = Activation::Relu;
      cfg.mask = MaskSpec::identity();
      ParamRegistry reg;
      Rng init(rng.next_u64());
      ManLayer layer(cfg, reg, "probe", init);

      Tensor h({t_len, d}, random_values<double>(static_cast<std::size_t>(t_len) * d, rng));
      Tensor man_out = layer.attention(h, layer.build_masks(t_len, h));
      const std::vector<double> ffn = reference_ffn<double>(h.values(), t_len, d, layer.wv(0).values(), inner, layer.wh().values());

      double dev = 0.0;
      for (std::size_t i = 0; i < ffn.size(); ++i)
        dev = std::max(dev, std::abs(ffn[i] - man_out.data()[i]));
      if (dev > report.max_dev_ffn) {
        report.max_dev_ffn = dev;
        report.worst_draw_ffn = draw;
      }
      if (dev > tolerance) report.failed_draws.push_back(draw);
    }
  }

  report.pass = report.failed_draws.empty();
  return report;
}

double degeneracy_deviation_f32(std::uint64_t seed, int draws) {
  Rng rng(seed);
  double max_dev = 0.0;
  for (int draw = 0; draw < draws; ++draw) {
    const int t_len = rng.uniform_int(2, 8);
    const int heads = rng.uniform_int(1, 4);
    const int dk = rng.uniform_int(1, 4);
    const int d = heads * dk;

    const auto h = random_values<float>(static_cast<std::size_t>(t_len) * d, rng);
    std::vector<std::vector<float>> wq, wk, wv;
    for (int i = 0; i < heads; ++i) {
      wq.push_back(random_values<float>(static_cast<std::size_t>(d) * dk, rng));
      wk.push_back(random_values<float>(static_cast<std::size_t>(d) * dk, rng));
      wv.push_back(random_values<float>(static_cast<std::size_t>(d) * dk, rng));
    }
    const auto wh = random_values<float>(static_cast<std::size_t>(heads * dk) * d, rng);

    // Promote the same float32 computation to float64 and compare: the gap
    // measures how tightly the identity holds at single precision.
    const auto f32 = reference_san<float>(h, t_len, d, wq, wk, wv, wh, heads, dk);
    std::vector<double> h64(h.begin(), h.end());
    std::vector<std::vector<double>> wq64, wk64, wv64;
    for (int i = 0; i < heads; ++i) {
      wq64.emplace_back(wq[static_cast<std::size_t>(i)].begin(), wq[static_cast<std::size_t>(i)].end());
      wk64.emplace_back(wk[static_cast<std::size_t>(i)].begin(), wk[static_cast<std::size_t>(i)].end());
      wv64.emplace_back(wv[static_cast<std::size_t>(i)].begin(), wv[static_cast<std::size_t>(i)].end());
    }
    std::vector<double> wh64(wh.begin(), wh.end());
    const auto f64 = reference_san<double>(h64, t_len, d, wq64, wk64, wv64, wh64, heads, dk);

    for (std::size_t i = 0; i < f64.size(); ++i)
      max_dev = std::max(max_dev, std::abs(f64[i] - static_cast<double>(f32[i])));
  }
  return max_dev;
}

BoundCheck distance_bound_check(const Tensor& a, const Tensor& b,
                                const Tensor& c, const Tensor& wq,
                                const Tensor& wk) {
  if (a.rank() != 1 || b.rank() != 1 || c.rank() != 1)
    throw std::invalid_argument("distance_bound_check: a, b, c must be vectors");
  const int d = a.dim(0);
  if (b.dim(0) != d || c.dim(0) != d)
    throw std::invalid_argument("distance_bound_check: vector lengths differ");
  if (wq.rank() != 2 || wk.rank() != 2 || wq.rows() != d || wk.rows() != d || wq.cols() != wk.cols())
    throw std::invalid_argument("distance_bound_check: projections must be [" + std::to_string(d) + " x dk]");
  const int dk = wq.cols();

  auto project = [&](const Tensor& vec, const Tensor& w) {
    std::vector<double> out(static_cast<std::size_t>(dk), 0.0);
    for (int j = 0; j < dk; ++j) {
      double acc = 0.0;
      for (int i = 0; i < d; ++i) acc += vec.at(i) * w.at(i, j);
      out[static_cast<std::size_t>(j)] = acc;
    }
    return out;
  };
  auto sq_dist = [&](const std::vector<double>& x, const std::vector<double>& y) {
    double acc = 0.0;
    for (int j = 0; j < dk; ++j) {
      const double dv = x[static_cast<std::size_t>(j)] - y[static_cast<std::size_t>(j)];
      acc += dv * dv;
    }
    return acc;
  };

  const auto a_q = project(a, wq);
  const auto b_q = project(b, wq);
  const auto b_k = project(b, wk);
  const auto c_k = project(c, wk);

  BoundCheck r;
  r.lhs = sq_dist(a_q, c_k);
  r.rhs = 3.0 * (sq_dist(a_q, b_k) + sq_dist(b_k, b_q) + sq_dist(b_q, c_k));
  r.holds = r.lhs <= r.rhs;
  return r;
}

}  // namespace man
