#include "man/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "man/rng.hpp"

namespace man {

namespace {

std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor: non-positive dimension in " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

thread_local GradTape* g_active_tape = nullptr;

// out[m x n] += or = a[m x k] * b[k x n]
void mm_nn(const double* a, const double* b, double* out, int m, int k, int n,
           bool accumulate) {
  if (!accumulate) std::fill(out, out + static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    double* orow = out + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

// out[m x n] += a[m x k] * b[n x k]^T
void mm_nt(const double* a, const double* b, double* out, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    double* orow = out + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* brow = b + static_cast<std::size_t>(j) * k;
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      orow[j] += acc;
    }
  }
}

// out[m x n] += a[k x m]^T * b[k x n]
void mm_tn(const double* a, const double* b, double* out, int m, int k, int n) {
  for (int p = 0; p < k; ++p) {
    const double* arow = a + static_cast<std::size_t>(p) * m;
    const double* brow = b + static_cast<std::size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* orow = out + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2)
    throw std::invalid_argument(std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// --- Tensor ----------------------------------------------------------------

Tensor::Tensor(std::vector<int> shape, bool requires_grad)
    : d_(std::make_shared<Storage>()) {
  d_->values.assign(shape_numel(shape), 0.0);
  d_->shape = std::move(shape);
  d_->requires_grad = requires_grad;
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values,
               bool requires_grad)
    : d_(std::make_shared<Storage>()) {
  if (shape_numel(shape) != values.size())
    throw std::invalid_argument("tensor: " + shape_str(shape) + " does not hold " + std::to_string(values.size()) + " values");
  d_->shape = std::move(shape);
  d_->values = std::move(values);
  d_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  return Tensor(std::move(shape), requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  std::fill(t.values().begin(), t.values().end(), value);
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

const std::vector<int>& Tensor::shape() const { return d_->shape; }
int Tensor::rank() const { return static_cast<int>(d_->shape.size()); }
int Tensor::dim(int i) const { return d_->shape.at(static_cast<std::size_t>(i)); }
std::size_t Tensor::numel() const { return d_->values.size(); }

int Tensor::rows() const {
  require_rank2(*this, "rows");
  return d_->shape[0];
}

int Tensor::cols() const {
  require_rank2(*this, "cols");
  return d_->shape[1];
}

std::vector<double>& Tensor::values() { return d_->values; }
const std::vector<double>& Tensor::values() const { return d_->values; }
double* Tensor::data() { return d_->values.data(); }
const double* Tensor::data() const { return d_->values.data(); }

double& Tensor::at(int i) { return d_->values.at(static_cast<std::size_t>(i)); }
double Tensor::at(int i) const { return d_->values.at(static_cast<std::size_t>(i)); }

double& Tensor::at(int r, int c) {
  require_rank2(*this, "at");
  return d_->values.at(static_cast<std::size_t>(r) * d_->shape[1] + c);
}

double Tensor::at(int r, int c) const {
  require_rank2(*this, "at");
  return d_->values.at(static_cast<std::size_t>(r) * d_->shape[1] + c);
}

double Tensor::item() const {
  if (numel() != 1) throw std::logic_error("item: tensor " + shape_str(shape()) + " is not scalar");
  return d_->values[0];
}

bool Tensor::requires_grad() const { return d_ && d_->requires_grad; }
void Tensor::set_requires_grad(bool v) { d_->requires_grad = v; }
bool Tensor::has_grad() const { return d_ && !d_->grad.empty(); }

std::vector<double>& Tensor::grad() {
  if (d_->grad.empty()) d_->grad.assign(d_->values.size(), 0.0);
  return d_->grad;
}

const std::vector<double>& Tensor::grad_view() const {
  if (d_->grad.empty()) throw std::logic_error("grad_view: no gradient present");
  return d_->grad;
}

void Tensor::zero_grad() {
  if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  Tensor t;
  t.d_ = std::make_shared<Storage>(*d_);
  return t;
}

// --- GradTape ---------------------------------------------------------------

GradTape::GradTape() : prev_(g_active_tape) { g_active_tape = this; }

GradTape::~GradTape() { g_active_tape = prev_; }

GradTape* GradTape::active() { return g_active_tape; }
bool GradTape::recording() { return g_active_tape != nullptr; }

void GradTape::record(std::function<void()> backward_fn) {
  ops_.push_back(std::move(backward_fn));
}

void GradTape::run_backward() {
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

bool track_grad(std::initializer_list<const Tensor*> inputs) {
  if (!GradTape::recording()) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw std::logic_error("backward: loss must be scalar, got " + shape_str(loss.shape()));
  GradTape* tape = GradTape::active();
  if (!tape) throw std::logic_error("backward: no active GradTape");
  Tensor l = loss;
  l.grad()[0] += 1.0;
  tape->run_backward();
}

// --- ops --------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: inner dimensions differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const int m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out({m, n});
  mm_nn(a.data(), b.data(), out.data(), m, k, n, /*accumulate=*/false);

  if (track_grad({&a, &b})) {
    out.set_requires_grad(true);
    Tensor ta = a, tb = b, to = out;
    GradTape::active()->record([ta, tb, to, m, k, n]() mutable {
      if (!to.has_grad()) return;
      const double* g = to.grad_view().data();
      if (ta.requires_grad()) mm_nt(g, tb.data(), ta.grad().data(), m, n, k);
      if (tb.requires_grad()) mm_tn(ta.data(), g, tb.grad().data(), k, m, n);
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const int m = a.rows(), n = a.cols();
  Tensor out({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);

  if (track_grad({&a})) {
    out.set_requires_grad(true);
    Tensor ta = a, to = out;
    GradTape::active()->record([ta, to, m, n]() mutable {
      if (!to.has_grad() || !ta.requires_grad()) return;
      const auto& g = to.grad_view();
      auto& ga = ta.grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          ga[static_cast<std::size_t>(i) * n + j] += g[static_cast<std::size_t>(j) * m + i];
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];

  if (track_grad({&a, &b})) {
    out.set_requires_grad(true);
    Tensor ta = a, tb = b, to = out;
    GradTape::active()->record([ta, tb, to, n]() mutable {
      if (!to.has_grad()) return;
      const auto& g = to.grad_view();
      if (ta.requires_grad()) {
        auto& ga = ta.grad();
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (tb.requires_grad()) {
        auto& gb = tb.grad();
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];

  if (track_grad({&a, &b})) {
    out.set_requires_grad(true);
    Tensor ta = a, tb = b, to = out;
    GradTape::active()->record([ta, tb, to, n]() mutable {
      if (!to.has_grad()) return;
      const auto& g = to.grad_view();
      if (ta.requires_grad()) {
        auto& ga = ta.grad();
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * tb.data()[i];
      }
      if (tb.requires_grad()) {
        auto& gb = tb.grad();
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * ta.data()[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out(a.shape());
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * c;

  if (track_grad({&a})) {
    out.set_requires_grad(true);
    Tensor ta = a, to = out;
    GradTape::active()->record([ta, to, c, n]() mutable {
      if (!to.has_grad() || !ta.requires_grad()) return;
      const auto& g = to.grad_view();
      auto& ga = ta.grad();
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * c;
    });
  }
  return out;
}

Tensor relu(const Tensor& a) {
  Tensor out(a.shape());
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;

  if (track_grad({&a})) {
    out.set_requires_grad(true);
    Tensor ta = a, to = out;
    // relu'(0) := 0
    GradTape::active()->record([ta, to, n]() mutable {
      if (!to.has_grad() || !ta.requires_grad()) return;
      const auto& g = to.grad_view();
      auto& ga = ta.grad();
      for (std::size_t i = 0; i < n; ++i)
        if (ta.data()[i] > 0.0) ga[i] += g[i];
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& a) {
  Tensor out(a.shape());
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = a.data()[i];
    // Branch keeps exp() argument non-positive for stability on both tails.
    out.data()[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                             : std::exp(x) / (1.0 + std::exp(x));
  }

  if (track_grad({&a})) {
    out.set_requires_grad(true);
    Tensor ta = a, to = out;
    GradTape::active()->record([ta, to, n]() mutable {
      if (!to.has_grad() || !ta.requires_grad()) return;
      const auto& g = to.grad_view();
      auto& ga = ta.grad();
      for (std::size_t i = 0; i < n; ++i) {
        const double s = to.data()[i];
        ga[i] += g[i] * s * (1.0 - s);
      }
    });
  }
  return out;
}

Tensor masked_softmax(const Tensor& logits, const Tensor& mask) {
  require_rank2(logits, "masked_softmax");
  require_same_shape(logits, mask, "masked_softmax");
  const int r = logits.rows(), c = logits.cols();
  Tensor out({r, c});
  // ratio[i][j] = exp(logits[i][j] - rowmax_i) / Z_i, kept for the backward
  // pass (d out / d mask needs it).
  Tensor ratio({r, c});

  for (int i = 0; i < r; ++i) {
    const double* lrow = logits.data() + static_cast<std::size_t>(i) * c;
    const double* mrow = mask.data() + static_cast<std::size_t>(i) * c;

    double mask_sum = 0.0;
    for (int j = 0; j < c; ++j) mask_sum += mrow[j];
    if (!(mask_sum >= 1e-9))
      throw std::domain_error("masked_softmax: degenerate mask row " + std::to_string(i) + " (row sum " + std::to_string(mask_sum) + " < 1e-9)");

    // Row max over supported entries; any row shift cancels in the ratio.
    double rowmax = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < c; ++j)
      if (mrow[j] > 0.0 && lrow[j] > rowmax) rowmax = lrow[j];

    double z = 0.0;
    double* rrow = ratio.data() + static_cast<std::size_t>(i) * c;
    for (int j = 0; j < c; ++j) {
      rrow[j] = std::exp(lrow[j] - rowmax);
      z += mrow[j] * rrow[j];
    }
    if (!(z > 0.0))
      throw std::domain_error("masked_softmax: degenerate mask row " + std::to_string(i) + " (masked exp sum is zero)");

    double* orow = out.data() + static_cast<std::size_t>(i) * c;
    for (int j = 0; j < c; ++j) {
      rrow[j] /= z;
      orow[j] = mrow[j] * rrow[j];
    }
  }

  if (track_grad({&logits, &mask})) {
    out.set_requires_grad(true);
    Tensor tl = logits, tm = mask, to = out, tr = ratio;
    GradTape::active()->record([tl, tm, to, tr, r, c]() mutable {
      if (!to.has_grad()) return;
      const auto& g = to.grad_view();
      for (int i = 0; i < r; ++i) {
        const std::size_t base = static_cast<std::size_t>(i) * c;
        double srow = 0.0;
        for (int j = 0; j < c; ++j) srow += g[base + j] * to.data()[base + j];
        if (tl.requires_grad()) {
          auto& gl = tl.grad();
          for (int j = 0; j < c; ++j)
            gl[base + j] += to.data()[base + j] * (g[base + j] - srow);
        }
        if (tm.requires_grad()) {
          auto& gm = tm.grad();
          for (int j = 0; j < c; ++j)
            gm[base + j] += tr.data()[base + j] * (g[base + j] - srow);
        }
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  require_rank2(x, "layer_norm");
  if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be positive");
  const int r = x.rows(), d = x.cols();
  if (gain.rank() != 1 || gain.dim(0) != d || bias.rank() != 1 || bias.dim(0) != d)
    throw std::invalid_argument("layer_norm: gain/bias must be [" + std::to_string(d) + "], got " + shape_str(gain.shape()) + " and " + shape_str(bias.shape()));

  Tensor out({r, d});
  Tensor xhat({r, d});
  std::vector<double> inv_std(static_cast<std::size_t>(r));

  for (int i = 0; i < r; ++i) {
    const double* xrow = x.data() + static_cast<std::size_t>(i) * d;
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += xrow[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double dv = xrow[j] - mean;
      var += dv * dv;
    }
    var /= d;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(i)] = is;
    double* hrow = xhat.data() + static_cast<std::size_t>(i) * d;
    double* orow = out.data() + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) {
      hrow[j] = (xrow[j] - mean) * is;
      orow[j] = hrow[j] * gain.data()[j] + bias.data()[j];
    }
  }

  if (track_grad({&x, &gain, &bias})) {
    out.set_requires_grad(true);
    Tensor tx = x, tg = gain, tb = bias, to = out, th = xhat;
    auto istd = std::make_shared<std::vector<double>>(std::move(inv_std));
    GradTape::active()->record([tx, tg, tb, to, th, istd, r, d]() mutable {
      if (!to.has_grad()) return;
      const auto& g = to.grad_view();
      for (int i = 0; i < r; ++i) {
        const std::size_t base = static_cast<std::size_t>(i) * d;
        const double is = (*istd)[static_cast<std::size_t>(i)];
        if (tg.requires_grad()) {
          auto& gg = tg.grad();
          for (int j = 0; j < d; ++j) gg[j] += g[base + j] * th.data()[base + j];
        }
        if (tb.requires_grad()) {
          auto& gb = tb.grad();
          for (int j = 0; j < d; ++j) gb[j] += g[base + j];
        }
        if (tx.requires_grad()) {
          // dxhat = g * gain; dx = is * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
          double mean_dh = 0.0, mean_dh_h = 0.0;
          for (int j = 0; j < d; ++j) {
            const double dh = g[base + j] * tg.data()[j];
            mean_dh += dh;
            mean_dh_h += dh * th.data()[base + j];
          }
          mean_dh /= d;
          mean_dh_h /= d;
          auto& gx = tx.grad();
          for (int j = 0; j < d; ++j) {
            const double dh = g[base + j] * tg.data()[j];
            gx[base + j] += is * (dh - mean_dh - th.data()[base + j] * mean_dh_h);
          }
        }
      }
    });
  }
  return out;
}

Tensor cross_entropy_label_smoothed(const Tensor& logits,
                                    const std::vector<int>& targets,
                                    double smoothing) {
  require_rank2(logits, "cross_entropy");
  const int t_len = logits.rows(), v = logits.cols();
  if (static_cast<int>(targets.size()) != t_len)
    throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(t_len) + " rows");
  if (smoothing < 0.0 || smoothing >= 1.0)
    throw std::invalid_argument("cross_entropy: smoothing must be in [0,1)");
  if (smoothing > 0.0 && v < 2)
    throw std::invalid_argument("cross_entropy: smoothing requires vocab >= 2");
  for (int i = 0; i < t_len; ++i)
    if (targets[i] < 0 || targets[i] >= v)
      throw std::out_of_range("cross_entropy: target " + std::to_string(targets[i]) + " at position " + std::to_string(i) + " outside vocab of size " + std::to_string(v));

  const double off = v > 1 ? smoothing / (v - 1) : 0.0;
  const double on = 1.0 - smoothing;

  // log-softmax rows, reused in the backward closure as softmax.
  Tensor probs({t_len, v});
  double total = 0.0;
  for (int i = 0; i < t_len; ++i) {
    const double* lrow = logits.data() + static_cast<std::size_t>(i) * v;
    double rowmax = lrow[0];
    for (int j = 1; j < v; ++j) rowmax = std::max(rowmax, lrow[j]);
    double z = 0.0;
    for (int j = 0; j < v; ++j) z += std::exp(lrow[j] - rowmax);
    const double logz = std::log(z) + rowmax;
    double row_loss = 0.0;
    double* prow = probs.data() + static_cast<std::size_t>(i) * v;
    for (int j = 0; j < v; ++j) {
      const double logp = lrow[j] - logz;
      prow[j] = std::exp(logp);
      const double q = j == targets[i] ? on : off;
      if (q != 0.0) row_loss -= q * logp;
    }
    total += row_loss;
  }
  Tensor out = Tensor::scalar(total / t_len);

  if (track_grad({&logits})) {
    out.set_requires_grad(true);
    Tensor tl = logits, to = out, tp = probs;
    auto tgt = std::make_shared<std::vector<int>>(targets);
    GradTape::active()->record([tl, to, tp, tgt, t_len, v, on, off]() mutable {
      if (!to.has_grad() || !tl.requires_grad()) return;
      const double g = to.grad_view()[0] / t_len;
      auto& gl = tl.grad();
      for (int i = 0; i < t_len; ++i) {
        const std::size_t base = static_cast<std::size_t>(i) * v;
        for (int j = 0; j < v; ++j) {
          const double q = j == (*tgt)[i] ? on : off;
          gl[base + j] += g * (tp.data()[base + j] - q);
        }
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) total += a.data()[i];
  Tensor out = Tensor::scalar(total);

  if (track_grad({&a})) {
    out.set_requires_grad(true);
    Tensor ta = a, to = out;
    GradTape::active()->record([ta, to]() mutable {
      if (!to.has_grad() || !ta.requires_grad()) return;
      const double g = to.grad_view()[0];
      auto& ga = ta.grad();
      for (std::size_t i = 0; i < ta.numel(); ++i) ga[i] += g;
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  const int r = parts[0].rows();
  int total_cols = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != 2 || p.rows() != r)
      throw std::invalid_argument("concat_cols: incompatible part " + shape_str(p.shape()));
    total_cols += p.cols();
  }
  Tensor out({r, total_cols});
  int col0 = 0;
  for (const Tensor& p : parts) {
    const int pc = p.cols();
    for (int i = 0; i < r; ++i)
      std::copy_n(p.data() + static_cast<std::size_t>(i) * pc, pc,
                  out.data() + static_cast<std::size_t>(i) * total_cols + col0);
    col0 += pc;
  }

  bool needs = false;
  for (const Tensor& p : parts)
    if (p.requires_grad()) needs = true;
  if (needs && GradTape::recording()) {
    out.set_requires_grad(true);
    Tensor to = out;
    std::vector<Tensor> tp = parts;
    GradTape::active()->record([tp, to, r, total_cols]() mutable {
      if (!to.has_grad()) return;
      const auto& g = to.grad_view();
      int col0 = 0;
      for (Tensor& p : tp) {
        const int pc = p.cols();
        if (p.requires_grad()) {
          auto& gp = p.grad();
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < pc; ++j)
              gp[static_cast<std::size_t>(i) * pc + j] += g[static_cast<std::size_t>(i) * total_cols + col0 + j];
        }
        col0 += pc;
      }
    });
  }
  return out;
}

Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids) {
  require_rank2(table, "embedding_rows");
  const int v = table.rows(), d = table.cols();
  const int t_len = static_cast<int>(ids.size());
  if (t_len == 0) throw std::invalid_argument("embedding_rows: empty id sequence");
  for (int i = 0; i < t_len; ++i)
    if (ids[i] < 0 || ids[i] >= v)
      throw std::out_of_range("embedding_rows: token " + std::to_string(ids[i]) + " at position " + std::to_string(i) + " outside vocab of size " + std::to_string(v));

  Tensor out({t_len, d});
  for (int i = 0; i < t_len; ++i)
    std::copy_n(table.data() + static_cast<std::size_t>(ids[i]) * d, d,
                out.data() + static_cast<std::size_t>(i) * d);

  if (track_grad({&table})) {
    out.set_requires_grad(true);
    Tensor tt = table, to = out;
    auto idv = std::make_shared<std::vector<int>>(ids);
    GradTape::active()->record([tt, to, idv, t_len, d]() mutable {
      if (!to.has_grad() || !tt.requires_grad()) return;
      const auto& g = to.grad_view();
      auto& gt = tt.grad();
      for (int i = 0; i < t_len; ++i) {
        const std::size_t src = static_cast<std::size_t>(i) * d;
        const std::size_t dst = static_cast<std::size_t>((*idv)[i]) * d;
        for (int j = 0; j < d; ++j) gt[dst + j] += g[src + j];
      }
    });
  }
  return out;
}

Tensor dropout(const Tensor& a, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw std::invalid_argument("dropout: rate must be in [0,1)");
  if (rate == 0.0) return a;
  const std::size_t n = a.numel();
  const double keep = 1.0 - rate;
  auto kept = std::make_shared<std::vector<unsigned char>>(n);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const bool k = rng.uniform() >= rate;
    (*kept)[i] = k;
    out.data()[i] = k ? a.data()[i] / keep : 0.0;
  }

  if (track_grad({&a})) {
    out.set_requires_grad(true);
    Tensor ta = a, to = out;
    GradTape::active()->record([ta, to, kept, keep, n]() mutable {
      if (!to.has_grad() || !ta.requires_grad()) return;
      const auto& g = to.grad_view();
      auto& ga = ta.grad();
      for (std::size_t i = 0; i < n; ++i)
        if ((*kept)[i]) ga[i] += g[i] / keep;
    });
  }
  return out;
}

Tensor relative_bias_matrix(const Tensor& q, const Tensor& table,
                            const Tensor& u, int head, int radius, int t_len) {
  if (q.rank() != 2 || q.cols() != 1 || q.rows() != t_len)
    throw std::invalid_argument("relative_bias_matrix: q must be [" + std::to_string(t_len) + "x1], got " + shape_str(q.shape()));
  if (radius < 0) throw std::invalid_argument("relative_bias_matrix: negative radius");
  if (table.rank() != 1 || table.dim(0) != 2 * radius + 1)
    throw std::invalid_argument("relative_bias_matrix: table must be [" + std::to_string(2 * radius + 1) + "], got " + shape_str(table.shape()));
  if (u.rank() != 1 || head < 0 || head >= u.dim(0))
    throw std::invalid_argument("relative_bias_matrix: head " + std::to_string(head) + " outside " + shape_str(u.shape()));

  const double uh = u.data()[head];
  Tensor out({t_len, t_len});
  for (int t = 0; t < t_len; ++t) {
    const double qt = q.data()[t];
    double* orow = out.data() + static_cast<std::size_t>(t) * t_len;
    for (int s = 0; s < t_len; ++s) {
      const int off = std::clamp(t - s, -radius, radius);
      orow[s] = qt + table.data()[off + radius] + uh;
    }
  }

  if (track_grad({&q, &table, &u})) {
    out.set_requires_grad(true);
    Tensor tq = q, tt = table, tu = u, to = out;
    GradTape::active()->record([tq, tt, tu, to, head, radius, t_len]() mutable {
      if (!to.has_grad()) return;
      const auto& g = to.grad_view();
      for (int t = 0; t < t_len; ++t) {
        const std::size_t base = static_cast<std::size_t>(t) * t_len;
        double row_sum = 0.0;
        for (int s = 0; s < t_len; ++s) {
          const double gv = g[base + s];
          row_sum += gv;
          if (tt.requires_grad()) {
            const int off = std::clamp(t - s, -radius, radius);
            tt.grad()[static_cast<std::size_t>(off + radius)] += gv;
          }
        }
        if (tq.requires_grad()) tq.grad()[static_cast<std::size_t>(t)] += row_sum;
        if (tu.requires_grad()) tu.grad()[static_cast<std::size_t>(head)] += row_sum;
      }
    });
  }
  return out;
}

}  // namespace man
