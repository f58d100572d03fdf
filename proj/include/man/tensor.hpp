#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace man {

class Rng;

// Dense row-major float64 tensor. Tensor objects are cheap handles sharing
// storage; clone() makes a deep copy. Gradient buffers are allocated lazily
// the first time something accumulates into them.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, bool requires_grad = false);
  Tensor(std::vector<int> shape, std::vector<double> values,
         bool requires_grad = false);

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(d_); }
  const std::vector<int>& shape() const;
  int rank() const;
  int dim(int i) const;
  std::size_t numel() const;
  // Rank-2 accessors.
  int rows() const;
  int cols() const;

  std::vector<double>& values();
  const std::vector<double>& values() const;
  double* data();
  const double* data() const;

  double& at(int i);
  double at(int i) const;
  double& at(int r, int c);
  double at(int r, int c) const;
  double item() const;  // scalar tensors only

  bool requires_grad() const;
  void set_requires_grad(bool v);
  bool has_grad() const;
  std::vector<double>& grad();  // allocates zero-filled on first use
  const std::vector<double>& grad_view() const;  // throws if absent
  void zero_grad();

  Tensor clone() const;

  // Stable identity of the underlying storage.
  const void* id() const { return d_.get(); }

 private:
  struct Storage {
    std::vector<int> shape;
    std::vector<double> values;
    bool requires_grad = false;
    std::vector<double> grad;  // empty until first accumulation
  };
  std::shared_ptr<Storage> d_;
};

std::string shape_str(const std::vector<int>& shape);

// Reverse-mode tape. Constructing a GradTape makes it the active tape for
// the current thread (nesting restores the previous one on destruction).
// Ops record backward closures while a tape is active and at least one
// input requires gradients; backward() replays them in exact reverse
// recording order, accumulating additively into input grads.
class GradTape {
 public:
  GradTape();
  ~GradTape();
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape* active();
  static bool recording();

  void record(std::function<void()> backward_fn);
  std::size_t size() const { return ops_.size(); }

  void run_backward();

 private:
  std::vector<std::function<void()>> ops_;
  GradTape* prev_ = nullptr;
};

// True when a tape is active and any input requires grad; callers use it to
// decide whether the output participates in the graph.
bool track_grad(std::initializer_list<const Tensor*> inputs);

// --- core ops -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

// Row-normalized mask attention scores: out[i][j] =
//   mask[i][j] * exp(logits[i][j] - rowmax_i) /
//   sum_k mask[i][k] * exp(logits[i][k] - rowmax_i)
// The row max is taken over entries with nonzero mask, so hard 0/1 masks
// cannot force an underflowing denominator. A mask row whose sum is below
// 1e-9 is rejected.
Tensor masked_softmax(const Tensor& logits, const Tensor& mask);

// Per-row standardization followed by elementwise affine (gain, bias along
// the feature axis). Population variance, stabilized by eps.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

// Mean over rows of -sum_v q_v log softmax(logits_row)_v, with q assigning
// (1 - smoothing) to the target class and smoothing/(V-1) to the rest.
Tensor cross_entropy_label_smoothed(const Tensor& logits,
                                    const std::vector<int>& targets,
                                    double smoothing);

Tensor sum(const Tensor& a);
Tensor concat_cols(const std::vector<Tensor>& parts);

// Gathers rows of `table` by token id; backward scatters into table rows.
Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids);

// Inverted dropout: kept entries scaled by 1/(1-rate). rate == 0 is the
// identity. Deterministic given the rng state.
Tensor dropout(const Tensor& a, double rate, Rng& rng);

// Relative-position bias matrix used by the dynamic mask:
//   out[t][s] = q[t] + table[clip(t - s, -radius, radius) + radius] + u[head]
// q is [T x 1], table is [2*radius+1], u is a per-head parameter vector.
Tensor relative_bias_matrix(const Tensor& q, const Tensor& table,
                            const Tensor& u, int head, int radius, int t_len);

// Seeds d(loss)/d(loss) = 1 and replays the active tape backwards. loss
// must be scalar and must have been produced under the active tape.
void backward(const Tensor& loss);

}  // namespace man
