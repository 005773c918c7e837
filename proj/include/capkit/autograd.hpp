#pragma once

// Reverse-mode automatic differentiation over dense double tensors.
//
// Every op builds its output eagerly and, when any input requires a
// gradient, records a closure that pushes the output gradient back into its
// inputs. `backward(loss)` replays those closures in reverse topological
// order. Leaf parameters accumulate gradients across calls until
// `ParameterStore::zero_grad()`.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace capkit::ag {

using Shape = std::vector<int>;

std::size_t numel(const Shape& s);
std::string shape_str(const Shape& s);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  double* grad_data() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad.data();
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->value.size(); }
  const std::vector<double>& value() const { return node_->value; }
  std::vector<double>& mutable_value() { return node_->value; }
  const std::vector<double>& grad() const { return node_->grad; }
  std::vector<double>& mutable_grad() { return node_->grad; }
  double item() const { return node_->value.at(0); }
  bool requires_grad() const { return node_->requires_grad; }
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Shape shape, std::vector<double> values);
Var zeros(Shape shape);
Var parameter(Shape shape, std::vector<double> values);

/// Seeds d(loss)/d(loss) = 1 and propagates. `loss` must have one element.
void backward(const Var& loss);

bool grad_enabled();

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// --- elementwise -----------------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
/// a[..., n] + bias[n], broadcast over leading dims.
Var add_bias(const Var& a, const Var& bias);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var gelu(const Var& a);
Var exp(const Var& a);
/// Inputs must be positive; callers add an epsilon where zero can occur.
Var sqrt(const Var& a);
Var square(const Var& a);
/// Gradient is zero where the input lies outside [lo, hi].
Var clamp(const Var& a, double lo, double hi);

// --- reductions -------------------------------------------------------------
Var sum(const Var& a);
Var mean(const Var& a);
/// [m, n] -> [n]
Var mean_rows(const Var& a);
Var max_rows(const Var& a);

// --- linear algebra -----------------------------------------------------------
/// [m, k] x [k, n] -> [m, n]
Var matmul(const Var& a, const Var& b);
/// [m, k] x [n, k]^T -> [m, n]
Var matmul_bt(const Var& a, const Var& b);
/// x[m, in] W[in, out] + b[out]
Var linear(const Var& x, const Var& w, const Var& b);

// --- shape ------------------------------------------------------------------
Var reshape(const Var& a, Shape shape);
Var slice_cols(const Var& a, int c0, int c1);
Var slice_rows(const Var& a, int r0, int r1);
Var concat_cols(const std::vector<Var>& parts);
/// Flattens every part and concatenates into one vector.
Var concat(const std::vector<Var>& parts);
/// v[n] -> [m, n]
Var repeat_rows(const Var& v, int m);
/// table[V, d], ids -> [L, d]
Var embedding(const Var& table, std::span<const int> ids);

// --- sequence ops -------------------------------------------------------------
/// Row-wise softmax of scale * x[L, L] restricted to columns j <= i; zero above
/// the diagonal.
Var causal_softmax(const Var& x, double scale);
/// Row-wise layer normalisation of x[m, n] with gain/bias [n].
Var layernorm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);
/// sum_i w_i * -log(max(softmax(logits_i)[t_i], prob_floor)) for logits[L, V].
Var cross_entropy_sum(const Var& logits, std::span<const int> targets,
                      std::span<const double> weights, double prob_floor = 1e-7);

// --- convolution ------------------------------------------------------------
/// x[N, C, H, W] * w[O, C, kh, kw] + b[O] -> [N, O, Ho, Wo]
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
/// Same-padded temporal convolution: x[T, C] * w[O, C, k] + b[O] -> [T, O]
Var conv1d_time(const Var& x, const Var& w, const Var& b);
/// [N, C, H, W] -> [N, C, oh, ow]; H % oh == 0 and W % ow == 0.
Var avg_pool2d(const Var& x, int oh, int ow);
/// Nearest-neighbour 2x upsampling of [N, C, H, W].
Var upsample2x(const Var& x);

// --- parameters & optimiser ---------------------------------------------------

class ParameterStore {
 public:
  Var& add(const std::string& name, Shape shape, std::vector<double> values);
  Var& get(const std::string& name);
  const Var& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<std::pair<std::string, Var>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Var>>& entries() { return entries_; }
  std::size_t parameter_count() const;
  void zero_grad();
  /// Scales all gradients so their global L2 norm is at most max_norm.
  /// Returns the norm before clipping.
  double clip_grad_norm(double max_norm);

 private:
  std::vector<std::pair<std::string, Var>> entries_;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(ParameterStore& params, AdamOptions opts);
  void step();
  int steps() const { return t_; }

 private:
  ParameterStore& params_;
  AdamOptions opts_;
  std::vector<std::vector<double>> m_, v_;
  int t_ = 0;
};

}  // namespace capkit::ag
