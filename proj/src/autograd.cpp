#include "capkit/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include <Eigen/Core>

#include "capkit/error.hpp"

namespace capkit::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using MapM = Eigen::Map<RowMat>;

thread_local bool g_grad_enabled = true;

std::shared_ptr<Node> make_node(Shape shape, std::vector<double> value) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  return n;
}

// Creates the result node; records parents and the backward closure only
// when some parent needs a gradient.
Var finish(std::shared_ptr<Node> out, std::initializer_list<Var> parents,
           std::function<void(Node&)> bw) {
  if (g_grad_enabled) {
    bool needs = false;
    for (const auto& p : parents) needs = needs || p.requires_grad();
    if (needs) {
      out->requires_grad = true;
      for (const auto& p : parents) out->parents.push_back(p.ptr());
      out->backward = std::move(bw);
    }
  }
  return Var(std::move(out));
}

Var finish_many(std::shared_ptr<Node> out, const std::vector<Var>& parents,
                std::function<void(Node&)> bw) {
  if (g_grad_enabled) {
    bool needs = false;
    for (const auto& p : parents) needs = needs || p.requires_grad();
    if (needs) {
      out->requires_grad = true;
      for (const auto& p : parents) out->parents.push_back(p.ptr());
      out->backward = std::move(bw);
    }
  }
  return Var(std::move(out));
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  CAPKIT_CHECK(a.shape() == b.shape(), "shape_mismatch",
               std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void check_rank(const Var& a, std::size_t rank, const char* op) {
  CAPKIT_CHECK(a.shape().size() == rank, "shape_mismatch",
               std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                   shape_str(a.shape()));
}

template <typename Fwd, typename Deriv>
Var unary(const Var& a, Fwd fwd, Deriv deriv) {
  std::vector<double> v(a.size());
  const auto& x = a.value();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = fwd(x[i]);
  auto out = make_node(a.shape(), std::move(v));
  Node* pa = a.node();
  return finish(out, {a}, [pa, deriv](Node& self) {
    if (!pa->requires_grad) return;
    double* g = pa->grad_data();
    for (std::size_t i = 0; i < self.value.size(); ++i) {
      g[i] += self.grad[i] * deriv(pa->value[i], self.value[i]);
    }
  });
}

}  // namespace

std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

Var constant(Shape shape, std::vector<double> values) {
  CAPKIT_CHECK(numel(shape) == values.size(), "shape_mismatch",
               "constant: " + shape_str(shape) + " needs " + std::to_string(numel(shape)) +
                   " values, got " + std::to_string(values.size()));
  return Var(make_node(std::move(shape), std::move(values)));
}

Var zeros(Shape shape) {
  const auto n = numel(shape);
  return constant(std::move(shape), std::vector<double>(n, 0.0));
}

Var parameter(Shape shape, std::vector<double> values) {
  Var v = constant(std::move(shape), std::move(values));
  v.node()->requires_grad = true;
  return v;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Var& loss) {
  CAPKIT_CHECK(loss.size() == 1, "shape_mismatch", "backward: loss must be a scalar");
  if (!loss.requires_grad()) return;
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack = {{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  loss.node()->grad_data()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

// --- elementwise -----------------------------------------------------------

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] + b.value()[i];
  Node* pa = a.node();
  Node* pb = b.node();
  return finish(make_node(a.shape(), std::move(v)), {a, b}, [pa, pb](Node& self) {
    for (Node* p : {pa, pb}) {
      if (!p->requires_grad) continue;
      double* g = p->grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] - b.value()[i];
  Node* pa = a.node();
  Node* pb = b.node();
  return finish(make_node(a.shape(), std::move(v)), {a, b}, [pa, pb](Node& self) {
    if (pa->requires_grad) {
      double* g = pa->grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      double* g = pb->grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] * b.value()[i];
  Node* pa = a.node();
  Node* pb = b.node();
  return finish(make_node(a.shape(), std::move(v)), {a, b}, [pa, pb](Node& self) {
    if (pa->requires_grad) {
      double* g = pa->grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      double* g = pb->grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * pa->value[i];
    }
  });
}

Var scale(const Var& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var add_bias(const Var& a, const Var& bias) {
  check_rank(bias, 1, "add_bias");
  const std::size_t n = bias.size();
  CAPKIT_CHECK(!a.shape().empty() && static_cast<std::size_t>(a.shape().back()) == n, "shape_mismatch",
               "add_bias: " + shape_str(a.shape()) + " + " + shape_str(bias.shape()));
  std::vector<double> v = a.value();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += bias.value()[i % n];
  Node* pa = a.node();
  Node* pb = bias.node();
  return finish(make_node(a.shape(), std::move(v)), {a, bias}, [pa, pb, n](Node& self) {
    if (pa->requires_grad) {
      double* g = pa->grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      double* g = pb->grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % n] += self.grad[i];
    }
  });
}

Var relu(const Var& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(const Var& a) {
  return unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
               [](double, double y) { return y * (1.0 - y); });
}

Var gelu(const Var& a) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  return unary(
      a,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x))); },
      [](double x, double) {
        const double u = k * (x + 0.044715 * x * x * x);
        const double t = std::tanh(u);
        const double du = k * (1.0 + 3.0 * 0.044715 * x * x);
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
      });
}

Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var sqrt(const Var& a) {
  return unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var clamp(const Var& a, double lo, double hi) {
  return unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// --- reductions -------------------------------------------------------------

Var sum(const Var& a) {
  double s = 0.0;
  for (double x : a.value()) s += x;
  Node* pa = a.node();
  return finish(make_node({1}, {s}), {a}, [pa](Node& self) {
    double* g = pa->grad_data();
    for (std::size_t i = 0; i < pa->value.size(); ++i) g[i] += self.grad[0];
  });
}

Var mean(const Var& a) {
  CAPKIT_CHECK(a.size() > 0, "shape_mismatch", "mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Var mean_rows(const Var& a) {
  check_rank(a, 2, "mean_rows");
  const int m = a.dim(0);
  const int n = a.dim(1);
  CAPKIT_CHECK(m > 0, "shape_mismatch", "mean_rows of zero rows");
  std::vector<double> v(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) v[j] += a.value()[static_cast<std::size_t>(i * n + j)];
  }
  for (auto& x : v) x /= m;
  Node* pa = a.node();
  return finish(make_node({n}, std::move(v)), {a}, [pa, m, n](Node& self) {
    double* g = pa->grad_data();
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) g[i * n + j] += self.grad[j] / m;
    }
  });
}

Var max_rows(const Var& a) {
  check_rank(a, 2, "max_rows");
  const int m = a.dim(0);
  const int n = a.dim(1);
  CAPKIT_CHECK(m > 0, "shape_mismatch", "max_rows of zero rows");
  std::vector<double> v(static_cast<std::size_t>(n), -std::numeric_limits<double>::infinity());
  std::vector<int> arg(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      const double x = a.value()[static_cast<std::size_t>(i * n + j)];
      if (x > v[j]) {
        v[j] = x;
        arg[j] = i;
      }
    }
  }
  Node* pa = a.node();
  return finish(make_node({n}, std::move(v)), {a}, [pa, n, arg = std::move(arg)](Node& self) {
    double* g = pa->grad_data();
    for (int j = 0; j < n; ++j) g[arg[j] * n + j] += self.grad[j];
  });
}

// --- linear algebra -----------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  check_rank(a, 2, "matmul");
  check_rank(b, 2, "matmul");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  CAPKIT_CHECK(b.dim(0) == k, "shape_mismatch",
               "matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> v(static_cast<std::size_t>(m) * n);
  MapM(v.data(), m, n).noalias() = MapC(a.value().data(), m, k) * MapC(b.value().data(), k, n);
  Node* pa = a.node();
  Node* pb = b.node();
  return finish(make_node({m, n}, std::move(v)), {a, b}, [pa, pb, m, k, n](Node& self) {
    MapC dc(self.grad.data(), m, n);
    if (pa->requires_grad) {
      MapM(pa->grad_data(), m, k).noalias() += dc * MapC(pb->value.data(), k, n).transpose();
    }
    if (pb->requires_grad) {
      MapM(pb->grad_data(), k, n).noalias() += MapC(pa->value.data(), m, k).transpose() * dc;
    }
  });
}

Var matmul_bt(const Var& a, const Var& b) {
  check_rank(a, 2, "matmul_bt");
  check_rank(b, 2, "matmul_bt");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  CAPKIT_CHECK(b.dim(1) == k, "shape_mismatch",
               "matmul_bt: " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  std::vector<double> v(static_cast<std::size_t>(m) * n);
  MapM(v.data(), m, n).noalias() =
      MapC(a.value().data(), m, k) * MapC(b.value().data(), n, k).transpose();
  Node* pa = a.node();
  Node* pb = b.node();
  return finish(make_node({m, n}, std::move(v)), {a, b}, [pa, pb, m, k, n](Node& self) {
    MapC dc(self.grad.data(), m, n);
    if (pa->requires_grad) {
      MapM(pa->grad_data(), m, k).noalias() += dc * MapC(pb->value.data(), n, k);
    }
    if (pb->requires_grad) {
      MapM(pb->grad_data(), n, k).noalias() += dc.transpose() * MapC(pa->value.data(), m, k);
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  if (x.shape().size() == 1) {
    return reshape(add_bias(matmul(reshape(x, {1, x.dim(0)}), w), b), {w.dim(1)});
  }
  return add_bias(matmul(x, w), b);
}

// --- shape ------------------------------------------------------------------

Var reshape(const Var& a, Shape shape) {
  CAPKIT_CHECK(numel(shape) == a.size(), "shape_mismatch",
               "reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
  Node* pa = a.node();
  return finish(make_node(std::move(shape), a.value()), {a}, [pa](Node& self) {
    double* g = pa->grad_data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Var slice_cols(const Var& a, int c0, int c1) {
  check_rank(a, 2, "slice_cols");
  const int m = a.dim(0), n = a.dim(1);
  CAPKIT_CHECK(0 <= c0 && c0 < c1 && c1 <= n, "shape_mismatch", "slice_cols: bad range");
  const int w = c1 - c0;
  std::vector<double> v(static_cast<std::size_t>(m) * w);
  for (int i = 0; i < m; ++i) {
    std::copy_n(a.value().begin() + i * n + c0, w, v.begin() + i * w);
  }
  Node* pa = a.node();
  return finish(make_node({m, w}, std::move(v)), {a}, [pa, m, n, c0, w](Node& self) {
    double* g = pa->grad_data();
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < w; ++j) g[i * n + c0 + j] += self.grad[static_cast<std::size_t>(i * w + j)];
    }
  });
}

Var slice_rows(const Var& a, int r0, int r1) {
  check_rank(a, 2, "slice_rows");
  const int m = a.dim(0), n = a.dim(1);
  CAPKIT_CHECK(0 <= r0 && r0 < r1 && r1 <= m, "shape_mismatch", "slice_rows: bad range");
  std::vector<double> v(a.value().begin() + r0 * n, a.value().begin() + r1 * n);
  Node* pa = a.node();
  return finish(make_node({r1 - r0, n}, std::move(v)), {a}, [pa, r0, n](Node& self) {
    double* g = pa->grad_data() + r0 * n;
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  CAPKIT_CHECK(!parts.empty(), "shape_mismatch", "concat_cols of nothing");
  const int m = parts[0].dim(0);
  std::vector<int> widths;
  int total = 0;
  for (const auto& p : parts) {
    check_rank(p, 2, "concat_cols");
    CAPKIT_CHECK(p.dim(0) == m, "shape_mismatch", "concat_cols: row count mismatch");
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<double> v(static_cast<std::size_t>(m) * total);
  int off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (int i = 0; i < m; ++i) {
      std::copy_n(parts[k].value().begin() + i * widths[k], widths[k], v.begin() + i * total + off);
    }
    off += widths[k];
  }
  std::vector<Node*> ps;
  for (const auto& p : parts) ps.push_back(p.node());
  return finish_many(make_node({m, total}, std::move(v)), parts,
                     [ps, widths, m, total](Node& self) {
                       int off = 0;
                       for (std::size_t k = 0; k < ps.size(); ++k) {
                         if (ps[k]->requires_grad) {
                           double* g = ps[k]->grad_data();
                           for (int i = 0; i < m; ++i) {
                             for (int j = 0; j < widths[k]; ++j) {
                               g[i * widths[k] + j] += self.grad[static_cast<std::size_t>(i * total + off + j)];
                             }
                           }
                         }
                         off += widths[k];
                       }
                     });
}

Var concat(const std::vector<Var>& parts) {
  CAPKIT_CHECK(!parts.empty(), "shape_mismatch", "concat of nothing");
  std::vector<double> v;
  std::vector<Node*> ps;
  for (const auto& p : parts) {
    v.insert(v.end(), p.value().begin(), p.value().end());
    ps.push_back(p.node());
  }
  const int n = static_cast<int>(v.size());
  return finish_many(make_node({n}, std::move(v)), parts, [ps](Node& self) {
    std::size_t off = 0;
    for (Node* p : ps) {
      if (p->requires_grad) {
        double* g = p->grad_data();
        for (std::size_t i = 0; i < p->value.size(); ++i) g[i] += self.grad[off + i];
      }
      off += p->value.size();
    }
  });
}

Var repeat_rows(const Var& v, int m) {
  check_rank(v, 1, "repeat_rows");
  const int n = v.dim(0);
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  for (int i = 0; i < m; ++i) std::copy(v.value().begin(), v.value().end(), out.begin() + i * n);
  Node* pv = v.node();
  return finish(make_node({m, n}, std::move(out)), {v}, [pv, m, n](Node& self) {
    double* g = pv->grad_data();
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) g[j] += self.grad[static_cast<std::size_t>(i * n + j)];
    }
  });
}

Var embedding(const Var& table, std::span<const int> ids) {
  check_rank(table, 2, "embedding");
  const int vocab = table.dim(0), d = table.dim(1);
  const int len = static_cast<int>(ids.size());
  std::vector<double> v(static_cast<std::size_t>(len) * d);
  for (int i = 0; i < len; ++i) {
    CAPKIT_CHECK(ids[i] >= 0 && ids[i] < vocab, "bad_token_id",
                 "embedding: id " + std::to_string(ids[i]) + " outside [0," + std::to_string(vocab) + ")");
    std::copy_n(table.value().begin() + ids[i] * d, d, v.begin() + i * d);
  }
  Node* pt = table.node();
  std::vector<int> idv(ids.begin(), ids.end());
  return finish(make_node({len, d}, std::move(v)), {table}, [pt, d, idv = std::move(idv)](Node& self) {
    double* g = pt->grad_data();
    for (std::size_t i = 0; i < idv.size(); ++i) {
      for (int j = 0; j < d; ++j) g[idv[i] * d + j] += self.grad[i * d + j];
    }
  });
}

// --- sequence ops -------------------------------------------------------------

Var causal_softmax(const Var& x, double scale_factor) {
  check_rank(x, 2, "causal_softmax");
  const int len = x.dim(0);
  CAPKIT_CHECK(x.dim(1) == len, "shape_mismatch", "causal_softmax needs a square matrix");
  std::vector<double> y(static_cast<std::size_t>(len) * len, 0.0);
  for (int i = 0; i < len; ++i) {
    const double* row = x.value().data() + i * len;
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j <= i; ++j) mx = std::max(mx, scale_factor * row[j]);
    double z = 0.0;
    for (int j = 0; j <= i; ++j) {
      y[i * len + j] = std::exp(scale_factor * row[j] - mx);
      z += y[i * len + j];
    }
    for (int j = 0; j <= i; ++j) y[i * len + j] /= z;
  }
  Node* px = x.node();
  return finish(make_node({len, len}, std::move(y)), {x}, [px, len, scale_factor](Node& self) {
    double* g = px->grad_data();
    for (int i = 0; i < len; ++i) {
      const double* yr = self.value.data() + i * len;
      const double* dy = self.grad.data() + i * len;
      double dot = 0.0;
      for (int j = 0; j <= i; ++j) dot += dy[j] * yr[j];
      for (int j = 0; j <= i; ++j) g[i * len + j] += scale_factor * yr[j] * (dy[j] - dot);
    }
  });
}

Var layernorm(const Var& x, const Var& gain, const Var& bias, double eps) {
  check_rank(x, 2, "layernorm");
  const int m = x.dim(0), n = x.dim(1);
  CAPKIT_CHECK(gain.size() == static_cast<std::size_t>(n) && bias.size() == static_cast<std::size_t>(n),
               "shape_mismatch", "layernorm: gain/bias width");
  std::vector<double> xhat(static_cast<std::size_t>(m) * n);
  std::vector<double> rstd(static_cast<std::size_t>(m));
  std::vector<double> y(xhat.size());
  for (int i = 0; i < m; ++i) {
    const double* row = x.value().data() + i * n;
    double mu = 0.0;
    for (int j = 0; j < n; ++j) mu += row[j];
    mu /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= n;
    rstd[i] = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < n; ++j) {
      xhat[i * n + j] = (row[j] - mu) * rstd[i];
      y[i * n + j] = xhat[i * n + j] * gain.value()[j] + bias.value()[j];
    }
  }
  Node* px = x.node();
  Node* pg = gain.node();
  Node* pb = bias.node();
  return finish(make_node({m, n}, std::move(y)), {x, gain, bias},
                [px, pg, pb, m, n, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
                  const double* dy = self.grad.data();
                  if (pg->requires_grad || pb->requires_grad) {
                    double* gg = pg->requires_grad ? pg->grad_data() : nullptr;
                    double* gb = pb->requires_grad ? pb->grad_data() : nullptr;
                    for (int i = 0; i < m; ++i) {
                      for (int j = 0; j < n; ++j) {
                        if (gg) gg[j] += dy[i * n + j] * xhat[i * n + j];
                        if (gb) gb[j] += dy[i * n + j];
                      }
                    }
                  }
                  if (!px->requires_grad) return;
                  double* gx = px->grad_data();
                  for (int i = 0; i < m; ++i) {
                    double s1 = 0.0, s2 = 0.0;
                    for (int j = 0; j < n; ++j) {
                      const double dxh = dy[i * n + j] * pg->value[j];
                      s1 += dxh;
                      s2 += dxh * xhat[i * n + j];
                    }
                    for (int j = 0; j < n; ++j) {
                      const double dxh = dy[i * n + j] * pg->value[j];
                      gx[i * n + j] += rstd[i] / n * (n * dxh - s1 - xhat[i * n + j] * s2);
                    }
                  }
                });
}

Var cross_entropy_sum(const Var& logits, std::span<const int> targets, std::span<const double> weights,
                      double prob_floor) {
  check_rank(logits, 2, "cross_entropy_sum");
  const int len = logits.dim(0), vocab = logits.dim(1);
  CAPKIT_CHECK(targets.size() == static_cast<std::size_t>(len) && weights.size() == targets.size(),
               "shape_mismatch", "cross_entropy_sum: targets/weights length");
  std::vector<double> probs(static_cast<std::size_t>(len) * vocab);
  double total = 0.0;
  for (int i = 0; i < len; ++i) {
    CAPKIT_CHECK(targets[i] >= 0 && targets[i] < vocab, "bad_token_id", "target id out of range");
    const double* row = logits.value().data() + i * vocab;
    double* p = probs.data() + i * vocab;
    const double mx = *std::max_element(row, row + vocab);
    double z = 0.0;
    for (int j = 0; j < vocab; ++j) {
      p[j] = std::exp(row[j] - mx);
      z += p[j];
    }
    for (int j = 0; j < vocab; ++j) p[j] /= z;
    if (weights[i] != 0.0) total += weights[i] * -std::log(std::max(p[targets[i]], prob_floor));
  }
  Node* pl = logits.node();
  std::vector<int> tv(targets.begin(), targets.end());
  std::vector<double> wv(weights.begin(), weights.end());
  return finish(make_node({1}, {total}), {logits},
                [pl, len, vocab, prob_floor, probs = std::move(probs), tv = std::move(tv),
                 wv = std::move(wv)](Node& self) {
                  double* g = pl->grad_data();
                  for (int i = 0; i < len; ++i) {
                    if (wv[i] == 0.0) continue;
                    const double* p = probs.data() + i * vocab;
                    if (p[tv[i]] < prob_floor) continue;
                    const double s = self.grad[0] * wv[i];
                    for (int j = 0; j < vocab; ++j) g[i * vocab + j] += s * p[j];
                    g[i * vocab + tv[i]] -= s;
                  }
                });
}

// --- convolution ------------------------------------------------------------

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  check_rank(x, 4, "conv2d");
  check_rank(w, 4, "conv2d");
  const int batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  CAPKIT_CHECK(w.dim(1) == cin, "shape_mismatch",
               "conv2d: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  CAPKIT_CHECK(b.size() == static_cast<std::size_t>(cout), "shape_mismatch", "conv2d: bias width");
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (wd + 2 * pad - kw) / stride + 1;
  CAPKIT_CHECK(ho > 0 && wo > 0, "shape_mismatch", "conv2d: kernel larger than input");
  const int kdim = cin * kh * kw;
  const int npix = ho * wo;
  // cols[n] is [kdim, npix]
  std::vector<double> cols(static_cast<std::size_t>(batch) * kdim * npix, 0.0);
  for (int n = 0; n < batch; ++n) {
    const double* xs = x.value().data() + static_cast<std::size_t>(n) * cin * h * wd;
    double* cs = cols.data() + static_cast<std::size_t>(n) * kdim * npix;
    for (int c = 0; c < cin; ++c) {
      for (int ki = 0; ki < kh; ++ki) {
        for (int kj = 0; kj < kw; ++kj) {
          double* crow = cs + ((c * kh + ki) * kw + kj) * npix;
          for (int oi = 0; oi < ho; ++oi) {
            const int ii = oi * stride - pad + ki;
            if (ii < 0 || ii >= h) continue;
            for (int oj = 0; oj < wo; ++oj) {
              const int jj = oj * stride - pad + kj;
              if (jj < 0 || jj >= wd) continue;
              crow[oi * wo + oj] = xs[(c * h + ii) * wd + jj];
            }
          }
        }
      }
    }
  }
  std::vector<double> y(static_cast<std::size_t>(batch) * cout * npix);
  MapC wm(w.value().data(), cout, kdim);
  for (int n = 0; n < batch; ++n) {
    MapM yo(y.data() + static_cast<std::size_t>(n) * cout * npix, cout, npix);
    yo.noalias() = wm * MapC(cols.data() + static_cast<std::size_t>(n) * kdim * npix, kdim, npix);
    for (int o = 0; o < cout; ++o) yo.row(o).array() += b.value()[o];
  }
  Node* px = x.node();
  Node* pw = w.node();
  Node* pb = b.node();
  return finish(
      make_node({batch, cout, ho, wo}, std::move(y)), {x, w, b},
      [=, cols = std::move(cols)](Node& self) {
        MapC wmat(pw->value.data(), cout, kdim);
        std::vector<double> dcols(static_cast<std::size_t>(kdim) * npix);
        for (int n = 0; n < batch; ++n) {
          MapC dy(self.grad.data() + static_cast<std::size_t>(n) * cout * npix, cout, npix);
          if (pb->requires_grad) {
            double* gb = pb->grad_data();
            for (int o = 0; o < cout; ++o) gb[o] += dy.row(o).sum();
          }
          const double* cs = cols.data() + static_cast<std::size_t>(n) * kdim * npix;
          if (pw->requires_grad) {
            MapM(pw->grad_data(), cout, kdim).noalias() += dy * MapC(cs, kdim, npix).transpose();
          }
          if (!px->requires_grad) continue;
          MapM(dcols.data(), kdim, npix).noalias() = wmat.transpose() * dy;
          double* gx = px->grad_data() + static_cast<std::size_t>(n) * cin * h * wd;
          for (int c = 0; c < cin; ++c) {
            for (int ki = 0; ki < kh; ++ki) {
              for (int kj = 0; kj < kw; ++kj) {
                const double* crow = dcols.data() + ((c * kh + ki) * kw + kj) * npix;
                for (int oi = 0; oi < ho; ++oi) {
                  const int ii = oi * stride - pad + ki;
                  if (ii < 0 || ii >= h) continue;
                  for (int oj = 0; oj < wo; ++oj) {
                    const int jj = oj * stride - pad + kj;
                    if (jj < 0 || jj >= wd) continue;
                    gx[(c * h + ii) * wd + jj] += crow[oi * wo + oj];
                  }
                }
              }
            }
          }
        }
      });
}

Var conv1d_time(const Var& x, const Var& w, const Var& b) {
  check_rank(x, 2, "conv1d_time");
  check_rank(w, 3, "conv1d_time");
  const int len = x.dim(0), cin = x.dim(1);
  const int cout = w.dim(0), k = w.dim(2);
  CAPKIT_CHECK(w.dim(1) == cin, "shape_mismatch",
               "conv1d_time: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  CAPKIT_CHECK(k % 2 == 1, "shape_mismatch", "conv1d_time: kernel must be odd");
  CAPKIT_CHECK(b.size() == static_cast<std::size_t>(cout), "shape_mismatch", "conv1d_time: bias width");
  const int pad = k / 2;
  const int kdim = cin * k;
  // cols[t, c*k + j] = x[t + j - pad, c]
  std::vector<double> cols(static_cast<std::size_t>(len) * kdim, 0.0);
  for (int t = 0; t < len; ++t) {
    for (int c = 0; c < cin; ++c) {
      for (int j = 0; j < k; ++j) {
        const int src = t + j - pad;
        if (src >= 0 && src < len) cols[t * kdim + c * k + j] = x.value()[src * cin + c];
      }
    }
  }
  std::vector<double> y(static_cast<std::size_t>(len) * cout);
  MapM ym(y.data(), len, cout);
  ym.noalias() = MapC(cols.data(), len, kdim) * MapC(w.value().data(), cout, kdim).transpose();
  for (int t = 0; t < len; ++t) {
    for (int o = 0; o < cout; ++o) ym(t, o) += b.value()[o];
  }
  Node* px = x.node();
  Node* pw = w.node();
  Node* pb = b.node();
  return finish(make_node({len, cout}, std::move(y)), {x, w, b},
                [=, cols = std::move(cols)](Node& self) {
                  MapC dy(self.grad.data(), len, cout);
                  if (pb->requires_grad) {
                    double* gb = pb->grad_data();
                    for (int o = 0; o < cout; ++o) gb[o] += dy.col(o).sum();
                  }
                  if (pw->requires_grad) {
                    MapM(pw->grad_data(), cout, kdim).noalias() += dy.transpose() * MapC(cols.data(), len, kdim);
                  }
                  if (!px->requires_grad) return;
                  RowMat dcols = dy * MapC(pw->value.data(), cout, kdim);
                  double* gx = px->grad_data();
                  for (int t = 0; t < len; ++t) {
                    for (int c = 0; c < cin; ++c) {
                      for (int j = 0; j < k; ++j) {
                        const int src = t + j - pad;
                        if (src >= 0 && src < len) gx[src * cin + c] += dcols(t, c * k + j);
                      }
                    }
                  }
                });
}

Var avg_pool2d(const Var& x, int oh, int ow) {
  check_rank(x, 4, "avg_pool2d");
  const int batch = x.dim(0), ch = x.dim(1), h = x.dim(2), wd = x.dim(3);
  CAPKIT_CHECK(oh > 0 && ow > 0 && h % oh == 0 && wd % ow == 0, "shape_mismatch",
               "avg_pool2d: " + shape_str(x.shape()) + " not divisible into " + std::to_string(oh) +
                   "x" + std::to_string(ow));
  const int fh = h / oh, fw = wd / ow;
  const double inv = 1.0 / (fh * fw);
  std::vector<double> y(static_cast<std::size_t>(batch) * ch * oh * ow, 0.0);
  for (int nc = 0; nc < batch * ch; ++nc) {
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < wd; ++j) {
        y[(nc * oh + i / fh) * ow + j / fw] += x.value()[(static_cast<std::size_t>(nc) * h + i) * wd + j] * inv;
      }
    }
  }
  Node* px = x.node();
  return finish(make_node({batch, ch, oh, ow}, std::move(y)), {x},
                [px, batch, ch, h, wd, oh, ow, fh, fw, inv](Node& self) {
                  double* g = px->grad_data();
                  for (int nc = 0; nc < batch * ch; ++nc) {
                    for (int i = 0; i < h; ++i) {
                      for (int j = 0; j < wd; ++j) {
                        g[(static_cast<std::size_t>(nc) * h + i) * wd + j] +=
                            self.grad[(nc * oh + i / fh) * ow + j / fw] * inv;
                      }
                    }
                  }
                });
}

Var upsample2x(const Var& x) {
  check_rank(x, 4, "upsample2x");
  const int batch = x.dim(0), ch = x.dim(1), h = x.dim(2), wd = x.dim(3);
  std::vector<double> y(static_cast<std::size_t>(batch) * ch * 4 * h * wd);
  for (int nc = 0; nc < batch * ch; ++nc) {
    for (int i = 0; i < 2 * h; ++i) {
      for (int j = 0; j < 2 * wd; ++j) {
        y[(static_cast<std::size_t>(nc) * 2 * h + i) * 2 * wd + j] =
            x.value()[(static_cast<std::size_t>(nc) * h + i / 2) * wd + j / 2];
      }
    }
  }
  Node* px = x.node();
  return finish(make_node({batch, ch, 2 * h, 2 * wd}, std::move(y)), {x},
                [px, batch, ch, h, wd](Node& self) {
                  double* g = px->grad_data();
                  for (int nc = 0; nc < batch * ch; ++nc) {
                    for (int i = 0; i < 2 * h; ++i) {
                      for (int j = 0; j < 2 * wd; ++j) {
                        g[(static_cast<std::size_t>(nc) * h + i / 2) * wd + j / 2] +=
                            self.grad[(static_cast<std::size_t>(nc) * 2 * h + i) * 2 * wd + j];
                      }
                    }
                  }
                });
}

// --- parameters & optimiser ---------------------------------------------------

Var& ParameterStore::add(const std::string& name, Shape shape, std::vector<double> values) {
  CAPKIT_CHECK(!contains(name), "bad_param", "duplicate parameter " + name);
  entries_.emplace_back(name, parameter(std::move(shape), std::move(values)));
  return entries_.back().second;
}

Var& ParameterStore::get(const std::string& name) {
  for (auto& [n, v] : entries_) {
    if (n == name) return v;
  }
  throw Error("bad_param", "no parameter named " + name);
}

const Var& ParameterStore::get(const std::string& name) const {
  for (const auto& [n, v] : entries_) {
    if (n == name) return v;
  }
  throw Error("bad_param", "no parameter named " + name);
}

bool ParameterStore::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

std::size_t ParameterStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, v] : entries_) n += v.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [name, v] : entries_) std::fill(v.mutable_grad().begin(), v.mutable_grad().end(), 0.0);
}

double ParameterStore::clip_grad_norm(double max_norm) {
  double sq = 0.0;
  for (const auto& [name, v] : entries_) {
    for (double g : v.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& [name, v] : entries_) {
      for (double& g : v.mutable_grad()) g *= s;
    }
  }
  return norm;
}

Adam::Adam(ParameterStore& params, AdamOptions opts) : params_(params), opts_(opts) {
  for (const auto& [name, v] : params_.entries()) {
    m_.emplace_back(v.size(), 0.0);
    v_.emplace_back(v.size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, t_);
  const double bc2 = 1.0 - std::pow(opts_.beta2, t_);
  auto& entries = params_.entries();
  for (std::size_t k = 0; k < entries.size(); ++k) {
    Var& p = entries[k].second;
    const auto& g = p.grad();
    if (g.empty()) continue;
    auto& val = p.mutable_value();
    for (std::size_t i = 0; i < val.size(); ++i) {
      m_[k][i] = opts_.beta1 * m_[k][i] + (1.0 - opts_.beta1) * g[i];
      v_[k][i] = opts_.beta2 * v_[k][i] + (1.0 - opts_.beta2) * g[i] * g[i];
      val[i] -= opts_.lr * (m_[k][i] / bc1) / (std::sqrt(v_[k][i] / bc2) + opts_.eps);
    }
  }
}

}  // namespace capkit::ag
