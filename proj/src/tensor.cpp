#include "udsp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "udsp/error.hpp"
#include "udsp/rng.hpp"

namespace udsp::ad {

namespace {

thread_local bool g_grad_enabled = true;

using NodePtr = std::shared_ptr<Node>;

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  throw ShapeError(std::string(op) + ": " + detail);
}

// Allocates the output node and wires it into the graph when any input
// needs gradients.
NodePtr make_node(Shape shape, const char* op, std::initializer_list<const Tensor*> inputs) {
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->op = op;
  n->value.assign(shape.size(), 0.0);
  if (g_grad_enabled) {
    for (const Tensor* t : inputs) {
      if (t->requires_grad()) n->requires_grad = true;
    }
  }
  if (n->requires_grad) {
    n->grad.assign(shape.size(), 0.0);
    for (const Tensor* t : inputs) n->inputs.push_back(t->ptr());
  }
  return n;
}

NodePtr make_node(Shape shape, const char* op, const std::vector<Tensor>& inputs) {
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->op = op;
  n->value.assign(shape.size(), 0.0);
  if (g_grad_enabled) {
    for (const auto& t : inputs) {
      if (t.requires_grad()) n->requires_grad = true;
    }
  }
  if (n->requires_grad) {
    n->grad.assign(shape.size(), 0.0);
    for (const auto& t : inputs) n->inputs.push_back(t.ptr());
  }
  return n;
}

// C (m x n) += A (m x k) * B (k x n), with optional transposes given as
// strides so the same kernel serves forward and backward.
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
              bool trans_a, bool trans_b) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      double av = trans_a ? a[p * m + i] : a[i * k + p];
      if (av == 0.0) continue;
      if (trans_b) {
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * b[j * k + p];
      } else {
        const double* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  auto dim = [&](std::size_t x, std::size_t y) {
    if (x == y) return x;
    if (x == 1) return y;
    if (y == 1) return x;
    shape_error(op, "cannot broadcast " + a.str() + " with " + b.str());
  };
  return {dim(a.rows, b.rows), dim(a.cols, b.cols)};
}

inline std::size_t bidx(const Shape& s, std::size_t r, std::size_t c) {
  return (s.rows == 1 ? 0 : r) * s.cols + (s.cols == 1 ? 0 : c);
}

}  // namespace

std::string Shape::str() const { return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")"; }

Tensor Tensor::zeros(std::size_t rows, std::size_t cols, bool requires_grad) {
  return from(rows, cols, std::vector<double>(rows * cols, 0.0), requires_grad);
}

Tensor Tensor::from(std::size_t rows, std::size_t cols, std::vector<double> values, bool requires_grad) {
  if (values.size() != rows * cols) {
    shape_error("tensor", std::to_string(values.size()) + " values for shape " + Shape{rows, cols}.str());
  }
  auto n = std::make_shared<Node>();
  n->shape = {rows, cols};
  n->value = std::move(values);
  Tensor t(std::move(n));
  t.set_requires_grad(requires_grad);
  return t;
}

double Tensor::item() const {
  if (size() != 1) shape_error("item", "tensor of shape " + shape().str() + " is not a scalar");
  return node_->value[0];
}

void Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  if (on) {
    node_->grad.assign(node_->value.size(), 0.0);
  } else {
    node_->grad.clear();
    node_->grad.shrink_to_fit();
  }
}

void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

Tensor Tensor::clone() const { return from(rows(), cols(), node_->value, false); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + (loss.defined() ? loss.shape().str() : "undefined"));
  }
  if (!loss.requires_grad()) return;
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{&loss.node(), 0}};
  seen.insert(&loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node().grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a.shape().str() + " x " + b.shape().str());
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  auto out = make_node({m, n}, "matmul", {&a, &b});
  gemm_acc(a.data().data(), b.data().data(), out->value.data(), m, k, n, false, false);
  if (out->requires_grad) {
    out->backward = [m, k, n](Node& self) {
      Node& A = *self.inputs[0];
      Node& B = *self.inputs[1];
      if (A.requires_grad) gemm_acc(self.grad.data(), B.value.data(), A.grad.data(), m, n, k, false, true);
      if (B.requires_grad) gemm_acc(A.value.data(), self.grad.data(), B.grad.data(), k, m, n, true, false);
    };
  }
  return Tensor(out);
}

namespace {

template <typename Fwd, typename DA, typename DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, DA da, DB db) {
  const Shape sa = a.shape(), sb = b.shape();
  const Shape so = broadcast_shape(op, sa, sb);
  auto out = make_node(so, op, {&a, &b});
  const auto& av = a.data();
  const auto& bv = b.data();
  for (std::size_t r = 0; r < so.rows; ++r) {
    for (std::size_t c = 0; c < so.cols; ++c) {
      out->value[r * so.cols + c] = fwd(av[bidx(sa, r, c)], bv[bidx(sb, r, c)]);
    }
  }
  if (out->requires_grad) {
    out->backward = [sa, sb, so, da, db](Node& self) {
      Node& A = *self.inputs[0];
      Node& B = *self.inputs[1];
      for (std::size_t r = 0; r < so.rows; ++r) {
        for (std::size_t c = 0; c < so.cols; ++c) {
          const double g = self.grad[r * so.cols + c];
          const std::size_t ia = bidx(sa, r, c), ib = bidx(sb, r, c);
          if (A.requires_grad) A.grad[ia] += g * da(A.value[ia], B.value[ib]);
          if (B.requires_grad) B.grad[ib] += g * db(A.value[ia], B.value[ib]);
        }
      }
    };
  }
  return Tensor(out);
}

template <typename Fwd, typename Deriv>
Tensor unary(const char* op, const Tensor& a, Fwd fwd, Deriv deriv) {
  auto out = make_node(a.shape(), op, {&a});
  const auto& av = a.data();
  for (std::size_t i = 0; i < av.size(); ++i) out->value[i] = fwd(av[i]);
  if (out->requires_grad) {
    // deriv(x, y) with y the forward output
    out->backward = [deriv](Node& self) {
      Node& A = *self.inputs[0];
      for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad[i] += self.grad[i] * deriv(A.value[i], self.value[i]);
    };
  }
  return Tensor(out);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor multiply(const Tensor& a, const Tensor& b) {
  return binary(
      "multiply", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      "scale", a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor log(const Tensor& a) {
  return unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      "sigmoid", a,
      [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary(
      "tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) shape_error("concat_cols", "no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) shape_error("concat_cols", "row mismatch " + parts[0].shape().str() + " vs " + p.shape().str());
    cols += p.cols();
  }
  auto out = make_node({rows, cols}, "concat_cols", parts);
  std::size_t off = 0;
  for (const auto& p : parts) {
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(p.data().data() + r * p.cols(), p.cols(), out->value.data() + r * cols + off);
    }
    off += p.cols();
  }
  if (out->requires_grad) {
    out->backward = [rows, cols](Node& self) {
      std::size_t o = 0;
      for (auto& in : self.inputs) {
        const std::size_t c = in->shape.cols;
        if (in->requires_grad) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < c; ++j) in->grad[r * c + j] += self.grad[r * cols + o + j];
          }
        }
        o += c;
      }
    };
  }
  return Tensor(out);
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) shape_error("concat_rows", "no inputs");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) shape_error("concat_rows", "column mismatch " + parts[0].shape().str() + " vs " + p.shape().str());
    rows += p.rows();
  }
  auto out = make_node({rows, cols}, "concat_rows", parts);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out->value.begin() + off);
    off += p.size();
  }
  if (out->requires_grad) {
    out->backward = [](Node& self) {
      std::size_t o = 0;
      for (auto& in : self.inputs) {
        if (in->requires_grad) {
          for (std::size_t i = 0; i < in->grad.size(); ++i) in->grad[i] += self.grad[o + i];
        }
        o += in->value.size();
      }
    };
  }
  return Tensor(out);
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.rows()) {
    shape_error("slice_rows", "[" + std::to_string(begin) + ", " + std::to_string(end) + ") of " + a.shape().str());
  }
  const std::size_t cols = a.cols();
  auto out = make_node({end - begin, cols}, "slice_rows", {&a});
  std::copy(a.data().begin() + begin * cols, a.data().begin() + end * cols, out->value.begin());
  if (out->requires_grad) {
    out->backward = [begin, cols](Node& self) {
      Node& A = *self.inputs[0];
      for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad[begin * cols + i] += self.grad[i];
    };
  }
  return Tensor(out);
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.cols()) {
    shape_error("slice_cols", "[" + std::to_string(begin) + ", " + std::to_string(end) + ") of " + a.shape().str());
  }
  const std::size_t rows = a.rows(), cols = a.cols(), w = end - begin;
  auto out = make_node({rows, w}, "slice_cols", {&a});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.data().data() + r * cols + begin, w, out->value.data() + r * w);
  }
  if (out->requires_grad) {
    out->backward = [rows, cols, begin, w](Node& self) {
      Node& A = *self.inputs[0];
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < w; ++j) A.grad[r * cols + begin + j] += self.grad[r * w + j];
      }
    };
  }
  return Tensor(out);
}

Tensor transpose(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  auto out = make_node({n, m}, "transpose", {&a});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out->value[j * m + i] = a.data()[i * n + j];
  }
  if (out->requires_grad) {
    out->backward = [m, n](Node& self) {
      Node& A = *self.inputs[0];
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) A.grad[i * n + j] += self.grad[j * m + i];
      }
    };
  }
  return Tensor(out);
}

Tensor gather_rows(const Tensor& table, const std::vector<int>& ids) {
  const std::size_t cols = table.cols();
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= table.rows()) {
      shape_error("gather_rows", "index " + std::to_string(id) + " outside table " + table.shape().str());
    }
  }
  auto out = make_node({ids.size(), cols}, "gather_rows", {&table});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(table.data().data() + ids[i] * cols, cols, out->value.data() + i * cols);
  }
  if (out->requires_grad) {
    out->backward = [ids, cols](Node& self) {
      Node& T = *self.inputs[0];
      for (std::size_t i = 0; i < ids.size(); ++i) {
        for (std::size_t j = 0; j < cols; ++j) T.grad[ids[i] * cols + j] += self.grad[i * cols + j];
      }
    };
  }
  return Tensor(out);
}

Tensor softmax_rows(const Tensor& a, const std::vector<double>& mask) {
  if (!mask.empty() && mask.size() != a.size()) {
    shape_error("softmax_rows", "mask of " + std::to_string(mask.size()) + " entries for " + a.shape().str());
  }
  const std::size_t m = a.rows(), n = a.cols();
  auto out = make_node(a.shape(), "softmax_rows", {&a});
  for (std::size_t r = 0; r < m; ++r) {
    const double* x = a.data().data() + r * n;
    double* y = out->value.data() + r * n;
    double mx = kNegInf;
    for (std::size_t j = 0; j < n; ++j) {
      double v = x[j] + (mask.empty() ? 0.0 : mask[r * n + j]);
      y[j] = v;
      mx = std::max(mx, v);
    }
    if (mx == kNegInf) {
      std::fill(y, y + n, 0.0);
      continue;
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = std::exp(y[j] - mx);
      z += y[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[j] /= z;
  }
  if (out->requires_grad) {
    out->backward = [m, n](Node& self) {
      Node& A = *self.inputs[0];
      for (std::size_t r = 0; r < m; ++r) {
        const double* y = self.value.data() + r * n;
        const double* g = self.grad.data() + r * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
        for (std::size_t j = 0; j < n; ++j) A.grad[r * n + j] += y[j] * (g[j] - dot);
      }
    };
  }
  return Tensor(out);
}

Tensor sum(const Tensor& a) {
  auto out = make_node({1, 1}, "sum", {&a});
  double s = 0.0;
  for (double v : a.data()) s += v;
  out->value[0] = s;
  if (out->requires_grad) {
    out->backward = [](Node& self) {
      Node& A = *self.inputs[0];
      for (double& g : A.grad) g += self.grad[0];
    };
  }
  return Tensor(out);
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) shape_error("mean", "empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor row_sum(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  auto out = make_node({m, 1}, "row_sum", {&a});
  for (std::size_t r = 0; r < m; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += a.data()[r * n + j];
    out->value[r] = s;
  }
  if (out->requires_grad) {
    out->backward = [m, n](Node& self) {
      Node& A = *self.inputs[0];
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t j = 0; j < n; ++j) A.grad[r * n + j] += self.grad[r];
      }
    };
  }
  return Tensor(out);
}

Tensor scalenorm(const Tensor& x, const Tensor& gain) {
  if (gain.size() != 1) shape_error("scalenorm", "gain must be 1x1, got " + gain.shape().str());
  constexpr double kEps = 1e-12;
  const std::size_t m = x.rows(), n = x.cols();
  auto out = make_node(x.shape(), "scalenorm", {&x, &gain});
  const double g = gain.data()[0];
  std::vector<double> norms(m);
  for (std::size_t r = 0; r < m; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += x.data()[r * n + j] * x.data()[r * n + j];
    norms[r] = std::max(std::sqrt(s), kEps);
    for (std::size_t j = 0; j < n; ++j) out->value[r * n + j] = g * x.data()[r * n + j] / norms[r];
  }
  if (out->requires_grad) {
    out->backward = [m, n, norms = std::move(norms)](Node& self) {
      Node& X = *self.inputs[0];
      Node& G = *self.inputs[1];
      const double g = G.value[0];
      for (std::size_t r = 0; r < m; ++r) {
        const double* xr = X.value.data() + r * n;
        const double* gr = self.grad.data() + r * n;
        const double nr = norms[r];
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += xr[j] * gr[j];
        if (G.requires_grad) G.grad[0] += dot / nr;
        if (X.requires_grad) {
          const bool clamped = nr <= kEps;
          for (std::size_t j = 0; j < n; ++j) {
            double d = gr[j] / nr;
            if (!clamped) d -= xr[j] * dot / (nr * nr * nr);
            X.grad[r * n + j] += g * d;
          }
        }
      }
    };
  }
  return Tensor(out);
}

Tensor dropout(const Tensor& x, double p, Rng& rng, bool training) {
  if (!training || p <= 0.0) return x;
  if (p >= 1.0) shape_error("dropout", "probability must be < 1");
  std::vector<double> keep(x.size());
  const double s = 1.0 / (1.0 - p);
  for (double& k : keep) k = rng.uniform() >= p ? s : 0.0;
  return multiply(x, Tensor::from(x.rows(), x.cols(), std::move(keep)));
}

Tensor row_outer(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) shape_error("row_outer", a.shape().str() + " vs " + b.shape().str());
  const std::size_t m = a.rows(), p = a.cols(), q = b.cols();
  auto out = make_node({m, p * q}, "row_outer", {&a, &b});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      const double av = a.data()[i * p + j];
      for (std::size_t k = 0; k < q; ++k) out->value[i * p * q + j * q + k] = av * b.data()[i * q + k];
    }
  }
  if (out->requires_grad) {
    out->backward = [m, p, q](Node& self) {
      Node& A = *self.inputs[0];
      Node& B = *self.inputs[1];
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < p; ++j) {
          for (std::size_t k = 0; k < q; ++k) {
            const double g = self.grad[i * p * q + j * q + k];
            if (A.requires_grad) A.grad[i * p + j] += g * B.value[i * q + k];
            if (B.requires_grad) B.grad[i * q + k] += g * A.value[i * p + j];
          }
        }
      }
    };
  }
  return Tensor(out);
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, const std::vector<double>& mask) {
  const std::size_t m = logits.rows(), n = logits.cols();
  if (targets.size() != m) {
    shape_error("cross_entropy", std::to_string(targets.size()) + " targets for " + logits.shape().str());
  }
  if (!mask.empty() && mask.size() != logits.size()) shape_error("cross_entropy", "mask size mismatch");
  std::size_t count = 0;
  for (int t : targets) {
    if (t >= static_cast<int>(n)) shape_error("cross_entropy", "target " + std::to_string(t) + " >= " + std::to_string(n));
    if (t >= 0) ++count;
  }
  auto out = make_node({1, 1}, "cross_entropy", {&logits});
  if (count == 0) return Tensor(out);
  std::vector<double> probs(logits.size(), 0.0);
  double total = 0.0;
  for (std::size_t r = 0; r < m; ++r) {
    if (targets[r] < 0) continue;
    const double* x = logits.data().data() + r * n;
    double* pr = probs.data() + r * n;
    double mx = kNegInf;
    for (std::size_t j = 0; j < n; ++j) {
      pr[j] = x[j] + (mask.empty() ? 0.0 : mask[r * n + j]);
      mx = std::max(mx, pr[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(pr[j] - mx);
    const double lse = mx + std::log(z);
    total += lse - pr[targets[r]];
    for (std::size_t j = 0; j < n; ++j) pr[j] = std::exp(pr[j] - lse);
  }
  out->value[0] = total / static_cast<double>(count);
  if (out->requires_grad) {
    out->backward = [m, n, count, targets, probs = std::move(probs)](Node& self) {
      Node& L = *self.inputs[0];
      const double g = self.grad[0] / static_cast<double>(count);
      for (std::size_t r = 0; r < m; ++r) {
        if (targets[r] < 0) continue;
        for (std::size_t j = 0; j < n; ++j) {
          double d = probs[r * n + j] - (static_cast<int>(j) == targets[r] ? 1.0 : 0.0);
          L.grad[r * n + j] += g * d;
        }
      }
    };
  }
  return Tensor(out);
}

Tensor mean_squared_error(const Tensor& pred, const std::vector<double>& gold, const std::vector<char>& mask) {
  if (gold.size() != pred.size() || mask.size() != pred.size()) {
    shape_error("mean_squared_error", "gold/mask sizes do not match " + pred.shape().str());
  }
  std::size_t count = 0;
  for (char c : mask) count += c ? 1 : 0;
  auto out = make_node({1, 1}, "mean_squared_error", {&pred});
  if (count == 0) return Tensor(out);
  double total = 0.0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (!mask[i]) continue;
    const double d = pred.data()[i] - gold[i];
    total += d * d;
  }
  out->value[0] = total / static_cast<double>(count);
  if (out->requires_grad) {
    out->backward = [gold, mask, count](Node& self) {
      Node& P = *self.inputs[0];
      const double g = 2.0 * self.grad[0] / static_cast<double>(count);
      for (std::size_t i = 0; i < gold.size(); ++i) {
        if (mask[i]) P.grad[i] += g * (P.value[i] - gold[i]);
      }
    };
  }
  return Tensor(out);
}

Tensor binary_cross_entropy(const Tensor& logits, const std::vector<double>& targets, const std::vector<char>& mask) {
  if (targets.size() != logits.size() || mask.size() != logits.size()) {
    shape_error("binary_cross_entropy", "target/mask sizes do not match " + logits.shape().str());
  }
  std::size_t count = 0;
  for (char c : mask) count += c ? 1 : 0;
  auto out = make_node({1, 1}, "binary_cross_entropy", {&logits});
  if (count == 0) return Tensor(out);
  double total = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (!mask[i]) continue;
    const double x = logits.data()[i];
    // log(1 + exp(-|x|)) form stays finite for large |x|.
    total += std::max(x, 0.0) - x * targets[i] + std::log1p(std::exp(-std::abs(x)));
  }
  out->value[0] = total / static_cast<double>(count);
  if (out->requires_grad) {
    out->backward = [targets, mask, count](Node& self) {
      Node& L = *self.inputs[0];
      const double g = self.grad[0] / static_cast<double>(count);
      for (std::size_t i = 0; i < targets.size(); ++i) {
        if (!mask[i]) continue;
        const double x = L.value[i];
        const double s = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        L.grad[i] += g * (s - targets[i]);
      }
    };
  }
  return Tensor(out);
}

}  // namespace udsp::ad
