#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace udsp {
class Rng;
}

namespace udsp::ad {

// Every tensor is a row-major matrix; vectors are 1 x n, scalars 1 x 1.
struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated iff requires_grad
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
};

// Shared handle onto a node of the computation graph. Copies alias.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false);
  static Tensor from(std::size_t rows, std::size_t cols, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v) { return from(1, 1, {v}); }
  static Tensor row(std::vector<double> values) {
    const std::size_t n = values.size();
    return from(1, n, std::move(values));
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rows() const { return node_->shape.rows; }
  std::size_t cols() const { return node_->shape.cols; }
  std::size_t size() const { return node_->shape.size(); }

  std::span<const double> data() const { return node_->value; }
  std::span<double> mutable_data() { return node_->value; }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  // Turning gradients off releases the buffer; turning them on allocates it.
  void set_requires_grad(bool on);
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad; }
  void zero_grad();

  // Detached deep copy of the values.
  Tensor clone() const;

  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Populates gradients of every tensor that requires them and that `loss`
// depends on. Leaf gradients accumulate across calls.
void backward(const Tensor& loss);

// ---- forward ops ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
// Elementwise with broadcasting of size-1 rows/columns.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor multiply(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor transpose(const Tensor& a);
// Embedding lookup: out row i = table row ids[i].
Tensor gather_rows(const Tensor& table, const std::vector<int>& ids);

// Row-wise softmax of (a + mask). `mask` is additive (0 or -inf), either
// empty or a.rows x a.cols. A row masked everywhere yields zeros.
Tensor softmax_rows(const Tensor& a, const std::vector<double>& mask = {});
Tensor log(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor row_sum(const Tensor& a);
// Per row: gain * x / ||x||_2; `gain` is 1 x 1.
Tensor scalenorm(const Tensor& x, const Tensor& gain);
// Inverted dropout; identity when !training or p == 0.
Tensor dropout(const Tensor& x, double p, Rng& rng, bool training);
// Per row outer product flattened: out[i, j*q + k] = a[i, j] * b[i, k].
Tensor row_outer(const Tensor& a, const Tensor& b);

// Mean negative log-likelihood of `targets` under row softmax(logits + mask).
// Rows whose target is negative are skipped; no valid rows gives 0.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, const std::vector<double>& mask = {});
// Mean of (pred - gold)^2 over entries with mask set; 0 when nothing is set.
Tensor mean_squared_error(const Tensor& pred, const std::vector<double>& gold, const std::vector<char>& mask);
// Mean binary cross-entropy of sigmoid(logits) against 0/1 targets over
// masked entries; 0 when nothing is set.
Tensor binary_cross_entropy(const Tensor& logits, const std::vector<double>& targets, const std::vector<char>& mask);

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

}  // namespace udsp::ad
