#pragma once

#include <string>
#include <vector>

#include "support.hpp"

namespace udsp::testing {

// One differentiable scenario per autograd op: `f` reduces the op output to
// a scalar through a fixed random weighting so every output entry matters.
struct OpCase {
  std::string name;
  std::function<ad::Tensor()> f;
  std::vector<ad::Tensor> inputs;
};

inline ad::Tensor weighted_sum(const ad::Tensor& out, Rng& rng) {
  return ad::sum(ad::multiply(out, random_tensor(out.rows(), out.cols(), rng, false)));
}

inline std::vector<OpCase> op_cases(std::uint64_t seed) {
  using namespace ad;
  Rng rng(seed);
  std::vector<OpCase> cases;
  auto reduce = [&](Tensor out) {
    auto w = random_tensor(out.rows(), out.cols(), rng, false);
    return [w](const Tensor& o) { return sum(multiply(o, w)); };
  };
  auto unary = [&](std::string name, std::size_t r, std::size_t c, std::function<Tensor(const Tensor&)> op,
                   double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(r * c);
    for (auto& x : v) x = rng.uniform(lo, hi);
    auto a = Tensor::from(r, c, std::move(v), true);
    auto red = reduce(op(a));
    cases.push_back({std::move(name), [a, op, red] { return red(op(a)); }, {a}});
  };
  auto binary = [&](std::string name, Shape sa, Shape sb, std::function<Tensor(const Tensor&, const Tensor&)> op) {
    auto a = random_tensor(sa.rows, sa.cols, rng);
    auto b = random_tensor(sb.rows, sb.cols, rng);
    auto red = reduce(op(a, b));
    cases.push_back({std::move(name), [a, b, op, red] { return red(op(a, b)); }, {a, b}});
  };

  binary("matmul", {3, 4}, {4, 2}, [](const Tensor& a, const Tensor& b) { return matmul(a, b); });
  binary("add", {3, 4}, {3, 4}, [](const Tensor& a, const Tensor& b) { return add(a, b); });
  binary("add_broadcast_row", {3, 4}, {1, 4}, [](const Tensor& a, const Tensor& b) { return add(a, b); });
  binary("add_broadcast_col", {3, 4}, {3, 1}, [](const Tensor& a, const Tensor& b) { return add(a, b); });
  binary("sub", {3, 4}, {1, 4}, [](const Tensor& a, const Tensor& b) { return sub(a, b); });
  binary("multiply", {3, 4}, {3, 4}, [](const Tensor& a, const Tensor& b) { return multiply(a, b); });
  binary("multiply_broadcast", {3, 4}, {1, 1}, [](const Tensor& a, const Tensor& b) { return multiply(a, b); });
  binary("concat_cols", {3, 2}, {3, 3}, [](const Tensor& a, const Tensor& b) { return concat_cols({a, b}); });
  binary("concat_rows", {2, 3}, {1, 3}, [](const Tensor& a, const Tensor& b) { return concat_rows({a, b}); });
  binary("row_outer", {3, 2}, {3, 3}, [](const Tensor& a, const Tensor& b) { return row_outer(a, b); });
  unary("scale", 2, 3, [](const Tensor& a) { return scale(a, -2.5); });
  unary("slice_rows", 4, 3, [](const Tensor& a) { return slice_rows(a, 1, 3); });
  unary("slice_cols", 3, 4, [](const Tensor& a) { return slice_cols(a, 1, 3); });
  unary("transpose", 2, 3, [](const Tensor& a) { return transpose(a); });
  unary("gather_rows", 4, 3, [](const Tensor& a) { return gather_rows(a, {2, 0, 2, 3}); });
  unary("softmax_rows", 3, 4, [](const Tensor& a) { return softmax_rows(a); });
  unary("softmax_rows_masked", 2, 3, [](const Tensor& a) {
    return softmax_rows(a, {0.0, kNegInf, 0.0, kNegInf, 0.0, 0.0});
  });
  unary("log", 2, 3, [](const Tensor& a) { return log(a); }, 0.5, 2.0);
  unary("relu", 3, 3, [](const Tensor& a) { return relu(a); });
  unary("sigmoid", 3, 3, [](const Tensor& a) { return sigmoid(a); }, -3.0, 3.0);
  unary("tanh", 3, 3, [](const Tensor& a) { return tanh(a); }, -2.0, 2.0);
  unary("mean", 3, 4, [](const Tensor& a) { return mean(a); });
  unary("sum", 3, 4, [](const Tensor& a) { return sum(a); });
  unary("row_sum", 3, 4, [](const Tensor& a) { return row_sum(a); });
  binary("scalenorm", {3, 4}, {1, 1}, [](const Tensor& a, const Tensor& g) { return scalenorm(a, g); });
  unary("dropout", 3, 4, [](const Tensor& a) {
    Rng r(99);  // same mask on every evaluation
    return dropout(a, 0.3, r, true);
  });
  {
    auto logits = random_tensor(4, 5, rng, true, 2.0);
    std::vector<double> mask(20, 0.0);
    mask[3] = kNegInf;
    cases.push_back({"cross_entropy", [logits, mask] { return cross_entropy(logits, {1, -1, 4, 0}, mask); }, {logits}});
  }
  {
    auto pred = random_tensor(3, 2, rng, true, 2.0);
    std::vector<double> gold(6);
    for (auto& g : gold) g = rng.uniform(-3.0, 3.0);
    std::vector<char> mask{1, 0, 1, 1, 0, 1};
    cases.push_back({"mean_squared_error", [pred, gold, mask] { return mean_squared_error(pred, gold, mask); }, {pred}});
  }
  {
    auto logits = random_tensor(3, 2, rng, true, 2.0);
    std::vector<double> targets{1, 0, 0, 1, 1, 0};
    std::vector<char> mask{1, 1, 0, 1, 1, 1};
    cases.push_back(
        {"binary_cross_entropy", [logits, targets, mask] { return binary_cross_entropy(logits, targets, mask); }, {logits}});
  }
  {
    // Two-layer MLP with a cross-entropy head.
    auto x = random_tensor(5, 4, rng, false);
    auto w1 = random_tensor(4, 6, rng);
    auto b1 = random_tensor(1, 6, rng);
    auto w2 = random_tensor(6, 3, rng);
    cases.push_back({"mlp",
                     [x, w1, b1, w2] {
                       auto h = tanh(add(matmul(x, w1), b1));
                       return cross_entropy(matmul(h, w2), {0, 2, 1, 1, 0});
                     },
                     {w1, b1, w2}});
  }
  return cases;
}

}  // namespace udsp::testing
