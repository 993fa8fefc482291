#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "udsp/graph.hpp"
#include "udsp/io.hpp"
#include "udsp/model.hpp"
#include "udsp/rng.hpp"
#include "udsp/tensor.hpp"

namespace udsp::testing {

inline std::string data_path(const std::string& name) { return std::string(UDSP_TEST_DATA) + "/" + name; }

inline ad::Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, bool grad = true, double scale = 1.0) {
  std::vector<double> v(r * c);
  for (auto& x : v) x = scale * rng.uniform(-1.0, 1.0);
  return ad::Tensor::from(r, c, std::move(v), grad);
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// Relative error with a floor on the denominator so that gradients that
// are zero up to rounding do not divide by ~0.
inline double rel_error(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3}); }

// Compares backward() against central differences (h = 1e-4) for the
// entries of `inputs`. `max_entries` > 0 checks an evenly spaced subset.
inline GradCheck gradcheck(const std::function<ad::Tensor()>& f, std::vector<ad::Tensor> inputs,
                           std::size_t max_entries = 0, double h = 1e-4) {
  for (auto& t : inputs) t.zero_grad();
  ad::backward(f());
  GradCheck out;
  for (auto& t : inputs) {
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    const std::size_t n = t.size();
    const std::size_t stride = max_entries == 0 || n <= max_entries ? 1 : n / max_entries;
    for (std::size_t i = 0; i < n; i += stride) {
      double& x = t.mutable_data()[i];
      const double saved = x;
      double fp, fm;
      {
        ad::NoGradGuard g;
        x = saved + h;
        fp = f().item();
        x = saved - h;
        fm = f().item();
      }
      x = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      out.max_rel_error = std::max(out.max_rel_error, rel_error(analytic[i], numeric));
      ++out.checked;
    }
  }
  return out;
}

// Tiny configuration used by the model tests.
inline ModelConfig tiny_config(Mode mode) {
  ModelConfig c;
  c.layers = 2;
  c.heads = 2;
  c.d_model = 16;
  c.d_ff = 16;
  c.d_head = 8;
  c.d_type = 4;
  c.d_attr = 8;
  c.init_scale = 1.0;
  c.mode = mode;
  return c;
}

// The shared-subject example: "the boy ran and caught the ball", where
// "boy" is an argument of both verbs.
inline CorpusEntry shared_subject_entry() {
  CorpusEntry e;
  e.id = "shared-subject";
  const std::vector<std::pair<std::string, std::string>> words = {
      {"the", "DET"}, {"boy", "NOUN"}, {"ran", "VERB"}, {"and", "CCONJ"}, {"caught", "VERB"}, {"the", "DET"}, {"ball", "NOUN"}};
  for (std::size_t i = 0; i < words.size(); ++i) {
    Token t;
    t.index = static_cast<int>(i) + 1;
    t.form = words[i].first;
    t.upos = words[i].second;
    e.tree.tokens.push_back(t);
  }
  e.tree.heads = {2, 3, 0, 5, 3, 7, 5};
  e.tree.deprels = {"det", "nsubj", "root", "cc", "conj", "det", "obj"};
  UDSGraph g;
  g.nodes = {{"ran", 3, {{"factuality", {2.0, true}}}},
             {"caught", 5, {{"factuality", {1.5, true}}}},
             {"boy", 2, {{"genericity", {-1.0, true}}}},
             {"ball", 7, {{"genericity", {0.5, false}}}}};
  g.edges = {{"ran", "boy", "arg0", {{"volition", {1.2, true}}}},
             {"caught", "boy", "arg0", {{"volition", {2.1, true}}}},
             {"caught", "ball", "arg1", {{"volition", {0.0, false}}}}};
  g.roots = {"ran", "caught"};
  e.graph = g;
  return e;
}

}  // namespace udsp::testing
