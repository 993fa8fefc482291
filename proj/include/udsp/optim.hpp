#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "udsp/rng.hpp"
#include "udsp/tensor.hpp"

namespace udsp {

// Named parameters, iterated in name order (the serialization order).
class ParameterStore {
 public:
  ad::Tensor& add(const std::string& name, ad::Tensor value);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  ad::Tensor& at(const std::string& name);
  const ad::Tensor& at(const std::string& name) const;
  const std::map<std::string, ad::Tensor>& all() const { return params_; }
  std::map<std::string, ad::Tensor>& all() { return params_; }
  std::size_t size() const { return params_.size(); }

  void zero_grad();
  // Euclidean norm of the gradients of every parameter whose name starts
  // with `prefix`; parameters without gradients contribute 0.
  double grad_norm(const std::string& prefix) const;

 private:
  std::map<std::string, ad::Tensor> params_;
};

// Xavier-uniform initialization with its variance divided by `scale`
// (scale = 1 is plain Xavier). Throws ConfigError for scale <= 0.
ad::Tensor init_scaled(std::size_t rows, std::size_t cols, double scale, Rng& rng);

// Learning rate of the inverse-square-root warmup schedule; `step` >= 1.
double noam_lr(long step, std::size_t d_model, long warmup, double base = 1.0);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

// Adam over the trainable parameters of a store. Parameters without
// gradients (frozen) are skipped.
class Adam {
 public:
  struct State {
    std::vector<double> m;
    std::vector<double> v;
  };

  explicit Adam(AdamOptions options = {}) : options_(options) {}

  void step(ParameterStore& params, double lr);
  long steps() const { return step_; }
  const std::map<std::string, State>& state() const { return state_; }

 private:
  AdamOptions options_;
  long step_ = 0;
  std::map<std::string, State> state_;
};

// Parameter container: an 8-byte little-endian header length, a JSON header
// {"metadata": {...}, "tensors": {name: {"shape": [r, c], "dtype": "f64",
// "offset": bytes}}}, then raw little-endian doubles ordered by name.
void save_parameters(const std::string& path, const ParameterStore& params, const nlohmann::json& metadata);

struct LoadedParameters {
  nlohmann::json metadata;
  std::map<std::string, ad::Tensor> tensors;
};

LoadedParameters load_parameters(const std::string& path);

}  // namespace udsp
