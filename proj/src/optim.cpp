#include "udsp/optim.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "udsp/error.hpp"
#include "udsp/io.hpp"

namespace udsp {

ad::Tensor& ParameterStore::add(const std::string& name, ad::Tensor value) {
  auto [it, fresh] = params_.emplace(name, std::move(value));
  if (!fresh) throw ConfigError("duplicate parameter '" + name + "'");
  return it->second;
}

ad::Tensor& ParameterStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

const ad::Tensor& ParameterStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

void ParameterStore::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

double ParameterStore::grad_norm(const std::string& prefix) const {
  double s = 0.0;
  for (const auto& [name, t] : params_) {
    if (name.compare(0, prefix.size(), prefix) != 0) continue;
    for (double g : t.grad()) s += g * g;
  }
  return std::sqrt(s);
}

ad::Tensor init_scaled(std::size_t rows, std::size_t cols, double scale, Rng& rng) {
  if (!(scale > 0.0)) throw ConfigError("initialization scale must be positive");
  // Var(U(-a, a)) = a^2 / 3 = 2 / (fan_in + fan_out) / scale
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols) / scale);
  std::vector<double> v(rows * cols);
  for (double& x : v) x = rng.uniform(-a, a);
  return ad::Tensor::from(rows, cols, std::move(v));
}

double noam_lr(long step, std::size_t d_model, long warmup, double base) {
  if (step < 1) step = 1;
  if (warmup < 1) warmup = 1;
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  return base / std::sqrt(static_cast<double>(d_model)) * std::min(1.0 / std::sqrt(s), s * std::pow(w, -1.5));
}

void Adam::step(ParameterStore& params, double lr) {
  ++step_;
  const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(step_));
  for (auto& [name, p] : params.all()) {
    if (!p.has_grad()) continue;
    auto& st = state_[name];
    if (st.m.empty()) {
      st.m.assign(p.size(), 0.0);
      st.v.assign(p.size(), 0.0);
    }
    auto w = p.mutable_data();
    auto g = p.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      st.m[i] = options_.beta1 * st.m[i] + (1.0 - options_.beta1) * g[i];
      st.v[i] = options_.beta2 * st.v[i] + (1.0 - options_.beta2) * g[i] * g[i];
      const double mh = st.m[i] / c1;
      const double vh = st.v[i] / c2;
      w[i] -= lr * mh / (std::sqrt(vh) + options_.eps);
    }
  }
}

namespace {

static_assert(std::endian::native == std::endian::little, "parameter files assume a little-endian host");

}  // namespace

void save_parameters(const std::string& path, const ParameterStore& params, const nlohmann::json& metadata) {
  nlohmann::json header;
  header["metadata"] = metadata;
  header["tensors"] = nlohmann::json::object();
  std::size_t offset = 0;
  for (const auto& [name, t] : params.all()) {
    header["tensors"][name] = {{"shape", {t.rows(), t.cols()}}, {"dtype", "f64"}, {"offset", offset}};
    offset += t.size() * sizeof(double);
  }
  const std::string head = header.dump();
  std::string blob;
  blob.reserve(8 + head.size() + offset);
  std::uint64_t n = head.size();
  blob.append(reinterpret_cast<const char*>(&n), sizeof(n));
  blob += head;
  for (const auto& [name, t] : params.all()) {
    blob.append(reinterpret_cast<const char*>(t.data().data()), t.size() * sizeof(double));
  }
  write_file_atomic(path, blob);
}

LoadedParameters load_parameters(const std::string& path) {
  const std::string blob = read_file(path);
  if (blob.size() < 8) throw ParseError("parameter file '" + path + "' is truncated", 0);
  std::uint64_t n = 0;
  std::memcpy(&n, blob.data(), sizeof(n));
  if (8 + n > blob.size()) throw ParseError("parameter file '" + path + "' has a bad header length", 0);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(blob.substr(8, n));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("parameter file '" + path + "' header: " + e.what(), 0);
  }
  LoadedParameters out;
  out.metadata = header.value("metadata", nlohmann::json::object());
  const std::size_t base = 8 + n;
  for (const auto& [name, spec] : header.at("tensors").items()) {
    if (spec.at("dtype") != "f64") throw ParseError("tensor '" + name + "' has unsupported dtype", 0);
    const std::size_t rows = spec.at("shape").at(0), cols = spec.at("shape").at(1);
    const std::size_t off = spec.at("offset");
    if (base + off + rows * cols * sizeof(double) > blob.size()) {
      throw ParseError("tensor '" + name + "' runs past the end of '" + path + "'", 0);
    }
    std::vector<double> v(rows * cols);
    std::memcpy(v.data(), blob.data() + base + off, v.size() * sizeof(double));
    out.tensors.emplace(name, ad::Tensor::from(rows, cols, std::move(v)));
  }
  return out;
}

}  // namespace udsp
