#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "t3t/config.hpp"
#include "t3t/tensor.hpp"

namespace t3t {

struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

template <class Params>
std::vector<NamedTensor> named_parameters(Params& params) {
  std::vector<NamedTensor> out;
  params.for_each([&](const std::string& name, Tensor& t) { out.push_back({name, &t}); });
  return out;
}

struct OptimizerState {
  AdamConfig cfg;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m, v;
};

// Bias-corrected Adam. Throws NumericError naming the parameter if any
// gradient is non-finite; nothing is updated in that case.
inline void adam_step(std::span<const NamedTensor> params, OptimizerState& state) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor->size(), 0.0);
      state.v.emplace_back(p.tensor->size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ContractError("adam_step: parameter list changed between steps");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& t = *params[i].tensor;
    if (t.grad().size() != t.size() || state.m[i].size() != t.size())
      throw ContractError("adam_step: parameter '" + params[i].name + "' has no gradient buffer of matching size");
    for (std::size_t k = 0; k < t.size(); ++k)
      if (!std::isfinite(t.grad()[k]))
        throw NumericError("adam_step: non-finite gradient in '" + params[i].name + "' at element " +
                           std::to_string(k) + " (step " + std::to_string(state.step + 1) + ")");
  }
  ++state.step;
  const auto& c = state.cfg;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i].tensor;
    auto g = p.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
      p[k] -= c.lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + c.eps);
    }
  }
}

}  // namespace t3t
