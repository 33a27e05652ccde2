#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <vector>

#include "savipp/common.hpp"
#include "savipp/model/params.hpp"

namespace savipp::train {

// Linear warmup from 0 to peak, then cosine decay back to 0 at total_steps.
inline double lr_schedule(std::int64_t step, std::int64_t warmup_steps,
                          std::int64_t total_steps, double peak_lr) {
  if (step < 0 || step > total_steps)
    throw ParameterError("schedule step " + std::to_string(step) + " outside [0, " +
                         std::to_string(total_steps) + "]");
  if (warmup_steps > 0 && step <= warmup_steps)
    return peak_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  const double progress = static_cast<double>(step - warmup_steps) /
                          static_cast<double>(total_steps - warmup_steps);
  return peak_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

// Joint L2 norm over all gradient buffers; scales in place when the norm
// exceeds max_norm. Returns the pre-clip norm.
template <std::floating_point T>
double clip_global_norm(std::vector<std::vector<T>>* grads, double max_norm) {
  if (!(max_norm > 0)) throw ParameterError("clip_norm must be positive");
  double sq = 0;
  for (const auto& g : *grads)
    for (const T v : g) sq += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    // Slightly conservative so fp32 rounding cannot push the clipped norm
    // back above the bound.
    const T scale = static_cast<T>(max_norm / norm * (1.0 - 1e-6));
    for (auto& g : *grads)
      for (auto& v : g) v *= scale;
  }
  return norm;
}

template <std::floating_point T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::int64_t step = 0;

  explicit AdamState(const model::ParamStore<T>& store) {
    m.resize(store.size());
    v.resize(store.size());
    for (std::size_t i = 0; i < store.size(); ++i) {
      m[i].assign(store.at(i).value.size(), T(0));
      v[i].assign(store.at(i).value.size(), T(0));
    }
  }
};

// Bias-corrected Adam update, beta1 0.9, beta2 0.999, eps 1e-8.
template <std::floating_point T>
void adam_step(model::ParamStore<T>* store, const std::vector<std::vector<T>>& grads,
               AdamState<T>* state, double lr, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8) {
  if (grads.size() != store->size())
    throw ContractError("gradient list does not mirror the parameter store");
  state->step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state->step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state->step));
  for (std::size_t i = 0; i < store->size(); ++i) {
    auto& p = store->at(i).value;
    auto& m = state->m[i];
    auto& v = state->v[i];
    if (grads[i].size() != p.size())
      throw ContractError("gradient shape mismatch for " + store->at(i).name);
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double g = static_cast<double>(grads[i][j]);
      const double mj = beta1 * static_cast<double>(m[j]) + (1.0 - beta1) * g;
      const double vj = beta2 * static_cast<double>(v[j]) + (1.0 - beta2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      p[j] -= static_cast<T>(lr * (mj / bc1) / (std::sqrt(vj / bc2) + eps));
    }
  }
}

}  // namespace savipp::train
