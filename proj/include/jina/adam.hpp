#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "jina/error.hpp"
#include "jina/nets.hpp"

namespace jina::nets {

struct AdamConfig {
  double lr = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

enum class StepStatus { applied, skipped_non_finite };

namespace detail {

struct BiasCorrection {
  double first;
  double second;
};

inline BiasCorrection bias_correction(const AdamConfig& cfg, std::int64_t t) {
  return {1.0 - std::pow(cfg.beta1, static_cast<double>(t)), 1.0 - std::pow(cfg.beta2, static_cast<double>(t))};
}

inline void adam_update(std::span<double> p, std::span<const double> g, std::span<double> m,
                        std::span<double> v, const AdamConfig& cfg, BiasCorrection bc) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    const double m_hat = m[i] / bc.first;
    const double v_hat = v[i] / bc.second;
    p[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
  }
}

inline bool all_finite(std::span<const double> g) {
  for (double x : g) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace detail

// Bias-corrected Adam over a flat parameter vector. Non-finite gradients leave
// parameters and state untouched.
inline StepStatus adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
                            const AdamConfig& cfg) {
  if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw Error("adam: parameter, gradient and state sizes differ");
  }
  if (!detail::all_finite(grads)) return StepStatus::skipped_non_finite;
  ++state.step;
  detail::adam_update(params, grads, state.m, state.v, cfg, detail::bias_correction(cfg, state.step));
  return StepStatus::applied;
}

// Same update applied tensor by tensor following the branch layout.
inline StepStatus adam_step_per_tensor(BranchParams& params, std::span<const double> grads, AdamState& state,
                                       const AdamConfig& cfg) {
  if (params.values.size() != grads.size() || state.m.size() != grads.size() || state.v.size() != grads.size()) {
    throw Error("adam: parameter, gradient and state sizes differ");
  }
  if (!detail::all_finite(grads)) return StepStatus::skipped_non_finite;
  ++state.step;
  const auto bc = detail::bias_correction(cfg, state.step);
  for (const auto& t : ParamLayout(params.config).tensors()) {
    detail::adam_update(std::span(params.values).subspan(t.offset, t.size), grads.subspan(t.offset, t.size),
                        std::span(state.m).subspan(t.offset, t.size), std::span(state.v).subspan(t.offset, t.size),
                        cfg, bc);
  }
  return StepStatus::applied;
}

}  // namespace jina::nets
