#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "jina/error.hpp"
#include "jina/image.hpp"
#include "jina/nets.hpp"
#include "jina/stats.hpp"
#include "jina/transport.hpp"

namespace jina::losses {

struct LossConfig {
  double alpha = 1.0;      // weight of the rank term inside L_C
  double beta = 0.5;       // weight of L_WSD inside L_IS
  double lambda_is = 0.5;  // weight of L_IS inside L_JOINT++
  double tau = 0.5;        // soft-rank temperature, score units

  void validate() const {
    if (alpha < 0 || beta < 0 || lambda_is < 0) throw Error("loss weights must be non-negative");
    if (!(tau > 0)) throw Error("soft-rank temperature must be positive");
  }
};

enum class LossMode { is, fs, jointpp };

inline LossMode parse_loss_mode(const std::string& s) {
  if (s == "is" || s == "IS") return LossMode::is;
  if (s == "fs" || s == "FS") return LossMode::fs;
  if (s == "jointpp" || s == "JOINTPP" || s == "is+fs") return LossMode::jointpp;
  throw Error("unknown loss mode '" + s + "' (expected is, fs or jointpp)");
}

inline std::string to_string(LossMode m) {
  switch (m) {
    case LossMode::is: return "is";
    case LossMode::fs: return "fs";
    case LossMode::jointpp: return "jointpp";
  }
  return "?";
}

struct BatchScores {
  std::vector<double> pred_t;
  std::vector<double> pred_r;
  std::vector<double> mos;
  std::vector<double> mos_t;
  std::vector<double> mos_r;

  std::size_t size() const { return pred_t.size(); }

  void validate() const {
    const std::size_t n = pred_t.size();
    if (n == 0) throw Error("empty batch");
    if (pred_r.size() != n || mos.size() != n || mos_t.size() != n || mos_r.size() != n) {
      throw Error("batch vectors differ in length");
    }
  }
};

struct ValueGrad {
  double value = 0.0;
  std::vector<double> grad;
  bool skipped = false;  // degenerate rank term, contributes nothing
};

inline ValueGrad l_mse(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw Error("l_mse: length mismatch");
  if (pred.empty()) throw Error("l_mse: empty input");
  const double n = static_cast<double>(pred.size());
  ValueGrad out{0.0, std::vector<double>(pred.size())};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    out.value += d * d;
    out.grad[i] = 2.0 * d / n;
  }
  out.value /= n;
  return out;
}

// rank_i = 1 + sum_{j != i} logistic((x_i - x_j) / tau)
inline std::vector<double> soft_rank(std::span<const double> x, double tau) {
  if (!(tau > 0)) throw Error("soft_rank: tau must be positive");
  std::vector<double> r(x.size(), 1.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = 0; j < x.size(); ++j) {
      if (i != j) r[i] += nets::detail::logistic((x[i] - x[j]) / tau);
    }
  }
  return r;
}

// 1 - Pearson(soft_rank(pred), average_rank(target)). Target ranks are
// constants; the gradient flows through the soft ranks only.
inline ValueGrad l_srcc(std::span<const double> pred, std::span<const double> target, double tau) {
  if (pred.size() != target.size()) throw Error("l_srcc: length mismatch");
  if (pred.size() < 3) throw Error("l_srcc: need at least 3 samples");
  const std::size_t n = pred.size();
  ValueGrad out{0.0, std::vector<double>(n, 0.0)};
  if (stats::is_constant(target)) {
    out.skipped = true;
    return out;
  }
  const auto r = soft_rank(pred, tau);
  const auto v = stats::average_ranks(target);
  const double mr = stats::mean(r);
  const double mv = stats::mean(v);
  double srv = 0.0, srr = 0.0, svv = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    srv += (r[i] - mr) * (v[i] - mv);
    srr += (r[i] - mr) * (r[i] - mr);
    svv += (v[i] - mv) * (v[i] - mv);
  }
  if (srr == 0.0) {
    // All predictions tied: no rank information, no usable gradient.
    out.value = 1.0;
    return out;
  }
  const double denom = std::sqrt(srr * svv);
  const double rho = srv / denom;
  out.value = 1.0 - rho;

  // d rho / d r_i
  std::vector<double> drho_dr(n);
  for (std::size_t i = 0; i < n; ++i) drho_dr[i] = (v[i] - mv) / denom - rho * (r[i] - mr) / srr;
  // r_i depends on x_i (+) and x_j (-) through logistic'((x_i - x_j)/tau)/tau.
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double s = nets::detail::logistic((pred[i] - pred[j]) / tau);
      const double ds = s * (1.0 - s) / tau;
      out.grad[i] -= drho_dr[i] * ds;
      out.grad[j] += drho_dr[i] * ds;
    }
  }
  return out;
}

// L_C = L_MSE + alpha * L_SRCC
inline ValueGrad l_c(std::span<const double> pred, std::span<const double> target, const LossConfig& cfg) {
  ValueGrad out = l_mse(pred, target);
  if (cfg.alpha == 0.0) return out;
  const ValueGrad rank = l_srcc(pred, target, cfg.tau);
  if (rank.skipped) return out;
  out.value += cfg.alpha * rank.value;
  for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] += cfg.alpha * rank.grad[i];
  return out;
}

struct WsdTerm {
  double value = 0.0;
  double pixel_term = 0.0;  // constant w.r.t. parameters
  std::vector<double> stage_terms;
  std::vector<std::vector<double>> feature_grads;  // d value / d trace_img features
};

// W_2^2(I, I_LFM) + sum_i W_2^2(I^i, I^i_LFM). The LFM trace is a fixed
// target: no gradient flows into it. The pixel term depends on the images
// only, so callers may pass a precomputed value.
inline WsdTerm l_wsd(const Image& input, const Image& lfm, const nets::ForwardTrace& trace_img,
                     const nets::ForwardTrace& trace_lfm, std::optional<double> pixel_term = std::nullopt) {
  if (!input.same_geometry(lfm)) throw GeometryError("l_wsd: input and LFM images differ in geometry");
  if (trace_img.stage_count() != trace_lfm.stage_count()) throw GeometryError("l_wsd: stage count mismatch");
  WsdTerm out;
  out.pixel_term = pixel_term ? *pixel_term : transport::wsd_sq(input.values(), lfm.values());
  out.value = out.pixel_term;
  for (int s = 0; s < trace_img.stage_count(); ++s) {
    const auto a = trace_img.features(s);
    const auto b = trace_lfm.features(s);
    if (a.size() != b.size()) throw GeometryError("l_wsd: feature size mismatch at stage " + std::to_string(s));
    auto term = transport::wsd_sq_with_grad(a, b);
    out.value += term.value;
    out.stage_terms.push_back(term.value);
    out.feature_grads.push_back(std::move(term.grad_a));
  }
  return out;
}

// Total loss and its gradients w.r.t. both branches' batch predictions.
// `wsd_weight` is the factor the trainer applies to the per-batch L_WSD.
struct CompositeLoss {
  double value = 0.0;
  std::vector<double> grad_t;
  std::vector<double> grad_r;
  double wsd_weight = 0.0;
};

namespace detail {

inline void accumulate(CompositeLoss& acc, const ValueGrad& t, const ValueGrad& r, double w) {
  acc.value += w * (t.value + r.value);
  for (std::size_t i = 0; i < acc.grad_t.size(); ++i) {
    acc.grad_t[i] += w * t.grad[i];
    acc.grad_r[i] += w * r.grad[i];
  }
}

inline CompositeLoss empty_like(const BatchScores& b) {
  return {0.0, std::vector<double>(b.size(), 0.0), std::vector<double>(b.size(), 0.0), 0.0};
}

}  // namespace detail

// L_IS = L_C(S_T, MOS) + L_C(S_R, MOS) + beta * L_WSD
inline CompositeLoss l_is(const BatchScores& b, double wsd_value, const LossConfig& cfg) {
  b.validate();
  cfg.validate();
  CompositeLoss out = detail::empty_like(b);
  detail::accumulate(out, l_c(b.pred_t, b.mos, cfg), l_c(b.pred_r, b.mos, cfg), 1.0);
  out.value += cfg.beta * wsd_value;
  out.wsd_weight = cfg.beta;
  return out;
}

// L_FS = L_C(S_T, MOS_T) + L_C(S_R, MOS_R)
inline CompositeLoss l_fs(const BatchScores& b, const LossConfig& cfg) {
  b.validate();
  cfg.validate();
  CompositeLoss out = detail::empty_like(b);
  detail::accumulate(out, l_c(b.pred_t, b.mos_t, cfg), l_c(b.pred_r, b.mos_r, cfg), 1.0);
  return out;
}

// L_JOINT++ = L_FS + lambda_IS * L_IS
inline CompositeLoss l_jointpp(const BatchScores& b, double wsd_value, const LossConfig& cfg) {
  CompositeLoss out = l_fs(b, cfg);
  const CompositeLoss is = l_is(b, wsd_value, cfg);
  out.value += cfg.lambda_is * is.value;
  for (std::size_t i = 0; i < out.grad_t.size(); ++i) {
    out.grad_t[i] += cfg.lambda_is * is.grad_t[i];
    out.grad_r[i] += cfg.lambda_is * is.grad_r[i];
  }
  out.wsd_weight = cfg.lambda_is * is.wsd_weight;
  return out;
}

inline CompositeLoss evaluate(LossMode mode, const BatchScores& b, double wsd_value, const LossConfig& cfg) {
  switch (mode) {
    case LossMode::is: return l_is(b, wsd_value, cfg);
    case LossMode::fs: return l_fs(b, cfg);
    case LossMode::jointpp: return l_jointpp(b, wsd_value, cfg);
  }
  throw Error("unknown loss mode");
}

inline bool uses_wsd(LossMode mode) { return mode != LossMode::fs; }

}  // namespace jina::losses
