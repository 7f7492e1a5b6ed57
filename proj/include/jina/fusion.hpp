#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "jina/error.hpp"

namespace jina::fusion {

struct FusionWeights {
  double w_t = 0.145;
  double w_r = 0.769;
  double intercept = 0.0;

  bool operator==(const FusionWeights&) const = default;
};

inline nlohmann::json to_json(const FusionWeights& w) {
  return {{"w_t", w.w_t}, {"w_r", w.w_r}, {"intercept", w.intercept}};
}

inline FusionWeights weights_from_json(const nlohmann::json& j) {
  return {j.at("w_t").get<double>(), j.at("w_r").get<double>(), j.value("intercept", 0.0)};
}

inline double fuse(double s_t, double s_r, const FusionWeights& w) { return w.w_t * s_t + w.w_r * s_r + w.intercept; }

struct MosTriple {
  double mos_t = 0.0;
  double mos_r = 0.0;
  double mos = 0.0;
};

struct FitResult {
  FusionWeights weights;
  double residual_rms = 0.0;
};

class RankDeficientError : public Error {
 public:
  using Error::Error;
};

namespace detail {

// Solves the k x k system in place by Gaussian elimination with partial
// pivoting; throws when a pivot vanishes relative to the matrix scale.
template <std::size_t K>
std::array<double, K> solve(std::array<std::array<double, K>, K> a, std::array<double, K> b, std::size_t k) {
  double scale = 0.0;
  for (std::size_t i = 0; i < k; ++i) scale = std::max(scale, std::abs(a[i][i]));
  const double tol = 1e-10 * std::max(scale, 1e-300);
  for (std::size_t col = 0; col < k; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < k; ++r) {
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    }
    if (std::abs(a[piv][col]) <= tol) {
      throw RankDeficientError("fit_weights: design matrix is rank deficient (column " + std::to_string(col) +
                               "); are mos_t and mos_r collinear?");
    }
    std::swap(a[piv], a[col]);
    std::swap(b[piv], b[col]);
    for (std::size_t r = col + 1; r < k; ++r) {
      const double f = a[r][col] / a[col][col];
      for (std::size_t c = col; c < k; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  std::array<double, K> x{};
  for (std::size_t i = k; i-- > 0;) {
    double s = b[i];
    for (std::size_t c = i + 1; c < k; ++c) s -= a[i][c] * x[c];
    x[i] = s / a[i][i];
  }
  return x;
}

}  // namespace detail

// Ordinary least squares mos ~ w_t * mos_t + w_r * mos_r (+ intercept) via
// the normal equations.
inline FitResult fit_weights(std::span<const MosTriple> data, bool with_intercept = false) {
  if (data.size() < 3) throw Error("fit_weights: need at least 3 triples");
  const std::size_t k = with_intercept ? 3 : 2;
  std::array<std::array<double, 3>, 3> xtx{};
  std::array<double, 3> xty{};
  for (const auto& d : data) {
    const std::array<double, 3> row{d.mos_t, d.mos_r, 1.0};
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) xtx[i][j] += row[i] * row[j];
      xty[i] += row[i] * d.mos;
    }
  }
  const auto beta = detail::solve<3>(xtx, xty, k);
  FitResult out;
  out.weights = {beta[0], beta[1], with_intercept ? beta[2] : 0.0};
  double ss = 0.0;
  for (const auto& d : data) {
    const double r = d.mos - fuse(d.mos_t, d.mos_r, out.weights);
    ss += r * r;
  }
  out.residual_rms = std::sqrt(ss / static_cast<double>(data.size()));
  return out;
}

}  // namespace jina::fusion
