#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "jina/error.hpp"

// Rank and correlation primitives shared by the losses and the evaluation
// metrics.
namespace jina::stats {

// 1-based ascending ranks; tied values share the mean of their positions.
inline std::vector<double> average_ranks(std::span<const double> v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && v[idx[j]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j + 1);  // mean of positions i+1 .. j
    for (std::size_t k = i; k < j; ++k) ranks[idx[k]] = r;
    i = j;
  }
  return ranks;
}

inline double mean(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline bool is_constant(std::span<const double> v) {
  return std::adjacent_find(v.begin(), v.end(), std::not_equal_to<>()) == v.end();
}

// Centered product-moment correlation. Throws on constant input.
inline double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("correlation: length mismatch");
  if (a.size() < 2) throw Error("correlation: need at least 2 values");
  if (is_constant(a) || is_constant(b)) throw Error("correlation: constant vector");
  const double ma = mean(a);
  const double mb = mean(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

}  // namespace jina::stats
