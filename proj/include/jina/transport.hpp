#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "jina/error.hpp"

// One-dimensional Wasserstein distances between uniformly weighted samples.
namespace jina::transport {

namespace detail {

inline void check_sample(std::span<const double> s, const char* name) {
  if (s.empty()) throw Error(std::string("wsd: empty sample ") + name);
  for (double v : s) {
    if (!std::isfinite(v)) throw NumericError(std::string("wsd: non-finite value in ") + name);
  }
}

inline std::vector<double> sorted(std::span<const double> s) {
  std::vector<double> v(s.begin(), s.end());
  std::sort(v.begin(), v.end());
  return v;
}

// Indices ordering s ascending; ties keep index order.
inline std::vector<std::size_t> argsort(std::span<const double> s) {
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a] < s[b]; });
  return idx;
}

}  // namespace detail

// W_l via the quantile functions: integrates |F_a^-(t) - F_b^-(t)|^l over
// [0,1] on the merged breakpoint grid {i/n} U {j/m}.
inline double wsd(std::span<const double> a, std::span<const double> b, double l = 2.0) {
  if (!(l >= 1.0)) throw Error("wsd: order l must be >= 1");
  detail::check_sample(a, "a");
  detail::check_sample(b, "b");
  const auto sa = detail::sorted(a);
  const auto sb = detail::sorted(b);
  const std::uint64_t n = sa.size();
  const std::uint64_t m = sb.size();

  double integral = 0.0;
  if (n == m) {
    for (std::size_t i = 0; i < n; ++i) integral += std::pow(std::abs(sa[i] - sb[i]), l);
    integral /= static_cast<double>(n);
  } else {
    // Breakpoints compared exactly as i*m vs j*n.
    std::uint64_t i = 1, j = 1;
    double t_prev = 0.0;
    while (i <= n && j <= m) {
      const std::uint64_t lhs = i * m;
      const std::uint64_t rhs = j * n;
      const double t = lhs <= rhs ? static_cast<double>(i) / n : static_cast<double>(j) / m;
      integral += (t - t_prev) * std::pow(std::abs(sa[i - 1] - sb[j - 1]), l);
      t_prev = t;
      if (lhs == rhs) {
        ++i;
        ++j;
      } else if (lhs < rhs) {
        ++i;
      } else {
        ++j;
      }
    }
  }
  return std::pow(integral, 1.0 / l);
}

struct WsdSqGrad {
  double value = 0.0;
  std::vector<double> grad_a;
  std::vector<double> grad_b;
};

// Squared W_2 between equal-size samples with gradients; the sorting
// permutation is held constant, which is exact wherever no ties occur.
inline WsdSqGrad wsd_sq_with_grad(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error("wsd_sq: sample sizes differ (" + std::to_string(a.size()) + " vs " +
                std::to_string(b.size()) + ")");
  }
  detail::check_sample(a, "a");
  detail::check_sample(b, "b");
  const std::size_t k = a.size();
  const auto ia = detail::argsort(a);
  const auto ib = detail::argsort(b);

  WsdSqGrad out{0.0, std::vector<double>(k), std::vector<double>(k)};
  const double scale = 2.0 / static_cast<double>(k);
  for (std::size_t r = 0; r < k; ++r) {
    const double d = a[ia[r]] - b[ib[r]];
    out.value += d * d;
    out.grad_a[ia[r]] = scale * d;
    out.grad_b[ib[r]] = -scale * d;
  }
  out.value /= static_cast<double>(k);
  return out;
}

// Value only; avoids allocating gradient buffers.
inline double wsd_sq(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("wsd_sq: sample sizes differ");
  detail::check_sample(a, "a");
  detail::check_sample(b, "b");
  const auto sa = detail::sorted(a);
  const auto sb = detail::sorted(b);
  double s = 0.0;
  for (std::size_t i = 0; i < sa.size(); ++i) s += (sa[i] - sb[i]) * (sa[i] - sb[i]);
  return s / static_cast<double>(sa.size());
}

}  // namespace jina::transport
