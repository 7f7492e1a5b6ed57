#pragma once

#include <span>
#include <vector>

#include "jina/error.hpp"
#include "jina/stats.hpp"

namespace jina::eval {

// Spearman correlation as Pearson over average ranks; valid with ties.
inline double srcc(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw Error("srcc: length mismatch");
  if (pred.size() < 2) throw Error("srcc: need at least 2 values");
  if (stats::is_constant(pred) || stats::is_constant(target)) throw Error("srcc: constant vector");
  const auto rp = stats::average_ranks(pred);
  const auto rt = stats::average_ranks(target);
  return stats::pearson(rp, rt);
}

// 1 - 6 sum d^2 / (N (N^2 - 1)); agrees with srcc() only when neither input has ties.
inline double srcc_d2(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw Error("srcc: length mismatch");
  if (pred.size() < 2) throw Error("srcc: need at least 2 values");
  const auto rp = stats::average_ranks(pred);
  const auto rt = stats::average_ranks(target);
  double d2 = 0.0;
  for (std::size_t i = 0; i < rp.size(); ++i) d2 += (rp[i] - rt[i]) * (rp[i] - rt[i]);
  const double n = static_cast<double>(rp.size());
  return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

inline double plcc(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw Error("plcc: length mismatch");
  return stats::pearson(pred, target);
}

}  // namespace jina::eval
