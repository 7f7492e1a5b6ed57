#include <gtest/gtest.h>

#include "jina/rng.hpp"
#include "jina/transport.hpp"
#include "support/oracles.hpp"

namespace {

using jina::transport::wsd;
using V = std::vector<double>;

V sample(jina::Rng& rng, std::size_t n) {
  V v(n);
  for (double& x : v) x = rng.uniform(-2.0, 2.0);
  return v;
}

TEST(Wsd, IdenticalSamples) {
  const V a{0.3, -1.0, 2.5};
  for (double l : {1.0, 1.5, 2.0, 3.0}) EXPECT_EQ(wsd(a, a, l), 0.0);
}

TEST(Wsd, ConstantShift) { EXPECT_DOUBLE_EQ(wsd(V{0, 1, 2}, V{1, 2, 3}, 1.0), 1.0); }

TEST(Wsd, SortedDifferenceMean) { EXPECT_DOUBLE_EQ(wsd(V{1, 2, 3}, V{2, 3, 5}, 1.0), 4.0 / 3.0); }

TEST(Wsd, OrderInvariant) { EXPECT_DOUBLE_EQ(wsd(V{3, 1, 2}, V{5, 2, 3}, 1.0), 4.0 / 3.0); }

TEST(Wsd, MatchesPermutationSearch) {
  jina::Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 1 + rng.below(6);
    const V a = sample(rng, n), b = sample(rng, n);
    const double l = 1.0 + rng.uniform(0.0, 2.0);
    EXPECT_NEAR(wsd(a, b, l), oracle::wasserstein_permutations(a, b, l), 1e-12);
  }
}

TEST(Wsd, UnequalSizesMatchReplication) {
  jina::Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    const V a = sample(rng, 1 + rng.below(6)), b = sample(rng, 1 + rng.below(6));
    const double l = 1.0 + rng.uniform(0.0, 2.0);
    EXPECT_NEAR(wsd(a, b, l), oracle::wasserstein_replicated(a, b, l), 1e-12);
  }
}

TEST(Wsd, Errors) {
  EXPECT_THROW(wsd(V{}, V{1}), jina::Error);
  EXPECT_THROW(wsd(V{1}, V{1}, 0.5), jina::Error);
  EXPECT_THROW(wsd(V{std::nan("")}, V{1}), jina::Error);
}

TEST(WsdSq, ZeroAtEquality) {
  const V a{1, 4, 2};
  const auto r = jina::transport::wsd_sq_with_grad(a, a);
  EXPECT_EQ(r.value, 0.0);
  for (double g : r.grad_a) EXPECT_EQ(g, 0.0);
  for (double g : r.grad_b) EXPECT_EQ(g, 0.0);
}

TEST(WsdSq, SortedPairing) {
  EXPECT_DOUBLE_EQ(jina::transport::wsd_sq(V{0, 0}, V{3, 4}), 12.5);
  EXPECT_DOUBLE_EQ(jina::transport::wsd_sq_with_grad(V{0, 0}, V{4, 3}).value, 12.5);
}

TEST(WsdSq, AgreesWithGeneralOrder) {
  jina::Rng rng(5);
  const V a = sample(rng, 9), b = sample(rng, 9);
  EXPECT_NEAR(jina::transport::wsd_sq(a, b), std::pow(wsd(a, b, 2.0), 2), 1e-12);
}

TEST(WsdSq, GradientMatchesFiniteDifferences) {
  jina::Rng rng(6);
  V a = sample(rng, 12), b = sample(rng, 12);
  const auto r = jina::transport::wsd_sq_with_grad(a, b);
  const auto f = [&] { return jina::transport::wsd_sq(a, b); };
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_LT(oracle::rel_err(r.grad_a[i], oracle::central_diff(f, a[i], 1e-6), 1e-8), 1e-6);
    EXPECT_LT(oracle::rel_err(r.grad_b[i], oracle::central_diff(f, b[i], 1e-6), 1e-8), 1e-6);
  }
}

TEST(WsdSq, SizeMismatch) { EXPECT_THROW(jina::transport::wsd_sq_with_grad(V{1, 2}, V{1}), jina::Error); }

}  // namespace
