#include <gtest/gtest.h>

#include "jina/adam.hpp"
#include "jina/checkpoint.hpp"
#include "jina/nets.hpp"
#include "jina/rng.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

namespace {

using jina::Image;
using jina::nets::BranchConfig;
using jina::nets::BranchParams;

Image random_image(int h, int w, int c, std::uint64_t seed) {
  jina::Rng rng(seed);
  Image img(h, w, c);
  for (double& v : img.values()) v = rng.uniform();
  return img;
}

BranchConfig small(int stages, int base = 4) { return {stages, base, 3}; }

TEST(Init, Deterministic) {
  const auto a = jina::nets::init_params(small(2), 5);
  EXPECT_EQ(a, jina::nets::init_params(small(2), 5));
  EXPECT_NE(a.values, jina::nets::init_params(small(2), 6).values);
  EXPECT_EQ(a.values.size(), small(2).param_count());
}

TEST(Init, BoundedAndCentred) {
  const BranchConfig cfg{4, 8, 3};
  const auto p = jina::nets::init_params(cfg, 1);
  const jina::nets::ParamLayout layout(cfg);
  std::vector<double> u;  // values rescaled to [-1, 1]
  for (int s = 0; s < cfg.stages; ++s) {
    const double bound = std::sqrt(1.0 / (cfg.in_channels(s) * 9));
    for (const auto& t : {layout.kernels[s], layout.biases[s]}) {
      for (std::size_t i = 0; i < t.size; ++i) {
        ASSERT_LE(std::abs(p.values[t.offset + i]), bound);
        u.push_back(p.values[t.offset + i] / bound);
      }
    }
  }
  ASSERT_GE(u.size(), 10000u);
  u.resize(10000);
  double mean = 0;
  for (double v : u) mean += v;
  mean /= u.size();
  EXPECT_LT(std::abs(mean), 3.0 / std::sqrt(3.0 * u.size()));
}

TEST(Forward, ZeroNetworkGivesHeadBias) {
  BranchParams p{small(2), std::vector<double>(small(2).param_count(), 0.0)};
  p.values.back() = 2.75;
  EXPECT_EQ(jina::nets::forward(p, random_image(16, 16, 3, 1)).score, 2.75);
}

TEST(Forward, HeadIsLinear) {
  auto p = jina::nets::init_params(small(2), 3);
  const Image img = random_image(16, 16, 3, 2);
  const double bias = p.head_bias();
  const double before = jina::nets::forward(p, img).score - bias;
  const jina::nets::ParamLayout layout(p.config);
  for (std::size_t i = 0; i < layout.head_weight.size; ++i) p.values[layout.head_weight.offset + i] *= 2;
  EXPECT_NEAR(jina::nets::forward(p, img).score - bias, 2 * before, 1e-12);
}

TEST(Forward, MatchesStraightLoop) {
  const auto p = jina::nets::init_params(small(2), 4);
  const Image img = random_image(32, 32, 3, 5);
  const auto trace = jina::nets::forward(p, img);
  const auto ref = oracle::branch_forward(p, img);
  EXPECT_NEAR(trace.score, ref.score, 1e-12);
  for (int s = 0; s < 2; ++s) {
    const auto f = trace.features(s);
    ASSERT_EQ(f.size(), ref.features[s].size());
    for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(f[i], ref.features[s][i], 1e-12);
  }
}

TEST(Forward, Deterministic) {
  const auto p = jina::nets::init_params(small(3), 4);
  const Image img = random_image(16, 16, 3, 5);
  const auto a = jina::nets::forward(p, img), b = jina::nets::forward(p, img);
  EXPECT_EQ(a.score, b.score);
  for (int s = 0; s < 3; ++s) EXPECT_TRUE(std::ranges::equal(a.features(s), b.features(s)));
}

TEST(Forward, GeometryErrors) {
  const auto p = jina::nets::init_params(small(2), 4);
  EXPECT_THROW(jina::nets::forward(p, Image(18, 16, 3)), jina::GeometryError);
  EXPECT_THROW(jina::nets::forward(p, Image(16, 16, 1)), jina::GeometryError);
}

// Zero padding makes border units differ, so a constant input yields
// per-channel constant features only away from the border. Mid-gray maps to
// the padding value, so its first stage is constant everywhere.
TEST(Forward, ConstantInputFeatures) {
  const auto p = jina::nets::init_params(small(2), 7);
  const auto mid = jina::nets::forward(p, Image(16, 16, 3, 0.5));
  const auto& first = mid.stages[0].pooled;
  for (Eigen::Index c = 0; c < first.rows(); ++c) EXPECT_EQ(first.row(c).maxCoeff(), first.row(c).minCoeff());
  const auto bright = jina::nets::forward(p, Image(16, 16, 3, 0.9));
  const auto& m = bright.stages[0].pooled;  // 8x8 per channel
  for (Eigen::Index c = 0; c < m.rows(); ++c) {
    const double ref = m(c, 1 * 8 + 1);
    for (int y = 1; y < 7; ++y) {
      for (int x = 1; x < 7; ++x) EXPECT_NEAR(m(c, y * 8 + x), ref, 1e-15);
    }
  }
}

TEST(Backward, ZeroUpstreamGivesZeroGrads) {
  const auto p = jina::nets::init_params(small(2), 1);
  const auto trace = jina::nets::forward(p, random_image(16, 16, 3, 1));
  for (double g : jina::nets::backward(p, trace, {}).params) EXPECT_EQ(g, 0.0);
}

TEST(Backward, ScoreGradientMatchesFiniteDifferences) {
  auto p = jina::nets::init_params(small(2), 11);
  const Image img = random_image(16, 16, 3, 12);
  const auto g = jina::nets::backward(p, jina::nets::forward(p, img), {1.0, {}}).params;
  const auto f = [&] { return jina::nets::forward(p, img).score; };
  double worst = 0;
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    worst = std::max(worst, oracle::rel_err(g[i], oracle::central_diff(f, p.values[i], 1e-5), 1e-6));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(Backward, InputGradientMatchesFiniteDifferences) {
  const auto p = jina::nets::init_params(small(1), 13);
  Image img = random_image(8, 8, 3, 14);
  const auto g = jina::nets::backward(p, jina::nets::forward(p, img), {1.0, {}}, true);
  const auto f = [&] { return jina::nets::forward(p, img).score; };
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double fd = oracle::central_diff(f, img(y, x, c), 1e-6);
        EXPECT_LT(oracle::rel_err(g.input(c, y * 8 + x), fd, 1e-6), 1e-4);
      }
    }
  }
}

TEST(Backward, FeatureGradientsAreLocal) {
  const auto p = jina::nets::init_params(small(3), 21);
  const auto trace = jina::nets::forward(p, random_image(16, 16, 3, 22));
  const jina::nets::ParamLayout layout(p.config);
  for (int s = 0; s < 3; ++s) {
    jina::nets::Upstream up{0.0, std::vector<std::vector<double>>(3)};
    up.features[s].assign(trace.features(s).size(), 0.5);
    const auto g = jina::nets::backward(p, trace, up).params;
    for (int k = 0; k < 3; ++k) {
      double mass = 0;
      for (const auto& t : {layout.kernels[k], layout.biases[k]}) {
        for (std::size_t i = 0; i < t.size; ++i) mass += std::abs(g[t.offset + i]);
      }
      if (k <= s) EXPECT_GT(mass, 0.0) << "stage " << k;
      else EXPECT_EQ(mass, 0.0) << "stage " << k;
    }
    for (std::size_t i = layout.head_weight.offset; i < g.size(); ++i) EXPECT_EQ(g[i], 0.0);
  }
}

TEST(Backward, FeatureGradientMatchesFiniteDifferences) {
  auto p = jina::nets::init_params(small(2), 31);
  const Image img = random_image(16, 16, 3, 32);
  const auto trace = jina::nets::forward(p, img);
  jina::Rng rng(33);
  jina::nets::Upstream up{0.7, {}};
  for (int s = 0; s < 2; ++s) {
    std::vector<double> w(trace.features(s).size());
    for (double& v : w) v = rng.uniform(-1, 1);
    up.features.push_back(w);
  }
  const auto g = jina::nets::backward(p, trace, up).params;
  const auto f = [&] {
    const auto t = jina::nets::forward(p, img);
    double v = 0.7 * t.score;
    for (int s = 0; s < 2; ++s) {
      const auto feat = t.features(s);
      for (std::size_t i = 0; i < feat.size(); ++i) v += up.features[s][i] * feat[i];
    }
    return v;
  };
  double worst = 0;
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    worst = std::max(worst, oracle::rel_err(g[i], oracle::central_diff(f, p.values[i], 1e-5), 1e-6));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(Backward, ShapeMismatch) {
  const auto p = jina::nets::init_params(small(2), 1);
  const auto trace = jina::nets::forward(p, random_image(16, 16, 3, 1));
  EXPECT_THROW(jina::nets::backward(jina::nets::init_params(small(3), 1), trace, {1.0, {}}), jina::GeometryError);
  EXPECT_THROW(jina::nets::backward(p, trace, {1.0, {{1.0}}}), jina::GeometryError);
}

TEST(Adam, ZeroGradLeavesParams) {
  std::vector<double> p{1.0, -2.0, 3.5};
  const auto keep = p;
  jina::nets::AdamState st(3);
  jina::nets::adam_step(p, std::vector<double>(3, 0.0), st, {});
  EXPECT_EQ(p, keep);
}

TEST(Adam, FirstStepMovesByLr) {
  std::vector<double> p{1.0, -2.0, 3.5};
  jina::nets::AdamState st(3);
  const jina::nets::AdamConfig cfg{1e-3};
  jina::nets::adam_step(p, std::vector<double>(3, 0.4), st, cfg);
  EXPECT_NEAR(p[0], 1.0 - 1e-3, 1e-9);
  EXPECT_NEAR(p[1], -2.0 - 1e-3, 1e-9);
  EXPECT_NEAR(p[2], 3.5 - 1e-3, 1e-9);
}

TEST(Adam, SkipsNonFiniteGradients) {
  std::vector<double> p{1.0, 2.0};
  jina::nets::AdamState st(2);
  EXPECT_EQ(jina::nets::adam_step(p, std::vector<double>{1.0, INFINITY}, st, {}),
            jina::nets::StepStatus::skipped_non_finite);
  EXPECT_EQ(st.step, 0);
  EXPECT_EQ(p, (std::vector<double>{1.0, 2.0}));
  EXPECT_THROW(jina::nets::adam_step(p, std::vector<double>{1.0}, st, {}), jina::Error);
}

TEST(Adam, VectorAndPerTensorAgreeBitwise) {
  auto a = jina::nets::init_params(small(2), 3);
  auto b = a;
  jina::nets::AdamState sa(a.values.size()), sb(b.values.size());
  jina::Rng rng(4);
  for (int step = 0; step < 5; ++step) {
    std::vector<double> g(a.values.size());
    for (double& v : g) v = rng.normal();
    jina::nets::adam_step(a.values, g, sa, {1e-2});
    jina::nets::adam_step_per_tensor(b, g, sb, {1e-2});
  }
  EXPECT_EQ(a.values, b.values);
  EXPECT_EQ(sa.m, sb.m);
  EXPECT_EQ(sa.v, sb.v);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  fixture::TempDir dir("ckpt");
  jina::nets::Checkpoint c{jina::nets::init_params(small(2), 1), jina::nets::init_params(small(3, 2), 2), 99,
                           {{"note", "x"}}};
  jina::nets::save_checkpoint(c, dir / "m.ckpt");
  const auto back = jina::nets::load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(back.technical, c.technical);
  EXPECT_EQ(back.rationality, c.rationality);
  EXPECT_EQ(back.seed, 99u);
  EXPECT_EQ(back.meta, c.meta);
  EXPECT_EQ(jina::nets::serialize_checkpoint(back), jina::nets::serialize_checkpoint(c));
}

TEST(Checkpoint, RejectsCorruptInput) {
  EXPECT_THROW(jina::nets::deserialize_checkpoint("garbage"), jina::FormatError);
  auto bytes = jina::nets::serialize_checkpoint({jina::nets::init_params(small(1), 1),
                                                 jina::nets::init_params(small(1), 2), 0, {}});
  bytes.pop_back();
  EXPECT_THROW(jina::nets::deserialize_checkpoint(bytes), jina::FormatError);
}

}  // namespace
