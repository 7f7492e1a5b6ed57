#include <gtest/gtest.h>

#include "jina/synth.hpp"
#include "support/fixtures.hpp"

namespace {

using namespace jina::synth;
using jina::Image;

double mean_abs_diff(const Image& a, const Image& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a.values()[i] - b.values()[i]);
  return s / static_cast<double>(a.size());
}

TEST(GenBase, Deterministic) {
  EXPECT_EQ(gen_base(3, 64, 7), gen_base(3, 64, 7));
  EXPECT_NE(gen_base(3, 64, 7), gen_base(4, 64, 7));
  const Image img = gen_base(5, 64, 7);
  EXPECT_EQ(img.channels(), 3);
  EXPECT_TRUE(img.in_unit_range());
}

TEST(ApplySpec, ZeroSpecIsIdentity) {
  const Image base = gen_base(1, 64, 7);
  EXPECT_EQ(apply_spec(base, {}, 9), base);
  DistortionSpec blur_only;
  blur_only.technical.blur_sigma = 0.0;
  EXPECT_EQ(apply_spec(base, blur_only, 9), base);
}

TEST(ApplySpec, NoiseLevel) {
  const Image gray(64, 64, 3, 0.5);
  DistortionSpec spec;
  spec.technical.noise_sigma = 0.1;
  const Image out = apply_spec(gray, spec, 4);
  double s = 0, s2 = 0;
  for (double v : out.values()) {
    s += v - 0.5;
    s2 += (v - 0.5) * (v - 0.5);
  }
  const double n = static_cast<double>(out.size());
  const double sd = std::sqrt((s2 - s * s / n) / (n - 1));
  EXPECT_NEAR(sd, 0.1, 0.01);
}

TEST(ApplySpec, Deterministic) {
  const Image base = gen_base(2, 64, 7);
  jina::Rng rng(1);
  const auto spec = sample_spec(rng);
  EXPECT_EQ(apply_spec(base, spec, 5), apply_spec(base, spec, 5));
}

TEST(ApplySpec, StrongerDistortionMovesFurther) {
  const Image base = gen_base(2, 64, 7);
  const auto with = [&](auto set) {
    DistortionSpec s;
    set(s, 1.0);
    const double weak = mean_abs_diff(apply_spec(base, s, 3), base);
    set(s, 3.0);
    return std::make_pair(weak, mean_abs_diff(apply_spec(base, s, 3), base));
  };
  const auto blur = with([](DistortionSpec& s, double k) { s.technical.blur_sigma = 0.5 * k; });
  EXPECT_LT(blur.first, blur.second);
  const auto contrast = with([](DistortionSpec& s, double k) { s.technical.contrast_scale = 0.2 * k; });
  EXPECT_LT(contrast.first, contrast.second);
  const auto hue = with([](DistortionSpec& s, double k) { s.rationality.hue_rotation = 0.5 * k; });
  EXPECT_LT(hue.first, hue.second);
  const auto transplant = with([](DistortionSpec& s, double k) { s.rationality.patch_transplant_count = k; });
  EXPECT_LT(transplant.first, transplant.second);
}

TEST(ApplySpec, RejectsNegativeMagnitudes) {
  DistortionSpec s;
  s.technical.noise_sigma = -1;
  EXPECT_THROW(apply_spec(Image(64, 64, 3), s, 1), jina::Error);
}

TEST(ScoreSpec, Extremes) {
  const auto pristine = score_spec({});
  EXPECT_EQ(pristine.mos_t, 5.0);
  EXPECT_EQ(pristine.mos_r, 5.0);
  DistortionSpec s;
  s.technical.blur_sigma = Saturation{}.blur_sigma;
  const auto sat = score_spec(s);
  EXPECT_EQ(sat.mos_t, 1.0);
  EXPECT_EQ(sat.mos_r, 5.0);
}

TEST(GenDataset, SinglePristineSample) {
  fixture::TempDir dir("synth");
  SynthConfig cfg;
  cfg.contents = 1;
  cfg.specs_per_content = 1;
  const auto m = gen_dataset(cfg, dir.path());
  ASSERT_EQ(m.samples.size(), 1u);
  EXPECT_EQ(*m.samples[0].mos_t, 5.0);
  EXPECT_EQ(*m.samples[0].mos_r, 5.0);
  EXPECT_EQ(*m.samples[0].mos, 5.0);
}

TEST(GenDataset, SizeRangeAndReproducibility) {
  fixture::TempDir a("synth"), b("synth");
  SynthConfig cfg;
  cfg.contents = 50;
  cfg.specs_per_content = 10;
  cfg.side = 32;
  const auto m = gen_dataset(cfg, a.path());
  ASSERT_EQ(m.samples.size(), 500u);
  for (const auto& s : m.samples) {
    for (double v : {*s.mos, *s.mos_t, *s.mos_r}) {
      EXPECT_GE(v, 1.0);
      EXPECT_LE(v, 5.0);
    }
  }
  EXPECT_EQ(m.content_ids().size(), 50u);
  gen_dataset(cfg, b.path());
  EXPECT_EQ(fixture::read_text(a / "manifest.jsonl"), fixture::read_text(b / "manifest.jsonl"));
  EXPECT_EQ(fixture::read_text(a / "images/c0007_s03.png"), fixture::read_text(b / "images/c0007_s03.png"));
}

}  // namespace
