#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "json.hpp"
#include "jina/error.hpp"
#include "jina/fusion.hpp"
#include "jina/image.hpp"
#include "jina/manifest.hpp"
#include "jina/png_io.hpp"
#include "jina/rng.hpp"

// Procedural stand-in corpus: layered outdoor scenes plus controllable
// technical and rationality distortions with analytic scores.
namespace jina::synth {

struct TechnicalDistortion {
  double blur_sigma = 0.0;       // pixels
  double contrast_scale = 0.0;   // fraction of contrast removed, [0,1]
  double luminance_shift = 0.0;  // added brightness
  double noise_sigma = 0.0;      // additive Gaussian
  double scramble_cells = 0.0;   // fine cells (side/8) with shuffled pixels
};

struct RationalityDistortion {
  double hue_rotation = 0.0;             // radians about the gray axis
  double patch_transplant_count = 0.0;   // foreign cells pasted in
  double duplication_count = 0.0;        // regions copied elsewhere
  double layout_shuffle_strength = 0.0;  // [0,1], fraction of coarse blocks swapped
};

struct DistortionSpec {
  TechnicalDistortion technical;
  RationalityDistortion rationality;

  void validate() const {
    const auto& t = technical;
    const auto& r = rationality;
    for (double v : {t.blur_sigma, t.contrast_scale, t.luminance_shift, t.noise_sigma, t.scramble_cells,
                     r.hue_rotation, r.patch_transplant_count, r.duplication_count, r.layout_shuffle_strength}) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw Error("distortion magnitudes must be finite and >= 0");
    }
  }
};

// Magnitude at which each distortion alone drives its perspective to the floor.
struct Saturation {
  double blur_sigma = 2.5;
  double contrast_scale = 0.8;
  double luminance_shift = 0.45;
  double noise_sigma = 0.12;
  double scramble_cells = 24.0;
  double hue_rotation = std::numbers::pi;
  double patch_transplant_count = 8.0;
  double duplication_count = 4.0;
  double layout_shuffle_strength = 1.0;
};

inline nlohmann::json to_json(const DistortionSpec& s) {
  const auto& t = s.technical;
  const auto& r = s.rationality;
  return {{"technical",
           {{"blur_sigma", t.blur_sigma},
            {"contrast_scale", t.contrast_scale},
            {"luminance_shift", t.luminance_shift},
            {"noise_sigma", t.noise_sigma},
            {"scramble_cells", t.scramble_cells}}},
          {"rationality",
           {{"hue_rotation", r.hue_rotation},
            {"patch_transplant_count", r.patch_transplant_count},
            {"duplication_count", r.duplication_count},
            {"layout_shuffle_strength", r.layout_shuffle_strength}}}};
}

// Offset that maps the fused score range [0.914, 4.57] onto [1.344, 5].
inline constexpr double kMosIntercept = 5.0 - 5.0 * (0.145 + 0.769);

namespace detail {

inline std::array<double, 3> jitter(Rng& rng, std::array<double, 3> c, double amount) {
  for (double& v : c) v = std::clamp(v + rng.uniform(-amount, amount), 0.0, 1.0);
  return c;
}

inline void paint(Image& img, int y, int x, const std::array<double, 3>& c) {
  for (int k = 0; k < 3; ++k) img(y, x, k) = c[k];
}

inline std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  return k;
}

inline int reflect(int i, int n) {
  while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
  return i;
}

// k distinct indices from [0, n), in draw order.
inline std::vector<int> distinct(Rng& rng, int n, int k) {
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  for (int i = 0; i < k; ++i) std::swap(idx[i], idx[i + static_cast<int>(rng.below(n - i))]);
  idx.resize(k);
  return idx;
}

inline void swap_blocks(Image& img, int y0, int x0, int y1, int x1, int size) {
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      for (int c = 0; c < img.channels(); ++c) std::swap(img(y0 + y, x0 + x, c), img(y1 + y, x1 + x, c));
    }
  }
}

inline void copy_block(const Image& src, int sy, int sx, Image& dst, int dy, int dx, int size) {
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      for (int c = 0; c < dst.channels(); ++c) dst(dy + y, dx + x, c) = src(sy + y, sx + x, c);
    }
  }
}

}  // namespace detail

// Deterministic scene per (content_id, seed): sky gradient over a ground
// plane, a sun, a few objects standing on the ground, banded texture.
inline Image gen_base(std::uint64_t content_id, int side, std::uint64_t seed) {
  if (side < 8) throw GeometryError("synthetic image side must be >= 8");
  Rng rng(derive_seed(seed, 0x5ce9e, content_id));
  Image img(side, side, 3);
  const int horizon = static_cast<int>(side * rng.uniform(0.42, 0.62));
  const auto sky_top = detail::jitter(rng, {0.20, 0.40, 0.85}, 0.06);
  const auto sky_low = detail::jitter(rng, {0.65, 0.80, 0.95}, 0.05);
  const auto ground_top = detail::jitter(rng, {0.35, 0.60, 0.20}, 0.07);
  const auto ground_low = detail::jitter(rng, {0.25, 0.38, 0.12}, 0.06);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      std::array<double, 3> c{};
      if (y < horizon) {
        const double t = static_cast<double>(y) / std::max(1, horizon - 1);
        for (int k = 0; k < 3; ++k) c[k] = (1 - t) * sky_top[k] + t * sky_low[k];
      } else {
        const double t = static_cast<double>(y - horizon) / std::max(1, side - horizon - 1);
        for (int k = 0; k < 3; ++k) c[k] = (1 - t) * ground_top[k] + t * ground_low[k];
      }
      detail::paint(img, y, x, c);
    }
  }

  // Sun.
  const double sun_r = side * rng.uniform(0.05, 0.09);
  const double sun_x = side * rng.uniform(0.15, 0.85);
  const double sun_y = horizon * rng.uniform(0.2, 0.6);
  const auto sun = detail::jitter(rng, {1.0, 0.92, 0.55}, 0.05);
  for (int y = 0; y < horizon; ++y) {
    for (int x = 0; x < side; ++x) {
      if (std::hypot(x + 0.5 - sun_x, y + 0.5 - sun_y) <= sun_r) detail::paint(img, y, x, sun);
    }
  }

  // Objects resting on the ground: trunks with crowns, houses, rocks.
  static constexpr std::array<std::array<double, 3>, 5> kPalette = {
      {{0.45, 0.30, 0.15}, {0.70, 0.20, 0.15}, {0.55, 0.55, 0.55}, {0.15, 0.40, 0.12}, {0.85, 0.80, 0.65}}};
  const int objects = 2 + static_cast<int>(rng.below(3));
  for (int o = 0; o < objects; ++o) {
    const auto color = detail::jitter(rng, kPalette[rng.below(kPalette.size())], 0.05);
    const int w = std::max(2, static_cast<int>(side * rng.uniform(0.06, 0.18)));
    const int h = std::max(2, static_cast<int>(side * rng.uniform(0.08, 0.25)));
    const int base = std::min(side - 1, horizon + static_cast<int>((side - horizon) * rng.uniform(0.05, 0.8)));
    const int x0 = static_cast<int>(rng.below(static_cast<std::size_t>(std::max(1, side - w))));
    const bool round = rng.bernoulli(0.4);
    for (int y = std::max(0, base - h); y <= base; ++y) {
      for (int x = x0; x < std::min(side, x0 + w); ++x) {
        if (round) {
          const double cy = base - h / 2.0;
          const double cx = x0 + w / 2.0;
          const double dy = (y + 0.5 - cy) / (h / 2.0);
          const double dx = (x + 0.5 - cx) / (w / 2.0);
          if (dx * dx + dy * dy > 1.0) continue;
        }
        detail::paint(img, y, x, color);
      }
    }
  }

  // Band-limited texture.
  std::array<double, 3> fx{}, fy{}, ph{};
  for (int i = 0; i < 3; ++i) {
    fx[i] = rng.uniform(2.0, 10.0) * 2.0 * std::numbers::pi / side;
    fy[i] = rng.uniform(2.0, 10.0) * 2.0 * std::numbers::pi / side;
    ph[i] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      double t = 0.0;
      for (int i = 0; i < 3; ++i) t += std::sin(fx[i] * x + fy[i] * y + ph[i]);
      for (int k = 0; k < 3; ++k) img(y, x, k) = std::clamp(img(y, x, k) + 0.03 * t, 0.0, 1.0);
    }
  }
  return img;
}

inline Image gaussian_blur(const Image& img, double sigma) {
  if (sigma <= 0.0) return img;
  const auto k = detail::gaussian_kernel(sigma);
  const int radius = static_cast<int>(k.size() / 2);
  Image tmp(img.height(), img.width(), img.channels());
  Image out(img.height(), img.width(), img.channels());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < img.channels(); ++c) {
        double s = 0.0;
        for (int i = -radius; i <= radius; ++i) s += k[i + radius] * img(y, detail::reflect(x + i, img.width()), c);
        tmp(y, x, c) = s;
      }
    }
  }
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < img.channels(); ++c) {
        double s = 0.0;
        for (int i = -radius; i <= radius; ++i) s += k[i + radius] * tmp(detail::reflect(y + i, img.height()), x, c);
        out(y, x, c) = s;
      }
    }
  }
  return out;
}

// Rotation of each RGB vector about the gray axis (1,1,1)/sqrt(3).
inline void rotate_hue(Image& img, double theta) {
  if (theta == 0.0 || img.channels() != 3) return;
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  const double k = 1.0 / std::sqrt(3.0);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const double r = img(y, x, 0), g = img(y, x, 1), b = img(y, x, 2);
      const double dot = k * (r + g + b);
      const double cr = k * (b - g), cg = k * (r - b), cb = k * (g - r);  // axis x v
      img(y, x, 0) = r * c + cr * s + k * dot * (1 - c);
      img(y, x, 1) = g * c + cg * s + k * dot * (1 - c);
      img(y, x, 2) = b * c + cb * s + k * dot * (1 - c);
    }
  }
}

// Blur, contrast, luminance, noise, then pixel scrambling inside distinct
// fine cells; clamped.
inline Image apply_technical(const Image& base, const TechnicalDistortion& t, Rng& rng) {
  Image img = gaussian_blur(base, t.blur_sigma);
  if (t.contrast_scale > 0.0) {
    const double keep = 1.0 - std::min(t.contrast_scale, 1.0);
    for (double& v : img.values()) v = 0.5 + keep * (v - 0.5);
  }
  if (t.luminance_shift > 0.0) {
    for (double& v : img.values()) v += t.luminance_shift;
  }
  if (t.noise_sigma > 0.0) {
    for (double& v : img.values()) v += t.noise_sigma * rng.normal();
  }
  const int fine = std::max(2, std::min(img.height(), img.width()) / 8);
  const int gh = img.height() / fine, gw = img.width() / fine;
  const int scrambles = std::min(gh * gw, static_cast<int>(std::lround(t.scramble_cells)));
  for (int cell : detail::distinct(rng, gh * gw, scrambles)) {
    const int y0 = cell / gw * fine, x0 = cell % gw * fine;
    const auto order = detail::distinct(rng, fine * fine, fine * fine);
    const Image block = img.crop(y0, x0, fine, fine);
    for (int i = 0; i < fine * fine; ++i) {
      for (int c = 0; c < img.channels(); ++c) {
        img(y0 + i / fine, x0 + i % fine, c) = block(order[i] / fine, order[i] % fine, c);
      }
    }
  }
  img.clamp();
  return img;
}

// Technical ops then rationality ops (hue, transplant, duplication, coarse
// layout shuffle). Transplants come from a donor scene chosen by `seed` and
// degraded like the host, so they change layout only.
inline Image apply_spec(const Image& base, const DistortionSpec& spec, std::uint64_t seed) {
  spec.validate();
  const auto& t = spec.technical;
  const auto& r = spec.rationality;
  Rng rng(seed);
  Image img = apply_technical(base, t, rng);
  rotate_hue(img, r.hue_rotation);
  const int side = std::min(img.height(), img.width());
  const int coarse = std::max(2, side / 4);
  const int gh = img.height() / coarse, gw = img.width() / coarse;
  // Structural edits move content across the horizon so each unit of
  // strength is visible: ground cells land in the sky and vice versa.
  const int cells = gh * gw;
  const auto flipped = [&](int i) { return (gh - 1 - i / gw) * gw + i % gw; };
  const int transplants = std::min(cells, static_cast<int>(std::lround(r.patch_transplant_count)));
  if (transplants > 0) {
    Image donor = gen_base(rng.next(), img.height(), rng.next());
    donor = apply_technical(donor, t, rng);
    rotate_hue(donor, r.hue_rotation);
    const auto dst = detail::distinct(rng, cells, transplants);
    for (int d : dst) {
      const int src = flipped(d);
      detail::copy_block(donor, src / gw * coarse, src % gw * coarse, img, d / gw * coarse, d % gw * coarse, coarse);
    }
  }
  const int duplicates = static_cast<int>(std::lround(r.duplication_count));
  const int half = img.height() / 2;
  for (int i = 0; i < duplicates; ++i) {
    // Something from the lower half (where objects stand) copied into the upper half.
    const int sy = half + static_cast<int>(rng.below(std::max(1, img.height() - coarse - half + 1)));
    const int sx = static_cast<int>(rng.below(img.width() - coarse + 1));
    const int dy = static_cast<int>(rng.below(std::max(1, half - coarse + 1)));
    const int dx = static_cast<int>(rng.below(img.width() - coarse + 1));
    const Image copy = img.crop(std::min(sy, img.height() - coarse), sx, coarse, coarse);
    detail::copy_block(copy, 0, 0, img, dy, dx, coarse);
  }
  // Swap pairs (upper cell, row-mirrored lower cell), distinct pairs.
  const int pairs = (gh / 2) * gw;
  const int swaps = std::min(pairs, static_cast<int>(std::lround(r.layout_shuffle_strength * pairs)));
  for (int a : detail::distinct(rng, pairs, swaps)) {
    const int b = flipped(a);
    detail::swap_blocks(img, a / gw * coarse, a % gw * coarse, b / gw * coarse, b % gw * coarse, coarse);
  }
  img.clamp();
  return img;
}

struct PerspectiveScores {
  double mos_t = 5.0;
  double mos_r = 5.0;
};

// 5 - 4 * min(1, sum of magnitudes normalized by their saturation points),
// separately per perspective.
inline PerspectiveScores score_spec(const DistortionSpec& spec, const Saturation& sat = {}) {
  spec.validate();
  const auto& t = spec.technical;
  const auto& r = spec.rationality;
  const double tech = t.blur_sigma / sat.blur_sigma + t.contrast_scale / sat.contrast_scale +
                      t.luminance_shift / sat.luminance_shift + t.noise_sigma / sat.noise_sigma +
                      t.scramble_cells / sat.scramble_cells;
  const double rat = r.hue_rotation / sat.hue_rotation + r.patch_transplant_count / sat.patch_transplant_count +
                     r.duplication_count / sat.duplication_count +
                     r.layout_shuffle_strength / sat.layout_shuffle_strength;
  return {5.0 - 4.0 * std::min(1.0, tech), 5.0 - 4.0 * std::min(1.0, rat)};
}

// Random spec: each perspective independently gets a severity in [0,1]
// spread over one or two of its distortion types.
inline DistortionSpec sample_spec(Rng& rng, const Saturation& sat = {}) {
  DistortionSpec spec;
  const auto split = [&](int types, double severity, auto&& assign) {
    if (severity <= 0.0) return;
    const int first = static_cast<int>(rng.below(types));
    if (rng.bernoulli(0.5)) {
      assign(first, severity);
      return;
    }
    int second = static_cast<int>(rng.below(types - 1));
    if (second >= first) ++second;
    const double share = rng.uniform(0.3, 0.7);
    assign(first, severity * share);
    assign(second, severity * (1.0 - share));
  };
  const double st = rng.bernoulli(0.85) ? rng.uniform(0.0, 1.0) : 0.0;
  const double sr = rng.bernoulli(0.85) ? rng.uniform(0.0, 1.0) : 0.0;
  auto& t = spec.technical;
  auto& r = spec.rationality;
  split(5, st, [&](int k, double s) {
    switch (k) {
      case 0: t.blur_sigma += s * sat.blur_sigma; break;
      case 1: t.contrast_scale += s * sat.contrast_scale; break;
      case 2: t.luminance_shift += s * sat.luminance_shift; break;
      case 3: t.noise_sigma += s * sat.noise_sigma; break;
      default: t.scramble_cells += s * sat.scramble_cells; break;
    }
  });
  split(4, sr, [&](int k, double s) {
    switch (k) {
      case 0: r.hue_rotation += s * sat.hue_rotation; break;
      case 1: r.patch_transplant_count += s * sat.patch_transplant_count; break;
      case 2: r.duplication_count += s * sat.duplication_count; break;
      default: r.layout_shuffle_strength += s * sat.layout_shuffle_strength; break;
    }
  });
  return spec;
}

struct SynthConfig {
  int contents = 50;
  int specs_per_content = 10;
  int side = 64;
  std::uint64_t seed = 7;
  double label_noise = 0.0;  // std of Gaussian noise added to mos
  // When set, the first spec of each content is pristine.
  bool include_pristine = true;
};

struct SynthSample {
  Image image;
  std::string content_id;
  DistortionSpec spec;
  double mos_t = 5.0;
  double mos_r = 5.0;
  double mos = 5.0;
};

inline std::string content_name(int content) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "c%04d", content);
  return buf;
}

inline SynthSample make_sample(const SynthConfig& cfg, int content, int spec_index, const Saturation& sat = {}) {
  const std::uint64_t sample_seed = derive_seed(cfg.seed, content, spec_index);
  Rng rng(sample_seed);
  SynthSample s;
  s.content_id = content_name(content);
  if (!(cfg.include_pristine && spec_index == 0)) s.spec = sample_spec(rng, sat);
  const Image base = gen_base(static_cast<std::uint64_t>(content), cfg.side, cfg.seed);
  s.image = apply_spec(base, s.spec, rng.next());
  const auto scores = score_spec(s.spec, sat);
  s.mos_t = scores.mos_t;
  s.mos_r = scores.mos_r;
  double mos = fusion::fuse(s.mos_t, s.mos_r, {0.145, 0.769, kMosIntercept});
  if (cfg.label_noise > 0.0) mos += cfg.label_noise * rng.normal();
  s.mos = std::clamp(mos, 1.0, 5.0);
  return s;
}

// Writes images/<id>.png plus manifest.jsonl under out_dir.
inline DatasetManifest gen_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
  if (cfg.contents < 1 || cfg.specs_per_content < 1) throw Error("synth: need at least one content and one spec");
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "images").string() + ": " + ec.message());
  DatasetManifest manifest;
  manifest.base_dir = out_dir;
  for (int c = 0; c < cfg.contents; ++c) {
    for (int k = 0; k < cfg.specs_per_content; ++k) {
      const SynthSample s = make_sample(cfg, c, k);
      char id[48];
      std::snprintf(id, sizeof id, "%s_s%02d", s.content_id.c_str(), k);
      const std::string rel = std::string("images/") + id + ".png";
      save_png(s.image, out_dir / rel);
      Sample row;
      row.id = id;
      row.path = rel;
      row.content_id = s.content_id;
      row.mos_t = s.mos_t;
      row.mos_r = s.mos_r;
      row.mos = s.mos;
      manifest.samples.push_back(std::move(row));
    }
  }
  save_manifest(manifest, out_dir / "manifest.jsonl");
  return manifest;
}

}  // namespace jina::synth
