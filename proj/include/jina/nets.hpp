#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "jina/error.hpp"
#include "jina/image.hpp"
#include "jina/rng.hpp"

// Staged convolutional branch: S x [3x3 conv (zero pad) -> sharpened softplus -> 2x2
// mean pool], then global mean pool and an affine head to a scalar score.
// Every stage output is exposed as a flattened feature vector.
namespace jina::nets {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct BranchConfig {
  int stages = 5;
  int base_channels = 8;  // doubles every stage
  int input_channels = 3;

  void validate() const {
    if (stages < 1) throw Error("branch: stages must be >= 1");
    if (base_channels < 1) throw Error("branch: base_channels must be >= 1");
    if (input_channels != 1 && input_channels != 3) throw Error("branch: input_channels must be 1 or 3");
  }

  int in_channels(int stage) const { return stage == 0 ? input_channels : out_channels(stage - 1); }
  int out_channels(int stage) const { return base_channels << stage; }
  int side_divisor() const { return 1 << stages; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (int s = 0; s < stages; ++s) {
      n += static_cast<std::size_t>(out_channels(s)) * in_channels(s) * 9 + out_channels(s);
    }
    return n + out_channels(stages - 1) + 1;
  }

  bool operator==(const BranchConfig&) const = default;
};

inline nlohmann::json to_json(const BranchConfig& c) {
  return {{"stages", c.stages}, {"base_channels", c.base_channels}, {"input_channels", c.input_channels}};
}

inline BranchConfig branch_config_from_json(const nlohmann::json& j) {
  BranchConfig c;
  c.stages = j.at("stages").get<int>();
  c.base_channels = j.at("base_channels").get<int>();
  c.input_channels = j.at("input_channels").get<int>();
  c.validate();
  return c;
}

// Offsets of each tensor inside the flat parameter vector, in declaration
// order: per stage kernel [out][in][3][3] then bias, then head weight, head bias.
struct ParamLayout {
  struct Tensor {
    std::size_t offset;
    std::size_t size;
  };
  std::vector<Tensor> kernels;
  std::vector<Tensor> biases;
  Tensor head_weight{};
  Tensor head_bias{};

  explicit ParamLayout(const BranchConfig& cfg) {
    std::size_t off = 0;
    for (int s = 0; s < cfg.stages; ++s) {
      const std::size_t k = static_cast<std::size_t>(cfg.out_channels(s)) * cfg.in_channels(s) * 9;
      kernels.push_back({off, k});
      off += k;
      biases.push_back({off, static_cast<std::size_t>(cfg.out_channels(s))});
      off += cfg.out_channels(s);
    }
    head_weight = {off, static_cast<std::size_t>(cfg.out_channels(cfg.stages - 1))};
    off += head_weight.size;
    head_bias = {off, 1};
  }

  std::vector<Tensor> tensors() const {
    std::vector<Tensor> all;
    for (std::size_t s = 0; s < kernels.size(); ++s) {
      all.push_back(kernels[s]);
      all.push_back(biases[s]);
    }
    all.push_back(head_weight);
    all.push_back(head_bias);
    return all;
  }
};

struct BranchParams {
  BranchConfig config;
  std::vector<double> values;

  std::span<double> flat() { return values; }
  std::span<const double> flat() const { return values; }

  Eigen::Map<const Mat> kernel(int s) const {
    const ParamLayout layout(config);
    return {values.data() + layout.kernels[s].offset, config.out_channels(s), config.in_channels(s) * 9};
  }
  Eigen::Map<const Eigen::VectorXd> bias(int s) const {
    const ParamLayout layout(config);
    return {values.data() + layout.biases[s].offset, config.out_channels(s)};
  }
  Eigen::Map<const Eigen::VectorXd> head_weight() const {
    const ParamLayout layout(config);
    return {values.data() + layout.head_weight.offset, config.out_channels(config.stages - 1)};
  }
  double head_bias() const { return values.back(); }

  bool operator==(const BranchParams&) const = default;
};

// Uniform in [-sqrt(1/fan_in), +sqrt(1/fan_in)] for every tensor, biases included.
inline BranchParams init_params(const BranchConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  BranchParams p{cfg, std::vector<double>(cfg.param_count())};
  const ParamLayout layout(cfg);
  Rng rng(seed);
  const auto fill = [&](const ParamLayout::Tensor& t, int fan_in) {
    const double bound = std::sqrt(1.0 / fan_in);
    for (std::size_t i = 0; i < t.size; ++i) p.values[t.offset + i] = rng.uniform(-bound, bound);
  };
  for (int s = 0; s < cfg.stages; ++s) {
    fill(layout.kernels[s], cfg.in_channels(s) * 9);
    fill(layout.biases[s], cfg.in_channels(s) * 9);
  }
  fill(layout.head_weight, cfg.out_channels(cfg.stages - 1));
  fill(layout.head_bias, cfg.out_channels(cfg.stages - 1));
  return p;
}

struct StageCache {
  int height = 0;  // conv resolution (before pooling)
  int width = 0;
  Mat cols;    // im2col of the stage input, (in*9) x (h*w)
  Mat pre;     // pre-activation, out x (h*w)
  Mat slope;   // activation derivative at pre
  Mat pooled;  // stage output, out x (h/2*w/2)
};

struct ForwardTrace {
  std::vector<StageCache> stages;
  Eigen::VectorXd pooled_head;  // global mean of the last stage
  double score = 0.0;

  int stage_count() const { return static_cast<int>(stages.size()); }
  std::span<const double> features(int s) const {
    const Mat& m = stages[s].pooled;
    return {m.data(), static_cast<std::size_t>(m.size())};
  }
};

// Channel planes of the image, values mapped from [0,1] to [-1,1] so that
// first-stage units see both signs.
inline Mat to_planes(const Image& img) {
  Mat x(img.channels(), static_cast<Eigen::Index>(img.pixel_count()));
  const auto v = img.values();
  for (std::size_t p = 0; p < img.pixel_count(); ++p) {
    for (int c = 0; c < img.channels(); ++c) x(c, static_cast<Eigen::Index>(p)) = 2.0 * v[p * img.channels() + c] - 1.0;
  }
  return x;
}

namespace detail {

inline void im2col(const Mat& x, int h, int w, Mat& cols) {
  const int cin = static_cast<int>(x.rows());
  cols.setZero(cin * 9, static_cast<Eigen::Index>(h) * w);
  for (int c = 0; c < cin; ++c) {
    const double* src = x.row(c).data();
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        double* dst = cols.row(c * 9 + ky * 3 + kx).data();
        const int dy = ky - 1;
        const int dx = kx - 1;
        const int x0 = std::max(0, -dx);
        const int x1 = std::min(w, w - dx);
        for (int y = std::max(0, -dy); y < std::min(h, h - dy); ++y) {
          const double* s = src + static_cast<std::ptrdiff_t>(y + dy) * w + dx;
          double* d = dst + static_cast<std::ptrdiff_t>(y) * w;
          for (int xx = x0; xx < x1; ++xx) d[xx] = s[xx];
        }
      }
    }
  }
}

inline void col2im(const Mat& cols, int cin, int h, int w, Mat& dx) {
  dx.setZero(cin, static_cast<Eigen::Index>(h) * w);
  for (int c = 0; c < cin; ++c) {
    double* dst = dx.row(c).data();
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const double* src = cols.row(c * 9 + ky * 3 + kx).data();
        const int dy = ky - 1;
        const int ddx = kx - 1;
        const int x0 = std::max(0, -ddx);
        const int x1 = std::min(w, w - ddx);
        for (int y = std::max(0, -dy); y < std::min(h, h - dy); ++y) {
          const double* s = src + static_cast<std::ptrdiff_t>(y) * w;
          double* d = dst + static_cast<std::ptrdiff_t>(y + dy) * w + ddx;
          for (int xx = x0; xx < x1; ++xx) d[xx] += s[xx];
        }
      }
    }
  }
}

inline double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Sharpened softplus: log(1 + exp(k x)) / k. Close to a rectifier yet smooth.
inline constexpr double kSharpness = 100.0;

// Vectorized activation over a whole stage; fills the derivative as well.
inline Mat activate(const Mat& pre, Mat& slope) {
  const auto kx = (kSharpness * pre.array()).eval();
  const auto e = (-kx.abs()).exp().eval();
  slope = (kx >= 0.0).select((1.0 + e).inverse(), e / (1.0 + e)).matrix();
  return ((kx.max(0.0) + (1.0 + e).log()) / kSharpness).matrix();
}

inline Mat mean_pool2(const Mat& act, int h, int w) {
  const int oh = h / 2;
  const int ow = w / 2;
  Mat out(act.rows(), static_cast<Eigen::Index>(oh) * ow);
  for (Eigen::Index c = 0; c < act.rows(); ++c) {
    const double* a = act.row(c).data();
    double* o = out.row(c).data();
    for (int y = 0; y < oh; ++y) {
      const double* r0 = a + static_cast<std::ptrdiff_t>(2 * y) * w;
      const double* r1 = r0 + w;
      for (int x = 0; x < ow; ++x) {
        o[y * ow + x] = 0.25 * (r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]);
      }
    }
  }
  return out;
}

}  // namespace detail

inline void check_input(const BranchConfig& cfg, const Image& img) {
  const int d = cfg.side_divisor();
  if (img.height() % d != 0 || img.width() % d != 0) {
    throw GeometryError("branch input " + std::to_string(img.height()) + "x" +
                        std::to_string(img.width()) + " is not divisible by " + std::to_string(d));
  }
  if (img.channels() != cfg.input_channels) {
    throw GeometryError("branch expects " + std::to_string(cfg.input_channels) + " channels, got " +
                        std::to_string(img.channels()));
  }
}

inline ForwardTrace forward(const BranchParams& params, const Image& img) {
  const BranchConfig& cfg = params.config;
  check_input(cfg, img);
  ForwardTrace trace;
  trace.stages.resize(cfg.stages);
  Mat x = to_planes(img);
  int h = img.height();
  int w = img.width();
  for (int s = 0; s < cfg.stages; ++s) {
    StageCache& st = trace.stages[s];
    st.height = h;
    st.width = w;
    detail::im2col(x, h, w, st.cols);
    st.pre.noalias() = params.kernel(s) * st.cols;
    st.pre.colwise() += params.bias(s);
    const Mat act = detail::activate(st.pre, st.slope);
    st.pooled = detail::mean_pool2(act, h, w);
    h /= 2;
    w /= 2;
    x = st.pooled;
  }
  trace.pooled_head = trace.stages.back().pooled.rowwise().mean();
  trace.score = params.head_weight().dot(trace.pooled_head) + params.head_bias();
  return trace;
}

struct Gradients {
  std::vector<double> params;
  Mat input;  // C x HW, filled only when requested
};

// Upstream gradient: d loss / d score plus optional d loss / d features per
// stage (empty vector = zero).
struct Upstream {
  double score = 0.0;
  std::vector<std::vector<double>> features;
};

inline Gradients backward(const BranchParams& params, const ForwardTrace& trace, const Upstream& up,
                          bool want_input_grad = false) {
  const BranchConfig& cfg = params.config;
  if (trace.stage_count() != cfg.stages) throw GeometryError("backward: trace does not match params");
  if (!up.features.empty() && static_cast<int>(up.features.size()) != cfg.stages) {
    throw GeometryError("backward: expected " + std::to_string(cfg.stages) + " feature gradients");
  }
  const ParamLayout layout(cfg);
  Gradients g;
  g.params.assign(cfg.param_count(), 0.0);

  const auto feature_grad = [&](int s) -> const std::vector<double>* {
    if (up.features.empty() || up.features[s].empty()) return nullptr;
    if (up.features[s].size() != static_cast<std::size_t>(trace.stages[s].pooled.size())) {
      throw GeometryError("backward: feature gradient size mismatch at stage " + std::to_string(s));
    }
    return &up.features[s];
  };

  // Head.
  const Eigen::Index last_c = trace.stages.back().pooled.rows();
  const Eigen::Index last_n = trace.stages.back().pooled.cols();
  for (Eigen::Index c = 0; c < last_c; ++c) {
    g.params[layout.head_weight.offset + c] = up.score * trace.pooled_head(c);
  }
  g.params[layout.head_bias.offset] = up.score;
  Mat dpool(last_c, last_n);
  const auto hw = params.head_weight();
  for (Eigen::Index c = 0; c < last_c; ++c) dpool.row(c).setConstant(up.score * hw(c) / static_cast<double>(last_n));

  for (int s = cfg.stages - 1; s >= 0; --s) {
    const StageCache& st = trace.stages[s];
    if (const auto* fg = feature_grad(s)) {
      dpool += Eigen::Map<const Mat>(fg->data(), dpool.rows(), dpool.cols());
    }
    const int h = st.height;
    const int w = st.width;
    const int ow = w / 2;
    Mat dpre(st.pre.rows(), st.pre.cols());
    for (Eigen::Index c = 0; c < st.pre.rows(); ++c) {
      const double* dp = dpool.row(c).data();
      const double* slope = st.slope.row(c).data();
      double* out = dpre.row(c).data();
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const std::ptrdiff_t i = static_cast<std::ptrdiff_t>(y) * w + x;
          out[i] = 0.25 * dp[(y / 2) * ow + x / 2] * slope[i];
        }
      }
    }
    const Mat dk = dpre * st.cols.transpose();
    std::copy(dk.data(), dk.data() + dk.size(), g.params.begin() + static_cast<std::ptrdiff_t>(layout.kernels[s].offset));
    const Eigen::VectorXd db = dpre.rowwise().sum();
    std::copy(db.data(), db.data() + db.size(), g.params.begin() + static_cast<std::ptrdiff_t>(layout.biases[s].offset));
    if (s == 0 && !want_input_grad) break;
    const Mat dcols = params.kernel(s).transpose() * dpre;
    Mat dx;
    detail::col2im(dcols, cfg.in_channels(s), h, w, dx);
    if (s == 0) {
      g.input = 2.0 * dx;
    } else {
      dpool = std::move(dx);
    }
  }
  return g;
}

}  // namespace jina::nets
