#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "jina/error.hpp"
#include "jina/image.hpp"

// Low-frequency map: piecewise-smooth approximation of an image through an
// elliptic edge-indicator relaxation of the free-discontinuity energy,
// minimized by alternating between the smooth image u and the edge field z.
namespace jina::lfm {

struct LfmConfig {
  double mu = 8.0;        // smoothness weight
  double nu = 0.01;       // edge-length weight
  double epsilon = 0.05;  // edge band width
  int outer_iters = 10;
  double inner_tol = 1e-6;  // absolute residual 2-norm
  int inner_max_iters = 5000;

  void validate() const {
    if (!(mu > 0.0) || !(nu > 0.0) || !(epsilon > 0.0)) {
      throw Error("lfm: mu, nu and epsilon must be positive");
    }
    if (outer_iters < 1) throw Error("lfm: outer_iters must be >= 1");
    if (!(inner_tol > 0.0) || inner_max_iters < 1) throw Error("lfm: invalid inner solver settings");
  }
};

struct LfmResult {
  Image smooth;
  Image edge_field;  // 1 = no edge
  // energy_trace[0] is the energy of the starting point (u = I, z = 1);
  // entry k is the energy after outer iteration k.
  std::vector<double> energy_trace;
};

namespace detail {

struct SolveStats {
  int iterations = 0;
  double residual = 0.0;
};

// Jacobi-preconditioned conjugate gradients, warm-started from x. The
// quadratic objective never increases along the iterates.
inline SolveStats pcg(const std::function<void(const std::vector<double>&, std::vector<double>&)>& apply,
                      const std::vector<double>& diag, const std::vector<double>& b,
                      std::vector<double>& x, double tol, int max_iters) {
  const std::size_t n = b.size();
  std::vector<double> r(n), z(n), p(n), ap(n);
  apply(x, ap);
  double rnorm2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    r[i] = b[i] - ap[i];
    rnorm2 += r[i] * r[i];
  }
  if (std::sqrt(rnorm2) <= tol) return {0, std::sqrt(rnorm2)};
  double rz = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    z[i] = r[i] / diag[i];
    p[i] = z[i];
    rz += r[i] * z[i];
  }
  for (int it = 1; it <= max_iters; ++it) {
    apply(p, ap);
    double pap = 0.0;
    for (std::size_t i = 0; i < n; ++i) pap += p[i] * ap[i];
    if (!(pap > 0.0)) return {it, std::sqrt(rnorm2)};
    const double step = rz / pap;
    rnorm2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += step * p[i];
      r[i] -= step * ap[i];
      rnorm2 += r[i] * r[i];
    }
    if (std::sqrt(rnorm2) <= tol) return {it, std::sqrt(rnorm2)};
    double rz_next = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      z[i] = r[i] / diag[i];
      rz_next += r[i] * z[i];
    }
    const double beta = rz_next / rz;
    rz = rz_next;
    for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
  throw ConvergenceError("lfm: inner solve did not converge after " + std::to_string(max_iters) +
                             " iterations (residual " + std::to_string(std::sqrt(rnorm2)) + ")",
                         std::sqrt(rnorm2), max_iters);
}

// out = x + k * L_w x, with L_w the graph Laplacian on forward-difference
// edges; the edge leaving pixel p carries weight w[p].
inline void apply_weighted_laplacian(int h, int w, const std::vector<double>& weight, double k,
                                     double identity, const std::vector<double>& x,
                                     std::vector<double>& out) {
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = identity * x[i];
  for (int y = 0; y < h; ++y) {
    for (int xx = 0; xx < w; ++xx) {
      const std::size_t p = static_cast<std::size_t>(y) * w + xx;
      const double wp = k * weight[p];
      if (xx + 1 < w) {
        const double d = wp * (x[p] - x[p + 1]);
        out[p] += d;
        out[p + 1] -= d;
      }
      if (y + 1 < h) {
        const double d = wp * (x[p] - x[p + w]);
        out[p] += d;
        out[p + w] -= d;
      }
    }
  }
}

inline std::vector<double> laplacian_diagonal(int h, int w, const std::vector<double>& weight, double k,
                                              const std::vector<double>& identity) {
  std::vector<double> diag = identity;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * w + x;
      const double wp = k * weight[p];
      if (x + 1 < w) {
        diag[p] += wp;
        diag[p + 1] += wp;
      }
      if (y + 1 < h) {
        diag[p] += wp;
        diag[p + w] += wp;
      }
    }
  }
  return diag;
}

// Sum over channels of the squared forward-difference gradient at each pixel.
inline std::vector<double> gradient_energy(const Image& u) {
  const int h = u.height();
  const int w = u.width();
  std::vector<double> g(u.pixel_count(), 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int c = 0; c < u.channels(); ++c) {
        const double v = u(y, x, c);
        if (x + 1 < w) s += (u(y, x + 1, c) - v) * (u(y, x + 1, c) - v);
        if (y + 1 < h) s += (u(y + 1, x, c) - v) * (u(y + 1, x, c) - v);
      }
      g[static_cast<std::size_t>(y) * w + x] = s;
    }
  }
  return g;
}

inline void require_finite(const Image& img, const char* what) {
  if (!img.all_finite()) throw NumericError(std::string("lfm: non-finite values in ") + what);
}

}  // namespace detail

// Discrete energy
//   1/2 sum (I-u)^2 + mu sum z^2 |grad u|^2 + nu sum (eps |grad z|^2 + (1-z)^2 / (4 eps))
// with forward differences and reflective borders (no difference leaves the
// image). Channels are summed; z is shared.
inline double at_energy(const Image& img, const Image& smooth, const Image& edge_field,
                        const LfmConfig& cfg) {
  if (!img.same_geometry(smooth) || edge_field.height() != img.height() ||
      edge_field.width() != img.width() || edge_field.channels() != 1) {
    throw GeometryError("lfm: energy inputs differ in geometry");
  }
  detail::require_finite(img, "image");
  detail::require_finite(smooth, "smooth image");
  detail::require_finite(edge_field, "edge field");

  double data = 0.0;
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double d = img.values()[i] - smooth.values()[i];
    data += d * d;
  }
  const auto grad_u = detail::gradient_energy(smooth);
  const auto grad_z = detail::gradient_energy(edge_field);
  double smoothness = 0.0;
  double edges = 0.0;
  const auto z = edge_field.values();
  for (std::size_t p = 0; p < z.size(); ++p) {
    smoothness += z[p] * z[p] * grad_u[p];
    edges += cfg.epsilon * grad_z[p] + (1.0 - z[p]) * (1.0 - z[p]) / (4.0 * cfg.epsilon);
  }
  return 0.5 * data + cfg.mu * smoothness + cfg.nu * edges;
}

inline LfmResult solve_lfm(const Image& img, const LfmConfig& cfg = {}) {
  cfg.validate();
  detail::require_finite(img, "image");
  const int h = img.height();
  const int w = img.width();
  const std::size_t n = img.pixel_count();

  LfmResult result{img, Image(h, w, 1, 1.0), {}};
  Image& u = result.smooth;
  Image& z = result.edge_field;
  result.energy_trace.push_back(at_energy(img, u, z, cfg));

  std::vector<double> weight(n), rhs(n), x(n);
  const std::vector<double> ones(n, 1.0);
  for (int outer = 0; outer < cfg.outer_iters; ++outer) {
    // u-step: (I + 2 mu L_{z^2}) u = I, per channel.
    for (std::size_t p = 0; p < n; ++p) weight[p] = z.values()[p] * z.values()[p];
    const double k_u = 2.0 * cfg.mu;
    const auto diag_u = detail::laplacian_diagonal(h, w, weight, k_u, ones);
    const auto apply_u = [&](const std::vector<double>& in, std::vector<double>& out) {
      detail::apply_weighted_laplacian(h, w, weight, k_u, 1.0, in, out);
    };
    for (int c = 0; c < img.channels(); ++c) {
      for (std::size_t p = 0; p < n; ++p) {
        rhs[p] = img.values()[p * img.channels() + c];
        x[p] = u.values()[p * img.channels() + c];
      }
      detail::pcg(apply_u, diag_u, rhs, x, cfg.inner_tol, cfg.inner_max_iters);
      for (std::size_t p = 0; p < n; ++p) u.values()[p * img.channels() + c] = x[p];
    }

    // z-step: (2 mu g + nu/(2 eps)) z + 2 nu eps L z = nu/(2 eps).
    const auto g = detail::gradient_energy(u);
    const double data_coeff = cfg.nu / (2.0 * cfg.epsilon);
    const double k_z = 2.0 * cfg.nu * cfg.epsilon;
    std::vector<double> identity(n);
    for (std::size_t p = 0; p < n; ++p) identity[p] = 2.0 * cfg.mu * g[p] + data_coeff;
    const auto diag_z = detail::laplacian_diagonal(h, w, ones, k_z, identity);
    const auto apply_z = [&](const std::vector<double>& in, std::vector<double>& out) {
      detail::apply_weighted_laplacian(h, w, ones, k_z, 0.0, in, out);
      for (std::size_t p = 0; p < n; ++p) out[p] += identity[p] * in[p];
    };
    std::fill(rhs.begin(), rhs.end(), data_coeff);
    for (std::size_t p = 0; p < n; ++p) x[p] = z.values()[p];
    detail::pcg(apply_z, diag_z, rhs, x, cfg.inner_tol, cfg.inner_max_iters);
    for (std::size_t p = 0; p < n; ++p) z.values()[p] = std::clamp(x[p], 0.0, 1.0);

    result.energy_trace.push_back(at_energy(img, u, z, cfg));
  }
  detail::require_finite(u, "result");
  return result;
}

}  // namespace jina::lfm
