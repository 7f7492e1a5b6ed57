#pragma once

#include <cmath>
#include <compare>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "jina/error.hpp"
#include "jina/image.hpp"
#include "jina/rng.hpp"

namespace jina {

struct CellCoord {
  int row = 0;
  int col = 0;
  auto operator<=>(const CellCoord&) const = default;
};

struct ArtifactMask {
  int patch_size = 0;
  std::set<CellCoord> cells;

  bool contains(CellCoord c) const { return cells.count(c) != 0; }
  bool operator==(const ArtifactMask&) const = default;
};

// Cell grid of an image whose sides are multiples of the patch size.
struct CellGrid {
  int rows = 0;
  int cols = 0;
  int patch = 0;

  static CellGrid of(const Image& img, int patch_size) {
    if (patch_size <= 0) throw GeometryError("patch size must be positive");
    if (img.height() % patch_size != 0 || img.width() % patch_size != 0) {
      throw GeometryError("image " + std::to_string(img.height()) + "x" +
                          std::to_string(img.width()) + " is not divisible by patch size " +
                          std::to_string(patch_size));
    }
    return {img.height() / patch_size, img.width() / patch_size, patch_size};
  }

  int count() const { return rows * cols; }
  int index(CellCoord c) const { return c.row * cols + c.col; }
  CellCoord coord(int i) const { return {i / cols, i % cols}; }
  bool valid(CellCoord c) const { return c.row >= 0 && c.row < rows && c.col >= 0 && c.col < cols; }
};

inline void validate_mask(const ArtifactMask& mask, const CellGrid& grid) {
  if (mask.cells.empty()) return;
  if (mask.patch_size != grid.patch) {
    throw GeometryError("mask patch size " + std::to_string(mask.patch_size) +
                        " does not match " + std::to_string(grid.patch));
  }
  for (const auto& c : mask.cells) {
    if (!grid.valid(c)) {
      throw GeometryError("mask cell (" + std::to_string(c.row) + "," + std::to_string(c.col) +
                          ") outside " + std::to_string(grid.rows) + "x" +
                          std::to_string(grid.cols) + " grid");
    }
  }
}

// Largest multiple-of-N window, centered; odd remainders put the extra row or
// column at the bottom/right.
inline Image center_crop_to_grid(const Image& img, int patch_size) {
  if (patch_size <= 0 || patch_size > img.height() || patch_size > img.width()) {
    throw GeometryError("patch size " + std::to_string(patch_size) + " exceeds image " +
                        std::to_string(img.height()) + "x" + std::to_string(img.width()));
  }
  const int h = img.height() / patch_size * patch_size;
  const int w = img.width() / patch_size * patch_size;
  if (h == img.height() && w == img.width()) return img;
  return img.crop((img.height() - h) / 2, (img.width() - w) / 2, h, w);
}

// Returns, for every cell index, the index of the source cell whose block it
// receives. Masked cells map to themselves; every other cell is swapped with
// at most one unswapped 8-neighbor.
inline std::vector<int> neighborhood_swap_permutation(const CellGrid& grid, const ArtifactMask& mask,
                                                      std::uint64_t seed) {
  const int n = grid.count();
  std::vector<int> source(n);
  for (int i = 0; i < n; ++i) source[i] = i;

  std::vector<char> frozen(n, 0);
  for (const auto& c : mask.cells) frozen[grid.index(c)] = 1;

  std::vector<int> order;
  for (int i = 0; i < n; ++i) {
    if (!frozen[i]) order.push_back(i);
  }
  Rng rng(seed);
  rng.shuffle(order);

  std::vector<char> swapped(n, 0);
  std::vector<int> candidates;
  for (int i : order) {
    if (swapped[i]) continue;
    const CellCoord c = grid.coord(i);
    candidates.clear();
    for (int dr = -1; dr <= 1; ++dr) {
      for (int dc = -1; dc <= 1; ++dc) {
        if (dr == 0 && dc == 0) continue;
        const CellCoord nb{c.row + dr, c.col + dc};
        if (!grid.valid(nb)) continue;
        const int j = grid.index(nb);
        if (!frozen[j] && !swapped[j]) candidates.push_back(j);
      }
    }
    if (candidates.empty()) continue;
    const int j = candidates[rng.below(candidates.size())];
    source[i] = j;
    source[j] = i;
    swapped[i] = swapped[j] = 1;
  }
  return source;
}

inline Image artifact_guided_partition(const Image& img, const ArtifactMask& mask, int patch_size,
                                       std::uint64_t seed) {
  const CellGrid grid = CellGrid::of(img, patch_size);
  validate_mask(mask, grid);
  const auto source = neighborhood_swap_permutation(grid, mask, seed);

  Image out = img;
  const int n = grid.patch;
  const int ch = img.channels();
  for (int dst = 0; dst < grid.count(); ++dst) {
    if (source[dst] == dst) continue;
    const CellCoord d = grid.coord(dst);
    const CellCoord s = grid.coord(source[dst]);
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        for (int c = 0; c < ch; ++c) {
          out(d.row * n + y, d.col * n + x, c) = img(s.row * n + y, s.col * n + x, c);
        }
      }
    }
  }
  return out;
}

// Absolute 5-point Laplacian of the luminance, replicated borders.
inline std::vector<double> abs_laplacian(const Image& img) {
  const Image lum = img.luminance();
  const int h = lum.height();
  const int w = lum.width();
  std::vector<double> out(lum.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double v = lum(y, x);
      const double up = lum(std::max(y - 1, 0), x);
      const double down = lum(std::min(y + 1, h - 1), x);
      const double left = lum(y, std::max(x - 1, 0));
      const double right = lum(y, std::min(x + 1, w - 1));
      out[static_cast<std::size_t>(y) * w + x] = std::abs(up + down + left + right - 4.0 * v);
    }
  }
  return out;
}

// Stand-in artifact localizer: flags cells whose mean high-frequency energy
// exceeds threshold times the image-wide mean.
inline ArtifactMask heuristic_artifact_stub(const Image& img, int patch_size, double threshold) {
  const CellGrid grid = CellGrid::of(img, patch_size);
  const auto energy = abs_laplacian(img);
  double total = 0.0;
  for (double e : energy) total += e;
  const double image_mean = total / static_cast<double>(energy.size());

  ArtifactMask mask{patch_size, {}};
  const int n = grid.patch;
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      double sum = 0.0;
      for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
          sum += energy[static_cast<std::size_t>(r * n + y) * img.width() + (c * n + x)];
        }
      }
      if (sum / (n * n) > threshold * image_mean) mask.cells.insert({r, c});
    }
  }
  return mask;
}

inline nlohmann::json mask_to_json(const ArtifactMask& mask) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : mask.cells) cells.push_back({{"row", c.row}, {"col", c.col}});
  return {{"patch_size", mask.patch_size}, {"cells", cells}};
}

inline ArtifactMask mask_from_json(const nlohmann::json& j) {
  try {
    ArtifactMask mask;
    mask.patch_size = j.at("patch_size").get<int>();
    for (const auto& cell : j.at("cells")) {
      mask.cells.insert({cell.at("row").get<int>(), cell.at("col").get<int>()});
    }
    return mask;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed mask: ") + e.what());
  }
}

inline void save_mask(const ArtifactMask& mask, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << mask_to_json(mask).dump(2) << '\n';
}

inline ArtifactMask load_mask(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return mask_from_json(j);
}

}  // namespace jina
