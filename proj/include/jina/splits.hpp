#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "jina/error.hpp"
#include "jina/manifest.hpp"
#include "jina/rng.hpp"

namespace jina::eval {

struct SplitPlan {
  std::set<std::string> train;
  std::set<std::string> val;
  std::set<std::string> test;
  std::uint64_t seed = 0;
  int repeat = 0;

  enum class Part { train, val, test, none };
  Part part_of(const std::string& content_id) const {
    if (train.count(content_id)) return Part::train;
    if (val.count(content_id)) return Part::val;
    if (test.count(content_id)) return Part::test;
    return Part::none;
  }
};

using SplitRatios = std::array<double, 3>;
inline constexpr SplitRatios kDefaultRatios{7.0, 1.0, 2.0};

// Shuffle content ids, then slice proportionally; val and test sizes are
// rounded, train takes the remainder.
inline SplitPlan make_split(const std::vector<std::string>& content_ids, const SplitRatios& ratios,
                            std::uint64_t seed, int repeat) {
  if (content_ids.size() < 10) {
    throw Error("make_splits: need at least 10 contents, got " + std::to_string(content_ids.size()));
  }
  const double total = ratios[0] + ratios[1] + ratios[2];
  for (double r : ratios) {
    if (!(r >= 0.0) || !(total > 0.0)) throw Error("make_splits: ratios must be non-negative with positive sum");
  }
  std::vector<std::string> ids(content_ids.begin(), content_ids.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  Rng rng(derive_seed(seed, 0x5911, repeat));
  rng.shuffle(ids);
  const auto n = static_cast<double>(ids.size());
  const auto n_val = static_cast<std::size_t>(std::lround(n * ratios[1] / total));
  const auto n_test = static_cast<std::size_t>(std::lround(n * ratios[2] / total));
  if (n_val + n_test > ids.size()) throw Error("make_splits: ratios leave no training contents");
  SplitPlan plan;
  plan.seed = seed;
  plan.repeat = repeat;
  const std::size_t n_train = ids.size() - n_val - n_test;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i < n_train) plan.train.insert(ids[i]);
    else if (i < n_train + n_val) plan.val.insert(ids[i]);
    else plan.test.insert(ids[i]);
  }
  return plan;
}

inline std::vector<SplitPlan> make_splits(const DatasetManifest& manifest, const SplitRatios& ratios,
                                          std::uint64_t seed, int repeats) {
  if (repeats < 1) throw Error("make_splits: repeats must be >= 1");
  const auto ids = manifest.content_ids();
  std::vector<SplitPlan> plans;
  for (int r = 0; r < repeats; ++r) plans.push_back(make_split(ids, ratios, seed, r));
  return plans;
}

inline nlohmann::json to_json(const SplitPlan& p) {
  return {{"seed", p.seed}, {"repeat", p.repeat}, {"train", p.train}, {"val", p.val}, {"test", p.test}};
}

inline SplitPlan split_from_json(const nlohmann::json& j) {
  SplitPlan p;
  p.seed = j.value("seed", std::uint64_t{0});
  p.repeat = j.value("repeat", 0);
  p.train = j.at("train").get<std::set<std::string>>();
  p.val = j.value("val", std::set<std::string>{});
  p.test = j.value("test", std::set<std::string>{});
  for (const auto& id : p.val) {
    if (p.train.count(id)) throw FormatError("split: content '" + id + "' in both train and val");
  }
  for (const auto& id : p.test) {
    if (p.train.count(id) || p.val.count(id)) throw FormatError("split: content '" + id + "' appears twice");
  }
  return p;
}

inline SplitPlan load_split(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return split_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline void save_split(const SplitPlan& p, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json(p).dump(2) << '\n';
}

}  // namespace jina::eval
