#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "jina/error.hpp"

namespace jina {

// One manifest row. Image paths are relative to the manifest's directory
// unless absolute.
struct Sample {
  std::string id;
  std::string path;
  std::string content_id;
  std::string task = "synthetic";
  std::optional<double> mos_t;
  std::optional<double> mos_r;
  std::optional<double> mos;
  std::optional<std::string> mask;  // external artifact mask file
};

struct DatasetManifest {
  std::filesystem::path base_dir;
  std::vector<Sample> samples;

  std::filesystem::path resolve(const std::string& p) const {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  }

  std::vector<std::string> content_ids() const {
    std::set<std::string> ids;
    for (const auto& s : samples) ids.insert(s.content_id);
    return {ids.begin(), ids.end()};
  }
};

inline nlohmann::json to_json(const Sample& s) {
  nlohmann::json j = {{"id", s.id}, {"path", s.path}, {"content_id", s.content_id}, {"task", s.task}};
  if (s.mos_t) j["mos_t"] = *s.mos_t;
  if (s.mos_r) j["mos_r"] = *s.mos_r;
  if (s.mos) j["mos"] = *s.mos;
  if (s.mask) j["mask"] = *s.mask;
  return j;
}

inline Sample sample_from_json(const nlohmann::json& j) {
  Sample s;
  s.id = j.at("id").get<std::string>();
  s.path = j.at("path").get<std::string>();
  s.content_id = j.value("content_id", s.id);
  s.task = j.value("task", "synthetic");
  const auto opt = [&](const char* key) -> std::optional<double> {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    return j[key].get<double>();
  };
  s.mos_t = opt("mos_t");
  s.mos_r = opt("mos_r");
  s.mos = opt("mos");
  if (j.contains("mask") && j["mask"].is_string()) s.mask = j["mask"].get<std::string>();
  return s;
}

inline std::string manifest_jsonl(const DatasetManifest& m) {
  std::string out;
  for (const auto& s : m.samples) out += to_json(s).dump() + '\n';
  return out;
}

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << manifest_jsonl(m);
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  DatasetManifest m;
  m.base_dir = path.parent_path();
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      m.samples.push_back(sample_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return m;
}

}  // namespace jina
