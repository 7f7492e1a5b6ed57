#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "jina/error.hpp"
#include "jina/nets.hpp"

namespace jina::nets {

inline constexpr const char* kCheckpointMagic = "JINA";
inline constexpr int kCheckpointVersion = 1;

// Both branches plus whatever preprocessing/fusion settings the trainer
// stores in `meta`.
struct Checkpoint {
  BranchParams technical;
  BranchParams rationality;
  std::uint64_t seed = 0;
  nlohmann::json meta = nlohmann::json::object();
};

// Layout: one line of JSON header, '\n', then little-endian float64 arrays
// (technical, then rationality) in declaration order.
inline std::string serialize_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json header = {
      {"magic", kCheckpointMagic},
      {"format_version", kCheckpointVersion},
      {"seed", ckpt.seed},
      {"technical", to_json(ckpt.technical.config)},
      {"rationality", to_json(ckpt.rationality.config)},
      {"meta", ckpt.meta},
  };
  header["technical"]["param_count"] = ckpt.technical.values.size();
  header["rationality"]["param_count"] = ckpt.rationality.values.size();
  std::string out = header.dump() + '\n';
  const auto put = [&](const std::vector<double>& values) {
    for (double v : values) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      for (int b = 0; b < 8; ++b) {
        out.push_back(static_cast<char>(bits & 0xffU));
        bits >>= 8;
      }
    }
  };
  put(ckpt.technical.values);
  put(ckpt.rationality.values);
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw FormatError("checkpoint: missing header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(0, nl));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad header: ") + e.what());
  }
  if (header.value("magic", "") != kCheckpointMagic) throw FormatError("checkpoint: bad magic");
  if (header.value("format_version", 0) != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported format version");
  }
  Checkpoint ckpt;
  try {
    ckpt.seed = header.at("seed").get<std::uint64_t>();
    ckpt.technical.config = branch_config_from_json(header.at("technical"));
    ckpt.rationality.config = branch_config_from_json(header.at("rationality"));
    ckpt.meta = header.value("meta", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad header: ") + e.what());
  }
  std::size_t pos = nl + 1;
  const auto take = [&](BranchParams& p) {
    const std::size_t n = p.config.param_count();
    if (bytes.size() < pos + n * 8) throw FormatError("checkpoint: truncated parameter data");
    p.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t bits = 0;
      for (int b = 7; b >= 0; --b) bits = (bits << 8) | static_cast<unsigned char>(bytes[pos + i * 8 + b]);
      p.values[i] = std::bit_cast<double>(bits);
    }
    pos += n * 8;
  };
  take(ckpt.technical);
  take(ckpt.rationality);
  if (pos != bytes.size()) throw FormatError("checkpoint: trailing bytes");
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const auto bytes = serialize_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace jina::nets
