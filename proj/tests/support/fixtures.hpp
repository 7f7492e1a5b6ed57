#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <unistd.h>

#include "json.hpp"

#include "jina/manifest.hpp"
#include "jina/png_io.hpp"
#include "jina/rng.hpp"
#include "jina/service.hpp"
#include "jina/subjective.hpp"

namespace fixture {

// Directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("jina-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& p) const { return path_ / p; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// A rating study on disk: `corpus` ordinary images (c0..), `goldens` golden
// images (g0..) whose expert naturalness is 3, and a config with sessions of
// `per_session` corpus items plus `goldens_per_session` goldens.
struct StudySetup {
  jina::service::ServiceConfig config;
  std::map<std::string, double> golden_truth;
};

inline StudySetup make_study(const std::filesystem::path& dir, int corpus, int goldens, int per_session,
                             int goldens_per_session, std::vector<std::string> subjects = {"alice", "bob"}) {
  std::filesystem::create_directories(dir / "images");
  jina::DatasetManifest m;
  m.base_dir = dir;
  const jina::Image px(2, 2, 3, 0.5);
  StudySetup s;
  nlohmann::json golden = nlohmann::json::object();
  for (int i = 0; i < corpus + goldens; ++i) {
    const bool is_golden = i >= corpus;
    const std::string id = is_golden ? "g" + std::to_string(i - corpus) : "c" + std::to_string(i);
    jina::save_png(px, dir / "images" / (id + ".png"));
    jina::Sample row;
    row.id = id;
    row.path = "images/" + id + ".png";
    row.content_id = id;
    m.samples.push_back(row);
    if (is_golden) {
      golden[id] = 3.0;
      s.golden_truth[id] = 3.0;
    }
  }
  jina::save_manifest(m, dir / "manifest.jsonl");
  write_text(dir / "golden.json", golden.dump());
  s.config.manifest = dir / "manifest.jsonl";
  s.config.golden = dir / "golden.json";
  s.config.ratings = dir / "ratings.jsonl";
  s.config.subjects = std::move(subjects);
  s.config.plan.session_size = per_session + goldens_per_session;
  s.config.plan.goldens_per_session = goldens_per_session;
  s.config.plan.max_sessions = 15;
  s.config.admin_token = "secret";
  s.config.seed = 11;
  return s;
}

inline nlohmann::json naturalness(const std::string& subject, const std::string& image, int score) {
  return {{"subject_id", subject}, {"image_id", image}, {"naturalness", score}};
}

inline nlohmann::json perspectives(const std::string& subject, const std::string& image, int t, int r,
                                   const std::string& tf = "TNull", const std::string& rf = "RNull") {
  return {{"subject_id", subject}, {"image_id", image}, {"technical", t},
          {"rationality", r},       {"t_factor", tf},     {"r_factor", rf}};
}

}  // namespace fixture
