#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "httplib.h"
// <resolv.h> defines _res, which collides with Eigen parameter names.
#undef _res
#include "json.hpp"
#include "jina/error.hpp"
#include "jina/manifest.hpp"
#include "jina/rng.hpp"
#include "jina/subjective.hpp"

// Rating-session service: per-subject queues with covert golden items,
// server-side two-phase enforcement, spot-check gating between sessions and
// an append-only JSONL ratings log.
namespace jina::service {

struct SessionPlan {
  int session_size = 400;  // items per session, goldens included
  int max_sessions = 15;
  int goldens_per_session = 10;
};

struct ServiceConfig {
  std::filesystem::path manifest;
  std::filesystem::path golden;   // JSON map image_id -> expert naturalness score
  std::filesystem::path ratings;  // append-only JSONL
  std::optional<std::filesystem::path> subjects_file;  // one registered id per line
  std::vector<std::string> subjects;
  SessionPlan plan;
  std::string admin_token;
  std::string bind_address = "127.0.0.1";
  int port = 8080;
  std::uint64_t seed = 0;
  double outlier_threshold = 0.3;
};

inline ServiceConfig service_config_from_json(const nlohmann::json& j, const std::filesystem::path& base = {}) {
  const auto path = [&](const std::string& p) {
    const std::filesystem::path q(p);
    return q.is_absolute() ? q : base / q;
  };
  ServiceConfig c;
  try {
    c.manifest = path(j.at("manifest").get<std::string>());
    c.golden = path(j.at("golden").get<std::string>());
    c.ratings = path(j.at("ratings").get<std::string>());
    if (j.contains("subjects_file")) c.subjects_file = path(j["subjects_file"].get<std::string>());
    c.subjects = j.value("subjects", std::vector<std::string>{});
    if (j.contains("session_plan")) {
      const auto& p = j["session_plan"];
      c.plan.session_size = p.value("session_size", c.plan.session_size);
      c.plan.max_sessions = p.value("max_sessions", c.plan.max_sessions);
      c.plan.goldens_per_session = p.value("goldens_per_session", c.plan.goldens_per_session);
    }
    c.admin_token = j.at("admin_token").get<std::string>();
    c.bind_address = j.value("bind_address", c.bind_address);
    c.port = j.value("port", c.port);
    c.seed = j.value("seed", c.seed);
    c.outlier_threshold = j.value("outlier_threshold", c.outlier_threshold);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("service config: ") + e.what());
  }
  return c;
}

inline ServiceConfig load_service_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return service_config_from_json(nlohmann::json::parse(in), path.parent_path());
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

enum class Phase { naturalness, perspectives };

inline const char* to_string(Phase p) { return p == Phase::naturalness ? "NATURALNESS" : "PERSPECTIVES"; }

struct QueueItem {
  std::string image_id;
  bool golden = false;
};

// One subject's full plan: sessions of corpus items in seeded order, each
// with its goldens at seeded positions. Goldens never repeat for a subject.
inline std::vector<std::vector<QueueItem>> build_queue(const std::vector<std::string>& corpus,
                                                       const std::vector<std::string>& goldens,
                                                       const SessionPlan& plan, std::uint64_t subject_seed) {
  const int per_session = plan.session_size - plan.goldens_per_session;
  if (per_session < 1 || plan.goldens_per_session < 0 || plan.max_sessions < 1) {
    throw Error("session plan: need at least one corpus item per session");
  }
  Rng rng(subject_seed);
  std::vector<std::string> order = corpus;
  rng.shuffle(order);
  const int sessions = std::min<int>(plan.max_sessions,
                                     static_cast<int>((order.size() + per_session - 1) / per_session));
  std::vector<std::string> pool = goldens;
  rng.shuffle(pool);
  if (pool.size() < static_cast<std::size_t>(sessions) * plan.goldens_per_session) {
    throw Error("session plan: " + std::to_string(pool.size()) + " golden images cannot cover " +
                std::to_string(sessions) + " sessions of " + std::to_string(plan.goldens_per_session));
  }
  std::vector<std::vector<QueueItem>> out;
  std::size_t next_golden = 0;
  for (int s = 0; s < sessions; ++s) {
    std::vector<QueueItem> q;
    const std::size_t begin = static_cast<std::size_t>(s) * per_session;
    const std::size_t end = std::min(order.size(), begin + per_session);
    for (std::size_t i = begin; i < end; ++i) q.push_back({order[i], false});
    for (int g = 0; g < plan.goldens_per_session; ++g) {
      const auto pos = static_cast<std::ptrdiff_t>(rng.below(q.size() + 1));
      q.insert(q.begin() + pos, QueueItem{pool[next_golden++], true});
    }
    out.push_back(std::move(q));
  }
  return out;
}

struct Response {
  int status = 200;
  nlohmann::json body;
  std::string raw;  // used instead of body when non-empty or for 204
  std::string content_type = "application/json";
};

class SessionService {
 public:
  using Clock = std::function<std::int64_t()>;

  SessionService(ServiceConfig cfg, Clock clock = {}) : cfg_(std::move(cfg)), clock_(std::move(clock)) {
    if (!clock_) {
      clock_ = [] {
        return std::chrono::duration_cast<std::chrono::milliseconds>(
                   std::chrono::system_clock::now().time_since_epoch())
            .count();
      };
    }
    manifest_ = load_manifest(cfg_.manifest);
    golden_truth_ = subjective::load_golden_truth(cfg_.golden);
    for (const auto& s : manifest_.samples) {
      paths_[s.id] = manifest_.resolve(s.path);
      if (golden_truth_.count(s.id)) goldens_.push_back(s.id);
      else corpus_.push_back(s.id);
    }
    for (const auto& [id, score] : golden_truth_) {
      if (!paths_.count(id)) throw Error("golden image '" + id + "' is not in the manifest");
    }
    for (const auto& id : cfg_.subjects) register_locked(id, false);
    if (cfg_.subjects_file && std::filesystem::exists(*cfg_.subjects_file)) {
      std::ifstream in(*cfg_.subjects_file);
      std::string line;
      while (std::getline(in, line)) {
        if (!line.empty()) register_locked(line, false);
      }
    }
    replay();
  }

  const ServiceConfig& config() const { return cfg_; }

  // GET /session/next
  Response next(const std::string& subject) {
    std::lock_guard lock(mu_);
    auto it = subjects_.find(subject);
    if (it == subjects_.end()) return error(404, "unknown subject '" + subject + "'");
    State& st = it->second;
    if (st.blocked) return error(403, "subject failed the spot check of session " + std::to_string(st.session));
    if (st.session >= static_cast<int>(st.queue.size())) return {204, nullptr};
    const auto& q = st.queue[st.session];
    const auto& item = q[st.cursor];
    return {200,
            {{"image_id", item.image_id},
             {"image_url", "/image/" + item.image_id},
             {"phase", to_string(st.phase)},
             {"session", st.session + 1},
             {"progress", std::to_string(st.cursor) + "/" + std::to_string(q.size())}}};
  }

  // POST /rating
  Response rate(const nlohmann::json& body) {
    if (!body.is_object()) return error(422, "rating body must be a JSON object");
    const std::string subject = body.value("subject_id", "");
    const std::string image = body.value("image_id", "");
    std::lock_guard lock(mu_);
    auto it = subjects_.find(subject);
    if (it == subjects_.end()) return error(404, "unknown subject '" + subject + "'");
    State& st = it->second;
    if (st.blocked) return error(403, "subject is blocked");
    if (st.session >= static_cast<int>(st.queue.size())) return error(409, "all sessions complete");
    const QueueItem& item = st.queue[st.session][st.cursor];
    if (image != item.image_id) return error(409, "expected a rating for '" + item.image_id + "'");

    static constexpr const char* kPerspectiveKeys[] = {"technical", "rationality", "t_factor", "r_factor"};
    const bool has_perspective = std::any_of(std::begin(kPerspectiveKeys), std::end(kPerspectiveKeys),
                                             [&](const char* k) { return body.contains(k); });
    const bool has_naturalness = body.contains("naturalness");
    if (has_perspective && has_naturalness) return error(422, "a submission carries one phase only");
    if (!has_perspective && !has_naturalness) return error(422, "no rating fields in submission");
    const Phase submitted = has_naturalness ? Phase::naturalness : Phase::perspectives;
    if (body.contains("phase") && body["phase"] != to_string(submitted)) {
      return error(422, "declared phase does not match the submitted fields");
    }
    if (submitted != st.phase) {
      return error(409, std::string("out of phase: current phase is ") + to_string(st.phase));
    }

    const auto score = [&](const char* key) -> std::optional<int> {
      const auto& v = body.at(key);
      if (!v.is_number_integer()) return std::nullopt;
      const int s = v.get<int>();
      return subjective::is_valid_score(s) ? std::optional<int>(s) : std::nullopt;
    };
    if (submitted == Phase::naturalness) {
      const auto n = score("naturalness");
      if (!n) return error(422, "naturalness must be an integer in [1,5]");
      st.pending_naturalness = *n;
      st.phase = Phase::perspectives;
      return {200, {{"accepted", true}, {"phase", to_string(st.phase)}}};
    }

    for (const char* k : kPerspectiveKeys) {
      if (!body.contains(k)) return error(422, std::string("missing field '") + k + "'");
    }
    const auto t = score("technical");
    const auto r = score("rationality");
    if (!t || !r) return error(422, "technical and rationality must be integers in [1,5]");
    if (!body["t_factor"].is_string() || !subjective::is_technical_factor(body["t_factor"])) {
      return error(422, "unknown t_factor");
    }
    if (!body["r_factor"].is_string() || !subjective::is_rationality_factor(body["r_factor"])) {
      return error(422, "unknown r_factor");
    }
    subjective::RatingRecord rec;
    rec.subject_id = subject;
    rec.image_id = image;
    rec.session = st.session + 1;
    rec.timestamp_ms = clock_();
    rec.naturalness = st.pending_naturalness;
    rec.technical = *t;
    rec.rationality = *r;
    rec.t_factor = body["t_factor"].get<std::string>();
    rec.r_factor = body["r_factor"].get<std::string>();
    rec.is_golden = item.golden;
    append(rec);
    record(rec);
    advance(st);
    return {200, {{"accepted", true}}};
  }

  bool authorized(const std::string& token) const { return !cfg_.admin_token.empty() && token == cfg_.admin_token; }

  // GET /admin/export: retained log in append order, one record per line.
  std::string export_jsonl() {
    std::lock_guard lock(mu_);
    std::string out;
    for (const auto& r : records_) out += subjective::to_json(r).dump() + '\n';
    return out;
  }

  // GET /admin/agreement: interval alpha per perspective over the subjects
  // not flagged as outliers.
  nlohmann::json agreement() {
    std::lock_guard lock(mu_);
    nlohmann::json out = nlohmann::json::object();
    std::set<std::string> retained = subjective::subjects_of(records_);
    std::vector<std::string> flagged;
    if (retained.size() >= 3) {
      try {
        const auto rep = subjective::detect_outliers(records_, subjective::Perspective::naturalness,
                                                     cfg_.outlier_threshold);
        flagged = rep.flagged;
        for (const auto& id : flagged) retained.erase(id);
      } catch (const Error&) {
        // Too little data to judge outliers: keep everyone.
      }
    }
    for (auto p : {subjective::Perspective::naturalness, subjective::Perspective::technical,
                   subjective::Perspective::rationality}) {
      try {
        out[subjective::to_string(p)] =
            subjective::krippendorff_alpha(records_, p, subjective::AgreementLevel::interval, &retained);
      } catch (const Error&) {
        out[subjective::to_string(p)] = "insufficient data";
      }
    }
    out["retained_subjects"] = retained.size();
    out["flagged_subjects"] = flagged;
    return out;
  }

  // POST /admin/subjects
  Response register_subject(const std::string& id) {
    if (id.empty()) return error(422, "subject_id must be non-empty");
    std::lock_guard lock(mu_);
    if (subjects_.count(id)) return error(409, "subject '" + id + "' already registered");
    register_locked(id, true);
    return {201, {{"subject_id", id}, {"sessions", subjects_.at(id).queue.size()}}};
  }

  nlohmann::json subjects() {
    std::lock_guard lock(mu_);
    nlohmann::json out = nlohmann::json::array();
    for (const auto& [id, st] : subjects_) {
      out.push_back({{"subject_id", id},
                     {"session", std::min<int>(st.session + 1, static_cast<int>(st.queue.size()))},
                     {"sessions", st.queue.size()},
                     {"blocked", st.blocked},
                     {"complete", !st.blocked && st.session >= static_cast<int>(st.queue.size())}});
    }
    return out;
  }

  std::optional<std::filesystem::path> image_path(const std::string& id) const {
    const auto it = paths_.find(id);
    if (it == paths_.end()) return std::nullopt;
    return it->second;
  }

 private:
  struct State {
    std::string id;
    std::vector<std::vector<QueueItem>> queue;
    int session = 0;  // 0-based
    int cursor = 0;
    Phase phase = Phase::naturalness;
    int pending_naturalness = 0;
    bool blocked = false;
  };

  static Response error(int status, const std::string& msg) { return {status, {{"error", msg}}}; }

  void register_locked(const std::string& id, bool persist) {
    if (subjects_.count(id)) return;
    State st;
    st.id = id;
    st.queue = build_queue(corpus_, goldens_, cfg_.plan, derive_seed(cfg_.seed, fnv1a(id)));
    subjects_.emplace(id, std::move(st));
    if (persist && cfg_.subjects_file) {
      std::ofstream out(*cfg_.subjects_file, std::ios::app);
      out << id << '\n';
      if (!out) throw IoError("cannot append to " + cfg_.subjects_file->string());
    }
  }

  void append(const subjective::RatingRecord& r) {
    std::ofstream out(cfg_.ratings, std::ios::app | std::ios::binary);
    out << subjective::to_json(r).dump() << '\n';
    out.flush();
    if (!out) throw IoError("cannot append to " + cfg_.ratings.string());
  }

  // In-memory index keyed by (subject, image); a repeated pair replaces the
  // earlier record in place.
  void record(const subjective::RatingRecord& r) {
    const auto key = std::make_pair(r.subject_id, r.image_id);
    if (auto it = index_.find(key); it != index_.end()) {
      records_[it->second] = r;
      return;
    }
    index_.emplace(key, records_.size());
    records_.push_back(r);
  }

  bool rated(const std::string& subject, const std::string& image) const {
    return index_.count({subject, image}) > 0;
  }

  // Moves past completed items; at a session boundary applies the spot
  // check to that session.
  void advance(State& st) {
    st.phase = Phase::naturalness;
    st.pending_naturalness = 0;
    ++st.cursor;
    if (st.cursor < static_cast<int>(st.queue[st.session].size())) return;
    const int finished = st.session + 1;
    st.session += 1;
    st.cursor = 0;
    if (cfg_.plan.goldens_per_session == 0) return;
    std::vector<subjective::RatingRecord> mine;
    for (const auto& r : records_) {
      if (r.subject_id == st.id && r.session == finished) mine.push_back(r);
    }
    const auto checks = subjective::spot_check(mine, golden_truth_);
    if (!checks.empty() && !checks.front().passed) st.blocked = true;
  }

  void replay() {
    if (!std::filesystem::exists(cfg_.ratings)) return;
    for (auto& r : subjective::ingest(cfg_.ratings, subjective::DuplicatePolicy::last_write_wins)) record(r);
    for (auto& [id, st] : subjects_) {
      while (!st.blocked && st.session < static_cast<int>(st.queue.size()) &&
             rated(id, st.queue[st.session][st.cursor].image_id)) {
        advance(st);
      }
    }
  }

  ServiceConfig cfg_;
  Clock clock_;
  DatasetManifest manifest_;
  std::map<std::string, double> golden_truth_;
  std::map<std::string, std::filesystem::path> paths_;
  std::vector<std::string> corpus_;
  std::vector<std::string> goldens_;
  std::map<std::string, State> subjects_;
  std::vector<subjective::RatingRecord> records_;
  std::map<std::pair<std::string, std::string>, std::size_t> index_;
  std::mutex mu_;
};

namespace detail {

inline void send(httplib::Response& res, const Response& r) {
  res.status = r.status;
  if (r.status == 204) return;
  if (!r.raw.empty()) {
    res.set_content(r.raw, r.content_type);
  } else {
    res.set_content(r.body.dump(), "application/json");
  }
}

inline std::string bearer(const httplib::Request& req) {
  const auto h = req.get_header_value("Authorization");
  if (h.rfind("Bearer ", 0) == 0) return h.substr(7);
  return req.has_param("token") ? req.get_param_value("token") : std::string();
}

}  // namespace detail

// Routes the HTTP API onto `svc`.
inline void mount(httplib::Server& server, SessionService& svc) {
  server.Get("/session/next", [&svc](const httplib::Request& req, httplib::Response& res) {
    detail::send(res, svc.next(req.get_param_value("subject")));
  });
  server.Post("/rating", [&svc](const httplib::Request& req, httplib::Response& res) {
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::parse_error&) {
      detail::send(res, {422, {{"error", "body is not valid JSON"}}});
      return;
    }
    detail::send(res, svc.rate(body));
  });
  const auto admin = [&svc](auto handler) {
    return [&svc, handler](const httplib::Request& req, httplib::Response& res) {
      if (!svc.authorized(detail::bearer(req))) {
        detail::send(res, {401, {{"error", "bad admin token"}}});
        return;
      }
      handler(req, res);
    };
  };
  server.Get("/admin/export", admin([&svc](const httplib::Request&, httplib::Response& res) {
               res.set_content(svc.export_jsonl(), "application/x-ndjson");
             }));
  server.Get("/admin/agreement", admin([&svc](const httplib::Request&, httplib::Response& res) {
               res.set_content(svc.agreement().dump(), "application/json");
             }));
  server.Get("/admin/subjects", admin([&svc](const httplib::Request&, httplib::Response& res) {
               res.set_content(svc.subjects().dump(), "application/json");
             }));
  server.Post("/admin/subjects", admin([&svc](const httplib::Request& req, httplib::Response& res) {
                std::string id;
                try {
                  id = nlohmann::json::parse(req.body).value("subject_id", "");
                } catch (const nlohmann::json::exception&) {
                }
                detail::send(res, svc.register_subject(id));
              }));
  server.Get(R"(/image/([A-Za-z0-9_.\-]+))", [&svc](const httplib::Request& req, httplib::Response& res) {
    const auto path = svc.image_path(req.matches[1]);
    std::ifstream in(path ? *path : std::filesystem::path(), std::ios::binary);
    if (!path || !in) {
      detail::send(res, {404, {{"error", "unknown image"}}});
      return;
    }
    std::ostringstream bytes;
    bytes << in.rdbuf();
    res.set_content(bytes.str(), "image/png");
  });
  server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string msg = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      msg = e.what();
    } catch (...) {
    }
    detail::send(res, {500, {{"error", msg}}});
  });
}

}  // namespace jina::service
