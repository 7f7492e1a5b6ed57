#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "jina/error.hpp"
#include "jina/fusion.hpp"
#include "jina/metrics.hpp"
#include "jina/stats.hpp"

// Rating records, MOS aggregation, agreement, annotator quality control and
// the perspective/factor analyses over a subjective study.
namespace jina::subjective {

enum class Perspective { technical, rationality, naturalness };

inline const char* to_string(Perspective p) {
  switch (p) {
    case Perspective::technical: return "technical";
    case Perspective::rationality: return "rationality";
    case Perspective::naturalness: return "naturalness";
  }
  return "?";
}

inline Perspective parse_perspective(const std::string& s) {
  if (s == "technical") return Perspective::technical;
  if (s == "rationality") return Perspective::rationality;
  if (s == "naturalness") return Perspective::naturalness;
  throw Error("unknown perspective '" + s + "'");
}

inline constexpr std::array<const char*, 6> kTechnicalFactors = {"T1", "T2", "T3", "T4", "T5", "TNull"};
inline constexpr std::array<const char*, 6> kRationalityFactors = {"R1", "R2", "R3", "R4", "R5", "RNull"};

inline bool is_technical_factor(const std::string& f) {
  return std::find(kTechnicalFactors.begin(), kTechnicalFactors.end(), f) != kTechnicalFactors.end();
}
inline bool is_rationality_factor(const std::string& f) {
  return std::find(kRationalityFactors.begin(), kRationalityFactors.end(), f) != kRationalityFactors.end();
}
inline bool is_valid_score(int s) { return s >= 1 && s <= 5; }

struct RatingRecord {
  std::string subject_id;
  std::string image_id;
  int session = 1;
  std::int64_t timestamp_ms = 0;
  int naturalness = 0;
  int technical = 0;
  int rationality = 0;
  std::string t_factor = "TNull";
  std::string r_factor = "RNull";
  bool is_golden = false;

  int score(Perspective p) const {
    switch (p) {
      case Perspective::technical: return technical;
      case Perspective::rationality: return rationality;
      case Perspective::naturalness: return naturalness;
    }
    return 0;
  }

  bool operator==(const RatingRecord&) const = default;
};

inline nlohmann::json to_json(const RatingRecord& r) {
  return {{"subject_id", r.subject_id}, {"image_id", r.image_id},       {"session", r.session},
          {"timestamp_ms", r.timestamp_ms}, {"naturalness", r.naturalness}, {"technical", r.technical},
          {"rationality", r.rationality}, {"t_factor", r.t_factor},       {"r_factor", r.r_factor},
          {"is_golden", r.is_golden}};
}

// Empty string when valid, otherwise the first problem found.
inline std::string validate(const RatingRecord& r) {
  if (r.subject_id.empty()) return "empty subject_id";
  if (r.image_id.empty()) return "empty image_id";
  if (!is_valid_score(r.naturalness)) return "naturalness=" + std::to_string(r.naturalness) + " outside [1,5]";
  if (!is_valid_score(r.technical)) return "technical=" + std::to_string(r.technical) + " outside [1,5]";
  if (!is_valid_score(r.rationality)) return "rationality=" + std::to_string(r.rationality) + " outside [1,5]";
  if (!is_technical_factor(r.t_factor)) return "unknown t_factor '" + r.t_factor + "'";
  if (!is_rationality_factor(r.r_factor)) return "unknown r_factor '" + r.r_factor + "'";
  return {};
}

inline RatingRecord record_from_json(const nlohmann::json& j) {
  RatingRecord r;
  try {
    r.subject_id = j.at("subject_id").get<std::string>();
    r.image_id = j.at("image_id").get<std::string>();
    r.session = j.value("session", 1);
    r.timestamp_ms = j.value("timestamp_ms", std::int64_t{0});
    const auto score = [&](const char* key) {
      const auto& v = j.at(key);
      if (!v.is_number_integer()) throw FormatError(std::string(key) + " is not an integer");
      return v.get<int>();
    };
    r.naturalness = score("naturalness");
    r.technical = score("technical");
    r.rationality = score("rationality");
    r.t_factor = j.at("t_factor").get<std::string>();
    r.r_factor = j.at("r_factor").get<std::string>();
    r.is_golden = j.value("is_golden", false);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(e.what());
  }
  if (auto problem = validate(r); !problem.empty()) throw FormatError(problem);
  return r;
}

class IngestError : public FormatError {
 public:
  explicit IngestError(std::vector<std::string> problems)
      : FormatError(join(problems)), problems_(std::move(problems)) {}
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& p) {
    std::string s = "invalid ratings:";
    for (const auto& line : p) s += "\n  " + line;
    return s;
  }
  std::vector<std::string> problems_;
};

// reject: a repeated (subject, image) pair is an error.
// last_write_wins: the later line replaces the earlier one in place.
enum class DuplicatePolicy { reject, last_write_wins };

inline std::vector<RatingRecord> ingest_stream(std::istream& in, DuplicatePolicy policy = DuplicatePolicy::reject,
                                               const std::string& source = "ratings") {
  std::vector<RatingRecord> out;
  std::map<std::pair<std::string, std::string>, std::size_t> seen;
  std::vector<std::string> problems;
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    RatingRecord r;
    try {
      r = record_from_json(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      problems.push_back(where + "malformed JSON (" + e.what() + ")");
      continue;
    } catch (const FormatError& e) {
      problems.push_back(where + e.what());
      continue;
    }
    const auto key = std::make_pair(r.subject_id, r.image_id);
    if (auto it = seen.find(key); it != seen.end()) {
      if (policy == DuplicatePolicy::reject) {
        problems.push_back(where + "duplicate rating of " + r.image_id + " by " + r.subject_id);
      } else {
        out[it->second] = std::move(r);
      }
      continue;
    }
    seen.emplace(key, out.size());
    out.push_back(std::move(r));
  }
  if (!problems.empty()) throw IngestError(std::move(problems));
  return out;
}

inline std::vector<RatingRecord> ingest(const std::filesystem::path& path,
                                        DuplicatePolicy policy = DuplicatePolicy::reject) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return ingest_stream(in, policy, path.filename().string());
}

inline std::set<std::string> subjects_of(const std::vector<RatingRecord>& records) {
  std::set<std::string> s;
  for (const auto& r : records) s.insert(r.subject_id);
  return s;
}

struct MosEntry {
  std::string image_id;
  double mos_t = 0.0;
  double mos_r = 0.0;
  double mos = 0.0;
  int count = 0;
};

using MosTable = std::map<std::string, MosEntry>;

inline nlohmann::json to_json(const MosEntry& e) {
  return {{"image_id", e.image_id}, {"mos_t", e.mos_t}, {"mos_r", e.mos_r}, {"mos", e.mos}, {"count", e.count}};
}

// Per-image means over the retained subjects. Golden (quality-control)
// records are not part of the corpus and are skipped.
inline MosTable compute_mos(const std::vector<RatingRecord>& records, const std::set<std::string>& retained) {
  struct Sum {
    double t = 0, r = 0, n = 0;
    int count = 0;
  };
  std::map<std::string, Sum> sums;
  for (const auto& rec : records) {
    if (rec.is_golden) continue;
    auto& s = sums[rec.image_id];
    if (!retained.count(rec.subject_id)) continue;
    s.t += rec.technical;
    s.r += rec.rationality;
    s.n += rec.naturalness;
    ++s.count;
  }
  MosTable table;
  for (const auto& [id, s] : sums) {
    if (s.count == 0) throw Error("compute_mos: image " + id + " has no retained ratings");
    table[id] = {id, s.t / s.count, s.r / s.count, s.n / s.count, s.count};
  }
  return table;
}

inline MosTable compute_mos(const std::vector<RatingRecord>& records) {
  return compute_mos(records, subjects_of(records));
}

enum class AgreementLevel { interval, nominal };

// Krippendorff's alpha over units = images, coders = subjects. Units with a
// single rating are not pairable and are ignored.
inline double krippendorff_alpha(const std::vector<RatingRecord>& records, Perspective p,
                                 AgreementLevel level = AgreementLevel::interval,
                                 const std::set<std::string>* retained = nullptr) {
  std::map<std::string, std::vector<double>> units;
  for (const auto& r : records) {
    if (r.is_golden) continue;
    if (retained && !retained->count(r.subject_id)) continue;
    units[r.image_id].push_back(r.score(p));
  }
  double n = 0.0;
  double observed = 0.0;  // sum_u (sum_{i != j} delta) / (m_u - 1)
  std::vector<double> pooled;
  for (const auto& [id, vals] : units) {
    const double m = static_cast<double>(vals.size());
    if (vals.size() < 2) continue;
    n += m;
    pooled.insert(pooled.end(), vals.begin(), vals.end());
    double pair_sum = 0.0;
    if (level == AgreementLevel::interval) {
      double s = 0.0, s2 = 0.0;
      for (double v : vals) {
        s += v;
        s2 += v * v;
      }
      pair_sum = 2.0 * (m * s2 - s * s);
    } else {
      std::map<double, double> counts;
      for (double v : vals) counts[v] += 1.0;
      double same = 0.0;
      for (const auto& [v, c] : counts) same += c * c;
      pair_sum = m * m - same;
    }
    observed += pair_sum / (m - 1.0);
  }
  if (n < 2.0) throw Error("krippendorff_alpha: no pairable values (need an item rated at least twice)");
  double expected_pairs = 0.0;
  if (level == AgreementLevel::interval) {
    double s = 0.0, s2 = 0.0;
    for (double v : pooled) {
      s += v;
      s2 += v * v;
    }
    expected_pairs = 2.0 * (n * s2 - s * s);
  } else {
    std::map<double, double> counts;
    for (double v : pooled) counts[v] += 1.0;
    double same = 0.0;
    for (const auto& [v, c] : counts) same += c * c;
    expected_pairs = n * n - same;
  }
  const double d_o = observed / n;
  const double d_e = expected_pairs / (n * (n - 1.0));
  if (!(d_e > 0.0)) throw Error("krippendorff_alpha: expected disagreement is zero (all pooled values identical)");
  return 1.0 - d_o / d_e;
}

struct SubjectCorrelation {
  std::string subject_id;
  int ratings = 0;
  std::optional<double> srcc;  // empty when undefined (too few ratings, constant ratings)
  bool flagged = false;
  bool excluded = false;  // too few ratings to judge
  std::string note;
};

struct OutlierReport {
  std::vector<SubjectCorrelation> subjects;
  std::vector<std::string> flagged;
  std::vector<std::string> excluded;
};

// Correlates each subject's ratings with the leave-that-subject-out MOS on
// the images they rated; subjects below `threshold` are flagged.
inline OutlierReport detect_outliers(const std::vector<RatingRecord>& records, Perspective p, double threshold,
                                     int min_ratings = 5) {
  std::map<std::string, std::pair<double, int>> totals;  // image -> (sum, count)
  std::map<std::string, std::vector<const RatingRecord*>> by_subject;
  for (const auto& r : records) {
    if (r.is_golden) continue;
    auto& t = totals[r.image_id];
    t.first += r.score(p);
    ++t.second;
    by_subject[r.subject_id].push_back(&r);
  }
  if (by_subject.size() < 3) throw Error("detect_outliers: need at least 3 subjects");

  OutlierReport report;
  for (const auto& [subject, recs] : by_subject) {
    SubjectCorrelation sc{subject, static_cast<int>(recs.size())};
    std::vector<double> own, consensus;
    for (const auto* r : recs) {
      const auto& t = totals[r->image_id];
      if (t.second < 2) continue;
      own.push_back(r->score(p));
      consensus.push_back((t.first - r->score(p)) / (t.second - 1));
    }
    if (static_cast<int>(own.size()) < min_ratings) {
      sc.excluded = true;
      sc.note = "fewer than " + std::to_string(min_ratings) + " co-rated images";
      report.excluded.push_back(subject);
    } else if (stats::is_constant(own) || stats::is_constant(consensus)) {
      sc.flagged = true;
      sc.note = stats::is_constant(own) ? "constant ratings" : "constant consensus";
    } else {
      sc.srcc = eval::srcc(own, consensus);
      sc.flagged = *sc.srcc < threshold;
    }
    if (sc.flagged) report.flagged.push_back(subject);
    report.subjects.push_back(std::move(sc));
  }
  return report;
}

struct SessionCheck {
  std::string subject_id;
  int session = 0;
  int goldens = 0;
  int within = 0;
  bool passed = false;
};

// Pass iff strictly more than 70% of the session's golden naturalness
// ratings lie within +-1 of the expert score.
inline std::vector<SessionCheck> spot_check(const std::vector<RatingRecord>& records,
                                            const std::map<std::string, double>& golden_truth) {
  std::map<std::pair<std::string, int>, SessionCheck> sessions;
  for (const auto& r : records) {
    auto& s = sessions[{r.subject_id, r.session}];
    s.subject_id = r.subject_id;
    s.session = r.session;
    if (!r.is_golden) continue;
    const auto it = golden_truth.find(r.image_id);
    if (it == golden_truth.end()) continue;
    ++s.goldens;
    if (std::abs(r.naturalness - it->second) <= 1.0) ++s.within;
  }
  std::vector<SessionCheck> out;
  for (auto& [key, s] : sessions) {
    if (s.goldens == 0) {
      throw Error("spot_check: session " + std::to_string(s.session) + " of " + s.subject_id +
                  " has no golden records");
    }
    s.passed = s.within * 10 > s.goldens * 7;
    out.push_back(s);
  }
  return out;
}

inline std::map<std::string, double> load_golden_truth(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in).get<std::map<std::string, double>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

struct CorrelationRow {
  std::string name;
  double srcc = 0.0;
  double plcc = 0.0;
};

struct CorrelationReport {
  CorrelationRow technical{"MOS_T"};
  CorrelationRow rationality{"MOS_R"};
  CorrelationRow sum{"MOS_T+MOS_R"};
  CorrelationRow weighted{"weighted"};

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto* r : {&technical, &rationality, &sum, &weighted}) {
      j.push_back({{"name", r->name}, {"srcc", r->srcc}, {"plcc", r->plcc}});
    }
    return j;
  }
};

inline CorrelationReport correlate_perspectives(const MosTable& mos, const fusion::FusionWeights& w) {
  if (mos.size() < 3) throw Error("correlate_perspectives: need at least 3 images");
  std::vector<double> t, r, s, f, y;
  for (const auto& [id, e] : mos) {
    t.push_back(e.mos_t);
    r.push_back(e.mos_r);
    s.push_back(e.mos_t + e.mos_r);
    f.push_back(fusion::fuse(e.mos_t, e.mos_r, w));
    y.push_back(e.mos);
  }
  CorrelationReport rep;
  const auto fill = [&](CorrelationRow& row, const std::vector<double>& x) {
    row.srcc = eval::srcc(x, y);
    row.plcc = eval::plcc(x, y);
  };
  fill(rep.technical, t);
  fill(rep.rationality, r);
  fill(rep.sum, s);
  fill(rep.weighted, f);
  return rep;
}

struct ScoreBucket {
  double lo = 1.0;
  double hi = 5.0;  // exclusive, except for the last bucket
};

struct BucketFrequency {
  ScoreBucket bucket;
  int records = 0;
  std::map<std::string, int> t_counts;
  std::map<std::string, int> r_counts;
  std::optional<double> t_to_r_ratio;  // non-Null technical : non-Null rationality
};

inline std::vector<ScoreBucket> default_buckets() { return {{1, 2}, {2, 3}, {3, 4}, {4, 5}}; }

// Histogram of chosen main factors among records whose image MOS falls in
// each bucket.
inline std::vector<BucketFrequency> factor_frequency(const std::vector<RatingRecord>& records, const MosTable& mos,
                                                     const std::vector<ScoreBucket>& buckets) {
  if (buckets.empty()) throw Error("factor_frequency: no buckets");
  if (buckets.front().lo > 1.0 || buckets.back().hi < 5.0) throw Error("factor_frequency: buckets must cover [1,5]");
  for (std::size_t i = 0; i < buckets.size(); ++i) {
    if (!(buckets[i].lo < buckets[i].hi)) throw Error("factor_frequency: empty bucket range");
    if (i + 1 < buckets.size() && buckets[i].hi != buckets[i + 1].lo) {
      throw Error("factor_frequency: buckets must be contiguous and non-overlapping");
    }
  }
  std::vector<BucketFrequency> out;
  for (const auto& b : buckets) {
    BucketFrequency f{b};
    for (const char* c : kTechnicalFactors) f.t_counts[c] = 0;
    for (const char* c : kRationalityFactors) f.r_counts[c] = 0;
    out.push_back(std::move(f));
  }
  for (const auto& r : records) {
    const auto it = mos.find(r.image_id);
    if (it == mos.end()) continue;
    const double m = it->second.mos;
    for (std::size_t i = 0; i < buckets.size(); ++i) {
      const bool last = i + 1 == buckets.size();
      if (m >= buckets[i].lo && (m < buckets[i].hi || (last && m <= buckets[i].hi))) {
        ++out[i].records;
        ++out[i].t_counts[r.t_factor];
        ++out[i].r_counts[r.r_factor];
        break;
      }
    }
  }
  for (auto& f : out) {
    const int t = f.records - f.t_counts["TNull"];
    const int r = f.records - f.r_counts["RNull"];
    if (r > 0) f.t_to_r_ratio = static_cast<double>(t) / r;
  }
  return out;
}

inline nlohmann::json to_json(const BucketFrequency& f) {
  nlohmann::json j = {{"lo", f.bucket.lo}, {"hi", f.bucket.hi}, {"records", f.records},
                      {"t_counts", f.t_counts}, {"r_counts", f.r_counts}};
  j["t_to_r_ratio"] = f.t_to_r_ratio ? nlohmann::json(*f.t_to_r_ratio) : nlohmann::json(nullptr);
  return j;
}

}  // namespace jina::subjective
