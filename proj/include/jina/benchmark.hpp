#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "jina/error.hpp"
#include "jina/manifest.hpp"
#include "jina/metrics.hpp"
#include "jina/splits.hpp"
#include "jina/train.hpp"

namespace jina::eval {

enum class Variant { full, no_loc, no_reg, no_mp };

inline Variant parse_variant(const std::string& s) {
  if (s == "full") return Variant::full;
  if (s == "no-loc") return Variant::no_loc;
  if (s == "no-reg") return Variant::no_reg;
  if (s == "no-mp") return Variant::no_mp;
  throw Error("unknown variant '" + s + "' (expected full, no-loc, no-reg or no-mp)");
}

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_loc: return "no-loc";
    case Variant::no_reg: return "no-reg";
    case Variant::no_mp: return "no-mp";
  }
  return "?";
}

inline train::TrainConfig apply_variant(train::TrainConfig cfg, Variant v) {
  switch (v) {
    case Variant::full: break;
    case Variant::no_loc: cfg.preprocess.localize = false; break;
    case Variant::no_reg: cfg.regularize = false; break;
    case Variant::no_mp: cfg.preprocess.multi_perspective = false; break;
  }
  return cfg;
}

inline constexpr std::array<const char*, 3> kPerspectives = {"technical", "rationality", "naturalness"};

struct RepeatResult {
  int repeat = 0;
  bool diverged = false;
  std::string error;
  std::array<double, 3> srcc{};  // technical, rationality, naturalness
  std::array<double, 3> plcc{};
  int best_epoch = 0;
};

struct BenchReport {
  std::string variant;
  std::string loss;
  std::vector<RepeatResult> repeats;
  std::array<double, 3> mean_srcc{};
  std::array<double, 3> mean_plcc{};
  int completed = 0;
};

inline nlohmann::json to_json(const BenchReport& r) {
  nlohmann::json per = nlohmann::json::object();
  for (std::size_t p = 0; p < kPerspectives.size(); ++p) {
    nlohmann::json srcc = nlohmann::json::array(), plcc = nlohmann::json::array();
    for (const auto& rep : r.repeats) {
      srcc.push_back(rep.diverged ? nlohmann::json(nullptr) : nlohmann::json(rep.srcc[p]));
      plcc.push_back(rep.diverged ? nlohmann::json(nullptr) : nlohmann::json(rep.plcc[p]));
    }
    per[kPerspectives[p]] = {{"mean_srcc", r.mean_srcc[p]},
                             {"mean_plcc", r.mean_plcc[p]},
                             {"srcc", srcc},
                             {"plcc", plcc}};
  }
  nlohmann::json errors = nlohmann::json::array();
  for (const auto& rep : r.repeats) {
    if (rep.diverged) errors.push_back({{"repeat", rep.repeat}, {"error", rep.error}});
  }
  return {{"variant", r.variant},
          {"loss", r.loss},
          {"repeats", r.repeats.size()},
          {"completed", r.completed},
          {"perspectives", per},
          {"failures", errors}};
}

namespace detail {

inline double corr_or_zero(const std::function<double(std::span<const double>, std::span<const double>)>& f,
                           const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || stats::is_constant(a) || stats::is_constant(b)) return 0.0;
  return f(a, b);
}

}  // namespace detail

// Test-set evaluation of a trained checkpoint: S_T vs MOS_T, S_R vs MOS_R,
// fused S_N vs MOS. A constant prediction scores 0.
inline RepeatResult evaluate_checkpoint(const nets::Checkpoint& ckpt, const std::vector<train::PreparedSample>& test,
                                        const fusion::FusionWeights& w) {
  std::array<std::vector<double>, 3> pred, truth;
  for (const auto& s : test) {
    const auto sc = train::predict_prepared(ckpt, s.inputs, w);
    pred[0].push_back(sc.s_t);
    pred[1].push_back(sc.s_r);
    pred[2].push_back(sc.s_n);
    truth[0].push_back(s.mos_t);
    truth[1].push_back(s.mos_r);
    truth[2].push_back(s.mos);
  }
  RepeatResult r;
  for (int p = 0; p < 3; ++p) {
    r.srcc[p] = detail::corr_or_zero(srcc, pred[p], truth[p]);
    r.plcc[p] = detail::corr_or_zero(plcc, pred[p], truth[p]);
  }
  return r;
}

struct BenchOptions {
  int repeats = 5;
  Variant variant = Variant::full;
  SplitRatios ratios = kDefaultRatios;
  std::uint64_t split_seed = 0;
};

using RepeatHook = std::function<void(const RepeatResult&)>;

// Evaluation needs every label, so the manifest must carry mos, mos_t and mos_r.
inline BenchReport run_benchmark(const DatasetManifest& manifest, const train::TrainConfig& base,
                                 const BenchOptions& opt, const RepeatHook& on_repeat = {}) {
  for (const auto& s : manifest.samples) {
    if (!s.mos || !s.mos_t || !s.mos_r) throw Error("bench: sample '" + s.id + "' lacks a label");
  }
  const auto cfg = apply_variant(base, opt.variant);
  const auto plans = make_splits(manifest, opt.ratios, opt.split_seed, opt.repeats);
  BenchReport report;
  report.variant = to_string(opt.variant);
  report.loss = losses::to_string(cfg.loss_mode);
  for (const auto& plan : plans) {
    RepeatResult rep;
    auto run_cfg = cfg;
    run_cfg.seed = derive_seed(cfg.seed, plan.repeat);
    try {
      const auto tr = train::prepare_part(manifest, plan, SplitPlan::Part::train, run_cfg);
      const auto va = train::prepare_part(manifest, plan, SplitPlan::Part::val, run_cfg);
      const auto te = train::prepare_part(manifest, plan, SplitPlan::Part::test, run_cfg);
      const auto result = train::train(tr, va, run_cfg);
      rep = evaluate_checkpoint(result.checkpoint, te, run_cfg.fusion);
      rep.best_epoch = result.best_epoch;
    } catch (const NumericError& e) {
      rep.diverged = true;
      rep.error = e.what();
    }
    rep.repeat = plan.repeat;
    if (on_repeat) on_repeat(rep);
    report.repeats.push_back(rep);
  }
  for (const auto& rep : report.repeats) {
    if (rep.diverged) continue;
    ++report.completed;
    for (int p = 0; p < 3; ++p) {
      report.mean_srcc[p] += rep.srcc[p];
      report.mean_plcc[p] += rep.plcc[p];
    }
  }
  if (report.completed > 0) {
    for (int p = 0; p < 3; ++p) {
      report.mean_srcc[p] /= report.completed;
      report.mean_plcc[p] /= report.completed;
    }
  }
  return report;
}

}  // namespace jina::eval
