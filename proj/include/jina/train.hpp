#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "jina/adam.hpp"
#include "jina/checkpoint.hpp"
#include "jina/error.hpp"
#include "jina/fusion.hpp"
#include "jina/image.hpp"
#include "jina/lfm.hpp"
#include "jina/losses.hpp"
#include "jina/manifest.hpp"
#include "jina/metrics.hpp"
#include "jina/nets.hpp"
#include "jina/partition.hpp"
#include "jina/png_io.hpp"
#include "jina/rng.hpp"
#include "jina/splits.hpp"

namespace jina::train {

// Everything needed to turn a raw image into the two branch inputs; stored
// in checkpoints so prediction repeats the training preprocessing.
struct Preprocess {
  int patch_size = 64;
  double stub_threshold = 2.0;
  bool localize = true;            // freeze artifact cells during partition
  bool multi_perspective = true;   // technical branch sees the partitioned image
};

inline nlohmann::json to_json(const Preprocess& p) {
  return {{"patch_size", p.patch_size},
          {"stub_threshold", p.stub_threshold},
          {"localize", p.localize},
          {"multi_perspective", p.multi_perspective}};
}

inline Preprocess preprocess_from_json(const nlohmann::json& j) {
  Preprocess p;
  p.patch_size = j.value("patch_size", p.patch_size);
  p.stub_threshold = j.value("stub_threshold", p.stub_threshold);
  p.localize = j.value("localize", p.localize);
  p.multi_perspective = j.value("multi_perspective", p.multi_perspective);
  return p;
}

struct TrainConfig {
  int epochs = 30;
  int batch_size = 32;
  double lr = 2e-5;
  losses::LossMode loss_mode = losses::LossMode::jointpp;
  losses::LossConfig loss;
  nets::BranchConfig technical;
  nets::BranchConfig rationality;
  Preprocess preprocess;
  bool regularize = true;  // WSD term on; off for the no-regularization ablation
  lfm::LfmConfig lfm;
  bool lfm_cache = false;
  std::filesystem::path cache_dir = ".jina-cache";
  fusion::FusionWeights fusion;
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const {
    if (epochs < 1) throw Error("train: epochs must be >= 1");
    if (batch_size < 2) throw Error("train: batch_size must be >= 2");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw Error("train: lr must be finite and >= 0");
    if (threads < 1) throw Error("train: threads must be >= 1");
    if (preprocess.patch_size < 1) throw Error("train: patch size must be positive");
    loss.validate();
    technical.validate();
    rationality.validate();
    lfm.validate();
  }

  bool wsd_active() const { return regularize && losses::uses_wsd(loss_mode) && loss.beta > 0.0; }
};

// ---------------------------------------------------------------------------
// LFM cache

namespace detail {

inline std::uint64_t image_hash(const Image& img) {
  const auto v = img.values();
  std::uint64_t h = fnv1a(std::span(reinterpret_cast<const unsigned char*>(v.data()), v.size() * sizeof(double)));
  const std::string dims = std::to_string(img.height()) + "x" + std::to_string(img.width()) + "x" +
                           std::to_string(img.channels());
  return fnv1a(dims, h);
}

inline std::string lfm_key(const Image& img, const lfm::LfmConfig& cfg) {
  const nlohmann::json j = {{"mu", cfg.mu},
                            {"nu", cfg.nu},
                            {"epsilon", cfg.epsilon},
                            {"outer_iters", cfg.outer_iters},
                            {"inner_tol", cfg.inner_tol},
                            {"inner_max_iters", cfg.inner_max_iters}};
  char buf[40];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump(), image_hash(img))));
  return buf;
}

inline std::optional<Image> read_cached(const std::filesystem::path& path, const Image& like) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::int32_t dims[3] = {0, 0, 0};
  in.read(reinterpret_cast<char*>(dims), sizeof dims);
  if (!in || dims[0] != like.height() || dims[1] != like.width() || dims[2] != like.channels()) return std::nullopt;
  std::vector<double> data(like.size());
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!in || in.peek() != std::char_traits<char>::eof()) return std::nullopt;
  for (double v : data) {
    if (!std::isfinite(v)) return std::nullopt;
  }
  return Image(dims[0], dims[1], dims[2], std::move(data));
}

inline void write_cached(const std::filesystem::path& path, const Image& img) {
  std::error_code ec;
  std::filesystem::create_directories(path.parent_path(), ec);
  auto tmp = path;
  tmp += ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) return;  // caching is best effort
    const std::int32_t dims[3] = {img.height(), img.width(), img.channels()};
    out.write(reinterpret_cast<const char*>(dims), sizeof dims);
    const auto v = img.values();
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!out) {
      out.close();
      std::filesystem::remove(tmp, ec);
      return;
    }
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) std::filesystem::remove(tmp, ec);
}

}  // namespace detail

// Stored values are raw doubles (not clamped), so the cache is exact.
inline Image cached_lfm(const Image& img, const lfm::LfmConfig& cfg, const std::filesystem::path* cache_dir) {
  if (cache_dir == nullptr) return lfm::solve_lfm(img, cfg).smooth;
  const auto path = *cache_dir / (detail::lfm_key(img, cfg) + ".lfm");
  if (auto hit = detail::read_cached(path, img)) return std::move(*hit);
  Image smooth = lfm::solve_lfm(img, cfg).smooth;
  detail::write_cached(path, smooth);
  return smooth;
}

// ---------------------------------------------------------------------------
// Per-sample preprocessing

struct BranchInputs {
  Image technical;
  Image rationality;
};

inline std::uint64_t sample_seed(std::uint64_t seed, const std::string& sample_id) {
  return derive_seed(seed, fnv1a(sample_id));
}

// `mask` overrides the heuristic stub when given.
inline BranchInputs prepare_inputs(const Image& raw, const Preprocess& pp, std::uint64_t seed,
                                   const ArtifactMask* mask = nullptr) {
  const int n = pp.patch_size;
  Image img = (raw.height() % n == 0 && raw.width() % n == 0) ? raw : center_crop_to_grid(raw, n);
  if (!pp.multi_perspective) return {img, img};
  ArtifactMask used;
  used.patch_size = n;
  if (pp.localize) used = mask ? *mask : heuristic_artifact_stub(img, n, pp.stub_threshold);
  Image shuffled = artifact_guided_partition(img, used, n, seed);
  return {std::move(shuffled), std::move(img)};
}

struct PreparedSample {
  std::string id;
  BranchInputs inputs;
  std::optional<Image> lfm;  // present when the WSD regularizer is active
  double pixel_wsd = 0.0;    // W_2^2 between the rationality input and its LFM
  double mos = 0.0;
  double mos_t = 0.0;
  double mos_r = 0.0;
};

inline PreparedSample prepare_sample(const DatasetManifest& manifest, const Sample& s, const TrainConfig& cfg) {
  const Image raw = load_png(manifest.resolve(s.path));
  std::optional<ArtifactMask> mask;
  if (s.mask) mask = load_mask(manifest.resolve(*s.mask));
  PreparedSample p;
  p.id = s.id;
  p.inputs = prepare_inputs(raw, cfg.preprocess, sample_seed(cfg.seed, s.id), mask ? &*mask : nullptr);
  const bool need_overall = cfg.loss_mode != losses::LossMode::fs;
  const bool need_perspectives = cfg.loss_mode != losses::LossMode::is;
  if (need_overall && !s.mos) throw Error("sample '" + s.id + "' lacks mos");
  if (need_perspectives && (!s.mos_t || !s.mos_r)) throw Error("sample '" + s.id + "' lacks mos_t/mos_r");
  // Labels a loss mode does not use are filled with a neutral value so they
  // can never influence its gradients.
  p.mos = s.mos.value_or(0.0);
  p.mos_t = s.mos_t.value_or(p.mos);
  p.mos_r = s.mos_r.value_or(p.mos);
  if (cfg.wsd_active()) {
    const std::filesystem::path* dir = cfg.lfm_cache ? &cfg.cache_dir : nullptr;
    p.lfm = cached_lfm(p.inputs.rationality, cfg.lfm, dir);
    p.pixel_wsd = transport::wsd_sq(p.inputs.rationality.values(), p.lfm->values());
  }
  return p;
}

// ---------------------------------------------------------------------------
// Batch loss and gradient

namespace detail {

// Runs body(i) for i in [0, n) on up to `threads` workers. Results must be
// written to per-index slots; callers reduce in index order.
inline void parallel_for(int n, int threads, const std::function<void(int)>& body) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  const int workers = std::min(threads, n);
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < n; i += workers) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace detail

struct BatchResult {
  double loss = 0.0;
  double wsd = 0.0;  // per-batch L_WSD (mean over samples)
  std::vector<double> pred_t;
  std::vector<double> pred_r;
  std::vector<double> grad_t;  // over technical params
  std::vector<double> grad_r;  // over rationality params
};

inline BatchResult batch_loss(const nets::BranchParams& tech, const nets::BranchParams& rat,
                              const std::vector<const PreparedSample*>& batch, const TrainConfig& cfg,
                              bool want_grad = true) {
  const int n = static_cast<int>(batch.size());
  if (n == 0) throw Error("batch_loss: empty batch");
  const bool wsd_on = cfg.wsd_active();
  std::vector<nets::ForwardTrace> tt(n), tr(n);
  std::vector<losses::WsdTerm> wsd(n);
  detail::parallel_for(n, cfg.threads, [&](int i) {
    const PreparedSample& s = *batch[i];
    tt[i] = nets::forward(tech, s.inputs.technical);
    tr[i] = nets::forward(rat, s.inputs.rationality);
    if (wsd_on) {
      if (!s.lfm) throw Error("batch_loss: sample '" + s.id + "' has no LFM");
      const auto tl = nets::forward(rat, *s.lfm);
      wsd[i] = losses::l_wsd(s.inputs.rationality, *s.lfm, tr[i], tl, s.pixel_wsd);
    }
  });

  losses::BatchScores scores;
  BatchResult out;
  for (int i = 0; i < n; ++i) {
    scores.pred_t.push_back(tt[i].score);
    scores.pred_r.push_back(tr[i].score);
    scores.mos.push_back(batch[i]->mos);
    scores.mos_t.push_back(batch[i]->mos_t);
    scores.mos_r.push_back(batch[i]->mos_r);
    if (wsd_on) out.wsd += wsd[i].value;
  }
  out.wsd /= n;
  // Modes that ignore WSD get no term even when the config asks for it.
  auto loss_cfg = cfg.loss;
  if (!wsd_on) loss_cfg.beta = 0.0;
  const auto composite = losses::evaluate(cfg.loss_mode, scores, wsd_on ? out.wsd : 0.0, loss_cfg);
  out.loss = composite.value;
  out.pred_t = scores.pred_t;
  out.pred_r = scores.pred_r;
  if (!want_grad) return out;

  std::vector<nets::Gradients> gt(n), gr(n);
  const double feature_scale = wsd_on ? composite.wsd_weight / n : 0.0;
  detail::parallel_for(n, cfg.threads, [&](int i) {
    gt[i] = nets::backward(tech, tt[i], {composite.grad_t[i], {}});
    nets::Upstream up{composite.grad_r[i], {}};
    if (wsd_on && feature_scale != 0.0) {
      up.features = wsd[i].feature_grads;
      for (auto& f : up.features) {
        for (double& v : f) v *= feature_scale;
      }
    }
    gr[i] = nets::backward(rat, tr[i], up);
  });
  out.grad_t.assign(tech.values.size(), 0.0);
  out.grad_r.assign(rat.values.size(), 0.0);
  for (int i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < out.grad_t.size(); ++k) out.grad_t[k] += gt[i].params[k];
    for (std::size_t k = 0; k < out.grad_r.size(); ++k) out.grad_r[k] += gr[i].params[k];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
  std::optional<double> val_srcc_n;
  std::optional<double> val_srcc_t;
  std::optional<double> val_srcc_r;
  int skipped_steps = 0;
};

inline nlohmann::json to_json(const EpochRecord& r) {
  nlohmann::json j = {{"type", "epoch"}, {"epoch", r.epoch}, {"train_loss", r.train_loss},
                      {"skipped_steps", r.skipped_steps}};
  const auto put = [&](const char* key, const std::optional<double>& v) {
    j[key] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  put("val_loss", r.val_loss);
  put("val_srcc_n", r.val_srcc_n);
  put("val_srcc_t", r.val_srcc_t);
  put("val_srcc_r", r.val_srcc_r);
  return j;
}

struct TrainResult {
  nets::Checkpoint checkpoint;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
};

struct Scores {
  double s_t = 0.0;
  double s_r = 0.0;
  double s_n = 0.0;
};

inline nlohmann::json train_meta(const TrainConfig& cfg) {
  return {{"preprocess", to_json(cfg.preprocess)},
          {"fusion", fusion::to_json(cfg.fusion)},
          {"loss_mode", losses::to_string(cfg.loss_mode)},
          {"regularize", cfg.regularize}};
}

namespace detail {

inline std::vector<std::vector<int>> make_batches(std::vector<int> order, int batch_size) {
  std::vector<std::vector<int>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    const auto end = std::min(order.size(), i + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + i, order.begin() + end);
  }
  // A tail too small for the rank term joins the previous batch.
  if (batches.size() > 1 && batches.back().size() < 3) {
    auto tail = std::move(batches.back());
    batches.pop_back();
    batches.back().insert(batches.back().end(), tail.begin(), tail.end());
  }
  return batches;
}

inline std::optional<double> safe_srcc(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || stats::is_constant(a) || stats::is_constant(b)) return std::nullopt;
  return eval::srcc(a, b);
}

}  // namespace detail

using StepLogger = std::function<void(const nlohmann::json&)>;

inline TrainResult train(const std::vector<PreparedSample>& train_set, const std::vector<PreparedSample>& val_set,
                         const TrainConfig& cfg, const StepLogger& log = {}) {
  cfg.validate();
  if (train_set.empty()) throw Error("train: empty training set");
  nets::BranchParams tech = nets::init_params(cfg.technical, derive_seed(cfg.seed, 0x7ec));
  nets::BranchParams rat = nets::init_params(cfg.rationality, derive_seed(cfg.seed, 0x4a7));
  // Head biases start at the mean of each branch's main target so early
  // steps are not spent moving the output offset onto the score scale.
  double mean_t = 0.0, mean_r = 0.0;
  for (const auto& s : train_set) {
    mean_t += cfg.loss_mode == losses::LossMode::is ? s.mos : s.mos_t;
    mean_r += cfg.loss_mode == losses::LossMode::is ? s.mos : s.mos_r;
  }
  tech.values.back() = mean_t / static_cast<double>(train_set.size());
  rat.values.back() = mean_r / static_cast<double>(train_set.size());
  nets::AdamState st_t(tech.values.size()), st_r(rat.values.size());
  const nets::AdamConfig adam{cfg.lr};

  TrainResult result;
  result.checkpoint = {tech, rat, cfg.seed, train_meta(cfg)};
  std::optional<double> best;

  std::vector<const PreparedSample*> val_ptrs;
  for (const auto& s : val_set) val_ptrs.push_back(&s);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<int> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng rng(derive_seed(cfg.seed, 0xe90c, epoch));
    rng.shuffle(order);
    const auto batches = detail::make_batches(order, cfg.batch_size);

    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      std::vector<const PreparedSample*> batch;
      for (int i : batches[b]) batch.push_back(&train_set[i]);
      auto r = batch_loss(tech, rat, batch, cfg);
      if (!std::isfinite(r.loss)) {
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(b + 1));
      }
      const auto s1 = nets::adam_step(tech.values, r.grad_t, st_t, adam);
      const auto s2 = nets::adam_step(rat.values, r.grad_r, st_r, adam);
      if (s1 != nets::StepStatus::applied || s2 != nets::StepStatus::applied) ++rec.skipped_steps;
      rec.train_loss += r.loss * static_cast<double>(batch.size());
      if (log) {
        log({{"type", "step"}, {"epoch", epoch}, {"step", b + 1}, {"loss", r.loss}, {"wsd", r.wsd},
             {"batch", batch.size()}});
      }
    }
    rec.train_loss /= static_cast<double>(train_set.size());

    if (val_ptrs.size() >= 3) {
      const auto v = batch_loss(tech, rat, val_ptrs, cfg, false);
      rec.val_loss = v.loss;
      std::vector<double> s_n, mos, mos_t, mos_r;
      for (std::size_t i = 0; i < val_ptrs.size(); ++i) {
        s_n.push_back(fusion::fuse(v.pred_t[i], v.pred_r[i], cfg.fusion));
        mos.push_back(val_ptrs[i]->mos);
        mos_t.push_back(val_ptrs[i]->mos_t);
        mos_r.push_back(val_ptrs[i]->mos_r);
      }
      rec.val_srcc_n = detail::safe_srcc(s_n, mos);
      rec.val_srcc_t = detail::safe_srcc(v.pred_t, mos_t);
      rec.val_srcc_r = detail::safe_srcc(v.pred_r, mos_r);
    }
    if (log) log(to_json(rec));

    // Best validation naturalness SRCC wins; without validation the last epoch does.
    const double score = rec.val_srcc_n.value_or(-2.0);
    if (!best || score > *best || val_ptrs.empty()) {
      best = score;
      result.best_epoch = epoch;
      result.checkpoint.technical = tech;
      result.checkpoint.rationality = rat;
    }
    result.history.push_back(rec);
  }
  return result;
}

inline std::vector<PreparedSample> prepare_part(const DatasetManifest& manifest, const eval::SplitPlan& split,
                                                eval::SplitPlan::Part part, const TrainConfig& cfg) {
  std::vector<PreparedSample> out;
  for (const auto& s : manifest.samples) {
    if (split.part_of(s.content_id) == part) out.push_back(prepare_sample(manifest, s, cfg));
  }
  return out;
}

inline TrainResult train(const DatasetManifest& manifest, const eval::SplitPlan& split, const TrainConfig& cfg,
                         const StepLogger& log = {}) {
  cfg.validate();
  const auto tr = prepare_part(manifest, split, eval::SplitPlan::Part::train, cfg);
  const auto va = prepare_part(manifest, split, eval::SplitPlan::Part::val, cfg);
  return train(tr, va, cfg, log);
}

// ---------------------------------------------------------------------------
// Inference

inline Scores predict_prepared(const nets::Checkpoint& ckpt, const BranchInputs& in,
                               const fusion::FusionWeights& w) {
  Scores s;
  s.s_t = nets::forward(ckpt.technical, in.technical).score;
  s.s_r = nets::forward(ckpt.rationality, in.rationality).score;
  s.s_n = fusion::fuse(s.s_t, s.s_r, w);
  return s;
}

inline Preprocess checkpoint_preprocess(const nets::Checkpoint& ckpt) {
  return ckpt.meta.contains("preprocess") ? preprocess_from_json(ckpt.meta["preprocess"]) : Preprocess{};
}

inline fusion::FusionWeights checkpoint_fusion(const nets::Checkpoint& ckpt) {
  return ckpt.meta.contains("fusion") ? fusion::weights_from_json(ckpt.meta["fusion"]) : fusion::FusionWeights{};
}

// Partition seed defaults to the checkpoint seed.
inline Scores predict(const nets::Checkpoint& ckpt, const Image& img, const ArtifactMask* mask = nullptr,
                      std::optional<std::uint64_t> seed = std::nullopt,
                      std::optional<fusion::FusionWeights> weights = std::nullopt) {
  const auto in = prepare_inputs(img, checkpoint_preprocess(ckpt), seed.value_or(ckpt.seed), mask);
  return predict_prepared(ckpt, in, weights.value_or(checkpoint_fusion(ckpt)));
}

}  // namespace jina::train
