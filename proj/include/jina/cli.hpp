#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "jina/benchmark.hpp"
#include "jina/checkpoint.hpp"
#include "jina/error.hpp"
#include "jina/fusion.hpp"
#include "jina/lfm.hpp"
#include "jina/manifest.hpp"
#include "jina/partition.hpp"
#include "jina/png_io.hpp"
#include "jina/service.hpp"
#include "jina/splits.hpp"
#include "jina/subjective.hpp"
#include "jina/synth.hpp"
#include "jina/train.hpp"
#include "jina/transport.hpp"

// `joint-ina` subcommand dispatch. Exit codes: 0 ok, 1 domain error, 2 usage.
namespace jina::cli {

namespace detail {

inline std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// Closest long option of `app` (and the global options) to `arg`.
inline std::optional<std::string> suggest(const CLI::App& app, const CLI::App& root, const std::string& arg) {
  std::string flag = arg.substr(0, arg.find('='));
  std::optional<std::string> best;
  std::size_t best_d = std::max<std::size_t>(3, flag.size() / 3) + 1;
  for (const CLI::App* a : {&app, &root}) {
    for (const CLI::Option* opt : a->get_options()) {
      for (const auto& name : opt->get_lnames()) {
        const std::string candidate = "--" + name;
        const std::size_t d = edit_distance(flag, candidate);
        if (d < best_d) {
          best_d = d;
          best = candidate;
        }
      }
    }
  }
  return best;
}

inline std::vector<double> read_numbers(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '[') {
    try {
      return nlohmann::json::parse(text).get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ": " + e.what());
    }
  }
  std::vector<double> out;
  std::istringstream is(text);
  std::string tok;
  while (is >> tok) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size()) throw FormatError(path.string() + ": not a number: '" + tok + "'");
    out.push_back(v);
  }
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

inline subjective::MosTable read_mos_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  subjective::MosTable table;
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      subjective::MosEntry e;
      e.image_id = j.contains("image_id") ? j["image_id"].get<std::string>() : j.at("id").get<std::string>();
      e.mos_t = j.at("mos_t").get<double>();
      e.mos_r = j.at("mos_r").get<double>();
      e.mos = j.at("mos").get<double>();
      e.count = j.value("count", 1);
      table[e.image_id] = e;
    } catch (const nlohmann::json::exception& ex) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return table;
}

}  // namespace detail

struct TrainFlags {
  int epochs = 30;
  int batch = 32;
  double lr = 2e-5;
  std::string loss = "jointpp";
  int patch = 64;
  int stages = 5;
  int base_channels = 8;
  double alpha = 1.0, beta = 0.5, lambda_is = 0.5, tau = 0.5;
  double stub_threshold = 2.0;
  std::string lfm_cache;

  void add_to(CLI::App& app) {
    app.add_option("--epochs", epochs, "Training epochs")->check(CLI::PositiveNumber);
    app.add_option("--batch", batch, "Batch size (>= 2)")->check(CLI::Range(2, 1 << 20));
    app.add_option("--lr", lr, "Adam learning rate")->check(CLI::NonNegativeNumber);
    app.add_option("--loss", loss, "Loss: is, fs or jointpp")->check(CLI::IsMember({"is", "fs", "jointpp"}));
    app.add_option("--patch", patch, "Partition patch size in pixels")->check(CLI::PositiveNumber);
    app.add_option("--stages", stages, "Convolution stages per branch")->check(CLI::PositiveNumber);
    app.add_option("--base-channels", base_channels, "Channels of the first stage")->check(CLI::PositiveNumber);
    app.add_option("--alpha", alpha, "Rank-loss weight inside L_C");
    app.add_option("--beta", beta, "WSD weight inside L_IS");
    app.add_option("--lambda-is", lambda_is, "L_IS weight inside L_JOINT++");
    app.add_option("--tau", tau, "Soft-rank temperature");
    app.add_option("--stub-threshold", stub_threshold, "Artifact stub threshold (x image mean)");
    app.add_option("--lfm-cache", lfm_cache, "Directory for cached low-frequency maps");
  }

  train::TrainConfig config(std::uint64_t seed, int threads) const {
    train::TrainConfig c;
    c.epochs = epochs;
    c.batch_size = batch;
    c.lr = lr;
    c.loss_mode = losses::parse_loss_mode(loss);
    c.loss = {alpha, beta, lambda_is, tau};
    c.technical.stages = c.rationality.stages = stages;
    c.technical.base_channels = c.rationality.base_channels = base_channels;
    c.preprocess.patch_size = patch;
    c.preprocess.stub_threshold = stub_threshold;
    c.lfm_cache = !lfm_cache.empty();
    if (c.lfm_cache) c.cache_dir = lfm_cache;
    c.seed = seed;
    c.threads = threads;
    return c;
  }
};

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Joint two-perspective image naturalness assessment", "joint-ina"};
  app.require_subcommand(1);
  std::uint64_t seed = 7;
  int threads = 1;
  std::string log_level = "info";
  app.add_option("--seed", seed, "Seed for every random choice")->capture_default_str();
  app.add_option("--threads", threads, "Worker threads")->envname("JINA_THREADS")->check(CLI::PositiveNumber);
  app.add_option("--log-level", log_level, "quiet or info")->check(CLI::IsMember({"quiet", "info"}));
  const auto info = [&](const std::string& msg) {
    if (log_level != "quiet") err << msg << '\n';
  };
  const auto emit = [&](const nlohmann::json& j) { out << j.dump(2) << '\n'; };

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic labelled corpus");
  synth::SynthConfig scfg;
  std::string synth_out;
  synth->add_option("--contents", scfg.contents, "Number of base scenes")->check(CLI::PositiveNumber);
  synth->add_option("--per-content", scfg.specs_per_content, "Distortion specs per scene")
      ->check(CLI::PositiveNumber);
  synth->add_option("--side", scfg.side, "Image side in pixels")->check(CLI::Range(8, 4096));
  synth->add_option("--label-noise", scfg.label_noise, "Std of noise added to overall MOS");
  synth->add_option("--out", synth_out, "Output directory")->required();

  // lfm
  auto* lfm_cmd = app.add_subcommand("lfm", "Compute the low-frequency map of an image");
  lfm::LfmConfig lcfg;
  std::string lfm_in, lfm_out, lfm_edges;
  lfm_cmd->add_option("--in", lfm_in, "Input PNG")->required();
  lfm_cmd->add_option("--out", lfm_out, "Smooth output PNG")->required();
  lfm_cmd->add_option("--edge-out,--edges", lfm_edges, "Edge-field output PNG");
  lfm_cmd->add_option("--mu", lcfg.mu, "Smoothness weight");
  lfm_cmd->add_option("--nu", lcfg.nu, "Edge-length weight");
  lfm_cmd->add_option("--eps,--epsilon", lcfg.epsilon, "Edge band width");
  lfm_cmd->add_option("--iters,--outer-iters", lcfg.outer_iters, "Alternating iterations");
  lfm_cmd->add_option("--inner-tol", lcfg.inner_tol, "Inner solver residual tolerance");

  // wsd
  auto* wsd_cmd = app.add_subcommand("wsd", "Wasserstein distance between two 1-D samples");
  std::string wsd_a, wsd_b;
  double wsd_order = 2.0;
  wsd_cmd->add_option("--a", wsd_a, "File of scalars (newline separated or a JSON array)")->required();
  wsd_cmd->add_option("--b", wsd_b, "Second sample file")->required();
  wsd_cmd->add_option("--l,--order", wsd_order, "Order l >= 1");

  // partition
  auto* part = app.add_subcommand("partition", "Artifact-guided neighbourhood shuffle of an image");
  std::string part_in, part_out, part_mask, part_mask_out;
  int part_patch = 64;
  double part_threshold = 2.0;
  part->add_option("--in", part_in, "Input PNG")->required();
  part->add_option("--out", part_out, "Output PNG")->required();
  part->add_option("--patch", part_patch, "Patch size")->check(CLI::PositiveNumber);
  part->add_option("--mask", part_mask, "Artifact mask JSON (default: heuristic stub)");
  part->add_option("--threshold", part_threshold, "Stub threshold");
  part->add_option("--mask-out", part_mask_out, "Write the mask used");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train both branches");
  TrainFlags tflags;
  tflags.add_to(*train_cmd);
  std::string train_manifest, train_split, train_out, train_log, train_variant = "full";
  train_cmd->add_option("--manifest", train_manifest, "Manifest JSONL")->required();
  train_cmd->add_option("--split", train_split, "Split JSON (default: seeded 7:1:2 split)");
  train_cmd->add_option("--out", train_out, "Checkpoint path")->required();
  train_cmd->add_option("--log", train_log, "JSONL training log");
  train_cmd->add_option("--variant", train_variant, "full, no-loc, no-reg or no-mp")
      ->check(CLI::IsMember({"full", "no-loc", "no-reg", "no-mp"}));

  // predict
  auto* pred = app.add_subcommand("predict", "Score one image");
  std::string pred_ckpt, pred_in, pred_mask;
  pred->add_option("--ckpt", pred_ckpt, "Checkpoint")->required();
  pred->add_option("--in", pred_in, "Input PNG")->required();
  pred->add_option("--mask", pred_mask, "Artifact mask JSON");

  // bench
  auto* bench = app.add_subcommand("bench", "Repeated-split benchmark");
  TrainFlags bflags;
  bflags.add_to(*bench);
  std::string bench_manifest, bench_out, bench_variant = "full";
  int bench_repeats = 5;
  bench->add_option("--manifest", bench_manifest, "Manifest JSONL")->required();
  bench->add_option("--repeats", bench_repeats, "Split repeats")->check(CLI::PositiveNumber);
  bench->add_option("--variant", bench_variant, "full, no-loc, no-reg or no-mp")
      ->check(CLI::IsMember({"full", "no-loc", "no-reg", "no-mp"}));
  bench->add_option("--out", bench_out, "Report JSON");

  // aggregate
  auto* agg = app.add_subcommand("aggregate", "Quality control and MOS aggregation of ratings");
  std::string agg_ratings, agg_golden, agg_out, agg_report, agg_persp = "naturalness";
  double agg_threshold = 0.3;
  bool agg_report_only = false, agg_dedup = false;
  agg->add_option("--ratings", agg_ratings, "Ratings JSONL")->required();
  agg->add_option("--golden", agg_golden, "Golden truth JSON");
  agg->add_option("--out", agg_out, "MOS JSONL")->required();
  agg->add_option("--report", agg_report, "Report JSON");
  agg->add_option("--threshold", agg_threshold, "Outlier SRCC threshold");
  agg->add_option("--perspective", agg_persp, "Perspective used for outlier detection")
      ->check(CLI::IsMember({"naturalness", "technical", "rationality"}));
  agg->add_flag("--report-only", agg_report_only, "Flag outliers without removing them");
  agg->add_flag("--dedup", agg_dedup, "Keep the last of repeated (subject, image) ratings");

  // fit-weights
  auto* fit = app.add_subcommand("fit-weights", "Least-squares perspective fusion weights");
  std::string fit_mos;
  bool fit_intercept = false;
  fit->add_option("--ratings,--mos", fit_mos, "MOS JSONL (image_id, mos_t, mos_r, mos)")->required();
  fit->add_flag("--intercept", fit_intercept, "Fit an intercept");

  // inspect-ckpt
  auto* insp = app.add_subcommand("inspect-ckpt", "Print a checkpoint header");
  std::string insp_ckpt;
  insp->add_option("--ckpt", insp_ckpt, "Checkpoint")->required();

  // serve
  auto* serve = app.add_subcommand("serve", "Run the rating-session HTTP service");
  std::string serve_cfg;
  int serve_port = 0;
  serve->add_option("--config", serve_cfg, "Service config JSON")->required();
  serve->add_option("--port", serve_port, "Override the configured port");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ExtrasError& e) {
    err << "joint-ina: " << e.what() << '\n';
    const CLI::App* target = &app;
    for (const auto* sub : app.get_subcommands()) target = sub;
    for (const auto& extra : target->remaining()) {
      if (extra.rfind("-", 0) != 0) continue;
      if (auto s = detail::suggest(*target, app, extra)) err << "  " << extra << ": did you mean " << *s << "?\n";
    }
    return 2;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }

  try {
    if (synth->parsed()) {
      scfg.seed = seed;
      const auto m = synth::gen_dataset(scfg, synth_out);
      info("wrote " + std::to_string(m.samples.size()) + " samples to " + synth_out);
      emit({{"samples", m.samples.size()}, {"manifest", (std::filesystem::path(synth_out) / "manifest.jsonl").string()}});
    } else if (lfm_cmd->parsed()) {
      const Image img = load_png(lfm_in);
      const auto r = lfm::solve_lfm(img, lcfg);
      save_png(r.smooth, lfm_out);
      if (!lfm_edges.empty()) save_png(r.edge_field, lfm_edges);
      emit({{"energy_trace", r.energy_trace}});
    } else if (wsd_cmd->parsed()) {
      const auto a = detail::read_numbers(wsd_a);
      const auto b = detail::read_numbers(wsd_b);
      emit({{"order", wsd_order}, {"wsd", transport::wsd(a, b, wsd_order)}});
    } else if (part->parsed()) {
      Image img = load_png(part_in);
      img = (img.height() % part_patch == 0 && img.width() % part_patch == 0) ? img
                                                                              : center_crop_to_grid(img, part_patch);
      const ArtifactMask mask =
          part_mask.empty() ? heuristic_artifact_stub(img, part_patch, part_threshold) : load_mask(part_mask);
      save_png(artifact_guided_partition(img, mask, part_patch, seed), part_out);
      if (!part_mask_out.empty()) save_mask(mask, part_mask_out);
      emit({{"height", img.height()}, {"width", img.width()}, {"masked_cells", mask.cells.size()}});
    } else if (train_cmd->parsed()) {
      const auto manifest = load_manifest(train_manifest);
      const auto cfg = eval::apply_variant(tflags.config(seed, threads), eval::parse_variant(train_variant));
      const auto split = train_split.empty()
                             ? eval::make_split(manifest.content_ids(), eval::kDefaultRatios, seed, 0)
                             : eval::load_split(train_split);
      std::ofstream log_file;
      if (!train_log.empty()) {
        log_file.open(train_log);
        if (!log_file) throw IoError("cannot write " + train_log);
      }
      const auto result = train::train(manifest, split, cfg, [&](const nlohmann::json& j) {
        if (log_file.is_open()) log_file << j.dump() << '\n';
        if (j["type"] == "epoch") info("epoch " + j["epoch"].dump() + " train_loss " + j["train_loss"].dump());
      });
      nets::save_checkpoint(result.checkpoint, train_out);
      const auto& last = result.history.back();
      emit({{"best_epoch", result.best_epoch}, {"checkpoint", train_out}, {"final", train::to_json(last)}});
    } else if (pred->parsed()) {
      const auto ckpt = nets::load_checkpoint(pred_ckpt);
      std::optional<ArtifactMask> mask;
      if (!pred_mask.empty()) mask = load_mask(pred_mask);
      const auto s = train::predict(ckpt, load_png(pred_in), mask ? &*mask : nullptr);
      emit({{"s_t", s.s_t}, {"s_r", s.s_r}, {"s_n", s.s_n}});
    } else if (bench->parsed()) {
      const auto manifest = load_manifest(bench_manifest);
      eval::BenchOptions opt;
      opt.repeats = bench_repeats;
      opt.variant = eval::parse_variant(bench_variant);
      opt.split_seed = seed;
      const auto report = eval::run_benchmark(manifest, bflags.config(seed, threads), opt,
                                              [&](const eval::RepeatResult& r) {
                                                info("repeat " + std::to_string(r.repeat) + " naturalness srcc " +
                                                     std::to_string(r.srcc[2]));
                                              });
      const auto j = eval::to_json(report);
      if (!bench_out.empty()) detail::write_text(bench_out, j.dump(2) + '\n');
      emit(j);
    } else if (agg->parsed()) {
      const auto policy =
          agg_dedup ? subjective::DuplicatePolicy::last_write_wins : subjective::DuplicatePolicy::reject;
      const auto all = subjective::ingest(agg_ratings, policy);
      nlohmann::json report = nlohmann::json::object();
      // Sessions that failed the spot check do not contribute ratings.
      std::vector<subjective::RatingRecord> records;
      if (!agg_golden.empty()) {
        const auto truth = subjective::load_golden_truth(agg_golden);
        std::set<std::pair<std::string, int>> failed;
        nlohmann::json checks = nlohmann::json::array();
        for (const auto& c : subjective::spot_check(all, truth)) {
          checks.push_back({{"subject_id", c.subject_id}, {"session", c.session}, {"goldens", c.goldens},
                            {"within", c.within}, {"passed", c.passed}});
          if (!c.passed) failed.insert({c.subject_id, c.session});
        }
        report["spot_checks"] = checks;
        for (const auto& r : all) {
          if (!failed.count({r.subject_id, r.session})) records.push_back(r);
        }
      } else {
        records = all;
      }
      auto retained = subjective::subjects_of(records);
      const auto persp = subjective::parse_perspective(agg_persp);
      if (retained.size() >= 3) {
        const auto outliers = subjective::detect_outliers(records, persp, agg_threshold);
        nlohmann::json subj = nlohmann::json::array();
        for (const auto& s : outliers.subjects) {
          subj.push_back({{"subject_id", s.subject_id}, {"ratings", s.ratings},
                          {"srcc", s.srcc ? nlohmann::json(*s.srcc) : nlohmann::json(nullptr)},
                          {"flagged", s.flagged}, {"excluded", s.excluded}, {"note", s.note}});
        }
        report["outliers"] = {{"threshold", agg_threshold}, {"perspective", agg_persp}, {"subjects", subj},
                              {"flagged", outliers.flagged}, {"removed", !agg_report_only}};
        if (!agg_report_only) {
          for (const auto& id : outliers.flagged) retained.erase(id);
        }
      }
      const auto all_subjects = subjective::subjects_of(records);
      nlohmann::json alpha = nlohmann::json::object();
      for (auto p : {subjective::Perspective::naturalness, subjective::Perspective::technical,
                     subjective::Perspective::rationality}) {
        const auto safe = [&](const std::set<std::string>& s) -> nlohmann::json {
          try {
            return subjective::krippendorff_alpha(records, p, subjective::AgreementLevel::interval, &s);
          } catch (const Error&) {
            return nullptr;
          }
        };
        alpha[subjective::to_string(p)] = {{"all", safe(all_subjects)}, {"retained", safe(retained)}};
      }
      report["alpha"] = alpha;
      const auto mos = subjective::compute_mos(records, retained);
      std::string lines;
      for (const auto& [id, e] : mos) lines += subjective::to_json(e).dump() + '\n';
      detail::write_text(agg_out, lines);
      if (mos.size() >= 3) {
        try {
          report["correlations"] = subjective::correlate_perspectives(mos, fusion::FusionWeights{}).to_json();
        } catch (const Error& e) {
          report["correlations"] = e.what();
        }
      }
      nlohmann::json freq = nlohmann::json::array();
      for (const auto& f : subjective::factor_frequency(records, mos, subjective::default_buckets())) {
        freq.push_back(subjective::to_json(f));
      }
      report["factor_frequency"] = freq;
      report["images"] = mos.size();
      report["retained_subjects"] = retained;
      if (!agg_report.empty()) detail::write_text(agg_report, report.dump(2) + '\n');
      emit({{"images", mos.size()}, {"retained_subjects", retained.size()}, {"mos", agg_out}});
    } else if (fit->parsed()) {
      const auto table = detail::read_mos_table(fit_mos);
      std::vector<fusion::MosTriple> data;
      for (const auto& [id, e] : table) data.push_back({e.mos_t, e.mos_r, e.mos});
      const auto r = fusion::fit_weights(data, fit_intercept);
      nlohmann::json j = {{"weights", fusion::to_json(r.weights)}, {"residual_rms", r.residual_rms}};
      if (table.size() >= 3) j["correlations"] = subjective::correlate_perspectives(table, r.weights).to_json();
      emit(j);
    } else if (insp->parsed()) {
      const auto ckpt = nets::load_checkpoint(insp_ckpt);
      nlohmann::json j = {{"seed", ckpt.seed}, {"meta", ckpt.meta}};
      j["technical"] = nets::to_json(ckpt.technical.config);
      j["technical"]["param_count"] = ckpt.technical.values.size();
      j["rationality"] = nets::to_json(ckpt.rationality.config);
      j["rationality"]["param_count"] = ckpt.rationality.values.size();
      emit(j);
    } else if (serve->parsed()) {
      auto cfg = service::load_service_config(serve_cfg);
      if (serve_port > 0) cfg.port = serve_port;
      service::SessionService svc(cfg);
      httplib::Server server;
      service::mount(server, svc);
      info("listening on " + cfg.bind_address + ":" + std::to_string(cfg.port));
      if (!server.listen(cfg.bind_address, cfg.port)) throw IoError("cannot bind " + cfg.bind_address);
    }
  } catch (const Error& e) {
    err << "joint-ina: error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "joint-ina: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace jina::cli
