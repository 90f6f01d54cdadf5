// Copyright 2026 The ptxseg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ptxseg/augment.hpp"
#include "ptxseg/checkpoint.hpp"
#include "ptxseg/config.hpp"
#include "ptxseg/dataset.hpp"
#include "ptxseg/errors.hpp"
#include "ptxseg/figures.hpp"
#include "ptxseg/metrics.hpp"
#include "ptxseg/model.hpp"
#include "ptxseg/postprocess.hpp"
#include "ptxseg/rle.hpp"
#include "ptxseg/trainer.hpp"

namespace ptxseg::app {

namespace fs = std::filesystem;

/// Progress and warning sink; defaults to stderr.
struct Log {
  std::function<void(const std::string&)> sink = [](const std::string& line) { std::cerr << line << std::endl; };
  void info(const std::string& msg) const {
    if (sink) sink("[ptxseg] " + msg);
  }
  void warn(const std::string& msg) const {
    if (sink) sink("[ptxseg] warning: " + msg);
  }
};

/// Maps a sample's image to a probability map (any resolution; resized to the truth later).
using Predictor = std::function<ProbMap(const Sample& sample, const Image& image)>;

/// Standard artifact locations under the output directory.
struct Layout {
  fs::path out;
  fs::path manifest() const { return out / "manifest.csv"; }
  fs::path dataset_record() const { return out / "dataset.json"; }
  fs::path checkpoints() const { return out / "checkpoints"; }
  fs::path best_checkpoint() const { return checkpoints() / "best.ckpt"; }
  fs::path last_checkpoint() const { return checkpoints() / "last.ckpt"; }
  fs::path epoch_log() const { return out / "epochs.jsonl"; }
  fs::path curves() const { return out / "curves.png"; }
  fs::path train_summary() const { return out / "train_summary.json"; }
  fs::path tune_result() const { return out / "tune.json"; }
  fs::path eval_dir() const { return out / "eval"; }
  fs::path predictions() const { return out / "predictions"; }
};

inline Layout layout(const RunConfig& cfg) { return {output_directory(cfg)}; }

/// Persists the resolved configuration as `run.json` (latest command) and `run_<command>.json`.
inline void write_run_record(const RunConfig& cfg, const std::string& command, const nlohmann::json& extra = {}) {
  const auto out = output_directory(cfg);
  nlohmann::json j = {{"command", command}, {"config", cfg}};
  if (!extra.is_null()) j["inputs"] = extra;
  write_json(out / "run.json", j);
  write_json(out / ("run_" + command + ".json"), j);
}

// ---- prepare / synth --------------------------------------------------------------------

struct PrepareResult {
  Manifest manifest;
  fs::path data_root;
  fs::path manifest_path;
};

/// Lists the dataset (optionally synthesising it first), splits it and writes the manifest.
inline PrepareResult cmd_prepare(const RunConfig& cfg, std::optional<std::size_t> synthetic = std::nullopt,
                                 const Log& log = {}) {
  validate(cfg);
  const auto lay = layout(cfg);
  fs::create_directories(lay.out);
  fs::path root;
  if (cfg.data.root) {
    root = *cfg.data.root;
  } else if (synthetic) {
    root = lay.out / "data";
  } else {
    throw UserError("no dataset given: set data.root (--data DIR) or use --synthetic N");
  }
  if (synthetic) {
    make_synthetic(root, *synthetic, cfg.synthetic.resolution, cfg.split.seed,
                   SyntheticOptions{cfg.synthetic.negative_fraction});
    log.info("wrote " + std::to_string(*synthetic) + " synthetic pairs under " + root.string());
  }
  ManifestOptions opt;
  opt.train_fraction = cfg.split.train_fraction;
  opt.stratify = cfg.split.stratify;
  opt.compute_counts = true;
  Manifest m = load_dataset(root, cfg.split.seed, opt);
  write_manifest_csv(lay.manifest(), m);
  const auto n_train = m.indices(Split::train).size();
  const auto n_val = m.indices(Split::val).size();
  nlohmann::json record = {{"root", fs::absolute(root).lexically_normal().string()},
                           {"manifest", lay.manifest().string()},
                           {"seed", cfg.split.seed},
                           {"train", n_train},
                           {"val", n_val}};
  if (m.counts) {
    record["counts"] = {{"total", m.counts->total}, {"positive", m.counts->positive}, {"negative", m.counts->negative}};
    log.info("dataset: " + std::to_string(m.counts->total) + " images (" + std::to_string(m.counts->positive) +
             " with pneumothorax, " + std::to_string(m.counts->negative) + " without)");
  }
  log.info("split: " + std::to_string(n_train) + " train / " + std::to_string(n_val) + " val");
  write_json(lay.dataset_record(), record);
  write_run_record(cfg, "prepare", {{"synthetic", synthetic ? nlohmann::json(*synthetic) : nlohmann::json(nullptr)}});
  return {std::move(m), root, lay.manifest()};
}

/// Writes synthetic pairs only (no manifest).
inline std::vector<std::string> cmd_synth(const fs::path& root, std::size_t n, int resolution, std::uint64_t seed,
                                          double negative_fraction, const Log& log = {}) {
  auto stems = make_synthetic(root, n, resolution, seed, SyntheticOptions{negative_fraction});
  log.info("wrote " + std::to_string(stems.size()) + " synthetic pairs under " + root.string());
  return stems;
}

/// Dataset root and manifest for commands that follow `prepare`.
inline Manifest load_prepared_manifest(const RunConfig& cfg) {
  const auto lay = layout(cfg);
  fs::path root;
  if (cfg.data.root) {
    root = *cfg.data.root;
  } else if (fs::exists(lay.dataset_record())) {
    root = read_json(lay.dataset_record()).at("root").get<std::string>();
  } else {
    throw UserError("no prepared dataset in " + lay.out.string() + " (run `ptxseg prepare` first or pass --data)");
  }
  const fs::path manifest = cfg.data.manifest ? fs::path(*cfg.data.manifest) : lay.manifest();
  if (!fs::exists(manifest)) {
    throw UserError("manifest not found: " + manifest.string() + " (run `ptxseg prepare` first)");
  }
  return read_manifest_csv(manifest, root, cfg.split.seed);
}

inline std::vector<Sample> select(const Manifest& m, std::optional<Split> which) {
  std::vector<Sample> out;
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    if (!which || m.split[i] == *which) out.push_back(m.samples[i]);
  }
  return out;
}

inline AugmentPipeline train_pipeline(const RunConfig& cfg) {
  auto p = build_pipeline(AugmentMode::train, cfg.model.input_resolution, cfg.augment.train);
  if (cfg.augment.probability) p = with_probabilities(std::move(p), *cfg.augment.probability);
  return p;
}

inline AugmentPipeline val_pipeline(const RunConfig& cfg) {
  return build_pipeline(AugmentMode::val, cfg.model.input_resolution);
}

// ---- train ------------------------------------------------------------------------------

struct TrainOptions {
  /// Continue from this checkpoint (usually `<out>/checkpoints/last.ckpt`).
  std::optional<fs::path> resume;
};

inline FitResult cmd_train(const RunConfig& cfg, const TrainOptions& opts = {}, const Log& log = {}) {
  validate(cfg);
  const auto lay = layout(cfg);
  fs::create_directories(lay.out);
  const Manifest m = load_prepared_manifest(cfg);
  const auto train = select(m, Split::train);
  const auto val = select(m, Split::val);
  if (train.empty()) throw UserError("training split is empty");
  if (val.empty()) throw UserError("validation split is empty");

  TrainConfig tc = cfg.train;
  tc.checkpoint_dir = lay.checkpoints();
  FitOptions fo;
  fo.epoch_log = lay.epoch_log();
  fo.checkpoint_extra = {{"run_config", cfg}};
  fo.on_epoch = [&](const EpochRecord& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "epoch %d  loss %.4f  val IoU %.4f  F1 %.4f  lr %.3g  %.1fs%s", r.epoch,
                  r.train_loss, r.val_iou, r.val_f1, r.lr, r.wall_time, r.improved ? "  (best)" : "");
    log.info(buf);
    return true;
  };

  std::optional<Model> model;
  if (opts.resume) {
    auto [restored, state] = resume_from(*opts.resume);
    if (nlohmann::json(restored.config()) != nlohmann::json([&] {
          auto c = cfg.model;
          c.pretrained_source.reset();
          return c;
        }())) {
      log.warn("resuming with the model configuration stored in " + opts.resume->string());
    }
    log.info("resuming after epoch " + std::to_string(state.progress.epoch) + " (step " +
             std::to_string(state.progress.global_step) + ")");
    model.emplace(std::move(restored));
    fo.resume = std::move(state);
  } else {
    model.emplace(build_model(cfg.model));
  }
  log.info("training " + cfg.model.encoder + " U-Net (" + std::to_string(model->num_parameters()) +
           " parameters) on " + std::to_string(train.size()) + " images, validating on " +
           std::to_string(val.size()));
  write_run_record(cfg, "train", {{"resume", opts.resume ? nlohmann::json(opts.resume->string()) : nlohmann::json()}});

  // The curve figure and log are produced even when training aborts.
  auto emit_curves = [&] {
    if (fs::exists(lay.epoch_log())) figures::plot_training_curves(read_epoch_log(lay.epoch_log()), lay.curves());
  };
  FitResult result;
  try {
    result = fit(*model, train, val, train_pipeline(cfg), val_pipeline(cfg), tc, fo);
  } catch (...) {
    emit_curves();
    throw;
  }
  emit_curves();
  write_json(lay.train_summary(), {{"epochs_run", result.records.size()},
                                   {"last_epoch", result.records.empty() ? 0 : result.records.back().epoch},
                                   {"best_epoch", result.best_epoch},
                                   {"best_val_iou", result.best_val_iou},
                                   {"early_stopped", result.early_stopped},
                                   {"global_step", result.global_step},
                                   {"total_steps", result.total_steps},
                                   {"best_checkpoint", result.best_checkpoint.string()},
                                   {"last_checkpoint", result.last_checkpoint.string()}});
  log.info("best val IoU " + std::to_string(result.best_val_iou) + " at epoch " + std::to_string(result.best_epoch) +
           (result.early_stopped ? " (early stop)" : ""));
  return result;
}

// ---- inference helpers ------------------------------------------------------------------

/// Predictor backed by a model: resize to the model resolution, run in inference mode.
inline Predictor model_predictor(std::shared_ptr<Model> model) {
  auto pipeline = build_pipeline(AugmentMode::val, model->config().input_resolution);
  return [model, pipeline](const Sample&, const Image& image) {
    const Mask dummy(image.height, image.width);
    const auto input = apply_paired(pipeline, image, dummy, 0).image;
    return predict(*model, input);
  };
}

inline Predictor checkpoint_predictor(const fs::path& checkpoint) {
  if (!fs::exists(checkpoint)) {
    throw UserError("checkpoint not found: " + checkpoint.string() + " (run `ptxseg train` first or pass --checkpoint)");
  }
  return model_predictor(std::make_shared<Model>(load_checkpoint(checkpoint).model));
}

/// Best parameters from a tune result; falls back to BT 0.5, RT 0 when the file is absent.
inline PostprocessParams load_params(const fs::path& path, int connectivity, const Log& log) {
  if (!fs::exists(path)) {
    log.warn("no tuned parameters at " + path.string() + "; using binarization 0.5, removal 0");
    return PostprocessParams{0.5, 0, connectivity};
  }
  const auto j = read_json(path);
  try {
    return j.contains("best") ? j.at("best").get<PostprocessParams>() : j.get<PostprocessParams>();
  } catch (const nlohmann::json::exception& e) {
    throw UserError("bad postprocess parameters in " + path.string() + ": " + e.what());
  }
}

// ---- tune -------------------------------------------------------------------------------

struct TuneOptions {
  std::optional<fs::path> checkpoint;
  /// Replaces the checkpoint-backed predictor (used by tests).
  Predictor predictor;
};

/// Predicts the validation split once and sweeps the (BT, RT) grid on pooled IoU.
inline GridSearchResult cmd_tune(const RunConfig& cfg, const TuneOptions& opts = {}, const Log& log = {}) {
  validate(cfg);
  const auto lay = layout(cfg);
  const Manifest m = load_prepared_manifest(cfg);
  const auto val = select(m, Split::val);
  if (val.empty()) throw UserError("validation split is empty");
  const Predictor predictor =
      opts.predictor ? opts.predictor : checkpoint_predictor(opts.checkpoint.value_or(lay.best_checkpoint()));
  GridSearchAccumulator acc(cfg.tune.bt_grid, cfg.tune.rt_grid, cfg.tune.connectivity);
  for (const auto& s : val) {
    const auto pair = load_sample(s);
    acc.add(predictor(s, pair.image), pair.mask);
  }
  const auto result = acc.result();
  nlohmann::json j = result;
  j["aggregation"] = "pooled";
  j["n_images"] = val.size();
  write_json(lay.tune_result(), j);
  write_run_record(cfg, "tune", {{"checkpoint", opts.predictor ? nlohmann::json("<custom predictor>")
                                                               : nlohmann::json(opts.checkpoint.value_or(
                                                                     lay.best_checkpoint()).string())}});
  char buf[160];
  std::snprintf(buf, sizeof buf, "best binarization %.2f, removal %llu px: pooled IoU %.4f over %zu images",
                result.best.binarization_threshold, static_cast<unsigned long long>(result.best.removal_threshold),
                result.best_score, val.size());
  log.info(buf);
  return result;
}

// ---- evaluate ---------------------------------------------------------------------------

struct EvaluateOptions {
  /// Held-out dataset root (`images/`, `masks/`); every sample is evaluated. Unset: use a manifest split.
  std::optional<fs::path> data;
  /// Manifest split when `data` is unset: "train", "val" or "all".
  std::string split = "val";
  std::optional<fs::path> params;
  std::optional<fs::path> checkpoint;
  /// Output directory for metrics and figures; defaults to `<out>/eval`.
  std::optional<fs::path> out;
  Predictor predictor;
};

struct EvaluateResult {
  MetricsReport report;
  PostprocessParams params;
  fs::path dir;
  std::vector<fs::path> overlays;
};

inline std::optional<Split> parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "all") return std::nullopt;
  throw UserError("unknown split '" + s + "' (expected train, val or all)");
}

inline EvaluateResult cmd_evaluate(const RunConfig& cfg, const EvaluateOptions& opts = {}, const Log& log = {}) {
  validate(cfg);
  const auto lay = layout(cfg);
  std::vector<Sample> samples;
  if (opts.data) {
    ManifestOptions mo;
    mo.compute_counts = false;
    samples = load_dataset(*opts.data, cfg.split.seed, mo).samples;
  } else {
    samples = select(load_prepared_manifest(cfg), parse_split(opts.split));
  }
  if (samples.empty()) throw UserError("no samples to evaluate");
  EvaluateResult r;
  r.params = load_params(opts.params.value_or(lay.tune_result()), cfg.tune.connectivity, log);
  r.dir = opts.out.value_or(lay.eval_dir());
  fs::create_directories(r.dir / "overlays");
  const Predictor predictor =
      opts.predictor ? opts.predictor : checkpoint_predictor(opts.checkpoint.value_or(lay.best_checkpoint()));

  // K distinct samples chosen with the split seed for the comparison figures.
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng pick(mix_seed(cfg.split.seed ^ 0x0e7a1ULL));
  pick.shuffle(order.begin(), order.end());
  const auto k = std::min<std::size_t>(static_cast<std::size_t>(cfg.eval.overlays), samples.size());
  std::vector<char> overlay(samples.size(), 0);
  for (std::size_t i = 0; i < k; ++i) overlay[order[i]] = 1;

  MetricsAccumulator acc;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto pair = load_sample(samples[i]);
    const Mask pred = postprocess(predictor(samples[i], pair.image), r.params, pair.mask.height, pair.mask.width);
    const auto c = confusion(pred, pair.mask);
    acc.add(c);
    if (overlay[i]) {
      const auto path = r.dir / "overlays" / (samples[i].stem + ".png");
      const auto m = metrics_from_counts(c);
      char title[200];
      std::snprintf(title, sizeof title, "%s  IoU %.3f  F1 %.3f", samples[i].stem.c_str(), m.iou, m.f1);
      figures::plot_comparison(pair.image, pair.mask, pred, title, path);
      r.overlays.push_back(path);
    }
  }
  r.report = acc.report(cfg.eval.aggregation);
  nlohmann::json j = r.report;
  j["postprocess"] = r.params;
  j["source"] = opts.data ? opts.data->string() : ("manifest split " + opts.split);
  if (cfg.eval.aggregation != Aggregation::pooled) j["pooled"] = acc.report(Aggregation::pooled);
  write_json(r.dir / "metrics.json", j);
  figures::plot_confusion_matrix(r.report.counts, r.dir / "confusion.png");
  write_run_record(cfg, "evaluate", {{"source", j["source"]}});
  char buf[200];
  std::snprintf(buf, sizeof buf, "%zu images: IoU %.4f  F1 %.4f  accuracy %.4f  precision %.4f  recall %.4f (%s)",
                r.report.n_images, r.report.iou, r.report.f1, r.report.accuracy, r.report.precision,
                r.report.recall, to_string(r.report.aggregation));
  log.info(buf);
  return r;
}

// ---- predict ----------------------------------------------------------------------------

struct PredictOptions {
  /// Image files and/or directories of images.
  std::vector<fs::path> inputs;
  /// Mask output directory; defaults to `<out>/predictions`.
  std::optional<fs::path> out;
  bool rle = false;
  std::optional<fs::path> params;
  std::optional<fs::path> checkpoint;
  Predictor predictor;
};

struct PredictResult {
  std::vector<fs::path> masks;
  std::optional<fs::path> rle_file;
  std::vector<std::string> failures;
};

inline bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".tif" || ext == ".tiff";
}

/// Writes one 0/255 mask per input at the input's resolution (and optionally an RLE table).
/// Unreadable inputs are reported and skipped; the command fails at the end if any occurred.
inline PredictResult cmd_predict(const RunConfig& cfg, const PredictOptions& opts, const Log& log = {}) {
  validate(cfg);
  const auto lay = layout(cfg);
  if (opts.inputs.empty()) throw UserError("predict needs at least one input image or directory");
  std::vector<fs::path> files;
  for (const auto& in : opts.inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(in)) {
        if (e.is_regular_file() && is_image_file(e.path())) found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.push_back(in);
    }
  }
  if (files.empty()) throw UserError("no input images found");
  const auto params = load_params(opts.params.value_or(lay.tune_result()), cfg.tune.connectivity, log);
  const Predictor predictor =
      opts.predictor ? opts.predictor : checkpoint_predictor(opts.checkpoint.value_or(lay.best_checkpoint()));
  const fs::path dir = opts.out.value_or(lay.predictions());
  fs::create_directories(dir);

  PredictResult r;
  std::ofstream rle;
  if (opts.rle) {
    r.rle_file = dir / "masks_rle.csv";
    rle.open(*r.rle_file);
    if (!rle) throw RuntimeFailure("cannot write " + r.rle_file->string());
    rle << "stem,width,height,rle\n";
  }
  for (const auto& f : files) {
    const std::string stem = f.stem().string();
    try {
      const Image image = io::read_image(f);
      const Sample sample{stem, f, {}, std::nullopt};
      const Mask mask = postprocess(predictor(sample, image), params, image.height, image.width);
      const auto path = dir / (stem + ".png");
      io::write_mask(path, mask);
      r.masks.push_back(path);
      if (rle.is_open()) rle << stem << ',' << mask.width << ',' << mask.height << ',' << rle_to_string(rle_encode(mask)) << '\n';
    } catch (const std::exception& e) {
      r.failures.push_back(f.string() + ": " + e.what());
      log.warn("cannot predict " + f.string() + ": " + e.what());
    }
  }
  write_run_record(cfg, "predict", {{"inputs", files.size()}, {"output", dir.string()}});
  log.info("wrote " + std::to_string(r.masks.size()) + " masks to " + dir.string());
  if (!r.failures.empty()) {
    throw UserError(std::to_string(r.failures.size()) + " of " + std::to_string(files.size()) +
                    " inputs could not be processed (first: " + r.failures.front() + ")");
  }
  return r;
}

}  // namespace ptxseg::app
