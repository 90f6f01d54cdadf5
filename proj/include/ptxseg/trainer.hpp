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

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ptxseg/augment.hpp"
#include "ptxseg/checkpoint.hpp"
#include "ptxseg/dataset.hpp"
#include "ptxseg/errors.hpp"
#include "ptxseg/metrics.hpp"
#include "ptxseg/model.hpp"
#include "ptxseg/objective.hpp"
#include "ptxseg/optim.hpp"
#include "ptxseg/postprocess.hpp"

namespace ptxseg {

/// Dynamic loss scaling for emulated reduced precision.
struct LossScaleConfig {
  double initial = 65536.0;
  double backoff = 0.5;
  double growth = 2.0;
  /// Consecutive finite steps before the scale grows.
  int growth_interval = 2000;
  double min_scale = 1.0;
};

struct TrainConfig {
  int batch_size = 32;
  int max_epochs = 300;
  int early_stop_patience = 20;
  AdamConfig adam;
  /// total_steps is derived by fit() as max_epochs x steps_per_epoch.
  ScheduleConfig schedule;
  LossOptions loss;
  bool mixed_precision = false;
  LossScaleConfig loss_scale;
  std::uint64_t seed = 0;
  std::filesystem::path checkpoint_dir = "checkpoints";
  /// Threshold used for per-epoch validation (before any tuning).
  double validation_threshold = 0.5;
  /// Validation IoU must exceed the best by at least this much to count as an improvement.
  double min_improvement = 1e-5;
  /// Keep decoded training pairs in memory instead of re-reading them every epoch.
  bool cache_decoded = false;
  /// Prepare the next batch on a helper thread while the current one trains.
  bool prefetch = true;
};

inline void validate(const TrainConfig& c) {
  if (c.batch_size < 1) throw UserError("batch_size must be >= 1");
  if (c.max_epochs < 1) throw UserError("max_epochs must be >= 1");
  if (c.early_stop_patience < 1) throw UserError("early_stop_patience must be >= 1");
  if (!(c.schedule.lr_min > 0.0) || !(c.schedule.lr_max > c.schedule.lr_min)) {
    throw UserError("schedule requires 0 < lr_min < lr_max");
  }
  if (!(c.validation_threshold >= 0.0 && c.validation_threshold <= 1.0)) {
    throw UserError("validation_threshold must be in [0, 1]");
  }
  if (!(c.loss_scale.initial >= 1.0)) throw UserError("loss_scale.initial must be >= 1");
}

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double val_iou = 0;
  double val_f1 = 0;
  /// Learning rate of the epoch's first optimizer step.
  double lr = 0;
  double wall_time = 0;
  /// Best validation IoU so far, including this epoch.
  double best_val_iou = 0;
  bool improved = false;
  std::int64_t global_step = 0;
  /// Steps skipped by dynamic loss scaling (reduced precision only).
  int skipped_steps = 0;
  double loss_scale = 1.0;
};

inline void to_json(nlohmann::json& j, const EpochRecord& r) {
  j = {{"epoch", r.epoch},       {"train_loss", r.train_loss},   {"val_iou", r.val_iou},
       {"val_f1", r.val_f1},     {"lr", r.lr},                   {"wall_time", r.wall_time},
       {"best_val_iou", r.best_val_iou}, {"improved", r.improved}, {"global_step", r.global_step},
       {"skipped_steps", r.skipped_steps}, {"loss_scale", r.loss_scale}};
}

inline void from_json(const nlohmann::json& j, EpochRecord& r) {
  r.epoch = j.at("epoch").get<int>();
  r.train_loss = j.at("train_loss").get<double>();
  r.val_iou = j.at("val_iou").get<double>();
  r.val_f1 = j.at("val_f1").get<double>();
  r.lr = j.at("lr").get<double>();
  r.wall_time = j.value("wall_time", 0.0);
  r.best_val_iou = j.value("best_val_iou", r.val_iou);
  r.improved = j.value("improved", false);
  r.global_step = j.value("global_step", std::int64_t{0});
  r.skipped_steps = j.value("skipped_steps", 0);
  r.loss_scale = j.value("loss_scale", 1.0);
}

/// Reads a JSON-lines epoch log.
inline std::vector<EpochRecord> read_epoch_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot read epoch log: " + path.string());
  std::vector<EpochRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(nlohmann::json::parse(line).get<EpochRecord>());
  }
  return out;
}

struct ValidationScore {
  double iou = 0;
  double f1 = 0;
};

/// Decodes samples and caches them if requested; applies a pipeline with per-sample seeds.
class SampleLoader {
 public:
  SampleLoader(std::vector<Sample> samples, bool cache) : samples_(std::move(samples)), cache_(cache) {
    if (cache_) decoded_.resize(samples_.size());
  }

  std::size_t size() const { return samples_.size(); }
  const Sample& sample(std::size_t i) const { return samples_.at(i); }

  LoadedSample load(std::size_t i) {
    if (!cache_) return load_sample(samples_.at(i));
    if (!decoded_[i]) decoded_[i] = load_sample(samples_.at(i));
    return *decoded_[i];
  }

 private:
  std::vector<Sample> samples_;
  bool cache_;
  std::vector<std::optional<LoadedSample>> decoded_;
};

/// Network input and target for a batch.
struct Batch {
  Tensor<float> images;
  Tensor<float> masks;
};

inline Batch make_batch(SampleLoader& loader, const std::vector<std::size_t>& indices, const AugmentPipeline& pipeline,
                        std::uint64_t seed, std::uint64_t epoch) {
  std::vector<AugmentedPair> pairs;
  pairs.reserve(indices.size());
  for (std::size_t i : indices) {
    const auto raw = loader.load(i);
    pairs.push_back(apply_paired(pipeline, raw.image, raw.mask, sample_seed(seed, epoch, i)));
  }
  std::vector<const Image*> imgs;
  std::vector<const Mask*> masks;
  for (const auto& p : pairs) {
    imgs.push_back(&p.image);
    masks.push_back(&p.mask);
  }
  return {to_batch<float>(imgs), to_batch<float>(masks)};
}

/// Maps a batch to (N, 1, H, W) probabilities.
using BatchPredictor = std::function<Tensor<float>(const Batch&)>;

/// Pooled IoU/F1 of the binarized predictions against the pipeline-transformed masks.
inline ValidationScore validate(const BatchPredictor& predictor, SampleLoader& loader, const AugmentPipeline& pipeline,
                                double threshold = 0.5, int batch_size = 8) {
  if (loader.size() == 0) throw UserError("validation split is empty");
  std::vector<Mask> preds;
  std::vector<Mask> truths;
  const auto step = static_cast<std::size_t>(std::max(1, batch_size));
  for (std::size_t start = 0; start < loader.size(); start += step) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(loader.size(), start + step); ++i) idx.push_back(i);
    const auto batch = make_batch(loader, idx, pipeline, 0, 0);
    const auto probs = predictor(batch);
    require_same_shape(probs, batch.masks, "validate");
    for (int n = 0; n < probs.n(); ++n) {
      preds.push_back(binarize(to_prob_map(probs, n), threshold));
      Mask t(batch.masks.h(), batch.masks.w());
      const float* src = batch.masks.sample(n);
      for (std::size_t p = 0; p < t.data.size(); ++p) t.data[p] = src[p] > 0.5f ? 1 : 0;
      truths.push_back(std::move(t));
    }
  }
  const auto report = evaluate_set(preds, truths, Aggregation::pooled);
  return {report.iou, report.f1};
}

inline ValidationScore validate(Model& model, SampleLoader& loader, const AugmentPipeline& pipeline,
                                double threshold = 0.5, int batch_size = 8, bool half = false) {
  return validate([&](const Batch& b) { return model.forward(b.images, nn::Context{false, half}); }, loader, pipeline,
                  threshold, batch_size);
}

/// Optional state for continuing an interrupted run.
struct ResumeState {
  TrainingProgress progress;
  Adam<float> optimizer;
};

struct FitOptions {
  /// Epoch log, appended one JSON line per epoch as soon as the epoch ends.
  std::optional<std::filesystem::path> epoch_log;
  /// Replaces the built-in validation pass (used by tests and stub runs).
  std::function<ValidationScore(Model&, int epoch)> validator;
  /// Called after every epoch; return false to stop.
  std::function<bool(const EpochRecord&)> on_epoch;
  std::optional<ResumeState> resume;
  /// Copy the best checkpoint's weights back into the model when fit returns.
  bool restore_best = true;
  nlohmann::json checkpoint_extra = nlohmann::json::object();
};

struct FitResult {
  std::vector<EpochRecord> records;
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
  double best_val_iou = -1;
  int best_epoch = 0;
  bool early_stopped = false;
  std::int64_t global_step = 0;
  std::int64_t total_steps = 0;
};

inline std::int64_t steps_per_epoch(std::size_t n_train, int batch_size) {
  return static_cast<std::int64_t>(n_train / static_cast<std::size_t>(batch_size));
}

namespace detail {

inline bool gradients_finite(nn::ParamList<float>& params) {
  for (auto& p : params) {
    if (!p.grad) continue;
    for (float g : p.grad->storage()) {
      if (!std::isfinite(g)) return false;
    }
  }
  return true;
}

inline void scale_gradients(nn::ParamList<float>& params, double factor) {
  for (auto& p : params) {
    if (!p.grad) continue;
    for (float& g : p.grad->storage()) g = static_cast<float>(g * factor);
  }
}

inline void copy_weights(Model& dst, Model& src) {
  auto d = dst.parameters();
  auto s = src.parameters();
  for (std::size_t i = 0; i < d.size(); ++i) d[i].value->storage() = s[i].value->storage();
}

}  // namespace detail

/// Optimizes `model` on the training samples; validates after every epoch, keeps the best
/// checkpoint by validation IoU and stops early after `early_stop_patience` epochs without improvement.
inline FitResult fit(Model& model, const std::vector<Sample>& train, const std::vector<Sample>& val,
                     const AugmentPipeline& train_pipeline, const AugmentPipeline& val_pipeline,
                     const TrainConfig& config, FitOptions options = {}) {
  validate(config);
  if (train.empty()) throw UserError("training split is empty");
  if (val.empty() && !options.validator) throw UserError("validation split is empty");
  const std::int64_t spe = steps_per_epoch(train.size(), config.batch_size);
  if (spe < 1) {
    throw UserError("batch_size " + std::to_string(config.batch_size) + " exceeds the " +
                    std::to_string(train.size()) + " training samples (batches drop the remainder)");
  }
  const int res = model.config().input_resolution;
  if (train_pipeline.target_resolution() != res || val_pipeline.target_resolution() != res) {
    throw UserError("augmentation pipelines must resize to the model input resolution " + std::to_string(res));
  }

  ScheduleConfig schedule = config.schedule;
  schedule.total_steps = static_cast<std::int64_t>(config.max_epochs) * spe;

  FitResult result;
  result.total_steps = schedule.total_steps;
  Adam<float> adam(config.adam);
  int first_epoch = 1;
  if (options.resume) {
    const auto& pr = options.resume->progress;
    if (pr.total_steps != 0 && pr.total_steps != schedule.total_steps) {
      throw UserError("cannot resume: checkpoint schedule has " + std::to_string(pr.total_steps) +
                      " steps but this configuration implies " + std::to_string(schedule.total_steps) +
                      " (keep max_epochs, batch_size and the training split unchanged)");
    }
    adam = std::move(options.resume->optimizer);
    first_epoch = pr.epoch + 1;
    result.global_step = pr.global_step;
    result.best_val_iou = pr.best_val_iou;
    result.best_epoch = pr.best_epoch;
  }

  std::error_code ec;
  std::filesystem::create_directories(config.checkpoint_dir, ec);
  if (!std::filesystem::is_directory(config.checkpoint_dir)) {
    throw UserError("cannot create checkpoint directory " + config.checkpoint_dir.string());
  }
  result.best_checkpoint = config.checkpoint_dir / "best.ckpt";
  result.last_checkpoint = config.checkpoint_dir / "last.ckpt";
  if (!options.resume) std::filesystem::remove(result.best_checkpoint, ec);

  std::ofstream log;
  if (options.epoch_log) {
    if (options.epoch_log->has_parent_path()) std::filesystem::create_directories(options.epoch_log->parent_path(), ec);
    log.open(*options.epoch_log, options.resume ? std::ios::app : std::ios::trunc);
    if (!log) throw UserError("cannot write epoch log " + options.epoch_log->string());
  }

  SampleLoader train_loader(train, config.cache_decoded);
  SampleLoader val_loader(val, config.cache_decoded);
  auto params = model.parameters();
  double loss_scale = config.mixed_precision ? config.loss_scale.initial : 1.0;
  int good_steps = 0;
  int stale_epochs = options.resume && result.best_epoch > 0 ? first_epoch - 1 - result.best_epoch : 0;
  const nn::Context train_ctx{true, config.mixed_precision};

  for (int epoch = first_epoch; epoch <= config.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffler(sample_seed(config.seed, static_cast<std::uint64_t>(epoch), ~std::uint64_t{0}));
    shuffler.shuffle(order.begin(), order.end());
    auto batch_indices = [&](std::int64_t b) {
      return std::vector<std::size_t>(order.begin() + b * config.batch_size,
                                      order.begin() + (b + 1) * config.batch_size);
    };
    auto prepare = [&](std::int64_t b) {
      return make_batch(train_loader, batch_indices(b), train_pipeline, config.seed, static_cast<std::uint64_t>(epoch));
    };

    EpochRecord rec;
    rec.epoch = epoch;
    double loss_sum = 0;
    std::future<Batch> pending;
    if (config.prefetch) pending = std::async(std::launch::async, prepare, std::int64_t{0});
    for (std::int64_t b = 0; b < spe; ++b) {
      Batch batch = config.prefetch ? pending.get() : prepare(b);
      if (config.prefetch && b + 1 < spe) pending = std::async(std::launch::async, prepare, b + 1);

      const double lr = cosine_lr(result.global_step, schedule);
      if (b == 0) rec.lr = lr;
      model.zero_grad();
      const auto probs = model.forward(batch.images, train_ctx);
      Tensor<float> grad(probs.n(), probs.c(), probs.h(), probs.w());
      const auto terms = combined_loss(probs, batch.masks, config.loss, &grad);
      const double loss = terms.combined;
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "non-finite training loss at epoch " << epoch << ", batch " << b << " (lr " << lr << ", step "
            << result.global_step << ")";
        throw RuntimeFailure(msg.str());
      }
      loss_sum += loss;
      if (loss_scale != 1.0) {
        for (float& g : grad.storage()) g = static_cast<float>(g * loss_scale);
      }
      model.backward(grad);
      bool apply = true;
      if (config.mixed_precision) {
        if (!detail::gradients_finite(params)) {
          apply = false;
          ++rec.skipped_steps;
          loss_scale = std::max(config.loss_scale.min_scale, loss_scale * config.loss_scale.backoff);
          good_steps = 0;
        } else {
          detail::scale_gradients(params, 1.0 / loss_scale);
          if (++good_steps >= config.loss_scale.growth_interval) {
            loss_scale *= config.loss_scale.growth;
            good_steps = 0;
          }
        }
      }
      if (apply) adam.step(params, lr);
      ++result.global_step;
    }

    rec.train_loss = loss_sum / static_cast<double>(spe);
    rec.loss_scale = loss_scale;
    rec.global_step = result.global_step;
    const ValidationScore score =
        options.validator ? options.validator(model, epoch)
                          : validate(model, val_loader, val_pipeline, config.validation_threshold,
                                     config.batch_size, config.mixed_precision);
    rec.val_iou = score.iou;
    rec.val_f1 = score.f1;
    rec.improved = result.best_val_iou < 0 || score.iou >= result.best_val_iou + config.min_improvement;
    if (rec.improved) {
      result.best_val_iou = score.iou;
      result.best_epoch = epoch;
      stale_epochs = 0;
    } else {
      ++stale_epochs;
    }
    rec.best_val_iou = result.best_val_iou;
    rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const TrainingProgress progress{epoch, result.global_step, result.best_val_iou, schedule.total_steps,
                                    result.best_epoch};
    if (rec.improved) save_checkpoint(result.best_checkpoint, model, &adam, progress, options.checkpoint_extra);
    save_checkpoint(result.last_checkpoint, model, &adam, progress, options.checkpoint_extra);
    result.records.push_back(rec);
    if (log.is_open()) {
      log << nlohmann::json(rec).dump() << '\n';
      log.flush();
    }
    if (options.on_epoch && !options.on_epoch(rec)) break;
    if (stale_epochs >= config.early_stop_patience) {
      result.early_stopped = true;
      break;
    }
  }

  if (options.restore_best && std::filesystem::exists(result.best_checkpoint)) {
    auto best = load_checkpoint(result.best_checkpoint);
    detail::copy_weights(model, best.model);
  }
  return result;
}

/// Loads `last.ckpt` (or any checkpoint) as resume state plus model.
inline std::pair<Model, ResumeState> resume_from(const std::filesystem::path& checkpoint) {
  auto ck = load_checkpoint(checkpoint);
  return {std::move(ck.model), ResumeState{ck.progress, std::move(ck.optimizer)}};
}

}  // namespace ptxseg
