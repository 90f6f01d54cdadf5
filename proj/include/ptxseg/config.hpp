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

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ptxseg/augment.hpp"
#include "ptxseg/errors.hpp"
#include "ptxseg/metrics.hpp"
#include "ptxseg/model.hpp"
#include "ptxseg/postprocess.hpp"
#include "ptxseg/trainer.hpp"

namespace ptxseg {

/// Environment variable that relocates relative output directories.
inline constexpr const char* kOutputRootEnv = "PTXSEG_OUTPUT_ROOT";

struct DataConfig {
  /// Dataset root holding `images/` and `masks/`. Unset: taken from the prepared dataset record.
  std::optional<std::string> root;
  /// Manifest CSV. Unset: `<output_dir>/manifest.csv`.
  std::optional<std::string> manifest;
};

struct SplitConfig {
  double train_fraction = 0.85;
  std::uint64_t seed = 0;
  bool stratify = false;
};

struct SyntheticConfig {
  std::size_t count = 16;
  int resolution = 128;
  double negative_fraction = 0.25;
};

struct AugmentConfig {
  /// Train-time steps after the resize (kind, probability, parameters).
  std::vector<TransformSpec> train;
  /// When set, replaces the probability of every train step.
  std::optional<double> probability;
};

struct TuneConfig {
  std::vector<double> bt_grid = default_bt_grid();
  std::vector<std::uint64_t> rt_grid = default_rt_grid();
  int connectivity = 8;
};

struct EvalConfig {
  Aggregation aggregation = Aggregation::pooled;
  int overlays = 4;
};

/// Everything a command needs. Precedence: preset defaults < config file < command-line flags.
struct RunConfig {
  DataConfig data;
  SplitConfig split;
  SyntheticConfig synthetic;
  AugmentConfig augment;
  ModelConfig model;
  TrainConfig train;
  TuneConfig tune;
  EvalConfig eval;
  std::string output_dir = "runs/default";

  /// Desk-scale preset: tiny encoder at 128 px, short schedule; trains on synthetic data on a CPU.
  static RunConfig desk() {
    RunConfig c;
    c.model = ModelConfig::tiny(128);
    c.train.batch_size = 4;
    c.train.max_epochs = 60;
    c.train.early_stop_patience = 20;
    c.train.schedule.lr_max = 1e-3;
    c.train.schedule.lr_min = 1e-5;
    c.train.cache_decoded = true;
    c.augment.train = default_train_steps();
    return c;
  }

  /// Full-scale preset: EfficientNet-B4 U-Net at 512 px with the published hyperparameters.
  static RunConfig paper() {
    RunConfig c;
    c.model = ModelConfig{};
    c.train = TrainConfig{};
    c.augment.train = default_train_steps();
    return c;
  }

  static std::vector<TransformSpec> default_train_steps() {
    auto p = build_pipeline(AugmentMode::train, 512);
    std::vector<TransformSpec> steps(p.transforms.begin() + 1, p.transforms.end());
    return steps;
  }
};

inline RunConfig preset(const std::string& name) {
  if (name == "desk") return RunConfig::desk();
  if (name == "paper") return RunConfig::paper();
  throw UserError("unknown preset '" + name + "' (expected desk or paper)");
}

// ---- JSON --------------------------------------------------------------------------------

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size},
       {"max_epochs", c.max_epochs},
       {"early_stop_patience", c.early_stop_patience},
       {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
       {"schedule", {{"lr_max", c.schedule.lr_max}, {"lr_min", c.schedule.lr_min}}},
       {"loss", {{"eps", c.loss.eps}, {"smooth", c.loss.smooth}}},
       {"mixed_precision", c.mixed_precision},
       {"loss_scale",
        {{"initial", c.loss_scale.initial},
         {"backoff", c.loss_scale.backoff},
         {"growth", c.loss_scale.growth},
         {"growth_interval", c.loss_scale.growth_interval},
         {"min_scale", c.loss_scale.min_scale}}},
       {"seed", c.seed},
       {"validation_threshold", c.validation_threshold},
       {"min_improvement", c.min_improvement},
       {"cache_decoded", c.cache_decoded},
       {"prefetch", c.prefetch}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.batch_size = j.at("batch_size").get<int>();
  c.max_epochs = j.at("max_epochs").get<int>();
  c.early_stop_patience = j.at("early_stop_patience").get<int>();
  const auto& a = j.at("adam");
  c.adam = {a.at("beta1").get<double>(), a.at("beta2").get<double>(), a.at("eps").get<double>()};
  c.schedule.lr_max = j.at("schedule").at("lr_max").get<double>();
  c.schedule.lr_min = j.at("schedule").at("lr_min").get<double>();
  c.loss.eps = j.at("loss").at("eps").get<double>();
  c.loss.smooth = j.at("loss").at("smooth").get<double>();
  c.mixed_precision = j.at("mixed_precision").get<bool>();
  const auto& s = j.at("loss_scale");
  c.loss_scale = {s.at("initial").get<double>(), s.at("backoff").get<double>(), s.at("growth").get<double>(),
                  s.at("growth_interval").get<int>(), s.at("min_scale").get<double>()};
  c.seed = j.at("seed").get<std::uint64_t>();
  c.validation_threshold = j.at("validation_threshold").get<double>();
  c.min_improvement = j.at("min_improvement").get<double>();
  c.cache_decoded = j.at("cache_decoded").get<bool>();
  c.prefetch = j.at("prefetch").get<bool>();
}

namespace detail {

template <typename T>
nlohmann::json optional_json(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

template <typename T>
std::optional<T> json_optional(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"data", {{"root", detail::optional_json(c.data.root)}, {"manifest", detail::optional_json(c.data.manifest)}}},
       {"split",
        {{"train_fraction", c.split.train_fraction}, {"seed", c.split.seed}, {"stratify", c.split.stratify}}},
       {"synthetic",
        {{"count", c.synthetic.count},
         {"resolution", c.synthetic.resolution},
         {"negative_fraction", c.synthetic.negative_fraction}}},
       {"augment", {{"train", c.augment.train}, {"probability", detail::optional_json(c.augment.probability)}}},
       {"model", c.model},
       {"train", c.train},
       {"tune", {{"bt_grid", c.tune.bt_grid}, {"rt_grid", c.tune.rt_grid}, {"connectivity", c.tune.connectivity}}},
       {"evaluate", {{"aggregation", to_string(c.eval.aggregation)}, {"overlays", c.eval.overlays}}},
       {"output_dir", c.output_dir}};
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  const auto& d = j.at("data");
  c.data.root = detail::json_optional<std::string>(d, "root");
  c.data.manifest = detail::json_optional<std::string>(d, "manifest");
  const auto& s = j.at("split");
  c.split = {s.at("train_fraction").get<double>(), s.at("seed").get<std::uint64_t>(), s.at("stratify").get<bool>()};
  const auto& y = j.at("synthetic");
  c.synthetic = {y.at("count").get<std::size_t>(), y.at("resolution").get<int>(),
                 y.at("negative_fraction").get<double>()};
  c.augment.train = j.at("augment").at("train").get<std::vector<TransformSpec>>();
  c.augment.probability = detail::json_optional<double>(j.at("augment"), "probability");
  c.model = j.at("model").get<ModelConfig>();
  c.train = j.at("train").get<TrainConfig>();
  const auto& t = j.at("tune");
  c.tune = {t.at("bt_grid").get<std::vector<double>>(), t.at("rt_grid").get<std::vector<std::uint64_t>>(),
            t.at("connectivity").get<int>()};
  c.eval.aggregation = aggregation_from_string(j.at("evaluate").at("aggregation").get<std::string>());
  c.eval.overlays = j.at("evaluate").at("overlays").get<int>();
  c.output_dir = j.at("output_dir").get<std::string>();
}

/// Semantic checks shared by every command.
inline void validate(const RunConfig& c) {
  if (!(c.split.train_fraction > 0.0 && c.split.train_fraction < 1.0)) {
    throw UserError("split.train_fraction must be in (0, 1)");
  }
  if (c.synthetic.count < 1) throw UserError("synthetic.count must be >= 1");
  if (c.synthetic.resolution < 32) throw UserError("synthetic.resolution must be >= 32");
  if (c.augment.probability && !(*c.augment.probability >= 0.0 && *c.augment.probability <= 1.0)) {
    throw UserError("augment.probability must be in [0, 1]");
  }
  for (const auto& t : c.augment.train) validate(t);
  if (c.model.input_resolution < 32 || c.model.input_resolution % 32 != 0) {
    throw UserError("model.input_resolution must be a positive multiple of 32");
  }
  validate(c.train);
  if (c.tune.bt_grid.empty() || c.tune.rt_grid.empty()) throw UserError("tune grids must be non-empty");
  for (double bt : c.tune.bt_grid) validate(PostprocessParams{bt, 0, c.tune.connectivity});
  if (c.eval.overlays < 0) throw UserError("evaluate.overlays must be >= 0");
  if (c.output_dir.empty()) throw UserError("output_dir must not be empty");
}

namespace detail {

/// Rejects keys in `patch` that the resolved configuration does not have.
inline void check_known_keys(const nlohmann::json& base, const nlohmann::json& patch, const std::string& where) {
  if (!patch.is_object()) throw UserError("config " + (where.empty() ? "document" : where) + " must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!base.contains(key)) throw UserError("unknown config key '" + path + "'");
    if (base.at(key).is_object() && value.is_object()) check_known_keys(base.at(key), value, path);
  }
}

/// Objects merge key by key; arrays, scalars and null replace the base value.
inline void merge_into(nlohmann::json& base, const nlohmann::json& patch) {
  for (const auto& [key, value] : patch.items()) {
    if (base.contains(key) && base.at(key).is_object() && value.is_object()) {
      merge_into(base[key], value);
    } else {
      base[key] = value;
    }
  }
}

}  // namespace detail

/// Overlays a JSON document (any subset of the resolved layout) onto `base`.
inline RunConfig apply_config_json(const RunConfig& base, const nlohmann::json& patch) {
  nlohmann::json resolved = base;
  detail::check_known_keys(resolved, patch, "");
  detail::merge_into(resolved, patch);
  try {
    return resolved.get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw UserError(std::string("invalid config value: ") + e.what());
  }
}

inline RunConfig load_config_file(const RunConfig& base, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot read config file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::exception& e) {
    throw UserError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return apply_config_json(base, j);
}

/// Final output directory: relative paths are placed under $PTXSEG_OUTPUT_ROOT when it is set.
inline std::filesystem::path output_directory(const RunConfig& c) {
  std::filesystem::path out = c.output_dir;
  if (out.is_relative()) {
    if (const char* root = std::getenv(kOutputRootEnv); root && *root) out = std::filesystem::path(root) / out;
  }
  return out;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp);
    if (!out) throw RuntimeFailure("cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw RuntimeFailure("failed writing " + path.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw RuntimeFailure("cannot finalize " + path.string() + ": " + ec.message());
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw UserError(path.string() + " is not valid JSON: " + e.what());
  }
}

}  // namespace ptxseg
