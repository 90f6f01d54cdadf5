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

// Command-line front end: prepare, synth, train, tune, evaluate, predict.
// Exit codes: 0 success, 1 usage/configuration/input error, 2 runtime failure.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ptxseg/config.hpp"
#include "ptxseg/errors.hpp"
#include "ptxseg/pipeline.hpp"

namespace {

using namespace ptxseg;

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* what) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::istringstream is(item);
    T v{};
    if (!(is >> v) || !is.eof()) throw UserError(std::string("bad value '") + item + "' in " + what);
    out.push_back(v);
  }
  if (out.empty()) throw UserError(std::string(what) + " must list at least one value");
  return out;
}

/// Options shared by every subcommand; applied on top of preset and config file.
struct Common {
  std::string preset = "desk";
  std::string config;
  std::string out;
  std::string data;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App* app) {
    app->add_option("--preset", preset, "Defaults to start from: desk (tiny model) or paper (EfficientNet-B4)")
        ->check(CLI::IsMember({"desk", "paper"}));
    app->add_option("-c,--config", config, "JSON run configuration (any subset of run.json's \"config\")");
    app->add_option("-o,--out", out, "Output directory (relative paths go under $PTXSEG_OUTPUT_ROOT if set)");
    app->add_option("--data", data, "Dataset root containing images/ and masks/");
    app->add_option("--seed", seed, "Split, shuffling and augmentation seed");
  }

  RunConfig resolve() const {
    RunConfig cfg = ptxseg::preset(preset);
    if (!config.empty()) cfg = load_config_file(cfg, config);
    if (!out.empty()) cfg.output_dir = out;
    if (!data.empty()) cfg.data.root = data;
    if (seed) {
      cfg.split.seed = *seed;
      cfg.train.seed = *seed;
    }
    return cfg;
  }
};

int run(int argc, char** argv) {
  CLI::App app{"ptxseg: pneumothorax segmentation with an EfficientNet U-Net"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "ptxseg 1.0.0");
  const app::Log log;

  // prepare
  Common prep_common;
  std::optional<std::size_t> synthetic;
  std::optional<int> synth_res;
  std::optional<double> train_fraction, neg_fraction;
  bool stratify = false;
  auto* prep = app.add_subcommand("prepare", "List the dataset, split it and write the manifest");
  prep_common.attach(prep);
  prep->add_option("--synthetic", synthetic, "Generate N synthetic pairs first (under --data or <out>/data)");
  prep->add_option("--resolution", synth_res, "Synthetic image side length");
  prep->add_option("--negative-fraction", neg_fraction, "Share of synthetic samples with empty masks");
  prep->add_option("--train-fraction", train_fraction, "Share of samples assigned to training");
  prep->add_flag("--stratify", stratify, "Split positives and negatives separately");

  // synth
  std::size_t synth_n = 0;
  std::string synth_dir;
  int synth_side = 128;
  std::uint64_t synth_seed = 0;
  double synth_neg = 0.25;
  auto* syn = app.add_subcommand("synth", "Write synthetic image/mask pairs only");
  syn->add_option("-n,--count", synth_n, "Number of pairs")->required()->check(CLI::PositiveNumber);
  syn->add_option("--data", synth_dir, "Output dataset root")->required();
  syn->add_option("--resolution", synth_side, "Image side length");
  syn->add_option("--seed", synth_seed, "Generator seed");
  syn->add_option("--negative-fraction", synth_neg, "Share of samples with empty masks");

  // train
  Common train_common;
  std::optional<int> max_epochs, batch_size, patience, input_res;
  std::optional<double> lr_max, lr_min, aug_prob;
  std::optional<std::string> encoder, pretrained;
  bool mixed = false, from_scratch = false;
  std::optional<std::string> resume;
  auto* train = app.add_subcommand("train", "Train the segmentation model");
  train_common.attach(train);
  train->add_option("--max-epochs", max_epochs, "Epoch budget");
  train->add_option("--batch-size", batch_size, "Samples per optimizer step");
  train->add_option("--patience", patience, "Early-stop patience in epochs");
  train->add_option("--lr-max", lr_max, "Initial learning rate");
  train->add_option("--lr-min", lr_min, "Final learning rate");
  train->add_option("--encoder", encoder, "tiny or efficientnet-b0 .. efficientnet-b7");
  train->add_option("--input-resolution", input_res, "Model input side length (multiple of 32)");
  train->add_option("--pretrained", pretrained, "Checkpoint providing encoder weights");
  train->add_flag("--from-scratch", from_scratch, "Ignore any configured pretrained encoder");
  train->add_flag("--mixed-precision", mixed, "Reduced-precision activations with dynamic loss scaling");
  train->add_option("--aug-probability", aug_prob, "Override the probability of every train augmentation");
  train->add_option("--resume", resume, "Continue from a checkpoint (\"last\" = <out>/checkpoints/last.ckpt)");

  // tune
  Common tune_common;
  std::optional<std::string> tune_ckpt, bt_grid, rt_grid;
  std::optional<int> connectivity;
  auto* tune = app.add_subcommand("tune", "Grid-search binarization and removal thresholds on the val split");
  tune_common.attach(tune);
  tune->add_option("--checkpoint", tune_ckpt, "Model checkpoint (default <out>/checkpoints/best.ckpt)");
  tune->add_option("--bt-grid", bt_grid, "Comma-separated binarization thresholds");
  tune->add_option("--rt-grid", rt_grid, "Comma-separated removal thresholds (pixels)");
  tune->add_option("--connectivity", connectivity, "4 or 8")->check(CLI::IsMember({4, 8}));

  // evaluate
  Common eval_common;
  std::optional<std::string> eval_ckpt, eval_params, heldout, eval_out, aggregation;
  std::string eval_split = "val";
  std::optional<int> overlays;
  auto* eval = app.add_subcommand("evaluate", "Score post-processed predictions and render figures");
  eval_common.attach(eval);
  eval->add_option("--checkpoint", eval_ckpt, "Model checkpoint (default <out>/checkpoints/best.ckpt)");
  eval->add_option("--params", eval_params, "Tuned parameters (default <out>/tune.json)");
  eval->add_option("--split", eval_split, "Manifest split: train, val or all")
      ->check(CLI::IsMember({"train", "val", "all"}));
  eval->add_option("--heldout", heldout, "Separate dataset root to evaluate instead of a manifest split");
  eval->add_option("--overlays", overlays, "Number of comparison figures");
  eval->add_option("--aggregation", aggregation, "pooled or mean_per_image")
      ->check(CLI::IsMember({"pooled", "mean_per_image"}));
  eval->add_option("--eval-out", eval_out, "Directory for metrics and figures (default <out>/eval)");

  // predict
  Common pred_common;
  std::vector<std::string> inputs;
  std::optional<std::string> pred_ckpt, pred_params, masks_out;
  bool rle = false;
  auto* pred = app.add_subcommand("predict", "Write post-processed masks for input images");
  pred_common.attach(pred);
  pred->add_option("inputs", inputs, "Image files or directories")->required();
  pred->add_option("--checkpoint", pred_ckpt, "Model checkpoint (default <out>/checkpoints/best.ckpt)");
  pred->add_option("--params", pred_params, "Tuned parameters (default <out>/tune.json)");
  pred->add_option("--masks-out", masks_out, "Mask directory (default <out>/predictions)");
  pred->add_flag("--rle", rle, "Also write masks_rle.csv with run-length encodings");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  if (*prep) {
    auto cfg = prep_common.resolve();
    if (synth_res) cfg.synthetic.resolution = *synth_res;
    if (neg_fraction) cfg.synthetic.negative_fraction = *neg_fraction;
    if (train_fraction) cfg.split.train_fraction = *train_fraction;
    if (stratify) cfg.split.stratify = true;
    app::cmd_prepare(cfg, synthetic, log);
  } else if (*syn) {
    app::cmd_synth(synth_dir, synth_n, synth_side, synth_seed, synth_neg, log);
  } else if (*train) {
    auto cfg = train_common.resolve();
    if (max_epochs) cfg.train.max_epochs = *max_epochs;
    if (batch_size) cfg.train.batch_size = *batch_size;
    if (patience) cfg.train.early_stop_patience = *patience;
    if (lr_max) cfg.train.schedule.lr_max = *lr_max;
    if (lr_min) cfg.train.schedule.lr_min = *lr_min;
    if (encoder) cfg.model.encoder = *encoder;
    if (input_res) cfg.model.input_resolution = *input_res;
    if (pretrained) cfg.model.pretrained_source = *pretrained;
    if (from_scratch) cfg.model.pretrained_source.reset();
    if (mixed) cfg.train.mixed_precision = true;
    if (aug_prob) cfg.augment.probability = *aug_prob;
    app::TrainOptions opts;
    if (resume) {
      opts.resume = *resume == "last" ? app::layout(cfg).last_checkpoint() : std::filesystem::path(*resume);
    }
    app::cmd_train(cfg, opts, log);
  } else if (*tune) {
    auto cfg = tune_common.resolve();
    if (bt_grid) cfg.tune.bt_grid = parse_list<double>(*bt_grid, "--bt-grid");
    if (rt_grid) cfg.tune.rt_grid = parse_list<std::uint64_t>(*rt_grid, "--rt-grid");
    if (connectivity) cfg.tune.connectivity = *connectivity;
    app::TuneOptions opts;
    if (tune_ckpt) opts.checkpoint = *tune_ckpt;
    app::cmd_tune(cfg, opts, log);
  } else if (*eval) {
    auto cfg = eval_common.resolve();
    if (overlays) cfg.eval.overlays = *overlays;
    if (aggregation) cfg.eval.aggregation = aggregation_from_string(*aggregation);
    app::EvaluateOptions opts;
    opts.split = eval_split;
    if (eval_ckpt) opts.checkpoint = *eval_ckpt;
    if (eval_params) opts.params = *eval_params;
    if (heldout) opts.data = *heldout;
    if (eval_out) opts.out = *eval_out;
    app::cmd_evaluate(cfg, opts, log);
  } else if (*pred) {
    auto cfg = pred_common.resolve();
    app::PredictOptions opts;
    for (const auto& i : inputs) opts.inputs.emplace_back(i);
    if (pred_ckpt) opts.checkpoint = *pred_ckpt;
    if (pred_params) opts.params = *pred_params;
    if (masks_out) opts.out = *masks_out;
    opts.rle = rle;
    app::cmd_predict(cfg, opts, log);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ptxseg::UserError& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  } catch (const ptxseg::RuntimeFailure& e) {
    std::cerr << "failure: " << e.what() << std::endl;
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << std::endl;
    return 2;
  }
}
