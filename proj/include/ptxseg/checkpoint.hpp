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

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ptxseg/errors.hpp"
#include "ptxseg/model.hpp"
#include "ptxseg/optim.hpp"

namespace ptxseg {

// Checkpoint layout (little-endian):
//   8 bytes  magic "PTXSEGCK"
//   u32      format version
//   u64      header length L
//   L bytes  JSON header: config, counters, tensor directory (name, shape, offset in floats)
//   payload  float32 values, concatenated in directory order

inline constexpr char kCheckpointMagic[8] = {'P', 'T', 'X', 'S', 'E', 'G', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct TrainingProgress {
  int epoch = 0;                 // last completed epoch, 1-based; 0 = untrained
  std::int64_t global_step = 0;  // optimizer steps taken
  double best_val_iou = -1.0;
  std::int64_t total_steps = 0;  // schedule length the run was configured with
  int best_epoch = 0;            // epoch that produced best_val_iou; 0 = none yet
};

struct Checkpoint {
  Model model;
  Adam<float> optimizer;
  TrainingProgress progress;
  nlohmann::json extra;  // free-form run metadata
};

namespace detail {

inline void write_tensor_directory(nlohmann::json& dir, std::vector<const Tensor<float>*>& payload,
                                   const std::string& name, const Tensor<float>& t, std::uint64_t& offset) {
  dir.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
  payload.push_back(&t);
  offset += t.size();
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, Model& model, Adam<float>* optimizer,
                            const TrainingProgress& progress, const nlohmann::json& extra = nlohmann::json::object()) {
  auto params = model.parameters();
  nlohmann::json dir = nlohmann::json::array();
  std::vector<const Tensor<float>*> payload;
  std::uint64_t offset = 0;
  for (const auto& p : params) detail::write_tensor_directory(dir, payload, "model." + p.name, *p.value, offset);
  if (optimizer) {
    optimizer->bind(params);
    std::size_t k = 0;
    for (const auto& p : params) {
      if (!p.grad) continue;
      detail::write_tensor_directory(dir, payload, "adam.m." + p.name, optimizer->first_moments()[k], offset);
      detail::write_tensor_directory(dir, payload, "adam.v." + p.name, optimizer->second_moments()[k], offset);
      ++k;
    }
  }
  nlohmann::json header = {
      {"format_version", kCheckpointVersion},
      {"model_config", model.config()},
      {"progress",
       {{"epoch", progress.epoch},
        {"global_step", progress.global_step},
        {"best_val_iou", progress.best_val_iou},
        {"total_steps", progress.total_steps},
        {"best_epoch", progress.best_epoch}}},
      {"optimizer",
       optimizer ? nlohmann::json{{"steps", optimizer->steps()},
                                  {"beta1", optimizer->config().beta1},
                                  {"beta2", optimizer->config().beta2},
                                  {"eps", optimizer->config().eps}}
                 : nlohmann::json(nullptr)},
      {"extra", extra},
      {"tensors", dir},
  };
  const std::string text = header.dump();

  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write checkpoint: " + path.string());
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto* t : payload) {
      out.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(float)));
    }
    if (!out) throw RuntimeFailure("failed writing checkpoint: " + path.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw RuntimeFailure("cannot finalize checkpoint " + path.string() + ": " + ec.message());
}

struct CheckpointContents {
  nlohmann::json header;
  std::map<std::string, Tensor<float>> tensors;
};

inline CheckpointContents read_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UserError("checkpoint not found: " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw UserError("not a ptxseg checkpoint: " + path.string());
  }
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  if (version != kCheckpointVersion) {
    throw UserError("checkpoint format version " + std::to_string(version) + " is not supported (this build reads " +
                    "version " + std::to_string(kCheckpointVersion) + "): " + path.string());
  }
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len > (1ULL << 30)) throw UserError("corrupt checkpoint header: " + path.string());
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  CheckpointContents c;
  try {
    c.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw UserError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
  for (const auto& entry : c.header.at("tensors")) {
    const auto shape = entry.at("shape").get<std::array<int, 4>>();
    Tensor<float> t(shape[0], shape[1], shape[2], shape[3]);
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    if (!in) throw UserError("truncated checkpoint: " + path.string());
    c.tensors.emplace(entry.at("name").get<std::string>(), std::move(t));
  }
  return c;
}

namespace detail {

inline void copy_into(Tensor<float>& dst, const Tensor<float>& src, const std::string& name) {
  if (!dst.same_shape(src)) {
    throw UserError("checkpoint tensor " + name + " has shape " + src.shape_string() + ", model expects " +
                    dst.shape_string());
  }
  dst.storage() = src.storage();
}

}  // namespace detail

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto contents = read_checkpoint_file(path);
  const auto& h = contents.header;
  ModelConfig cfg = h.at("model_config").get<ModelConfig>();
  cfg.pretrained_source.reset();  // weights come from this file
  Checkpoint ck{Model(cfg), Adam<float>(), {}, h.value("extra", nlohmann::json::object())};
  auto params = ck.model.parameters();
  for (auto& p : params) {
    const auto it = contents.tensors.find("model." + p.name);
    if (it == contents.tensors.end()) throw UserError("checkpoint is missing tensor model." + p.name);
    detail::copy_into(*p.value, it->second, p.name);
  }
  if (!h.at("optimizer").is_null()) {
    const auto& o = h.at("optimizer");
    ck.optimizer = Adam<float>(AdamConfig{o.at("beta1").get<double>(), o.at("beta2").get<double>(),
                                          o.at("eps").get<double>()});
    ck.optimizer.set_steps(o.at("steps").get<std::int64_t>());
    ck.optimizer.bind(params);
    std::size_t k = 0;
    for (auto& p : params) {
      if (!p.grad) continue;
      const auto m = contents.tensors.find("adam.m." + p.name);
      const auto v = contents.tensors.find("adam.v." + p.name);
      if (m == contents.tensors.end() || v == contents.tensors.end()) {
        throw UserError("checkpoint is missing optimizer state for " + p.name);
      }
      detail::copy_into(ck.optimizer.first_moments()[k], m->second, "adam.m." + p.name);
      detail::copy_into(ck.optimizer.second_moments()[k], v->second, "adam.v." + p.name);
      ++k;
    }
  }
  const auto& pr = h.at("progress");
  ck.progress.epoch = pr.at("epoch").get<int>();
  ck.progress.global_step = pr.at("global_step").get<std::int64_t>();
  ck.progress.best_val_iou = pr.at("best_val_iou").get<double>();
  ck.progress.total_steps = pr.value("total_steps", std::int64_t{0});
  ck.progress.best_epoch = pr.value("best_epoch", 0);
  return ck;
}

/// Constructs the model; when `pretrained_source` names a checkpoint, its encoder weights are loaded.
inline Model build_model(const ModelConfig& config) {
  Model model(config);
  if (!config.pretrained_source) return model;
  const std::filesystem::path src = *config.pretrained_source;
  if (!std::filesystem::exists(src)) {
    throw UserError("pretrained source '" + src.string() +
                    "' is unavailable; remove model.pretrained_source (or pass --from-scratch) to train from "
                    "random initialisation");
  }
  const auto contents = read_checkpoint_file(src);
  std::size_t loaded = 0;
  for (auto& p : model.parameters()) {
    if (p.name.rfind("encoder.", 0) != 0) continue;
    const auto it = contents.tensors.find("model." + p.name);
    if (it == contents.tensors.end()) throw UserError("pretrained source lacks tensor " + p.name);
    detail::copy_into(*p.value, it->second, p.name);
    ++loaded;
  }
  if (loaded == 0) throw UserError("pretrained source provided no encoder weights: " + src.string());
  return model;
}

}  // namespace ptxseg
