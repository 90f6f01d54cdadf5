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

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ptxseg/errors.hpp"
#include "ptxseg/image.hpp"
#include "ptxseg/nn/layers.hpp"
#include "ptxseg/rng.hpp"
#include "ptxseg/tensor.hpp"

namespace ptxseg {

/// What the decoder needs to know about a backbone: five feature maps at strides 2..32.
struct EncoderContract {
  std::array<int, 5> stage_channels{};
  static constexpr std::array<int, 5> stage_strides{2, 4, 8, 16, 32};
  std::optional<std::string> pretrained_source;
};

enum class UpsampleMode { nearest_then_conv, transposed_conv };

inline const char* to_string(UpsampleMode m) {
  return m == UpsampleMode::nearest_then_conv ? "nearest_then_conv" : "transposed_conv";
}

struct DecoderConfig {
  std::array<int, 5> block_channels{256, 128, 64, 32, 16};
  UpsampleMode upsample_mode = UpsampleMode::nearest_then_conv;
};

/// Compound scaling coefficients of one EfficientNet family member.
struct CompoundScale {
  double width = 1.0;
  double depth = 1.0;
  int native_resolution = 224;
  double dropout = 0.2;
};

/// Published (width, depth, resolution, dropout) for B0..B7.
inline CompoundScale efficientnet_scale(int variant) {
  static constexpr std::array<CompoundScale, 8> table{{
      {1.0, 1.0, 224, 0.2},
      {1.0, 1.1, 240, 0.2},
      {1.1, 1.2, 260, 0.3},
      {1.2, 1.4, 300, 0.3},
      {1.4, 1.8, 380, 0.4},
      {1.6, 2.2, 456, 0.4},
      {1.8, 2.6, 528, 0.5},
      {2.0, 3.1, 600, 0.5},
  }};
  if (variant < 0 || variant > 7) throw UserError("efficientnet variant must be b0..b7");
  return table[static_cast<std::size_t>(variant)];
}

/// Channel rounding used by the EfficientNet family: multiples of 8, never below 90% of the target.
inline int round_filters(int filters, double width) {
  const double scaled = filters * width;
  int rounded = std::max(8, static_cast<int>(scaled + 4) / 8 * 8);
  if (rounded < 0.9 * scaled) rounded += 8;
  return rounded;
}

inline int round_repeats(int repeats, double depth) { return static_cast<int>(std::ceil(depth * repeats)); }

struct ModelConfig {
  /// "tiny" or "efficientnet-b0" .. "efficientnet-b7".
  std::string encoder = "efficientnet-b4";
  /// Only used by the tiny encoder.
  std::array<int, 5> tiny_channels{8, 16, 24, 32, 48};
  DecoderConfig decoder;
  int input_resolution = 512;
  /// Checkpoint whose encoder weights initialise this model.
  std::optional<std::string> pretrained_source;
  std::uint64_t init_seed = 0;

  static ModelConfig tiny(int resolution = 128) {
    ModelConfig c;
    c.encoder = "tiny";
    c.decoder.block_channels = {48, 32, 24, 16, 8};
    c.input_resolution = resolution;
    return c;
  }
};

inline std::optional<int> efficientnet_variant(const std::string& name) {
  const std::string prefix = "efficientnet-b";
  if (name.size() == prefix.size() + 1 && name.compare(0, prefix.size(), prefix) == 0) {
    const char d = name.back();
    if (d >= '0' && d <= '7') return d - '0';
  }
  return std::nullopt;
}

namespace detail {

template <typename T>
void conv_bn_act(nn::Sequential<T>& s, int cin, int cout, int k, int stride, nn::Activation act, Rng& rng) {
  s.template add<nn::Conv2d<T>>(cin, cout, k, stride, k / 2, false, rng);
  s.template add<nn::BatchNorm2d<T>>(cout);
  s.template add<nn::ActivationLayer<T>>(act);
}

}  // namespace detail

/// Mobile inverted bottleneck: [expand 1x1] -> depthwise kxk -> squeeze-excite -> project 1x1,
/// with identity shortcut when shape is preserved.
template <typename T>
class MBConvBlock final : public nn::Layer<T> {
 public:
  MBConvBlock(int cin, int cout, int expand_ratio, int kernel, int stride, Rng& rng)
      : residual_(stride == 1 && cin == cout) {
    const int mid = cin * expand_ratio;
    if (expand_ratio != 1) detail::conv_bn_act(body_, cin, mid, 1, 1, nn::Activation::swish, rng);
    body_.template add<nn::DepthwiseConv2d<T>>(mid, kernel, stride, rng);
    body_.template add<nn::BatchNorm2d<T>>(mid);
    body_.template add<nn::ActivationLayer<T>>(nn::Activation::swish);
    body_.template add<nn::SqueezeExcite<T>>(mid, std::max(1, cin / 4), rng);
    body_.template add<nn::Conv2d<T>>(mid, cout, 1, 1, 0, false, rng);
    body_.template add<nn::BatchNorm2d<T>>(cout);
  }

  Tensor<T> forward(const Tensor<T>& x, const nn::Context& ctx) override {
    Tensor<T> y = body_.forward(x, ctx);
    if (residual_) nn::add_inplace(y, x);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g) override {
    Tensor<T> gx = body_.backward(g);
    if (residual_) nn::add_inplace(gx, g);
    return gx;
  }

  void parameters(nn::ParamList<T>& out, const std::string& prefix) override { body_.parameters(out, prefix); }

 private:
  bool residual_;
  nn::Sequential<T> body_;
};

/// Five-stage feature extractor. Stage i output has stride 2^(i+1).
template <typename T>
class Encoder {
 public:
  std::vector<Tensor<T>> forward(const Tensor<T>& x, const nn::Context& ctx) {
    std::vector<Tensor<T>> feats;
    feats.reserve(5);
    const Tensor<T>* h = &x;
    for (auto& s : stages_) {
      feats.push_back(s.forward(*h, ctx));
      h = &feats.back();
    }
    return feats;
  }

  /// `grads[i]` is the gradient arriving at stage i's output (skip or bottleneck).
  void backward(std::vector<Tensor<T>> grads) {
    Tensor<T> g = std::move(grads[4]);
    for (int i = 4; i >= 0; --i) {
      if (i < 4) nn::add_inplace(g, grads[static_cast<std::size_t>(i)]);
      g = stages_[static_cast<std::size_t>(i)].backward(g);
    }
  }

  void parameters(nn::ParamList<T>& out, const std::string& prefix) {
    for (std::size_t i = 0; i < stages_.size(); ++i) stages_[i].parameters(out, prefix + std::to_string(i) + ".");
  }

  const EncoderContract& contract() const { return contract_; }

  static Encoder tiny(const std::array<int, 5>& channels, Rng& rng) {
    Encoder e;
    int cin = 3;
    for (std::size_t i = 0; i < 5; ++i) {
      if (channels[i] <= 0) throw UserError("encoder stage channels must be positive");
      detail::conv_bn_act(e.stages_[i], cin, channels[i], 3, 2, nn::Activation::relu, rng);
      detail::conv_bn_act(e.stages_[i], channels[i], channels[i], 3, 1, nn::Activation::relu, rng);
      cin = channels[i];
    }
    e.contract_.stage_channels = channels;
    return e;
  }

  static Encoder efficientnet(const CompoundScale& scale, Rng& rng) {
    struct Group {
      int expand, kernel, stride, cin, cout, repeats, stage;
    };
    // Base (B0) layout; the stage column maps groups onto output strides 2..32.
    static constexpr std::array<Group, 7> groups{{
        {1, 3, 1, 32, 16, 1, 0},
        {6, 3, 2, 16, 24, 2, 1},
        {6, 5, 2, 24, 40, 2, 2},
        {6, 3, 2, 40, 80, 3, 3},
        {6, 5, 1, 80, 112, 3, 3},
        {6, 5, 2, 112, 192, 4, 4},
        {6, 3, 1, 192, 320, 1, 4},
    }};
    Encoder e;
    const int stem = round_filters(32, scale.width);
    detail::conv_bn_act(e.stages_[0], 3, stem, 3, 2, nn::Activation::swish, rng);
    int cin = stem;
    for (const auto& g : groups) {
      const int cout = round_filters(g.cout, scale.width);
      const int reps = round_repeats(g.repeats, scale.depth);
      auto& stage = e.stages_[static_cast<std::size_t>(g.stage)];
      for (int r = 0; r < reps; ++r) {
        stage.template add<MBConvBlock<T>>(cin, cout, g.expand, g.kernel, r == 0 ? g.stride : 1, rng);
        cin = cout;
      }
      e.contract_.stage_channels[static_cast<std::size_t>(g.stage)] = cout;
    }
    return e;
  }

 private:
  std::array<nn::Sequential<T>, 5> stages_;
  EncoderContract contract_;
};

/// U-Net: encoder features at strides 2..32, five decoder blocks each doubling resolution,
/// skips from strides 16, 8, 4, 2, then a 1x1 convolution and sigmoid.
template <typename T>
class SegmentationModel {
 public:
  /// Probabilities are kept inside [kProbFloor, 1 - kProbFloor].
  static constexpr T kProbFloor = T(1e-7);

  explicit SegmentationModel(const ModelConfig& config) : config_(config) {
    if (config.input_resolution <= 0 || config.input_resolution % 32 != 0) {
      throw UserError("input resolution " + std::to_string(config.input_resolution) + " is not divisible by 32");
    }
    Rng rng(mix_seed(config.init_seed));
    if (config.encoder == "tiny") {
      encoder_ = Encoder<T>::tiny(config.tiny_channels, rng);
    } else if (auto v = efficientnet_variant(config.encoder)) {
      encoder_ = Encoder<T>::efficientnet(efficientnet_scale(*v), rng);
    } else {
      throw UserError("unknown encoder '" + config.encoder + "' (expected tiny or efficientnet-b0..b7)");
    }
    const auto& enc = encoder_.contract().stage_channels;
    int prev = enc[4];
    for (std::size_t i = 0; i < 5; ++i) {
      const int width = config.decoder.block_channels[i];
      if (width <= 0) throw UserError("decoder block channels must be positive");
      Block b;
      if (config.decoder.upsample_mode == UpsampleMode::transposed_conv) {
        b.up = std::make_unique<nn::ConvTranspose2x2<T>>(prev, prev, rng);
      } else {
        b.up = std::make_unique<nn::Upsample2x<T>>();
      }
      b.up_channels = prev;
      b.skip_channels = i < 4 ? enc[3 - i] : 0;
      detail::conv_bn_act(b.convs, prev + b.skip_channels, width, 3, 1, nn::Activation::relu, rng);
      detail::conv_bn_act(b.convs, width, width, 3, 1, nn::Activation::relu, rng);
      decoder_.push_back(std::move(b));
      prev = width;
    }
    head_ = std::make_unique<nn::Conv2d<T>>(prev, 1, 1, 1, 0, true, rng);
  }

  SegmentationModel(const SegmentationModel&) = delete;
  SegmentationModel& operator=(const SegmentationModel&) = delete;
  SegmentationModel(SegmentationModel&&) = default;
  SegmentationModel& operator=(SegmentationModel&&) = default;

  const ModelConfig& config() const { return config_; }
  const EncoderContract& encoder_contract() const { return encoder_.contract(); }

  /// (N, 3, H, W) in [0, 1] -> (N, 1, H, W) probabilities.
  Tensor<T> forward(const Tensor<T>& x, const nn::Context& ctx = {}) {
    if (x.c() != 3) throw UserError("model input must have 3 channels, got " + x.shape_string());
    if (x.h() % 32 != 0 || x.w() % 32 != 0 || x.h() == 0 || x.w() == 0) {
      throw UserError("model input spatial size must be a positive multiple of 32, got " + x.shape_string());
    }
    half_ = ctx.half;
    auto feats = encoder_.forward(x, ctx);
    Tensor<T> h = feats[4];
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
      auto& b = decoder_[i];
      Tensor<T> up = b.up->forward(h, ctx);
      if (half_) nn::round_tensor_to_half(up);
      if (b.skip_channels > 0) up = nn::concat_channels(up, feats[3 - i]);
      h = b.convs.forward(up, ctx);
    }
    Tensor<T> logits = head_->forward(h, ctx);
    probs_ = logits;
    for (auto& v : probs_.storage()) {
      v = std::clamp(nn::ActivationLayer<T>::sigmoid(v), kProbFloor, T(1) - kProbFloor);
    }
    return probs_;
  }

  /// Back-propagates dLoss/dProbabilities of the last forward into parameter gradients.
  void backward(const Tensor<T>& grad_probs) {
    require_same_shape(grad_probs, probs_, "SegmentationModel::backward");
    Tensor<T> g = grad_probs;
    auto& gs = g.storage();
    const auto& ps = probs_.storage();
    for (std::size_t i = 0; i < gs.size(); ++i) gs[i] *= ps[i] * (T(1) - ps[i]);
    if (half_) nn::round_tensor_to_half(g);
    g = head_->backward(g);
    std::vector<Tensor<T>> enc_grads(5);
    for (std::size_t k = decoder_.size(); k-- > 0;) {
      auto& b = decoder_[k];
      g = b.convs.backward(g);
      if (b.skip_channels > 0) {
        auto [gu, gs_skip] = nn::split_channels(g, b.up_channels);
        enc_grads[3 - k] = std::move(gs_skip);
        g = std::move(gu);
      }
      g = b.up->backward(g);
      if (half_) nn::round_tensor_to_half(g);
    }
    enc_grads[4] = std::move(g);
    encoder_.backward(std::move(enc_grads));
  }

  /// Every named tensor, trainable or buffer, in a stable order.
  nn::ParamList<T> parameters() {
    nn::ParamList<T> out;
    encoder_.parameters(out, "encoder.");
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
      decoder_[i].up->parameters(out, "decoder." + std::to_string(i) + ".up.");
      decoder_[i].convs.parameters(out, "decoder." + std::to_string(i) + ".convs.");
    }
    head_->parameters(out, "head.");
    return out;
  }

  std::size_t num_parameters() {
    std::size_t n = 0;
    for (const auto& p : parameters()) {
      if (p.grad) n += p.value->size();
    }
    return n;
  }

  void zero_grad() {
    for (auto& p : parameters()) {
      if (p.grad) p.grad->fill(T(0));
    }
  }

  /// Spatial sizes of the five encoder outputs for a square input.
  std::array<int, 5> feature_sizes(int resolution) const {
    std::array<int, 5> out{};
    for (std::size_t i = 0; i < 5; ++i) out[i] = resolution / EncoderContract::stage_strides[i];
    return out;
  }

  /// Encoder forward only; exposes the feature maps for inspection.
  std::vector<Tensor<T>> encode(const Tensor<T>& x, const nn::Context& ctx = {}) { return encoder_.forward(x, ctx); }

 private:
  struct Block {
    nn::LayerPtr<T> up;
    int up_channels = 0;
    int skip_channels = 0;
    nn::Sequential<T> convs;
  };

  ModelConfig config_;
  Encoder<T> encoder_;
  std::vector<Block> decoder_;
  nn::LayerPtr<T> head_;
  Tensor<T> probs_;
  bool half_ = false;
};

using Model = SegmentationModel<float>;

/// Packs interleaved images into an (N, 3, H, W) batch.
template <typename T = float>
Tensor<T> to_batch(const std::vector<const Image*>& images) {
  if (images.empty()) throw UserError("to_batch: empty batch");
  const int h = images.front()->height;
  const int w = images.front()->width;
  Tensor<T> t(static_cast<int>(images.size()), 3, h, w);
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = *images[n];
    if (img.height != h || img.width != w || img.channels != 3) {
      throw UserError("to_batch: images must share a 3-channel shape");
    }
    for (int c = 0; c < 3; ++c) {
      T* dst = t.channel(static_cast<int>(n), c);
      for (std::size_t p = 0; p < static_cast<std::size_t>(h) * w; ++p) dst[p] = static_cast<T>(img.data[p * 3 + c]);
    }
  }
  return t;
}

template <typename T = float>
Tensor<T> to_batch(const std::vector<const Mask*>& masks) {
  if (masks.empty()) throw UserError("to_batch: empty batch");
  Tensor<T> t(static_cast<int>(masks.size()), 1, masks.front()->height, masks.front()->width);
  for (std::size_t n = 0; n < masks.size(); ++n) {
    if (masks[n]->height != t.h() || masks[n]->width != t.w()) throw UserError("to_batch: mask shapes differ");
    std::copy(masks[n]->data.begin(), masks[n]->data.end(), t.sample(static_cast<int>(n)));
  }
  return t;
}

template <typename T>
ProbMap to_prob_map(const Tensor<T>& probs, int index) {
  ProbMap m(probs.h(), probs.w());
  const T* src = probs.sample(index);
  for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = static_cast<float>(src[i]);
  return m;
}

/// Inference on a single image already at model resolution.
inline ProbMap predict(Model& model, const Image& image) {
  const auto probs = model.forward(to_batch<float>({&image}), nn::Context{false, false});
  return to_prob_map(probs, 0);
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"encoder", c.encoder},
       {"tiny_channels", c.tiny_channels},
       {"decoder_channels", c.decoder.block_channels},
       {"upsample_mode", to_string(c.decoder.upsample_mode)},
       {"input_resolution", c.input_resolution},
       {"pretrained_source", c.pretrained_source ? nlohmann::json(*c.pretrained_source) : nlohmann::json(nullptr)},
       {"init_seed", c.init_seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c = ModelConfig{};
  c.encoder = j.value("encoder", c.encoder);
  if (j.contains("tiny_channels")) c.tiny_channels = j.at("tiny_channels").get<std::array<int, 5>>();
  if (j.contains("decoder_channels")) c.decoder.block_channels = j.at("decoder_channels").get<std::array<int, 5>>();
  if (j.contains("upsample_mode")) {
    const auto m = j.at("upsample_mode").get<std::string>();
    if (m == "nearest_then_conv") {
      c.decoder.upsample_mode = UpsampleMode::nearest_then_conv;
    } else if (m == "transposed_conv") {
      c.decoder.upsample_mode = UpsampleMode::transposed_conv;
    } else {
      throw UserError("unknown upsample_mode '" + m + "'");
    }
  }
  c.input_resolution = j.value("input_resolution", c.input_resolution);
  if (j.contains("pretrained_source") && !j.at("pretrained_source").is_null()) {
    c.pretrained_source = j.at("pretrained_source").get<std::string>();
  }
  c.init_seed = j.value("init_seed", c.init_seed);
}

}  // namespace ptxseg
