#pragma once

#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "xmodseg/nets/layers.hpp"

namespace xmodseg::nets {

/// One resolution level: `convs` 3x3(x3) conv blocks followed by `blocks`
/// transformer blocks with `heads` heads. Levels after the first start with
/// a 2x interpolated downsampling (encoder) or upsampling (decoder).
struct LevelSpec {
  std::int64_t channels = 16;
  int convs = 1;
  int blocks = 0;
  std::int64_t heads = 0;
  bool operator==(const LevelSpec&) const = default;
};

void to_json(nlohmann::json& j, const LevelSpec& s);
void from_json(const nlohmann::json& j, LevelSpec& s);

/// Scales channels by `multiplier` (rounded, at least 1) and fits head counts
/// to the new channel numbers.
std::vector<LevelSpec> scale_levels(const std::vector<LevelSpec>& levels, double multiplier);

struct EncodedFeatures {
  /// Output of every level, shallowest first; the last entry is the bottleneck.
  std::vector<torch::Tensor> levels;
  const torch::Tensor& bottleneck() const { return levels.back(); }
};

class EncoderImpl : public torch::nn::Module {
 public:
  EncoderImpl(int spatial_dims, std::int64_t in_channels, std::vector<LevelSpec> levels,
              NormKind norm, std::int64_t mlp_ratio);
  EncodedFeatures forward(const torch::Tensor& x);
  const std::vector<LevelSpec>& levels() const { return levels_; }
  std::int64_t downsampling_factor() const;

 private:
  std::vector<LevelSpec> levels_;
  std::vector<std::vector<ConvNormAct>> convs_;
  std::vector<SpatialTransformer> transformers_;
};
TORCH_MODULE(Encoder);

enum class OutputActivation { kTanh, kSigmoid, kIdentity };

struct DecoderOptions {
  int spatial_dims = 3;
  /// Encoder levels the decoder mirrors (skip sources and bottleneck width).
  std::vector<LevelSpec> encoder_levels;
  /// Decoder levels from deepest to shallowest; size = encoder levels - 1.
  std::vector<LevelSpec> levels;
  NormKind norm = NormKind::kInstance;
  std::int64_t mlp_ratio = 2;
  std::int64_t out_channels = 1;
  /// Channels of the code fed in place of the bottleneck; when it differs
  /// from the bottleneck width a 1x1 projection maps it back.
  std::int64_t input_channels = 0;
  /// Two normalization sets and two heads (residual tanh, segmentation
  /// sigmoid) around one shared body.
  bool dual = false;
  /// Head activation of a single-mode decoder.
  OutputActivation activation = OutputActivation::kSigmoid;
};

class DecoderImpl : public torch::nn::Module {
 public:
  explicit DecoderImpl(DecoderOptions options);
  /// `code` replaces the bottleneck; `skips` are the encoder level outputs.
  torch::Tensor forward(const torch::Tensor& code, const std::vector<torch::Tensor>& skips,
                        DecoderMode mode = DecoderMode::kSegmentation);

  const DecoderOptions& options() const { return options_; }
  /// Every parameter the forward pass touches in `mode`.
  std::vector<torch::Tensor> parameters_for(DecoderMode mode) const;
  /// Parameters shared by both modes (everything but norm sets and heads).
  std::vector<torch::Tensor> body_parameters() const;
  /// Output head used in `mode` (the only head for single-mode decoders).
  ConvNd head(DecoderMode mode) const;

 private:
  DecoderOptions options_;
  ConvNd input_projection_{nullptr};
  std::vector<std::vector<ConvNormAct>> convs_;
  std::vector<SpatialTransformer> transformers_;
  ConvNd head_res_{nullptr};
  ConvNd head_seg_{nullptr};
};
TORCH_MODULE(Decoder);

torch::Tensor apply_activation(const torch::Tensor& x, OutputActivation a);

}  // namespace xmodseg::nets
