#pragma once

#include <string>
#include <vector>

#include <torch/torch.h>

namespace xmodseg::nets {

/// Which normalization set and output head a shared decoder runs with.
enum class DecoderMode { kResidual, kSegmentation };

/// Convolution over 2 or 3 spatial dims with its own parameters, so one
/// module type serves the 2D translation nets and the 3D segmentation nets.
struct ConvOptions {
  int spatial_dims = 2;
  std::int64_t in_channels = 1;
  std::int64_t out_channels = 1;
  std::int64_t kernel = 3;
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  /// Output keeps the input extent (stride 1 only, any kernel size).
  bool same_padding = false;
};

class ConvNdImpl : public torch::nn::Module {
 public:
  explicit ConvNdImpl(const ConvOptions& options);
  torch::Tensor forward(const torch::Tensor& x);
  const ConvOptions& options() const { return options_; }

  torch::Tensor weight;
  torch::Tensor bias;

 private:
  ConvOptions options_;
};
TORCH_MODULE(ConvNd);

enum class NormKind {
  /// Per-sample, per-channel statistics over the spatial extent.
  kInstance,
  /// Per-sample statistics over channels and space (layer norm on maps).
  kLayer,
  /// Layer norm over the last (feature) dim of a token sequence.
  kToken,
};

/// Normalization with one or two affine parameter sets. With two sets the
/// active set is picked by the DecoderMode passed to forward; the statistics
/// computation itself has no parameters.
class ModeNormImpl : public torch::nn::Module {
 public:
  ModeNormImpl(NormKind kind, std::int64_t channels, bool dual);
  torch::Tensor forward(const torch::Tensor& x, DecoderMode mode = DecoderMode::kSegmentation);

  bool dual() const { return dual_; }
  /// Affine parameters used in `mode`.
  std::vector<torch::Tensor> parameters_for(DecoderMode mode) const;

 private:
  NormKind kind_;
  std::int64_t channels_;
  bool dual_;
  torch::Tensor weight_res_, bias_res_, weight_seg_, bias_seg_;
};
TORCH_MODULE(ModeNorm);

class ConvNormActImpl : public torch::nn::Module {
 public:
  ConvNormActImpl(const ConvOptions& conv, NormKind norm, bool dual_norm, double slope = 0.01);
  torch::Tensor forward(const torch::Tensor& x, DecoderMode mode = DecoderMode::kSegmentation);

 private:
  ConvNd conv_{nullptr};
  ModeNorm norm_{nullptr};
  double slope_;
};
TORCH_MODULE(ConvNormAct);

/// Multi-head self-attention that can keep its softmax weights for later
/// inspection.
class SelfAttentionImpl : public torch::nn::Module {
 public:
  SelfAttentionImpl(std::int64_t dim, std::int64_t heads);
  torch::Tensor forward(const torch::Tensor& tokens);

  std::int64_t heads() const { return heads_; }
  void set_capture(bool on) { capture_ = on; }
  /// (batch, heads, queries, keys) from the latest forward while capturing.
  const torch::Tensor& last_attention() const { return last_attention_; }

 private:
  std::int64_t dim_;
  std::int64_t heads_;
  torch::nn::Linear qkv_{nullptr};
  torch::nn::Linear proj_{nullptr};
  bool capture_ = false;
  torch::Tensor last_attention_;
};
TORCH_MODULE(SelfAttention);

/// Pre-norm attention + MLP block on (batch, tokens, dim).
class TransformerBlockImpl : public torch::nn::Module {
 public:
  TransformerBlockImpl(std::int64_t dim, std::int64_t heads, std::int64_t mlp_ratio, bool dual_norm);
  torch::Tensor forward(const torch::Tensor& tokens, DecoderMode mode = DecoderMode::kSegmentation);

 private:
  ModeNorm norm1_{nullptr};
  SelfAttention attn_{nullptr};
  ModeNorm norm2_{nullptr};
  torch::nn::Linear fc1_{nullptr};
  torch::nn::Linear fc2_{nullptr};
};
TORCH_MODULE(TransformerBlock);

/// Runs transformer blocks over every spatial position of a feature map.
/// A depthwise convolution supplies positional information, so any spatial
/// extent is accepted.
class SpatialTransformerImpl : public torch::nn::Module {
 public:
  SpatialTransformerImpl(int spatial_dims, std::int64_t channels, int blocks, std::int64_t heads,
                         std::int64_t mlp_ratio, bool dual_norm);
  torch::Tensor forward(const torch::Tensor& x, DecoderMode mode = DecoderMode::kSegmentation);

 private:
  torch::Tensor positional_weight_;
  int spatial_dims_;
  std::vector<TransformerBlock> blocks_;
};
TORCH_MODULE(SpatialTransformer);

/// Resample by a power-of-two factor with (bi/tri)linear interpolation.
torch::Tensor resize_by(const torch::Tensor& x, double factor);

/// Largest divisor of `channels` that is <= `heads` (at least 1).
std::int64_t fit_heads(std::int64_t channels, std::int64_t heads);

}  // namespace xmodseg::nets
