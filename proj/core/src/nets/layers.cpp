#include "xmodseg/nets/layers.hpp"

#include <cmath>

#include "xmodseg/error.hpp"

namespace xmodseg::nets {

namespace F = torch::nn::functional;

ConvNdImpl::ConvNdImpl(const ConvOptions& options) : options_(options) {
  if (options.spatial_dims != 2 && options.spatial_dims != 3) {
    throw ValidationError("spatial_dims", "must be 2 or 3");
  }
  if (options.same_padding && options.stride != 1) {
    throw ValidationError("same_padding", "requires stride 1");
  }
  std::vector<std::int64_t> shape{options.out_channels, options.in_channels};
  for (int i = 0; i < options.spatial_dims; ++i) shape.push_back(options.kernel);
  weight = register_parameter("weight", torch::empty(shape));
  bias = register_parameter("bias", torch::empty({options.out_channels}));
  // Same scheme as torch's built-in convolutions.
  torch::nn::init::kaiming_uniform_(weight, std::sqrt(5.0));
  const double fan_in = static_cast<double>(weight.numel() / options.out_channels);
  const double bound = 1.0 / std::sqrt(fan_in);
  torch::nn::init::uniform_(bias, -bound, bound);
}

torch::Tensor ConvNdImpl::forward(const torch::Tensor& x) {
  const auto n = options_.spatial_dims;
  if (x.dim() != n + 2) {
    throw ShapeError("ConvNd expects " + std::to_string(n + 2) + "-d input, got " +
                     std::to_string(x.dim()));
  }
  std::vector<std::int64_t> stride(n, options_.stride);
  if (options_.same_padding) {
    // Explicit zero pad (extra element on the trailing side for even kernels),
    // matching torch's "same" without its per-call warning.
    const auto total = options_.kernel - 1;
    const auto lead = total / 2;
    std::vector<std::int64_t> pad;
    for (int i = 0; i < n; ++i) {
      pad.push_back(lead);
      pad.push_back(total - lead);
    }
    const auto padded = total > 0 ? F::pad(x, F::PadFuncOptions(pad)) : x;
    return n == 2 ? at::conv2d(padded, weight, bias, stride) : at::conv3d(padded, weight, bias, stride);
  }
  std::vector<std::int64_t> padding(n, options_.padding);
  return n == 2 ? at::conv2d(x, weight, bias, stride, padding)
                : at::conv3d(x, weight, bias, stride, padding);
}

ModeNormImpl::ModeNormImpl(NormKind kind, std::int64_t channels, bool dual)
    : kind_(kind), channels_(channels), dual_(dual) {
  if (dual) {
    weight_res_ = register_parameter("weight_res", torch::ones({channels}));
    bias_res_ = register_parameter("bias_res", torch::zeros({channels}));
    weight_seg_ = register_parameter("weight_seg", torch::ones({channels}));
    bias_seg_ = register_parameter("bias_seg", torch::zeros({channels}));
  } else {
    weight_seg_ = register_parameter("weight", torch::ones({channels}));
    bias_seg_ = register_parameter("bias", torch::zeros({channels}));
    weight_res_ = weight_seg_;
    bias_res_ = bias_seg_;
  }
}

std::vector<torch::Tensor> ModeNormImpl::parameters_for(DecoderMode mode) const {
  if (mode == DecoderMode::kResidual) return {weight_res_, bias_res_};
  return {weight_seg_, bias_seg_};
}

torch::Tensor ModeNormImpl::forward(const torch::Tensor& x, DecoderMode mode) {
  const auto& w = mode == DecoderMode::kResidual ? weight_res_ : weight_seg_;
  const auto& b = mode == DecoderMode::kResidual ? bias_res_ : bias_seg_;
  constexpr double kEps = 1e-5;
  if (kind_ == NormKind::kToken) {
    return at::layer_norm(x, {channels_}, w, b, kEps);
  }
  torch::Tensor normalized;
  if (kind_ == NormKind::kInstance) {
    normalized = at::instance_norm(x, {}, {}, {}, {}, /*use_input_stats=*/true, 0.0, kEps, false);
  } else {
    normalized = at::group_norm(x, 1, {}, {}, kEps);
  }
  std::vector<std::int64_t> shape(static_cast<std::size_t>(x.dim()), 1);
  shape[1] = channels_;
  return normalized * w.view(shape) + b.view(shape);
}

ConvNormActImpl::ConvNormActImpl(const ConvOptions& conv, NormKind norm, bool dual_norm,
                                 double slope)
    : slope_(slope) {
  conv_ = register_module("conv", ConvNd(conv));
  norm_ = register_module("norm", ModeNorm(norm, conv.out_channels, dual_norm));
}

torch::Tensor ConvNormActImpl::forward(const torch::Tensor& x, DecoderMode mode) {
  return F::leaky_relu(norm_->forward(conv_->forward(x), mode),
                       F::LeakyReLUFuncOptions().negative_slope(slope_));
}

SelfAttentionImpl::SelfAttentionImpl(std::int64_t dim, std::int64_t heads)
    : dim_(dim), heads_(heads) {
  if (heads <= 0 || dim % heads != 0) {
    throw ValidationError("heads", std::to_string(heads) + " heads do not divide dim " +
                                       std::to_string(dim));
  }
  qkv_ = register_module("qkv", torch::nn::Linear(dim, 3 * dim));
  proj_ = register_module("proj", torch::nn::Linear(dim, dim));
}

torch::Tensor SelfAttentionImpl::forward(const torch::Tensor& tokens) {
  const auto b = tokens.size(0);
  const auto n = tokens.size(1);
  const auto head_dim = dim_ / heads_;
  auto qkv = qkv_->forward(tokens).view({b, n, 3, heads_, head_dim}).permute({2, 0, 3, 1, 4});
  auto q = qkv[0], k = qkv[1], v = qkv[2];
  auto attn = torch::softmax(torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(double(head_dim)), -1);
  if (capture_) last_attention_ = attn.detach().clone();
  auto out = torch::matmul(attn, v).transpose(1, 2).reshape({b, n, dim_});
  return proj_->forward(out);
}

TransformerBlockImpl::TransformerBlockImpl(std::int64_t dim, std::int64_t heads,
                                           std::int64_t mlp_ratio, bool dual_norm) {
  norm1_ = register_module("norm1", ModeNorm(NormKind::kToken, dim, dual_norm));
  attn_ = register_module("attn", SelfAttention(dim, heads));
  norm2_ = register_module("norm2", ModeNorm(NormKind::kToken, dim, dual_norm));
  fc1_ = register_module("fc1", torch::nn::Linear(dim, dim * mlp_ratio));
  fc2_ = register_module("fc2", torch::nn::Linear(dim * mlp_ratio, dim));
}

torch::Tensor TransformerBlockImpl::forward(const torch::Tensor& tokens, DecoderMode mode) {
  auto x = tokens + attn_->forward(norm1_->forward(tokens, mode));
  return x + fc2_->forward(torch::gelu(fc1_->forward(norm2_->forward(x, mode))));
}

SpatialTransformerImpl::SpatialTransformerImpl(int spatial_dims, std::int64_t channels, int blocks,
                                               std::int64_t heads, std::int64_t mlp_ratio,
                                               bool dual_norm)
    : spatial_dims_(spatial_dims) {
  std::vector<std::int64_t> shape{channels, 1};
  for (int i = 0; i < spatial_dims; ++i) shape.push_back(3);
  positional_weight_ = register_parameter("positional", torch::zeros(shape));
  for (int i = 0; i < blocks; ++i) {
    blocks_.push_back(register_module("block" + std::to_string(i),
                                      TransformerBlock(channels, heads, mlp_ratio, dual_norm)));
  }
}

torch::Tensor SpatialTransformerImpl::forward(const torch::Tensor& x, DecoderMode mode) {
  const auto channels = x.size(1);
  torch::Tensor pos = spatial_dims_ == 2
                          ? at::conv2d(x, positional_weight_, {}, 1, 1, 1, channels)
                          : at::conv3d(x, positional_weight_, {}, 1, 1, 1, channels);
  auto features = x + pos;
  const auto shape = features.sizes().vec();
  auto tokens = features.flatten(2).transpose(1, 2);
  for (auto& block : blocks_) tokens = block->forward(tokens, mode);
  return tokens.transpose(1, 2).reshape(shape);
}

torch::Tensor resize_by(const torch::Tensor& x, double factor) {
  const bool is3d = x.dim() == 5;
  std::vector<std::int64_t> size;
  for (std::int64_t d = 2; d < x.dim(); ++d) {
    size.push_back(std::max<std::int64_t>(1, std::llround(static_cast<double>(x.size(d)) * factor)));
  }
  auto opts = F::InterpolateFuncOptions().size(size).align_corners(false);
  if (is3d) opts.mode(torch::kTrilinear);
  else opts.mode(torch::kBilinear);
  return F::interpolate(x, opts);
}

std::int64_t fit_heads(std::int64_t channels, std::int64_t heads) {
  for (std::int64_t h = std::max<std::int64_t>(heads, 1); h > 1; --h) {
    if (channels % h == 0) return h;
  }
  return 1;
}

}  // namespace xmodseg::nets
