#include "xmodseg/nets/unet.hpp"

#include <cmath>
#include <unordered_set>

#include "xmodseg/error.hpp"

namespace xmodseg::nets {

void to_json(nlohmann::json& j, const LevelSpec& s) {
  j = nlohmann::json{{"channels", s.channels}, {"convs", s.convs}, {"blocks", s.blocks},
                     {"heads", s.heads}};
}

void from_json(const nlohmann::json& j, LevelSpec& s) {
  s.channels = j.at("channels").get<std::int64_t>();
  s.convs = j.at("convs").get<int>();
  s.blocks = j.at("blocks").get<int>();
  s.heads = j.at("heads").get<std::int64_t>();
}

std::vector<LevelSpec> scale_levels(const std::vector<LevelSpec>& levels, double multiplier) {
  std::vector<LevelSpec> out = levels;
  for (auto& l : out) {
    l.channels = std::max<std::int64_t>(1, std::llround(static_cast<double>(l.channels) * multiplier));
    if (l.blocks > 0) l.heads = fit_heads(l.channels, l.heads);
  }
  return out;
}

namespace {

ConvOptions conv3(int dims, std::int64_t in, std::int64_t out) {
  return {.spatial_dims = dims, .in_channels = in, .out_channels = out, .kernel = 3,
          .stride = 1, .padding = 1};
}

ConvOptions conv1(int dims, std::int64_t in, std::int64_t out) {
  return {.spatial_dims = dims, .in_channels = in, .out_channels = out, .kernel = 1};
}

void check_level(const LevelSpec& l, const std::string& where) {
  if (l.channels < 1) throw ValidationError(where + ".channels", "must be >= 1");
  if (l.convs < 0 || l.blocks < 0) throw ValidationError(where, "negative block count");
  if (l.blocks > 0 && (l.heads < 1 || l.channels % l.heads != 0)) {
    throw ValidationError(where + ".heads", "must divide the channel count");
  }
}

}  // namespace

EncoderImpl::EncoderImpl(int spatial_dims, std::int64_t in_channels, std::vector<LevelSpec> levels,
                         NormKind norm, std::int64_t mlp_ratio)
    : levels_(std::move(levels)) {
  if (levels_.empty()) throw ValidationError("encoder", "needs at least one level");
  std::int64_t prev = in_channels;
  for (std::size_t i = 0; i < levels_.size(); ++i) {
    const auto& l = levels_[i];
    const std::string name = "level" + std::to_string(i);
    check_level(l, "encoder." + name);
    std::vector<ConvNormAct> convs;
    const int n = std::max(l.convs, 1);
    for (int c = 0; c < n; ++c) {
      convs.push_back(register_module(
          name + "_conv" + std::to_string(c),
          ConvNormAct(conv3(spatial_dims, c == 0 ? prev : l.channels, l.channels), norm, false)));
    }
    convs_.push_back(std::move(convs));
    transformers_.push_back(
        l.blocks > 0 ? register_module(name + "_attn",
                                       SpatialTransformer(spatial_dims, l.channels, l.blocks,
                                                          l.heads, mlp_ratio, false))
                     : SpatialTransformer(nullptr));
    prev = l.channels;
  }
}

std::int64_t EncoderImpl::downsampling_factor() const {
  return std::int64_t{1} << (levels_.size() - 1);
}

EncodedFeatures EncoderImpl::forward(const torch::Tensor& x) {
  EncodedFeatures out;
  auto h = x;
  const auto factor = downsampling_factor();
  for (int d = 2; d < x.dim(); ++d) {
    if (x.size(d) % factor != 0) {
      throw ShapeError("input extent " + std::to_string(x.size(d)) +
                       " is not divisible by the downsampling factor " + std::to_string(factor));
    }
  }
  for (std::size_t i = 0; i < levels_.size(); ++i) {
    if (i > 0) h = resize_by(h, 0.5);
    for (auto& c : convs_[i]) h = c->forward(h);
    if (transformers_[i]) h = transformers_[i]->forward(h);
    out.levels.push_back(h);
  }
  return out;
}

torch::Tensor apply_activation(const torch::Tensor& x, OutputActivation a) {
  switch (a) {
    case OutputActivation::kTanh:
      return torch::tanh(x);
    case OutputActivation::kSigmoid:
      return torch::sigmoid(x);
    default:
      return x;
  }
}

DecoderImpl::DecoderImpl(DecoderOptions options) : options_(std::move(options)) {
  const auto& enc = options_.encoder_levels;
  if (enc.empty()) throw ValidationError("decoder.encoder_levels", "must not be empty");
  if (options_.levels.size() + 1 != enc.size()) {
    throw ValidationError("decoder.levels", "expected " + std::to_string(enc.size() - 1) +
                                                " levels to mirror the encoder");
  }
  const int dims = options_.spatial_dims;
  const bool dual = options_.dual;
  const auto bottleneck = enc.back().channels;
  if (options_.input_channels == 0) options_.input_channels = bottleneck;
  if (options_.input_channels != bottleneck) {
    input_projection_ =
        register_module("input_projection", ConvNd(conv1(dims, options_.input_channels, bottleneck)));
  }
  std::int64_t prev = bottleneck;
  for (std::size_t j = 0; j < options_.levels.size(); ++j) {
    const auto& l = options_.levels[j];
    const auto skip_level = enc.size() - 2 - j;
    const std::string name = "level" + std::to_string(j);
    check_level(l, "decoder." + name);
    std::vector<ConvNormAct> convs;
    const int n = std::max(l.convs, 1);
    for (int c = 0; c < n; ++c) {
      const auto in = c == 0 ? prev + enc[skip_level].channels : l.channels;
      convs.push_back(register_module(name + "_conv" + std::to_string(c),
                                      ConvNormAct(conv3(dims, in, l.channels), options_.norm, dual)));
    }
    convs_.push_back(std::move(convs));
    transformers_.push_back(
        l.blocks > 0 ? register_module(name + "_attn",
                                       SpatialTransformer(dims, l.channels, l.blocks, l.heads,
                                                          options_.mlp_ratio, dual))
                     : SpatialTransformer(nullptr));
    prev = l.channels;
  }
  if (options_.levels.empty()) prev = bottleneck;
  if (dual) {
    head_res_ = register_module("head_res", ConvNd(conv1(dims, prev, options_.out_channels)));
    head_seg_ = register_module("head_seg", ConvNd(conv1(dims, prev, options_.out_channels)));
  } else if (options_.activation == OutputActivation::kTanh) {
    head_res_ = register_module("head", ConvNd(conv1(dims, prev, options_.out_channels)));
  } else {
    head_seg_ = register_module("head", ConvNd(conv1(dims, prev, options_.out_channels)));
  }
}

ConvNd DecoderImpl::head(DecoderMode mode) const {
  if (options_.dual) return mode == DecoderMode::kResidual ? head_res_ : head_seg_;
  return head_res_ ? head_res_ : head_seg_;
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& code, const std::vector<torch::Tensor>& skips,
                                   DecoderMode mode) {
  const auto& enc = options_.encoder_levels;
  if (skips.size() != enc.size()) {
    throw ShapeError("decoder expects " + std::to_string(enc.size()) + " encoder levels, got " +
                     std::to_string(skips.size()));
  }
  if (code.size(1) != options_.input_channels) {
    throw ShapeError("decoder input has " + std::to_string(code.size(1)) + " channels, expected " +
                     std::to_string(options_.input_channels));
  }
  auto h = input_projection_ ? input_projection_->forward(code) : code;
  for (std::size_t j = 0; j < options_.levels.size(); ++j) {
    h = torch::cat({resize_by(h, 2.0), skips[enc.size() - 2 - j]}, 1);
    for (auto& c : convs_[j]) h = c->forward(h, mode);
    if (transformers_[j]) h = transformers_[j]->forward(h, mode);
  }
  auto out = head(mode)->forward(h);
  OutputActivation act = options_.activation;
  if (options_.dual) {
    act = mode == DecoderMode::kResidual ? OutputActivation::kTanh : OutputActivation::kSigmoid;
  }
  return apply_activation(out, act);
}

namespace {

void append_unique(std::vector<torch::Tensor>& out, std::unordered_set<const void*>& seen,
                   const std::vector<torch::Tensor>& params) {
  for (const auto& p : params) {
    if (seen.insert(p.unsafeGetTensorImpl()).second) out.push_back(p);
  }
}

}  // namespace

std::vector<torch::Tensor> DecoderImpl::parameters_for(DecoderMode mode) const {
  std::vector<torch::Tensor> out;
  std::unordered_set<const void*> seen;
  const auto active_head = head(mode);
  for (const auto& m : modules(/*include_self=*/true)) {
    if (auto* norm = dynamic_cast<ModeNormImpl*>(m.get())) {
      append_unique(out, seen, norm->parameters_for(mode));
    } else if ((head_res_ && m.get() == head_res_.get()) || (head_seg_ && m.get() == head_seg_.get())) {
      if (m.get() == active_head.get()) append_unique(out, seen, m->parameters(false));
    } else {
      append_unique(out, seen, m->parameters(false));
    }
  }
  return out;
}

std::vector<torch::Tensor> DecoderImpl::body_parameters() const {
  std::vector<torch::Tensor> out;
  std::unordered_set<const void*> seen;
  for (const auto& m : modules(/*include_self=*/true)) {
    if (dynamic_cast<ModeNormImpl*>(m.get()) != nullptr) continue;
    if ((head_res_ && m.get() == head_res_.get()) || (head_seg_ && m.get() == head_seg_.get())) {
      continue;
    }
    append_unique(out, seen, m->parameters(false));
  }
  return out;
}

}  // namespace xmodseg::nets
