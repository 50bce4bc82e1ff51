#include "xmodseg/nets/discriminator.hpp"

#include <cmath>

#include "xmodseg/error.hpp"
#include "xmodseg/losses.hpp"

namespace xmodseg::nets {

namespace F = torch::nn::functional;

std::vector<std::int64_t> DiscriminatorConfig::channel_schedule() const {
  std::vector<std::int64_t> out;
  auto scaled = [&](double c) {
    return std::max<std::int64_t>(1, std::llround(c * width_scale));
  };
  out.push_back(scaled(60));
  for (int i = 0; i < num_downsamples; ++i) out.push_back(scaled(60.0 * std::pow(2.0, i)));
  out.push_back(1);
  return out;
}

void DiscriminatorConfig::validate() const {
  if (spatial_dims != 2 && spatial_dims != 3) {
    throw ValidationError("discriminator.spatial_dims", "must be 2 or 3");
  }
  if (static_cast<int>(input_size.size()) != spatial_dims) {
    throw ValidationError("discriminator.input_size", "needs one extent per spatial dim");
  }
  if (num_scales < 1) throw ValidationError("discriminator.num_scales", "must be >= 1");
  if (num_downsamples < 0) throw ValidationError("discriminator.num_downsamples", "must be >= 0");
  if (!(width_scale > 0.0)) throw ValidationError("discriminator.width_scale", "must be > 0");
  for (std::int64_t extent : input_size) {
    const std::int64_t at_coarsest = extent >> (num_scales - 1);
    if ((at_coarsest >> num_downsamples) < 1) {
      throw ValidationError("discriminator.input_size",
                            "input extent " + std::to_string(extent) +
                                " is smaller than the receptive field after downsampling at scale " +
                                std::to_string(num_scales - 1));
    }
  }
}

void to_json(nlohmann::json& j, const DiscriminatorConfig& c) {
  j = nlohmann::json{{"spatial_dims", c.spatial_dims},   {"in_channels", c.in_channels},
                     {"width_scale", c.width_scale},     {"num_scales", c.num_scales},
                     {"num_downsamples", c.num_downsamples}, {"input_size", c.input_size},
                     {"leaky_slope", c.leaky_slope}};
}

void from_json(const nlohmann::json& j, DiscriminatorConfig& c) {
  c = DiscriminatorConfig{};
  for (const auto& [key, value] : j.items()) {
    if (key == "spatial_dims") c.spatial_dims = value.get<int>();
    else if (key == "in_channels") c.in_channels = value.get<std::int64_t>();
    else if (key == "width_scale") c.width_scale = value.get<double>();
    else if (key == "num_scales") c.num_scales = value.get<int>();
    else if (key == "num_downsamples") c.num_downsamples = value.get<int>();
    else if (key == "input_size") c.input_size = value.get<std::vector<std::int64_t>>();
    else if (key == "leaky_slope") c.leaky_slope = value.get<double>();
    else throw ValidationError("discriminator." + key, "unknown key");
  }
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(const DiscriminatorConfig& cfg)
    : slope_(cfg.leaky_slope) {
  const auto channels = cfg.channel_schedule();
  const int dims = cfg.spatial_dims;
  convs_.push_back(register_module(
      "conv0", ConvNd(ConvOptions{.spatial_dims = dims, .in_channels = cfg.in_channels,
                       .out_channels = channels[0], .kernel = 4, .same_padding = true})));
  for (int i = 0; i < cfg.num_downsamples; ++i) {
    const auto in = channels[static_cast<std::size_t>(i)];
    const auto out = channels[static_cast<std::size_t>(i) + 1];
    norms_.push_back(register_module("norm" + std::to_string(i + 1),
                                     ModeNorm(NormKind::kLayer, in, false)));
    convs_.push_back(register_module(
        "conv" + std::to_string(i + 1),
        ConvNd(ConvOptions{.spatial_dims = dims, .in_channels = in, .out_channels = out, .kernel = 4,
                .stride = 2, .padding = 1})));
  }
  convs_.push_back(register_module(
      "conv_out", ConvNd(ConvOptions{.spatial_dims = dims,
                          .in_channels = channels[static_cast<std::size_t>(cfg.num_downsamples)],
                          .out_channels = 1, .kernel = 1})));
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& x) {
  auto h = convs_.front()->forward(x);
  for (std::size_t i = 0; i < norms_.size(); ++i) {
    h = F::leaky_relu(norms_[i]->forward(h), F::LeakyReLUFuncOptions().negative_slope(slope_));
    h = convs_[i + 1]->forward(h);
  }
  return convs_.back()->forward(h);
}

MultiScaleDiscriminatorImpl::MultiScaleDiscriminatorImpl(DiscriminatorConfig cfg)
    : cfg_(std::move(cfg)) {
  cfg_.validate();
  for (int s = 0; s < cfg_.num_scales; ++s) {
    scales_.push_back(register_module("scale" + std::to_string(s), PatchDiscriminator(cfg_)));
  }
}

DiscriminatorOutput MultiScaleDiscriminatorImpl::forward(const torch::Tensor& x) {
  if (x.dim() != cfg_.spatial_dims + 2) {
    throw ShapeError("discriminator expects " + std::to_string(cfg_.spatial_dims + 2) + "-d input");
  }
  DiscriminatorOutput out;
  auto h = x;
  torch::Tensor total;
  for (int s = 0; s < cfg_.num_scales; ++s) {
    if (s > 0) {
      h = cfg_.spatial_dims == 2 ? F::avg_pool2d(h, F::AvgPool2dFuncOptions(2))
                                 : F::avg_pool3d(h, F::AvgPool3dFuncOptions(2));
    }
    auto map = scales_[static_cast<std::size_t>(s)]->forward(h);
    auto per_sample = map.flatten(1).mean(1);
    total = total.defined() ? total + per_sample : per_sample;
    out.maps.push_back(std::move(map));
  }
  out.score = total / static_cast<double>(cfg_.num_scales);
  return out;
}

MultiScaleDiscriminator build_discriminator(const DiscriminatorConfig& cfg) {
  return MultiScaleDiscriminator(cfg);
}

torch::Tensor multiscale_discriminator_loss(const DiscriminatorOutput& real,
                                            const DiscriminatorOutput& fake) {
  if (real.maps.size() != fake.maps.size() || real.maps.empty()) {
    throw ShapeError("real and fake discriminator outputs disagree on scale count");
  }
  torch::Tensor total;
  for (std::size_t s = 0; s < real.maps.size(); ++s) {
    auto l = hinge_discriminator_loss(real.maps[s], fake.maps[s]);
    total = total.defined() ? total + l : l;
  }
  return total / static_cast<double>(real.maps.size());
}

torch::Tensor multiscale_generator_loss(const DiscriminatorOutput& fake) {
  if (fake.maps.empty()) throw ShapeError("discriminator output has no scales");
  torch::Tensor total;
  for (const auto& m : fake.maps) {
    auto l = hinge_generator_loss(m);
    total = total.defined() ? total + l : l;
  }
  return total / static_cast<double>(fake.maps.size());
}

}  // namespace xmodseg::nets
