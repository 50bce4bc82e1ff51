#pragma once

#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "xmodseg/nets/layers.hpp"

namespace xmodseg::nets {

/// Multi-scale patch discriminator. Each scale is an independent network
/// C(k4,s1) -> [LN, LeakyReLU(0.2), C(k4,s2)] x downsamples -> C(1x1) fed
/// with the input average-pooled 2^scale times. Channel widths follow
/// 60, 60, 120, 240, 480 multiplied by `width_scale`.
struct DiscriminatorConfig {
  int spatial_dims = 2;
  std::int64_t in_channels = 1;
  double width_scale = 1.0;
  int num_scales = 2;
  int num_downsamples = 4;
  /// Input extent per spatial dim (2 or 3 entries).
  std::vector<std::int64_t> input_size{32, 32};
  double leaky_slope = 0.2;

  std::vector<std::int64_t> channel_schedule() const;
  /// Throws when the input collapses below one pixel at some scale.
  void validate() const;
};

void to_json(nlohmann::json& j, const DiscriminatorConfig& c);
void from_json(const nlohmann::json& j, DiscriminatorConfig& c);

struct DiscriminatorOutput {
  /// Score map per scale, finest first.
  std::vector<torch::Tensor> maps;
  /// Per-sample average of the per-scale mean scores, shape (batch).
  torch::Tensor score;
};

class PatchDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit PatchDiscriminatorImpl(const DiscriminatorConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  std::vector<ConvNd> convs_;
  std::vector<ModeNorm> norms_;
  double slope_;
};
TORCH_MODULE(PatchDiscriminator);

class MultiScaleDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit MultiScaleDiscriminatorImpl(DiscriminatorConfig cfg);
  DiscriminatorOutput forward(const torch::Tensor& x);
  const DiscriminatorConfig& config() const { return cfg_; }

 private:
  DiscriminatorConfig cfg_;
  std::vector<PatchDiscriminator> scales_;
};
TORCH_MODULE(MultiScaleDiscriminator);

MultiScaleDiscriminator build_discriminator(const DiscriminatorConfig& cfg);

/// Hinge discriminator loss averaged over scales.
torch::Tensor multiscale_discriminator_loss(const DiscriminatorOutput& real,
                                            const DiscriminatorOutput& fake);
/// Hinge generator loss averaged over scales.
torch::Tensor multiscale_generator_loss(const DiscriminatorOutput& fake);

}  // namespace xmodseg::nets
