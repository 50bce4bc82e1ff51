#pragma once

#include <optional>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "xmodseg/losses.hpp"
#include "xmodseg/nets/discriminator.hpp"
#include "xmodseg/nets/unet.hpp"
#include "xmodseg/volume.hpp"

namespace xmodseg::nets {

struct SegmentationNetConfig {
  SegmentationVariant variant = SegmentationVariant::kSemiSupervised;
  /// Encoder levels, full resolution first.
  std::vector<LevelSpec> encoder;
  /// Decoder levels, deepest first (one fewer than the encoder).
  std::vector<LevelSpec> decoder;
  /// Fraction of bottleneck channels forming the common code c.
  double common_ratio = 0.75;
  std::int64_t mlp_ratio = 2;
  NormKind norm = NormKind::kInstance;
  /// Patch extent (D, H, W) the model is trained on.
  Dims input_dims{16, 32, 16};
  /// false builds separate residual and segmentation decoders (ablation).
  bool share_decoder = true;
  DiscriminatorConfig discriminator;

  /// Channel/attention schedules of the 3D encoder-decoder. The large
  /// schedule (32..320 channels) is the one used without the translation
  /// decoders; the semi-supervised model uses the small one (16..256).
  static SegmentationNetConfig paper_default(SegmentationVariant variant);
  SegmentationNetConfig scaled(double width_multiplier) const;

  std::int64_t bottleneck_channels() const { return encoder.back().channels; }
  std::int64_t common_channels() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const SegmentationNetConfig& c);
void from_json(const nlohmann::json& j, SegmentationNetConfig& c);

/// Encoder output split channel-wise into a common code c and a unique code u.
struct LatentCode {
  torch::Tensor c;
  torch::Tensor u;
  std::vector<torch::Tensor> skips;
};

class SegmentationNetImpl : public torch::nn::Module {
 public:
  explicit SegmentationNetImpl(SegmentationNetConfig cfg);

  EncodedFeatures encode(const torch::Tensor& x);
  LatentCode encode_partition(const torch::Tensor& x);

  /// G_com(c): healthy-looking image.
  torch::Tensor decode_common(const torch::Tensor& c, const std::vector<torch::Tensor>& skips);
  /// G_res(c, u): additive residual (tanh).
  torch::Tensor decode_residual(const torch::Tensor& c, const torch::Tensor& u,
                                const std::vector<torch::Tensor>& skips);
  /// G_seg(c, u): tumor probability (sigmoid).
  torch::Tensor decode_segmentation(const torch::Tensor& c, const torch::Tensor& u,
                                    const std::vector<torch::Tensor>& skips);
  /// G_seg o E.
  torch::Tensor segment(const torch::Tensor& x);

  bool has_translation() const { return variant() == SegmentationVariant::kSemiSupervised; }
  SegmentationVariant variant() const { return cfg_.variant; }
  const SegmentationNetConfig& config() const { return cfg_; }

  Encoder encoder() const { return encoder_; }
  Decoder common_decoder() const { return common_decoder_; }
  /// The residual decoder; identical object to segmentation_decoder() when shared.
  Decoder residual_decoder() const { return residual_decoder_; }
  Decoder segmentation_decoder() const { return segmentation_decoder_; }
  MultiScaleDiscriminator disc_absent() const { return disc_absent_; }
  MultiScaleDiscriminator disc_present() const { return disc_present_; }

  std::vector<torch::Tensor> generator_parameters() const;
  std::vector<torch::Tensor> discriminator_parameters() const;

  /// Parameters the residual path (G_res) and the segmentation path (G_seg)
  /// read, excluding the encoder.
  std::vector<torch::Tensor> residual_path_parameters() const;
  std::vector<torch::Tensor> segmentation_path_parameters() const;

 private:
  SegmentationNetConfig cfg_;
  Encoder encoder_{nullptr};
  Decoder common_decoder_{nullptr};
  Decoder residual_decoder_{nullptr};
  Decoder segmentation_decoder_{nullptr};
  MultiScaleDiscriminator disc_absent_{nullptr};
  MultiScaleDiscriminator disc_present_{nullptr};
};
TORCH_MODULE(SegmentationNet);

SegmentationNet build_segmentation_model(const SegmentationNetConfig& cfg);

struct PresenceToAbsence {
  torch::Tensor x_pa;
  /// X_PP - X_PA as stored; the decoder residual up to the rounding of the sum.
  torch::Tensor delta_pp;
  torch::Tensor x_pp;
  LatentCode codes;
};

/// X_PA = G_com(c_P), X_PP = X_PA + G_res(c_P, u_P).
PresenceToAbsence presence_to_absence(SegmentationNetImpl& model, const torch::Tensor& x_p);

struct AbsenceToPresence {
  torch::Tensor x_aa;
  torch::Tensor delta_ap;
  torch::Tensor x_ap;
  LatentCode codes;
};

/// X_AA = G_com(c_A), X_AP = X_AA + G_res(c_A, u_sample).
AbsenceToPresence absence_to_presence(SegmentationNetImpl& model, const torch::Tensor& x_a,
                                      const torch::Tensor& u_sample);

/// Outcome of comparing the parameter sets of the residual and segmentation
/// paths.
struct SharingAudit {
  std::size_t shared = 0;
  std::size_t body = 0;
  std::size_t residual_only = 0;
  std::size_t segmentation_only = 0;
  /// shared == body, and the disjoint remainder is exactly the two norm sets
  /// plus the two heads.
  bool passed = false;
};

SharingAudit audit_parameter_sharing(const SegmentationNetImpl& model);

std::int64_t count_parameters(const std::vector<torch::Tensor>& params);

}  // namespace xmodseg::nets
