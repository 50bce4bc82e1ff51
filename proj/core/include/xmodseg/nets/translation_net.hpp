#pragma once

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "xmodseg/nets/discriminator.hpp"
#include "xmodseg/nets/unet.hpp"

namespace xmodseg::nets {

/// 2D hybrid convolution/attention U-net with one encoder and two decoders
/// (tanh translation head, sigmoid segmentation head) sharing its skips.
struct GeneratorConfig {
  std::int64_t base_channels = 16;
  /// Number of 2x downsamplings.
  int depth = 3;
  /// Transformer blocks at the bottleneck.
  int attention_layers = 2;
  std::int64_t heads = 4;
  std::int64_t mlp_ratio = 2;
  std::int64_t input_size = 64;
  /// Single 1x1 identity-initialized conv encoder with identity translation
  /// head; composition is exactly the identity. Test fixture only.
  bool identity_toy = false;

  std::vector<LevelSpec> encoder_levels() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const GeneratorConfig& c);
void from_json(const nlohmann::json& j, GeneratorConfig& c);

struct GeneratorOutput {
  torch::Tensor translation;
  torch::Tensor segmentation;
};

class TranslationGeneratorImpl : public torch::nn::Module {
 public:
  explicit TranslationGeneratorImpl(GeneratorConfig cfg);

  EncodedFeatures encode(const torch::Tensor& x);
  torch::Tensor translate(const EncodedFeatures& f);
  torch::Tensor segment(const EncodedFeatures& f);
  GeneratorOutput forward(const torch::Tensor& x);

  const GeneratorConfig& config() const { return cfg_; }
  Encoder encoder() const { return encoder_; }
  Decoder translation_decoder() const { return translation_decoder_; }
  Decoder segmentation_decoder() const { return segmentation_decoder_; }

 private:
  GeneratorConfig cfg_;
  Encoder encoder_{nullptr};
  Decoder translation_decoder_{nullptr};
  Decoder segmentation_decoder_{nullptr};
  ConvNd toy_encoder_{nullptr};
  ConvNd toy_segmentation_{nullptr};
};
TORCH_MODULE(TranslationGenerator);

TranslationGenerator build_translation_generator(const GeneratorConfig& cfg);

struct TranslationModelConfig {
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
};

void to_json(nlohmann::json& j, const TranslationModelConfig& c);
void from_json(const nlohmann::json& j, TranslationModelConfig& c);

/// Both cycle directions: `source_to_target` holds E_S with decoders G_T and
/// G_seg^S; `target_to_source` holds E_T with G_S and G_seg^T. D_S judges
/// source-modality images, D_T target-modality images.
class TranslationModelImpl : public torch::nn::Module {
 public:
  explicit TranslationModelImpl(TranslationModelConfig cfg);

  TranslationGenerator source_to_target{nullptr};
  TranslationGenerator target_to_source{nullptr};
  MultiScaleDiscriminator disc_source{nullptr};
  MultiScaleDiscriminator disc_target{nullptr};

  std::vector<torch::Tensor> generator_parameters() const;
  std::vector<torch::Tensor> discriminator_parameters() const;
  const TranslationModelConfig& config() const { return cfg_; }

 private:
  TranslationModelConfig cfg_;
};
TORCH_MODULE(TranslationModel);

}  // namespace xmodseg::nets
