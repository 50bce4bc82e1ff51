#include "xmodseg/nets/translation_net.hpp"

#include "xmodseg/error.hpp"

namespace xmodseg::nets {

std::vector<LevelSpec> GeneratorConfig::encoder_levels() const {
  std::vector<LevelSpec> levels;
  levels.push_back({base_channels, 1, 0, 0});
  for (int i = 1; i <= depth; ++i) {
    LevelSpec l{base_channels << i, 2, 0, 0};
    if (i == depth && attention_layers > 0) {
      l.convs = 1;
      l.blocks = attention_layers;
      l.heads = heads;
    }
    levels.push_back(l);
  }
  if (depth == 0 && attention_layers > 0) {
    levels.back().blocks = attention_layers;
    levels.back().heads = heads;
  }
  return levels;
}

void GeneratorConfig::validate() const {
  if (identity_toy) return;
  if (base_channels < 1) throw ValidationError("generator.base_channels", "must be >= 1");
  if (depth < 0) throw ValidationError("generator.depth", "must be >= 0");
  if (input_size < 1) throw ValidationError("generator.input_size", "must be >= 1");
  const std::int64_t factor = std::int64_t{1} << depth;
  if (input_size % factor != 0) {
    throw ValidationError("generator.input_size",
                          std::to_string(input_size) + " is not divisible by the downsampling factor " +
                              std::to_string(factor));
  }
  if (attention_layers > 0) {
    const auto bottleneck = base_channels << depth;
    if (heads < 1 || bottleneck % heads != 0) {
      throw ValidationError("generator.heads", "must divide the bottleneck width " +
                                                   std::to_string(bottleneck));
    }
  }
}

void to_json(nlohmann::json& j, const GeneratorConfig& c) {
  j = nlohmann::json{{"base_channels", c.base_channels}, {"depth", c.depth},
                     {"attention_layers", c.attention_layers}, {"heads", c.heads},
                     {"mlp_ratio", c.mlp_ratio}, {"input_size", c.input_size},
                     {"identity_toy", c.identity_toy}};
}

void from_json(const nlohmann::json& j, GeneratorConfig& c) {
  c = GeneratorConfig{};
  for (const auto& [key, value] : j.items()) {
    if (key == "base_channels") c.base_channels = value.get<std::int64_t>();
    else if (key == "depth") c.depth = value.get<int>();
    else if (key == "attention_layers") c.attention_layers = value.get<int>();
    else if (key == "heads") c.heads = value.get<std::int64_t>();
    else if (key == "mlp_ratio") c.mlp_ratio = value.get<std::int64_t>();
    else if (key == "input_size") c.input_size = value.get<std::int64_t>();
    else if (key == "identity_toy") c.identity_toy = value.get<bool>();
    else throw ValidationError("generator." + key, "unknown key");
  }
}

TranslationGeneratorImpl::TranslationGeneratorImpl(GeneratorConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  if (cfg_.identity_toy) {
    toy_encoder_ = register_module("toy_encoder", ConvNd(ConvOptions{.spatial_dims = 2, .kernel = 1}));
    toy_segmentation_ = register_module("toy_segmentation", ConvNd(ConvOptions{.spatial_dims = 2, .kernel = 1}));
    torch::NoGradGuard no_grad;
    toy_encoder_->weight.fill_(1.0);
    toy_encoder_->bias.zero_();
    return;
  }
  const auto levels = cfg_.encoder_levels();
  encoder_ = register_module("encoder", Encoder(2, 1, levels, NormKind::kInstance, cfg_.mlp_ratio));
  std::vector<LevelSpec> dec;
  for (int i = static_cast<int>(levels.size()) - 2; i >= 0; --i) {
    dec.push_back({levels[static_cast<std::size_t>(i)].channels, 2, 0, 0});
  }
  DecoderOptions opts{.spatial_dims = 2, .encoder_levels = levels, .levels = dec,
                      .norm = NormKind::kInstance, .mlp_ratio = cfg_.mlp_ratio};
  opts.activation = OutputActivation::kTanh;
  translation_decoder_ = register_module("translation_decoder", Decoder(opts));
  opts.activation = OutputActivation::kSigmoid;
  segmentation_decoder_ = register_module("segmentation_decoder", Decoder(opts));
}

EncodedFeatures TranslationGeneratorImpl::encode(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != 1) throw ShapeError("generator expects (batch, 1, H, W) input");
  if (cfg_.identity_toy) return {{toy_encoder_->forward(x)}};
  return encoder_->forward(x);
}

torch::Tensor TranslationGeneratorImpl::translate(const EncodedFeatures& f) {
  if (cfg_.identity_toy) return f.bottleneck();
  return translation_decoder_->forward(f.bottleneck(), f.levels);
}

torch::Tensor TranslationGeneratorImpl::segment(const EncodedFeatures& f) {
  if (cfg_.identity_toy) return torch::sigmoid(toy_segmentation_->forward(f.bottleneck()));
  return segmentation_decoder_->forward(f.bottleneck(), f.levels);
}

GeneratorOutput TranslationGeneratorImpl::forward(const torch::Tensor& x) {
  auto f = encode(x);
  return {translate(f), segment(f)};
}

TranslationGenerator build_translation_generator(const GeneratorConfig& cfg) {
  return TranslationGenerator(cfg);
}

void to_json(nlohmann::json& j, const TranslationModelConfig& c) {
  j = nlohmann::json{{"generator", c.generator}, {"discriminator", c.discriminator}};
}

void from_json(const nlohmann::json& j, TranslationModelConfig& c) {
  c = TranslationModelConfig{};
  for (const auto& [key, value] : j.items()) {
    if (key == "generator") c.generator = value.get<GeneratorConfig>();
    else if (key == "discriminator") c.discriminator = value.get<DiscriminatorConfig>();
    else throw ValidationError("translation_model." + key, "unknown key");
  }
}

TranslationModelImpl::TranslationModelImpl(TranslationModelConfig cfg) : cfg_(std::move(cfg)) {
  source_to_target = register_module("source_to_target", TranslationGenerator(cfg_.generator));
  target_to_source = register_module("target_to_source", TranslationGenerator(cfg_.generator));
  disc_source = register_module("disc_source", MultiScaleDiscriminator(cfg_.discriminator));
  disc_target = register_module("disc_target", MultiScaleDiscriminator(cfg_.discriminator));
}

std::vector<torch::Tensor> TranslationModelImpl::generator_parameters() const {
  auto out = source_to_target->parameters();
  auto other = target_to_source->parameters();
  out.insert(out.end(), other.begin(), other.end());
  return out;
}

std::vector<torch::Tensor> TranslationModelImpl::discriminator_parameters() const {
  auto out = disc_source->parameters();
  auto other = disc_target->parameters();
  out.insert(out.end(), other.begin(), other.end());
  return out;
}

}  // namespace xmodseg::nets
