#include "xmodseg/nets/segmentation_net.hpp"

#include <cmath>
#include <unordered_set>

#include "xmodseg/error.hpp"

namespace xmodseg::nets {

namespace {

std::vector<LevelSpec> large_encoder() {
  return {{32, 1, 0, 0}, {64, 2, 0, 0}, {128, 0, 2, 2}, {256, 0, 4, 8}, {320, 0, 6, 10}};
}
std::vector<LevelSpec> large_decoder() {
  return {{256, 0, 4, 8}, {128, 0, 2, 4}, {64, 2, 0, 0}, {32, 2, 0, 0}};
}
std::vector<LevelSpec> small_encoder() {
  return {{16, 1, 0, 0}, {32, 2, 0, 0}, {64, 0, 2, 2}, {128, 0, 4, 8}, {256, 0, 6, 10}};
}
std::vector<LevelSpec> small_decoder() {
  return {{128, 0, 4, 8}, {64, 0, 2, 4}, {32, 2, 0, 0}, {16, 2, 0, 0}};
}

NormKind norm_from_string(const std::string& s) {
  if (s == "instance") return NormKind::kInstance;
  if (s == "layer") return NormKind::kLayer;
  throw ValidationError("segmentation_net.norm", "unknown normalization '" + s + "'");
}

std::string norm_to_string(NormKind k) { return k == NormKind::kLayer ? "layer" : "instance"; }

void append(std::vector<torch::Tensor>& out, const std::vector<torch::Tensor>& more) {
  out.insert(out.end(), more.begin(), more.end());
}

}  // namespace

SegmentationNetConfig SegmentationNetConfig::paper_default(SegmentationVariant variant) {
  SegmentationNetConfig c;
  c.variant = variant;
  const bool self = variant == SegmentationVariant::kSelfSupervised;
  c.encoder = self ? large_encoder() : small_encoder();
  c.decoder = self ? large_decoder() : small_decoder();
  // 10 heads do not divide 256 channels.
  for (auto& l : c.encoder) {
    if (l.blocks > 0) l.heads = fit_heads(l.channels, l.heads);
  }
  c.discriminator.spatial_dims = 3;
  c.discriminator.num_downsamples = 3;
  c.discriminator.input_size = {c.input_dims.depth, c.input_dims.height, c.input_dims.width};
  return c;
}

SegmentationNetConfig SegmentationNetConfig::scaled(double width_multiplier) const {
  if (!(width_multiplier > 0.0)) {
    throw ValidationError("segmentation_net.width_multiplier", "must be > 0");
  }
  auto c = *this;
  c.encoder = scale_levels(encoder, width_multiplier);
  c.decoder = scale_levels(decoder, width_multiplier);
  return c;
}

std::int64_t SegmentationNetConfig::common_channels() const {
  return std::llround(common_ratio * static_cast<double>(bottleneck_channels()));
}

void SegmentationNetConfig::validate() const {
  if (encoder.empty()) throw ValidationError("segmentation_net.encoder", "must not be empty");
  if (decoder.size() + 1 != encoder.size()) {
    throw ValidationError("segmentation_net.decoder",
                          "expected " + std::to_string(encoder.size() - 1) +
                              " levels for a " + std::to_string(encoder.size()) + "-level encoder");
  }
  if (mlp_ratio < 1) throw ValidationError("segmentation_net.mlp_ratio", "must be >= 1");
  const std::int64_t factor = std::int64_t{1} << (encoder.size() - 1);
  for (int a = 0; a < 3; ++a) {
    const auto extent = input_dims[a];
    if (extent < 1 || extent % factor != 0) {
      throw ValidationError("segmentation_net.input_dims",
                            "extent " + std::to_string(extent) +
                                " is not divisible by the downsampling factor " +
                                std::to_string(factor));
    }
  }
  if (variant == SegmentationVariant::kSemiSupervised) {
    if (!(common_ratio > 0.0 && common_ratio < 1.0)) {
      throw ValidationError("segmentation_net.common_ratio", "must lie in (0, 1)");
    }
    const auto c = common_channels();
    if (c < 1 || c >= bottleneck_channels()) {
      throw ValidationError("segmentation_net.common_ratio",
                            "bottleneck of " + std::to_string(bottleneck_channels()) +
                                " channels leaves an empty common or unique code");
    }
    if (discriminator.spatial_dims != 3 || discriminator.in_channels != 1) {
      throw ValidationError("segmentation_net.discriminator", "must be a 3D single-channel model");
    }
    discriminator.validate();
  }
}

void to_json(nlohmann::json& j, const SegmentationNetConfig& c) {
  j = nlohmann::json{{"variant", to_string(c.variant)},
                     {"encoder", c.encoder},
                     {"decoder", c.decoder},
                     {"common_ratio", c.common_ratio},
                     {"mlp_ratio", c.mlp_ratio},
                     {"norm", norm_to_string(c.norm)},
                     {"input_dims", {c.input_dims.depth, c.input_dims.height, c.input_dims.width}},
                     {"share_decoder", c.share_decoder},
                     {"discriminator", c.discriminator}};
}

void from_json(const nlohmann::json& j, SegmentationNetConfig& c) {
  SegmentationVariant variant = SegmentationVariant::kSemiSupervised;
  if (j.contains("variant")) variant = segmentation_variant_from_string(j.at("variant").get<std::string>());
  c = SegmentationNetConfig::paper_default(variant);
  for (const auto& [key, value] : j.items()) {
    if (key == "variant") continue;
    if (key == "encoder") c.encoder = value.get<std::vector<LevelSpec>>();
    else if (key == "decoder") c.decoder = value.get<std::vector<LevelSpec>>();
    else if (key == "common_ratio") c.common_ratio = value.get<double>();
    else if (key == "mlp_ratio") c.mlp_ratio = value.get<std::int64_t>();
    else if (key == "norm") c.norm = norm_from_string(value.get<std::string>());
    else if (key == "input_dims") {
      const auto d = value.get<std::vector<std::int64_t>>();
      if (d.size() != 3) throw ValidationError("segmentation_net.input_dims", "needs 3 entries");
      c.input_dims = {d[0], d[1], d[2]};
    } else if (key == "share_decoder") c.share_decoder = value.get<bool>();
    else if (key == "discriminator") c.discriminator = value.get<DiscriminatorConfig>();
    else throw ValidationError("segmentation_net." + key, "unknown key");
  }
}

SegmentationNetImpl::SegmentationNetImpl(SegmentationNetConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  encoder_ = register_module("encoder", Encoder(3, 1, cfg_.encoder, cfg_.norm, cfg_.mlp_ratio));
  DecoderOptions opts{.spatial_dims = 3, .encoder_levels = cfg_.encoder, .levels = cfg_.decoder,
                      .norm = cfg_.norm, .mlp_ratio = cfg_.mlp_ratio};
  if (!has_translation()) {
    opts.activation = OutputActivation::kSigmoid;
    segmentation_decoder_ = register_module("segmentation_decoder", Decoder(opts));
    return;
  }
  auto common = opts;
  common.input_channels = cfg_.common_channels();
  common.activation = OutputActivation::kTanh;
  common_decoder_ = register_module("common_decoder", Decoder(common));
  if (cfg_.share_decoder) {
    auto shared = opts;
    shared.dual = true;
    residual_decoder_ = register_module("shared_decoder", Decoder(shared));
    segmentation_decoder_ = residual_decoder_;
  } else {
    auto res = opts;
    res.activation = OutputActivation::kTanh;
    residual_decoder_ = register_module("residual_decoder", Decoder(res));
    auto seg = opts;
    seg.activation = OutputActivation::kSigmoid;
    segmentation_decoder_ = register_module("segmentation_decoder", Decoder(seg));
  }
  disc_absent_ = register_module("disc_absent", MultiScaleDiscriminator(cfg_.discriminator));
  disc_present_ = register_module("disc_present", MultiScaleDiscriminator(cfg_.discriminator));
}

EncodedFeatures SegmentationNetImpl::encode(const torch::Tensor& x) {
  if (x.dim() != 5 || x.size(1) != 1) throw ShapeError("segmentation model expects (batch, 1, D, H, W)");
  return encoder_->forward(x);
}

LatentCode SegmentationNetImpl::encode_partition(const torch::Tensor& x) {
  auto f = encode(x);
  const auto& z = f.bottleneck();
  const auto c = has_translation() ? cfg_.common_channels() : z.size(1);
  LatentCode out;
  out.c = z.narrow(1, 0, c);
  out.u = z.narrow(1, c, z.size(1) - c);
  out.skips = std::move(f.levels);
  return out;
}

torch::Tensor SegmentationNetImpl::decode_common(const torch::Tensor& c,
                                                 const std::vector<torch::Tensor>& skips) {
  if (!common_decoder_) throw ValidationError("segmentation_net.variant", "model has no common decoder");
  return common_decoder_->forward(c, skips);
}

torch::Tensor SegmentationNetImpl::decode_residual(const torch::Tensor& c, const torch::Tensor& u,
                                                   const std::vector<torch::Tensor>& skips) {
  if (!residual_decoder_) throw ValidationError("segmentation_net.variant", "model has no residual decoder");
  return residual_decoder_->forward(torch::cat({c, u}, 1), skips, DecoderMode::kResidual);
}

torch::Tensor SegmentationNetImpl::decode_segmentation(const torch::Tensor& c, const torch::Tensor& u,
                                                       const std::vector<torch::Tensor>& skips) {
  auto z = u.defined() && u.size(1) > 0 ? torch::cat({c, u}, 1) : c;
  return segmentation_decoder_->forward(z, skips, DecoderMode::kSegmentation);
}

torch::Tensor SegmentationNetImpl::segment(const torch::Tensor& x) {
  auto f = encode(x);
  return segmentation_decoder_->forward(f.bottleneck(), f.levels, DecoderMode::kSegmentation);
}

std::vector<torch::Tensor> SegmentationNetImpl::generator_parameters() const {
  std::vector<torch::Tensor> out = encoder_->parameters();
  if (common_decoder_) append(out, common_decoder_->parameters());
  if (residual_decoder_ && residual_decoder_.get() != segmentation_decoder_.get()) {
    append(out, residual_decoder_->parameters());
  }
  append(out, segmentation_decoder_->parameters());
  return out;
}

std::vector<torch::Tensor> SegmentationNetImpl::discriminator_parameters() const {
  std::vector<torch::Tensor> out;
  if (disc_absent_) append(out, disc_absent_->parameters());
  if (disc_present_) append(out, disc_present_->parameters());
  return out;
}

std::vector<torch::Tensor> SegmentationNetImpl::residual_path_parameters() const {
  if (!residual_decoder_) return {};
  return residual_decoder_->parameters_for(DecoderMode::kResidual);
}

std::vector<torch::Tensor> SegmentationNetImpl::segmentation_path_parameters() const {
  return segmentation_decoder_->parameters_for(DecoderMode::kSegmentation);
}

SegmentationNet build_segmentation_model(const SegmentationNetConfig& cfg) {
  return SegmentationNet(cfg);
}

PresenceToAbsence presence_to_absence(SegmentationNetImpl& model, const torch::Tensor& x_p) {
  PresenceToAbsence out;
  out.codes = model.encode_partition(x_p);
  out.x_pa = model.decode_common(out.codes.c, out.codes.skips);
  auto residual = model.decode_residual(out.codes.c, out.codes.u, out.codes.skips);
  out.x_pp = out.x_pa + residual;
  out.delta_pp = out.x_pp - out.x_pa;
  return out;
}

AbsenceToPresence absence_to_presence(SegmentationNetImpl& model, const torch::Tensor& x_a,
                                      const torch::Tensor& u_sample) {
  AbsenceToPresence out;
  out.codes = model.encode_partition(x_a);
  if (!u_sample.defined() || u_sample.sizes() != out.codes.u.sizes()) {
    throw ShapeError("u_sample must match the unique-code shape " +
                     std::string(c10::str(out.codes.u.sizes())));
  }
  out.x_aa = model.decode_common(out.codes.c, out.codes.skips);
  auto residual = model.decode_residual(out.codes.c, u_sample, out.codes.skips);
  out.x_ap = out.x_aa + residual;
  out.delta_ap = out.x_ap - out.x_aa;
  return out;
}

std::int64_t count_parameters(const std::vector<torch::Tensor>& params) {
  std::int64_t n = 0;
  for (const auto& p : params) n += p.numel();
  return n;
}

SharingAudit audit_parameter_sharing(const SegmentationNetImpl& model) {
  SharingAudit a;
  const auto res = model.residual_path_parameters();
  const auto seg = model.segmentation_path_parameters();
  if (res.empty()) return a;
  std::unordered_set<const void*> res_set;
  for (const auto& p : res) res_set.insert(p.unsafeGetTensorImpl());
  std::unordered_set<const void*> seg_set;
  for (const auto& p : seg) seg_set.insert(p.unsafeGetTensorImpl());
  for (const auto* p : res_set) {
    if (seg_set.count(p)) ++a.shared;
    else ++a.residual_only;
  }
  for (const auto* p : seg_set) {
    if (!res_set.count(p)) ++a.segmentation_only;
  }
  const auto dec = model.residual_decoder();
  a.body = dec->body_parameters().size();

  // Expected disjoint remainder: each dual norm's affine pair plus one head.
  std::size_t dual_norms = 0;
  for (const auto& m : dec->modules(false)) {
    if (auto* n = dynamic_cast<ModeNormImpl*>(m.get()); n != nullptr && n->dual()) ++dual_norms;
  }
  const auto head_params = dec->head(DecoderMode::kResidual)->parameters().size();
  const auto expected = dual_norms * 2 + head_params;
  a.passed = dec.get() == model.segmentation_decoder().get() && a.shared == a.body &&
             a.residual_only == expected && a.segmentation_only == expected;
  return a;
}

}  // namespace xmodseg::nets
