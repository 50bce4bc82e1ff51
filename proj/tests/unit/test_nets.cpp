#include <gtest/gtest.h>

#include <unordered_set>

#include "xmodseg/error.hpp"
#include "xmodseg/nets/attention.hpp"
#include "xmodseg/nets/checkpoint.hpp"
#include "xmodseg/nets/discriminator.hpp"
#include "xmodseg/nets/segmentation_net.hpp"
#include "xmodseg/nets/translation_net.hpp"

using namespace xmodseg;
using namespace xmodseg::nets;

namespace {

SegmentationNetConfig tiny_seg(SegmentationVariant v) {
  SegmentationNetConfig c;
  c.variant = v;
  c.encoder = {{4, 1, 0, 0}, {8, 1, 0, 0}, {16, 0, 1, 2}};
  c.decoder = {{8, 0, 1, 2}, {4, 1, 0, 0}};
  c.input_dims = {8, 8, 8};
  c.discriminator.spatial_dims = 3;
  c.discriminator.width_scale = 0.1;
  c.discriminator.num_scales = 2;
  c.discriminator.num_downsamples = 2;
  c.discriminator.input_size = {8, 8, 8};
  return c;
}

std::unordered_set<const void*> ids(const std::vector<torch::Tensor>& ps) {
  std::unordered_set<const void*> s;
  for (const auto& p : ps) s.insert(p.unsafeGetTensorImpl());
  return s;
}

}  // namespace

TEST(TranslationGenerator, OutputsKeepSpatialDims) {
  torch::manual_seed(0);
  GeneratorConfig cfg;
  cfg.depth = 3;
  cfg.base_channels = 16;
  cfg.input_size = 64;
  auto g = build_translation_generator(cfg);
  auto out = g->forward(torch::randn({2, 1, 64, 64}));
  EXPECT_EQ(out.translation.sizes(), (std::vector<std::int64_t>{2, 1, 64, 64}));
  EXPECT_EQ(out.segmentation.sizes(), (std::vector<std::int64_t>{2, 1, 64, 64}));
  EXPECT_LT(out.translation.abs().max().item<double>(), 1.0);
  EXPECT_GT(out.segmentation.min().item<double>(), 0.0);
  EXPECT_LT(out.segmentation.max().item<double>(), 1.0);
}

TEST(TranslationGenerator, RejectsIndivisibleInput) {
  GeneratorConfig cfg;
  cfg.input_size = 60;
  EXPECT_THROW(build_translation_generator(cfg), ValidationError);
  cfg.input_size = 64;
  auto g = build_translation_generator(cfg);
  EXPECT_THROW(g->forward(torch::randn({1, 1, 60, 60})), ShapeError);
}

TEST(TranslationGenerator, DuplicatedDecodersHaveDisjointParameters) {
  GeneratorConfig cfg;
  cfg.input_size = 32;
  cfg.base_channels = 4;
  auto g = build_translation_generator(cfg);
  auto t = g->translation_decoder()->parameters();
  auto s = g->segmentation_decoder()->parameters();
  ASSERT_EQ(t.size(), s.size());
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(t[i].sizes(), s[i].sizes());
  auto tid = ids(t);
  for (const auto& p : s) EXPECT_FALSE(tid.count(p.unsafeGetTensorImpl()));
}

TEST(TranslationGenerator, IdentityToyComposesToIdentity) {
  GeneratorConfig cfg;
  cfg.identity_toy = true;
  auto a = build_translation_generator(cfg);
  auto b = build_translation_generator(cfg);
  auto x = torch::rand({3, 1, 8, 8}) * 2 - 1;
  auto y = b->forward(a->forward(x).translation).translation;
  EXPECT_TRUE(torch::equal(x, y));
}

TEST(Discriminator, PaperChannelSchedule) {
  DiscriminatorConfig cfg;
  EXPECT_EQ(cfg.channel_schedule(), (std::vector<std::int64_t>{60, 60, 120, 240, 480, 1}));
  cfg.width_scale = 0.25;
  EXPECT_EQ(cfg.channel_schedule(), (std::vector<std::int64_t>{15, 15, 30, 60, 120, 1}));
}

TEST(Discriminator, DeskScaleParameterCount) {
  DiscriminatorConfig cfg;
  cfg.width_scale = 0.25;
  cfg.num_scales = 1;
  auto d = build_discriminator(cfg);
  // conv k4: in*out*16 + out; LN affine: 2*in per downsampling stage; 1x1 head.
  const std::int64_t expected = (1 * 15 * 16 + 15) + (2 * 15) + (15 * 15 * 16 + 15) + (2 * 15) +
                                (15 * 30 * 16 + 30) + (2 * 30) + (30 * 60 * 16 + 60) + (2 * 60) +
                                (60 * 120 * 16 + 120) + (120 * 1 + 1);
  EXPECT_EQ(count_parameters(d->parameters()), expected);
}

TEST(Discriminator, MultiScaleScoreIsMeanOfScaleMeans) {
  torch::manual_seed(1);
  DiscriminatorConfig cfg;
  cfg.width_scale = 0.25;
  cfg.num_scales = 3;
  cfg.num_downsamples = 2;
  auto d = build_discriminator(cfg);
  auto out = d->forward(torch::randn({2, 1, 32, 32}));
  ASSERT_EQ(out.maps.size(), 3u);
  auto manual = (out.maps[0].flatten(1).mean(1) + out.maps[1].flatten(1).mean(1) +
                 out.maps[2].flatten(1).mean(1)) / 3.0;
  EXPECT_TRUE(torch::allclose(out.score, manual, 1e-6, 1e-7));
}

TEST(Discriminator, LeakySlopeIsPointTwo) { EXPECT_DOUBLE_EQ(DiscriminatorConfig{}.leaky_slope, 0.2); }

TEST(Discriminator, RejectsInputSmallerThanReceptiveField) {
  DiscriminatorConfig cfg;
  cfg.input_size = {8, 8};
  cfg.num_scales = 2;
  cfg.num_downsamples = 4;
  EXPECT_THROW(build_discriminator(cfg), ValidationError);
}

TEST(SegmentationNet, PaperSchedules) {
  auto self = SegmentationNetConfig::paper_default(SegmentationVariant::kSelfSupervised);
  auto semi = SegmentationNetConfig::paper_default(SegmentationVariant::kSemiSupervised);
  std::vector<std::int64_t> self_ch, semi_ch;
  for (const auto& l : self.encoder) self_ch.push_back(l.channels);
  for (const auto& l : semi.encoder) semi_ch.push_back(l.channels);
  EXPECT_EQ(self_ch, (std::vector<std::int64_t>{32, 64, 128, 256, 320}));
  EXPECT_EQ(semi_ch, (std::vector<std::int64_t>{16, 32, 64, 128, 256}));
}

TEST(SegmentationNet, SelfSupervisedLargerAtPaperSchedules) {
  auto self_cfg = SegmentationNetConfig::paper_default(SegmentationVariant::kSelfSupervised);
  auto semi_cfg = SegmentationNetConfig::paper_default(SegmentationVariant::kSemiSupervised);
  auto self = build_segmentation_model(self_cfg);
  auto semi = build_segmentation_model(semi_cfg);
  EXPECT_GT(count_parameters(self->generator_parameters()),
            count_parameters(semi->generator_parameters()));
}

TEST(SegmentationNet, PartitionRatio) {
  auto cfg = SegmentationNetConfig::paper_default(SegmentationVariant::kSelfSupervised);
  cfg.variant = SegmentationVariant::kSemiSupervised;
  EXPECT_EQ(cfg.bottleneck_channels(), 320);
  EXPECT_EQ(cfg.common_channels(), 240);

  torch::manual_seed(2);
  auto m = build_segmentation_model(tiny_seg(SegmentationVariant::kSemiSupervised));
  m->eval();
  auto x = torch::randn({1, 1, 8, 8, 8});
  auto code = m->encode_partition(x);
  EXPECT_EQ(code.c.size(1), 12);
  EXPECT_EQ(code.u.size(1), 4);
  auto z = m->encode(x).bottleneck();
  EXPECT_TRUE(torch::equal(torch::cat({code.c, code.u}, 1), z));
  auto again = m->encode_partition(x);
  EXPECT_TRUE(torch::equal(code.c, again.c));
  EXPECT_TRUE(torch::equal(code.u, again.u));
}

TEST(SegmentationNet, SelfSupervisedHasNoTranslationParts) {
  auto m = build_segmentation_model(tiny_seg(SegmentationVariant::kSelfSupervised));
  EXPECT_FALSE(m->common_decoder());
  EXPECT_FALSE(m->residual_decoder());
  EXPECT_FALSE(m->disc_absent());
  EXPECT_FALSE(m->disc_present());
  EXPECT_TRUE(m->discriminator_parameters().empty());
}

TEST(SegmentationNet, ChannelMismatchRejected) {
  auto cfg = tiny_seg(SegmentationVariant::kSemiSupervised);
  cfg.decoder.pop_back();
  EXPECT_THROW(build_segmentation_model(cfg), ValidationError);
  cfg = tiny_seg(SegmentationVariant::kSemiSupervised);
  cfg.encoder.back().channels = 1;
  cfg.encoder.back().blocks = 0;
  EXPECT_THROW(build_segmentation_model(cfg), ValidationError);
}

TEST(SegmentationNet, SharingAuditPassesForSharedDecoder) {
  auto m = build_segmentation_model(tiny_seg(SegmentationVariant::kSemiSupervised));
  auto a = audit_parameter_sharing(*m);
  EXPECT_TRUE(a.passed);
  EXPECT_EQ(a.shared, a.body);
  EXPECT_GT(a.body, 0u);
}

TEST(SegmentationNet, SharingAuditFailsForSeparateDecoders) {
  auto cfg = tiny_seg(SegmentationVariant::kSemiSupervised);
  cfg.share_decoder = false;
  auto m = build_segmentation_model(cfg);
  EXPECT_FALSE(audit_parameter_sharing(*m).passed);
}

TEST(SegmentationNet, SharedWeightMutationAffectsBothModes) {
  torch::manual_seed(3);
  auto m = build_segmentation_model(tiny_seg(SegmentationVariant::kSemiSupervised));
  m->eval();
  torch::NoGradGuard ng;
  auto x = torch::randn({1, 1, 8, 8, 8});
  auto code = m->encode_partition(x);
  auto res0 = m->decode_residual(code.c, code.u, code.skips);
  auto seg0 = m->decode_segmentation(code.c, code.u, code.skips);

  auto body = m->residual_decoder()->body_parameters();
  body.front().add_(0.5);
  auto res1 = m->decode_residual(code.c, code.u, code.skips);
  auto seg1 = m->decode_segmentation(code.c, code.u, code.skips);
  EXPECT_FALSE(torch::equal(res0, res1));
  EXPECT_FALSE(torch::equal(seg0, seg1));

  // A segmentation-only normalization parameter leaves the residual path alone.
  auto res_ids = ids(m->residual_path_parameters());
  for (auto& p : m->segmentation_path_parameters()) {
    if (!res_ids.count(p.unsafeGetTensorImpl()) && p.dim() == 1 && p.size(0) > 1) {
      p.add_(1.0);
      break;
    }
  }
  auto res2 = m->decode_residual(code.c, code.u, code.skips);
  auto seg2 = m->decode_segmentation(code.c, code.u, code.skips);
  EXPECT_TRUE(torch::equal(res1, res2));
  EXPECT_FALSE(torch::equal(seg1, seg2));
}

TEST(SegmentationNet, AdditiveCompositionIsExact) {
  torch::manual_seed(4);
  auto m = build_segmentation_model(tiny_seg(SegmentationVariant::kSemiSupervised));
  auto x = torch::randn({2, 1, 8, 8, 8});
  auto pa = presence_to_absence(*m, x);
  EXPECT_TRUE(torch::equal(pa.x_pp - pa.x_pa, pa.delta_pp));
  EXPECT_EQ(pa.x_pp.sizes(), x.sizes());
  EXPECT_TRUE(torch::isfinite(pa.x_pp).all().item<bool>());

  auto u = torch::randn_like(pa.codes.u);
  auto ap = absence_to_presence(*m, x, u);
  EXPECT_TRUE(torch::equal(ap.x_ap - ap.x_aa, ap.delta_ap));
  EXPECT_THROW(absence_to_presence(*m, x, torch::randn({1, 3, 2, 2, 2})), ShapeError);
}

TEST(SegmentationNet, ZeroResidualHeadGivesIdentity) {
  torch::manual_seed(5);
  auto m = build_segmentation_model(tiny_seg(SegmentationVariant::kSemiSupervised));
  {
    torch::NoGradGuard ng;
    auto head = m->residual_decoder()->head(DecoderMode::kResidual);
    head->weight.zero_();
    head->bias.zero_();
  }
  auto x = torch::randn({1, 1, 8, 8, 8});
  auto pa = presence_to_absence(*m, x);
  EXPECT_TRUE(torch::equal(pa.x_pp, pa.x_pa));
  auto ap = absence_to_presence(*m, x, torch::zeros_like(pa.codes.u));
  EXPECT_TRUE(torch::equal(ap.x_ap, ap.x_aa));
}

TEST(SegmentationNet, SegmentRangeAndModeToggle) {
  torch::manual_seed(6);
  auto m = build_segmentation_model(tiny_seg(SegmentationVariant::kSemiSupervised));
  m->eval();
  auto x = torch::randn({1, 1, 8, 8, 8});
  auto p = m->segment(x);
  EXPECT_GT(p.min().item<double>(), 0.0);
  EXPECT_LT(p.max().item<double>(), 1.0);
  EXPECT_TRUE(torch::equal(p, m->segment(x)));
  // Same decoder body, other normalization set and head.
  auto code = m->encode_partition(x);
  auto r = m->decode_residual(code.c, code.u, code.skips);
  auto s = m->decode_segmentation(code.c, code.u, code.skips);
  EXPECT_TRUE(torch::allclose(s, p));
  EXPECT_FALSE(torch::equal(r, s));
}

TEST(SegmentationNet, UnsupervisedLossReachesSharedBody) {
  torch::manual_seed(7);
  auto m = build_segmentation_model(tiny_seg(SegmentationVariant::kSemiSupervised));
  auto x = torch::randn({1, 1, 8, 8, 8});
  auto pa = presence_to_absence(*m, x);
  auto loss = (pa.x_pp - x).abs().mean();
  loss.backward();
  double total = 0;
  for (const auto& p : m->residual_decoder()->body_parameters()) {
    if (p.grad().defined()) total += p.grad().abs().sum().item<double>();
  }
  EXPECT_GT(total, 0.0);
}

TEST(Attention, RowsAreDistributionsAndConfidenceInRange) {
  torch::manual_seed(8);
  auto m = build_segmentation_model(tiny_seg(SegmentationVariant::kSelfSupervised));
  m->eval();
  auto x = torch::randn({1, 1, 8, 8, 8});
  auto rec = capture_attention(*m, [&] { m->segment(x); });
  ASSERT_FALSE(rec.layers.empty());
  EXPECT_LT(max_row_sum_error(rec), 1e-5);
  for (const auto& layer : head_confidence(rec)) {
    for (double c : layer) {
      EXPECT_GT(c, 0.0);
      EXPECT_LE(c, 1.0 + 1e-12);
    }
  }
}

TEST(Attention, ConfidenceOracles) {
  AttentionRecord one_hot{{torch::eye(8, torch::kFloat64).reshape({1, 1, 8, 8})}};
  EXPECT_DOUBLE_EQ(head_confidence(one_hot)[0][0], 1.0);
  AttentionRecord uniform{{torch::full({1, 2, 5, 8}, 1.0 / 8.0, torch::kFloat64)}};
  auto c = head_confidence(uniform);
  EXPECT_DOUBLE_EQ(c[0][0], 0.125);
  EXPECT_DOUBLE_EQ(c[0][1], 0.125);
}

TEST(Attention, ModelWithoutAttentionRejected) {
  auto cfg = tiny_seg(SegmentationVariant::kSelfSupervised);
  cfg.encoder.back().blocks = 0;
  cfg.decoder.front().blocks = 0;
  auto m = build_segmentation_model(cfg);
  EXPECT_THROW(capture_attention(*m, [&] { m->segment(torch::randn({1, 1, 8, 8, 8})); }),
               ValidationError);
}

TEST(Checkpoint, RoundTripAndMismatchRejected) {
  torch::manual_seed(9);
  auto cfg = tiny_seg(SegmentationVariant::kSemiSupervised);
  auto a = build_segmentation_model(cfg);
  CheckpointManifest man{"segmentation", cfg};
  const auto bytes = encode_checkpoint(man, *a);
  auto ck = decode_checkpoint(bytes);
  EXPECT_EQ(ck.manifest.family, "segmentation");
  EXPECT_EQ(ck.manifest.config, nlohmann::json(cfg));

  torch::manual_seed(10);
  auto b = build_segmentation_model(cfg);
  load_state(*b, ck, "segmentation");
  auto sa = named_state(*a);
  auto sb = named_state(*b);
  for (const auto& [k, v] : sa) EXPECT_TRUE(torch::equal(v, sb.at(k))) << k;

  EXPECT_THROW(load_state(*b, ck, "translation"), FormatError);
  auto other = cfg;
  other.encoder[0].channels = 6;
  auto c = build_segmentation_model(other);
  EXPECT_THROW(load_state(*c, ck, "segmentation"), FormatError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
  EXPECT_THROW(decode_checkpoint("NOPE" + bytes.substr(4)), FormatError);
}
