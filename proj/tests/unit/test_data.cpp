#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "xmodseg/error.hpp"
#include "xmodseg/phantom.hpp"
#include "xmodseg/volume.hpp"
#include "xmodseg/volume_io.hpp"

using namespace xmodseg;
namespace fs = std::filesystem;

namespace {

Volume random_volume(Dims dims, std::uint64_t seed, bool with_mask) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  Volume v;
  v.id = "rand";
  v.dims = dims;
  v.spacing = {1.0f, 0.5f, 2.0f};
  v.modality = Modality::kTarget;
  v.data.resize(static_cast<std::size_t>(dims.voxel_count()));
  for (auto& x : v.data) x = n(rng);
  if (with_mask) {
    Mask m(v.data.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = v.data[i] > 1.0f;
    v.presence = presence_from_mask(m);
    v.mask = std::move(m);
  }
  return v;
}

Volume line_volume(std::vector<float> values) {
  Volume v;
  v.dims = {1, 1, static_cast<std::int64_t>(values.size())};
  v.data = std::move(values);
  return v;
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("xmodseg_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Normalize, ConstantTissueGivesZeros) {
  auto v = line_volume({-5.0f, 3.0f, 3.0f, 3.0f});
  // Background is the minimum; a constant tissue region has zero spread.
  auto n = normalize_volume(v);
  EXPECT_EQ(n.data[1], 0.0f);
  EXPECT_EQ(n.data[3], 0.0f);
}

TEST(Normalize, HandComputedFiveSigmaScaling) {
  auto n = normalize_volume(line_volume({-100.0f, -10.0f, 0.0f, 10.0f}));
  EXPECT_NEAR(n.data[1], -0.2449, 5e-5);
  EXPECT_NEAR(n.data[2], 0.0, 1e-7);
  EXPECT_NEAR(n.data[3], 0.2449, 5e-5);
  EXPECT_EQ(n.data[0], -1.0f);

  auto m = normalize_volume(line_volume({-1.0f, 0.0f, 100.0f}));
  EXPECT_NEAR(m.data[1], -0.2, 1e-6);
  EXPECT_NEAR(m.data[2], 0.2, 1e-6);
}

TEST(Normalize, AllBackgroundIsAnError) {
  EXPECT_THROW(normalize_volume(line_volume({2.0f, 2.0f, 2.0f})), Error);
}

TEST(Normalize, OutputStaysInRangeAndRenormalizingKeepsIt) {
  auto v = random_volume({6, 8, 8}, 4, false);
  for (auto& x : v.data) x = x * 40.0f + 7.0f;
  auto n = normalize_volume(v);
  for (float x : n.data) {
    ASSERT_GE(x, -1.0f);
    ASSERT_LE(x, 1.0f);
  }
  for (float x : normalize_volume(n).data) {
    ASSERT_GE(x, -1.0f);
    ASSERT_LE(x, 1.0f);
  }
}

TEST(Hemispheres, LabelsFollowTheirOwnMaskRegion) {
  Volume v;
  v.dims = {2, 2, 4};
  v.data.assign(16, 0.0f);
  v.mask = Mask(16, 0);
  (*v.mask)[v.index(0, 0, 0)] = 1;  // left only
  auto [l, r] = split_hemispheres(v);
  EXPECT_EQ(l.presence, PresenceLabel::kPresent);
  EXPECT_EQ(r.presence, PresenceLabel::kAbsent);

  (*v.mask)[v.index(0, 0, 0)] = 0;
  auto [l2, r2] = split_hemispheres(v);
  EXPECT_EQ(l2.presence, PresenceLabel::kAbsent);
  EXPECT_EQ(r2.presence, PresenceLabel::kAbsent);

  (*v.mask)[v.index(1, 1, 1)] = 1;  // straddles the midline
  (*v.mask)[v.index(1, 1, 2)] = 1;
  auto [l3, r3] = split_hemispheres(v);
  EXPECT_EQ(l3.presence, PresenceLabel::kPresent);
  EXPECT_EQ(r3.presence, PresenceLabel::kPresent);
}

TEST(Hemispheres, OddWidthSharesTheCentralPlane) {
  auto v = random_volume({2, 3, 5}, 1, true);
  auto [l, r] = split_hemispheres(v);
  EXPECT_EQ(l.dims.width, 3);
  EXPECT_EQ(r.dims.width, 3);
  for (std::int64_t d = 0; d < 2; ++d) {
    for (std::int64_t h = 0; h < 3; ++h) EXPECT_EQ(l.at(d, h, 2), r.at(d, h, 0));
  }
}

TEST(Hemispheres, JoinInvertsSplitForEvenWidth) {
  auto v = random_volume({3, 4, 6}, 2, false);
  auto [l, r] = split_hemispheres(v);
  EXPECT_EQ(join_hemispheres(l.data, r.data, v.dims), v.data);
}

TEST(Hemispheres, LabelsAgreeWithMasksOnGeneratedPhantoms) {
  PhantomConfig cfg;
  cfg.volume_count = 24;
  for (const auto& v : generate_phantom_dataset(cfg)) {
    auto [l, r] = split_hemispheres(v);
    for (const auto* h : {&l, &r}) {
      EXPECT_EQ(h->presence, presence_from_mask(*h->mask));
    }
  }
}

TEST(Slicing, ShapesFollowTheAxis) {
  auto v = random_volume({4, 16, 16}, 3, false);
  auto s = slice_volume(v, 0);
  ASSERT_EQ(s.slices.size(), 4u);
  EXPECT_EQ(s.slices[0].height, 16);
  EXPECT_EQ(s.slices[0].width, 16);
  EXPECT_THROW(slice_volume(v, 3), ValidationError);
}

TEST(Slicing, RoundTripIsBitwiseOnEveryAxis) {
  auto v = random_volume({3, 5, 7}, 9, true);
  for (int axis = 0; axis < 3; ++axis) {
    auto back = reassemble_volume(slice_volume(v, axis));
    EXPECT_EQ(back, v) << "axis " << axis;
  }
}

TEST(Slicing, EmptyVolumeIsAnError) {
  Volume v;
  EXPECT_THROW(slice_volume(v, 0), Error);
}

TEST(VolumeFormat, RoundTripPreservesEveryField) {
  auto dir = temp_dir("mvl");
  auto v = random_volume({3, 4, 5}, 11, true);
  save_volume(v, dir / "x.mvl");
  auto back = load_volume(dir / "x.mvl");
  v.id = "x";
  EXPECT_EQ(back, v);

  auto plain = random_volume({2, 2, 2}, 12, false);
  plain.id = "p";
  save_volume(plain, dir / "p.mvl");
  EXPECT_EQ(load_volume(dir / "p.mvl"), plain);
}

TEST(VolumeFormat, HeaderLayoutIsLittleEndian) {
  auto v = random_volume({2, 3, 4}, 5, true);
  auto bytes = encode_volume(v);
  ASSERT_EQ(bytes.size(), 32u + 24u * 4u + 24u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "MVL1");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5], 1);  // target
  EXPECT_EQ(bytes[7], 1);  // mask present
  EXPECT_EQ(bytes[8], 2);
  EXPECT_EQ(bytes[12], 3);
  EXPECT_EQ(bytes[16], 4);
}

TEST(VolumeFormat, BadMagicVersionAndTruncationAreReported) {
  auto bytes = encode_volume(random_volume({2, 2, 2}, 6, false));
  auto bad = bytes;
  bad[0] = 'X';
  try {
    decode_volume(bad);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  bad = bytes;
  bad[4] = 9;
  try {
    decode_volume(bad);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("unsupported version"), std::string::npos);
  }
  bad = bytes;
  bad.resize(bytes.size() - 3);
  EXPECT_THROW(decode_volume(bad), FormatError);
}

TEST(VolumeFormat, MaskOnlyPayload) {
  auto dir = temp_dir("mask");
  auto v = random_volume({2, 3, 4}, 7, true);
  save_mask(v, dir / "m.mvl");
  EXPECT_EQ(fs::file_size(dir / "m.mvl"), 32u + 24u);
  auto back = load_mask(dir / "m.mvl");
  EXPECT_EQ(*back.mask, *v.mask);
  EXPECT_EQ(back.presence, v.presence);
}

TEST(Phantom, SameSeedIsBitIdentical) {
  PhantomConfig cfg;
  cfg.volume_count = 6;
  cfg.seed = 7;
  EXPECT_EQ(generate_phantom_dataset(cfg), generate_phantom_dataset(cfg));
  auto other = cfg;
  other.seed = 8;
  EXPECT_NE(generate_phantom_dataset(cfg), generate_phantom_dataset(other));
}

TEST(Phantom, TumorProbabilityExtremes) {
  PhantomConfig cfg;
  cfg.volume_count = 10;
  cfg.tumor_probability = 0.0;
  for (const auto& v : generate_phantom_dataset(cfg)) {
    EXPECT_FALSE(v.has_tumor());
    EXPECT_EQ(v.presence, PresenceLabel::kAbsent);
  }
  cfg.tumor_probability = 1.0;
  cfg.tumor_radius_min = 3;
  cfg.tumor_radius_max = 5;
  for (const auto& v : generate_phantom_dataset(cfg)) {
    EXPECT_TRUE(v.has_tumor());
    EXPECT_EQ(v.presence, PresenceLabel::kPresent);
  }
}

TEST(Phantom, ModalitiesAlternateAndTumorContrastInverts) {
  PhantomConfig cfg;
  cfg.volume_count = 8;
  cfg.tumor_probability = 1.0;
  cfg.noise_sigma = 0.0;
  auto vols = generate_phantom_dataset(cfg);
  double src_gap = 0, tgt_gap = 0;
  for (const auto& v : vols) {
    double tumor = 0, tissue = 0;
    int nt = 0, nb = 0;
    for (std::size_t i = 0; i < v.data.size(); ++i) {
      if ((*v.mask)[i]) tumor += v.data[i], ++nt;
      else if (v.data[i] > 0.05f) tissue += v.data[i], ++nb;
    }
    const double gap = tumor / nt - tissue / nb;
    (v.modality == Modality::kSource ? src_gap : tgt_gap) += gap;
  }
  EXPECT_EQ(vols[0].modality, Modality::kSource);
  EXPECT_EQ(vols[1].modality, Modality::kTarget);
  EXPECT_GT(src_gap, 0.0);
  EXPECT_LT(tgt_gap, 0.0);
}

TEST(Phantom, InvalidConfigNamesTheField) {
  PhantomConfig cfg;
  cfg.tumor_radius_min = 5;
  cfg.tumor_radius_max = 3;
  try {
    cfg.validate();
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(e.field().find("tumor_radius"), std::string::npos);
  }
  cfg = PhantomConfig{};
  cfg.dims = {4, 16, 16};
  EXPECT_THROW(cfg.validate(), ValidationError);
}
