#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "../support/tiny_config.hpp"
#include "xmodseg/error.hpp"
#include "xmodseg/phantom.hpp"
#include "xmodseg/pipeline.hpp"
#include "xmodseg/report.hpp"
#include "xmodseg/stage1.hpp"
#include "xmodseg/stage2.hpp"

using namespace xmodseg;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("xmodseg_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string header_of(const fs::path& csv) {
  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);
  return line;
}

PhantomSplits tiny_splits() { return make_splits(test_support::tiny_experiment().data); }

}  // namespace

TEST(Stage1, TwoEpochsWriteTwoCheckpointsAndTheLog) {
  auto cfg = test_support::tiny_experiment();
  cfg.stage1.epochs = 2;
  cfg.stage1.keep_epoch_checkpoints = true;
  const auto s = tiny_splits();
  const auto out = fresh_dir("stage1");
  auto src = make_slice_set(s.source_train);
  auto tgt = make_slice_set(s.target_train);
  auto result = train_stage1(cfg.stage1, src, tgt, out);
  EXPECT_EQ(result.epochs.size(), 2u);
  EXPECT_TRUE(fs::exists(out / "checkpoints" / "epoch_0000.ckpt"));
  EXPECT_TRUE(fs::exists(out / "checkpoints" / "epoch_0001.ckpt"));
  EXPECT_TRUE(fs::exists(out / "last.ckpt"));
  EXPECT_EQ(header_of(out / "train_log.csv"), "epoch,L_adv_mod_D,L_adv_mod_G,L_cyc,L_seg_mod,wall_time_s");
  auto model = load_translation_model(out / "last.ckpt");
  EXPECT_NO_THROW(synthesize_pseudo_targets(*model, s.source_holdout, "x"));
}

TEST(Stage1, IdentityToyHasZeroCycleLoss) {
  nets::TranslationModelConfig mc;
  mc.generator.identity_toy = true;
  mc.discriminator.input_size = {16, 16};
  mc.discriminator.num_downsamples = 2;
  nets::TranslationModel model(mc);
  auto x = torch::rand({2, 1, 16, 16}) * 2 - 1;
  auto y = torch::rand({2, 1, 16, 16}) * 2 - 1;
  auto out = forward_cycle(*model, x, y);
  EXPECT_EQ(out.terms.at("cyc").item<double>(), 0.0);
}

TEST(Stage1, SegModIsOmittedWithoutAnnotations) {
  auto cfg = test_support::tiny_experiment();
  nets::TranslationModel model(cfg.stage1.model);
  auto x = torch::rand({2, 1, 16, 16});
  auto out = forward_cycle(*model, x, x);
  EXPECT_EQ(out.terms.count("seg_mod"), 0u);
  auto masks = torch::zeros({2, 1, 16, 16});
  auto none = torch::zeros({2}, torch::kBool);
  EXPECT_EQ(forward_cycle(*model, x, x, masks, none).terms.count("seg_mod"), 0u);
  auto one = torch::tensor({true, false});
  EXPECT_EQ(forward_cycle(*model, x, x, masks, one).terms.count("seg_mod"), 1u);
}

TEST(Stage1, SameSeedReproducesEpochZeroLosses) {
  auto cfg = test_support::tiny_experiment();
  const auto s = tiny_splits();
  auto src = make_slice_set(s.source_train);
  auto tgt = make_slice_set(s.target_train);
  auto a = train_stage1(cfg.stage1, src, tgt, fresh_dir("det_a"));
  auto b = train_stage1(cfg.stage1, src, tgt, fresh_dir("det_b"));
  EXPECT_EQ(a.epochs[0].adv_mod_d, b.epochs[0].adv_mod_d);
  EXPECT_EQ(a.epochs[0].adv_mod_g, b.epochs[0].adv_mod_g);
  EXPECT_EQ(a.epochs[0].cyc, b.epochs[0].cyc);
  EXPECT_EQ(a.epochs[0].seg_mod, b.epochs[0].seg_mod);
}

TEST(Stage2, SemiSupervisedLogsEveryColumn) {
  auto cfg = test_support::tiny_experiment();
  const auto s = tiny_splits();
  Stage2Data data;
  data.labeled = make_hemisphere_set(std::vector<Volume>(s.source_train.begin(), s.source_train.begin() + 2));
  std::tie(data.absent, data.present) = make_presence_sets(s.target_train);
  data.validation = s.source_holdout;
  const auto out = fresh_dir("stage2");
  auto r = train_stage2(cfg.stage2, data, out);
  EXPECT_EQ(header_of(out / "train_log.csv"), "epoch,L_adv_gen_D,L_adv_gen_G,L_rec,L_lat,L_seg_pT,L_seg_st,val_dice");
  EXPECT_TRUE(fs::exists(out / "best.ckpt"));
  EXPECT_TRUE(std::isfinite(r.epochs[0].rec));
  EXPECT_TRUE(std::isfinite(r.epochs[0].lat));
  auto model = load_segmentation_model(r.best_checkpoint);
  auto prob = segment_volume(*model, s.target_test[0]);
  EXPECT_EQ(prob.size(), s.target_test[0].data.size());
}

TEST(Stage2, SelfSupervisedLeavesTranslationColumnsBlank) {
  auto cfg = test_support::tiny_experiment();
  cfg.stage2.model.variant = SegmentationVariant::kSelfSupervised;
  const auto s = tiny_splits();
  Stage2Data data;
  data.labeled = make_hemisphere_set(std::vector<Volume>(s.source_train.begin(), s.source_train.begin() + 2));
  const auto out = fresh_dir("stage2_self");
  auto r = train_stage2(cfg.stage2, data, out);
  EXPECT_TRUE(std::isnan(r.epochs[0].rec));
  auto log = read_log_csv(out / "train_log.csv");
  EXPECT_TRUE(std::isnan(log.at("L_rec")[0]));
  EXPECT_FALSE(std::isnan(log.at("L_seg_pT")[0]));
}

TEST(Stage2, SeedAndScheduleFromAnnotationFraction) {
  EXPECT_EQ(seg_pt_weight_for_fraction(1.0), 100.0);
  EXPECT_EQ(seg_pt_weight_for_fraction(0.7), 50.0);
  EXPECT_EQ(seg_pt_weight_for_fraction(0.4), 25.0);
  EXPECT_EQ(seg_pt_weight_for_fraction(0.1), 1.0);
  EXPECT_EQ(seg_pt_weight_for_fraction(0.01), 0.1);
  EXPECT_THROW(seg_pt_weight_for_fraction(0.0), ValidationError);
}

TEST(Evaluation, OracleAndEmptyStubs) {
  const auto s = tiny_splits();
  std::vector<Volume> vols;
  for (const auto& v : s.target_test) {
    if (v.has_tumor()) vols.push_back(v);
  }
  ASSERT_FALSE(vols.empty());
  Segmenter oracle = [](const Volume& v) { return std::vector<float>(v.mask->begin(), v.mask->end()); };
  auto perfect = summarize(evaluate_segmenter("oracle", oracle, vols));
  EXPECT_DOUBLE_EQ(perfect[0].mean_dice, 1.0);
  EXPECT_DOUBLE_EQ(perfect[0].mean_assd, 0.0);

  Segmenter empty = [](const Volume& v) { return std::vector<float>(v.data.size(), 0.0f); };
  auto none = summarize(evaluate_segmenter("empty", empty, vols));
  EXPECT_NEAR(none[0].mean_dice, 0.0, 1e-12);
  EXPECT_EQ(none[0].infinite_assd, static_cast<int>(vols.size()));

  std::vector<Volume> unlabeled = vols;
  for (auto& v : unlabeled) v.mask.reset();
  EXPECT_THROW(evaluate_segmenter("x", oracle, unlabeled), Error);
}

TEST(Report, CsvColumnsSummaryRoundTripAndRecomputation) {
  std::vector<EvalRecord> recs{{"a", "v1", 0.8, 1.5, false}, {"a", "v2", 0.6, 2.5, false},
                               {"b", "v1", 0.4, std::numeric_limits<double>::infinity(), false},
                               {"b", "v2", 1.0, 0.0, true}};
  const auto out = fresh_dir("report");
  emit_report({recs, {}, {}, nlohmann::json::object()}, out);
  EXPECT_EQ(header_of(out / "metrics.csv"), "experiment,volume_id,dice,assd");
  EXPECT_TRUE(fs::exists(out / "plots" / "dice.svg"));
  auto summary = load_summary(out / "summary.json");
  ASSERT_EQ(summary.at("experiments").size(), 2u);
  EXPECT_NEAR(summary["experiments"][0]["mean_dice"].get<double>(), 0.7, 1e-12);
  EXPECT_NEAR(summary["experiments"][0]["std_dice"].get<double>(), 0.1, 1e-12);
  EXPECT_EQ(summary["experiments"][1]["infinite_assd"].get<int>(), 1);

  auto again = summarize(read_metrics_csv(out / "metrics.csv"));
  auto direct = summarize(recs);
  ASSERT_EQ(again.size(), direct.size());
  for (std::size_t i = 0; i < again.size(); ++i) {
    EXPECT_DOUBLE_EQ(again[i].mean_dice, direct[i].mean_dice);
    EXPECT_DOUBLE_EQ(again[i].std_dice, direct[i].std_dice);
    EXPECT_EQ(again[i].volumes, direct[i].volumes);
  }
}
