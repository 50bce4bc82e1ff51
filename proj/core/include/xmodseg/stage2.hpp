#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "xmodseg/losses.hpp"
#include "xmodseg/nets/segmentation_net.hpp"
#include "xmodseg/training.hpp"
#include "xmodseg/volume.hpp"

namespace xmodseg {

/// Which presence/absence objectives a semi-supervised run keeps.
struct AblationToggles {
  bool presence_to_absence = true;
  /// Requires presence_to_absence.
  bool absence_to_presence = true;

  bool any_translation() const { return presence_to_absence; }
};

struct Stage2Config {
  int epochs = 300;
  std::int64_t batch_size = 2;
  OptimizerConfig optimizer;
  /// Unnormalized. seg_pT comes from the annotation-fraction schedule unless
  /// set explicitly; seg_st defaults to seg_pT during self-training.
  LossWeights weights = default_segmentation_weights(100.0);
  std::uint64_t seed = 0;
  /// Optimizer steps per epoch (0 = one pass over the labeled set).
  std::int64_t steps_per_epoch = 0;
  bool keep_epoch_checkpoints = true;
  AblationToggles ablation;
  nets::SegmentationNetConfig model =
      nets::SegmentationNetConfig::paper_default(SegmentationVariant::kSemiSupervised);

  SegmentationVariant variant() const { return model.variant; }
  void validate() const;
};

void to_json(nlohmann::json& j, const Stage2Config& c);
void from_json(const nlohmann::json& j, Stage2Config& c);

/// lambda_seg^pT per source annotation fraction: 1 -> 100, 0.7 -> 50,
/// 0.4 -> 25, 0.1 -> 1, 0.01 -> 0.1. Fractions between entries take the
/// entry at or below them; below 0.01 takes 0.1.
double seg_pt_weight_for_fraction(double fraction);

struct Stage2Data {
  /// Hemispheres with masks: pseudo-targets (or any supervised set).
  SampleSet labeled;
  /// Real target hemispheres without tumor (A) and with tumor (P).
  SampleSet absent;
  SampleSet present;
  /// Target hemispheres with self-training pseudo-labels.
  SampleSet self_labeled;
  /// Whole annotated volumes used to pick the best checkpoint.
  std::vector<Volume> validation;
};

/// Hemispheres of every volume; masks are kept where present.
SampleSet make_hemisphere_set(const std::vector<Volume>& volumes);
/// Hemispheres of `volumes` split by their presence label. Masks are
/// dropped; only the image-level label is used.
std::pair<SampleSet, SampleSet> make_presence_sets(const std::vector<Volume>& volumes);

struct Stage2EpochLog {
  int epoch = 0;
  double adv_gen_d = 0;
  double adv_gen_g = 0;
  double rec = 0;
  double lat = 0;
  double seg_pt = 0;
  double seg_st = 0;
  double val_dice = 0;
};

inline const std::vector<std::string> kStage2LogColumns{"epoch", "L_adv_gen_D", "L_adv_gen_G", "L_rec",
                                                         "L_lat", "L_seg_pT", "L_seg_st", "val_dice"};

struct Stage2Result {
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
  std::filesystem::path log_path;
  /// NaN without validation data.
  double best_val_dice = 0;
  /// Validation Dice of the starting weights when `init_checkpoint` was given.
  std::optional<double> initial_val_dice;
  std::vector<Stage2EpochLog> epochs;
};

struct Stage2Options {
  std::optional<std::filesystem::path> init_checkpoint;
  /// Lineage recorded in every checkpoint's manifest.
  nlohmann::json lineage = nlohmann::json::object();
  std::function<void(const Stage2EpochLog&)> on_epoch;
};

/// Trains the segmentation model. Writes train_log.csv, best.ckpt, last.ckpt
/// and per-epoch checkpoints under `out_dir`.
Stage2Result train_stage2(const Stage2Config& cfg, const Stage2Data& data, const std::filesystem::path& out_dir,
                          const Stage2Options& options = {});

nets::SegmentationNet load_segmentation_model(const std::filesystem::path& checkpoint);

/// Tumor probability for a whole volume: both hemispheres go through G_seg∘E
/// and are stitched back.
std::vector<float> segment_volume(nets::SegmentationNetImpl& model, const Volume& v);

/// Mean Dice (threshold 0.5) over volumes with a non-empty mask. NaN when
/// there is none.
double mean_validation_dice(nets::SegmentationNetImpl& model, const std::vector<Volume>& volumes);

}  // namespace xmodseg
