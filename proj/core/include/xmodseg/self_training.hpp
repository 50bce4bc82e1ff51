#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xmodseg/nets/segmentation_net.hpp"
#include "xmodseg/stage2.hpp"
#include "xmodseg/volume.hpp"

namespace xmodseg {

inline constexpr double kDefaultPseudoLabelThreshold = 0.6;

struct SelfTrainingConfig {
  int iterations = 3;
  int epochs_per_iteration = 150;
  double alpha = kDefaultPseudoLabelThreshold;
  /// Fine-tuning learning rate; the stage-2 optimizer's when unset.
  std::optional<double> lr;

  void validate() const;
};

void to_json(nlohmann::json& j, const SelfTrainingConfig& c);
void from_json(const nlohmann::json& j, SelfTrainingConfig& c);

/// Voxel is 1 iff probability >= alpha.
Mask threshold_probabilities(std::span<const float> prob, double alpha);

struct PseudoLabelSet {
  int iteration = 0;
  double alpha = kDefaultPseudoLabelThreshold;
  std::string checkpoint_id;
  /// Target volumes carrying their pseudo-label masks (empty masks kept).
  std::vector<Volume> volumes;
};

/// Segments every volume with `model` and thresholds at `alpha`. Any mask
/// already attached to the input volumes is replaced.
PseudoLabelSet generate_pseudo_labels(nets::SegmentationNetImpl& model, const std::vector<Volume>& target_volumes,
                                      double alpha, int iteration, const std::string& checkpoint_id);

/// Mask-only MVL1 files under `dir`/iter_<i>/ and one entry appended to
/// `dir`/lineage.json.
void save_pseudo_labels(const PseudoLabelSet& set, const std::filesystem::path& dir);
/// Lineage entries in iteration order.
nlohmann::json load_lineage(const std::filesystem::path& dir);

struct SelfTrainingIteration {
  int iteration = 0;
  std::string input_checkpoint_id;
  std::filesystem::path output_checkpoint;
  double val_before = 0;
  double val_after = 0;
  /// Dice on the monitoring volumes (never used for selection); NaN when none.
  double monitor_before = 0;
  double monitor_after = 0;
  std::size_t labeled_voxels = 0;
};

struct SelfTrainingResult {
  std::filesystem::path final_checkpoint;
  std::vector<SelfTrainingIteration> iterations;
};

/// Runs `cfg.iterations` rounds: pseudo-labels from the current checkpoint,
/// then fine-tuning with the extra seg_st term, keeping the best validation
/// checkpoint for the next round. `data.self_labeled` is filled internally.
SelfTrainingResult run_self_training(const SelfTrainingConfig& cfg, const Stage2Config& stage2,
                                     const std::filesystem::path& initial_checkpoint, Stage2Data data,
                                     const std::vector<Volume>& unlabeled_target,
                                     const std::filesystem::path& out_dir,
                                     const std::vector<Volume>& monitor = {});

}  // namespace xmodseg
