#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "xmodseg/phantom.hpp"
#include "xmodseg/self_training.hpp"
#include "xmodseg/stage1.hpp"
#include "xmodseg/stage2.hpp"

namespace xmodseg {

inline constexpr int kConfigSchemaVersion = 1;

/// Source annotation fractions the lambda_seg^pT schedule covers.
inline const std::vector<double> kSourceAnnotationFractions{0.01, 0.1, 0.4, 0.7, 1.0};

struct DataConfig {
  PhantomConfig phantom;
  /// Share of source training volumes whose masks are kept.
  double source_annotation_fraction = 1.0;
  /// Share of target training volumes whose masks join the labeled set.
  double target_annotation_fraction = 0.0;
  /// Source volumes (even indices) used for training; the rest is held out.
  double source_train_fraction = 0.8;
  /// Target volumes (odd indices): training, validation, rest is test.
  double target_train_fraction = 0.6;
  double target_val_fraction = 0.2;

  void validate() const;
};

void to_json(nlohmann::json& j, const DataConfig& c);
void from_json(const nlohmann::json& j, DataConfig& c);

/// Comparison models trained with the stage-2 architecture and no
/// presence/absence objectives.
struct ReferenceConfig {
  /// Trained on source hemispheres, no adaptation.
  bool baseline = true;
  /// Trained on annotated target hemispheres.
  bool supervised = true;
  /// 0 uses stage2.epochs.
  int epochs = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const ReferenceConfig& c);
void from_json(const nlohmann::json& j, ReferenceConfig& c);

struct ExperimentConfig {
  int schema_version = kConfigSchemaVersion;
  /// Named starting point the file overrides ("desk" or "full").
  std::string preset = "desk";
  /// When set, replaces the phantom, stage-1 and stage-2 seeds.
  std::optional<std::uint64_t> seed;
  DataConfig data;
  Stage1Config stage1;
  Stage2Config stage2;
  SelfTrainingConfig self_training;
  ReferenceConfig references;
  /// True when stage2.weights.seg_pT was given rather than derived from the
  /// source annotation fraction.
  bool seg_pt_explicit = false;

  /// Small phantoms and models that train on one CPU core.
  static ExperimentConfig desk();
  /// Published schedules and epoch counts on 16x32x32 phantoms.
  static ExperimentConfig full();
  static ExperimentConfig from_preset(const std::string& name);

  /// Applies the global seed, derives lambda_seg^pT from the schedule unless
  /// explicit, and fits model input sizes to the phantom dims.
  void finalize();
  void validate() const;

  /// Overrides the seed and re-finalizes.
  void set_seed(std::uint64_t s);
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
/// Starts from the named preset and applies the given keys on top. Unknown
/// keys and out-of-range values raise ValidationError naming the key.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const ExperimentConfig& c, const std::filesystem::path& path);

}  // namespace xmodseg
