#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "xmodseg/losses.hpp"
#include "xmodseg/nets/translation_net.hpp"
#include "xmodseg/training.hpp"
#include "xmodseg/volume.hpp"

namespace xmodseg {

struct Stage1Config {
  int epochs = 200;
  std::int64_t batch_size = 15;
  OptimizerConfig optimizer;
  /// Unnormalized; normalized before use.
  LossWeights weights = default_translation_weights();
  bool augmentation = true;
  std::uint64_t seed = 0;
  /// Slices drawn per epoch from the source set (0 = all of them).
  std::int64_t slices_per_epoch = 0;
  /// Also write checkpoints/epoch_NNNN.ckpt every epoch (last.ckpt is always written).
  bool keep_epoch_checkpoints = true;
  nets::TranslationModelConfig model;

  void validate() const;
};

void to_json(nlohmann::json& j, const Stage1Config& c);
void from_json(const nlohmann::json& j, Stage1Config& c);

/// Everything one forward pass of both cycles produces.
struct CycleOutputs {
  torch::Tensor x_s_prime;   // G_T(E_S(X_S))
  torch::Tensor x_s_dprime;  // G_S(E_T(X_S'))
  torch::Tensor x_t_prime;   // G_S(E_T(X_T))
  torch::Tensor x_t_dprime;  // G_T(E_S(X_T'))
  torch::Tensor y_s_hat;     // G_seg^S(E_S(X_S))
  torch::Tensor y_s_prime_hat;  // G_seg^T(E_T(X_S'))
  /// "cyc" always; "seg_mod" only when annotated slices were given.
  LossTerms terms;
};

/// Runs both translation cycles. `y_s` holds masks for the rows flagged in
/// `annotated`; when no row is annotated (or `y_s` is empty) the seg_mod term
/// is left out.
CycleOutputs forward_cycle(nets::TranslationModelImpl& model, const torch::Tensor& x_s,
                           const torch::Tensor& x_t, const std::optional<torch::Tensor>& y_s = std::nullopt,
                           const std::optional<torch::Tensor>& annotated = std::nullopt);

/// Hinge loss of D_S and D_T on real images versus detached translations.
torch::Tensor translation_discriminator_loss(nets::TranslationModelImpl& model, const CycleOutputs& out,
                                             const torch::Tensor& x_s, const torch::Tensor& x_t);
/// Hinge generator loss of the translations through D_T and D_S.
torch::Tensor translation_generator_adversarial_loss(nets::TranslationModelImpl& model,
                                                     const CycleOutputs& out);

struct CycleStep {
  CycleOutputs outputs;
  /// adv_mod (generator side), cyc, optional seg_mod, plus "adv_mod_D".
  std::map<std::string, double> losses;
};

/// Forward pass plus every loss component, without any parameter update.
CycleStep cycle_step(nets::TranslationModelImpl& model, const torch::Tensor& x_s, const torch::Tensor& x_t,
                     const std::optional<torch::Tensor>& y_s = std::nullopt,
                     const std::optional<torch::Tensor>& annotated = std::nullopt);

struct Stage1EpochLog {
  int epoch = 0;
  double adv_mod_d = 0;
  double adv_mod_g = 0;
  double cyc = 0;
  /// NaN when no annotated slice was seen.
  double seg_mod = 0;
  double wall_time_s = 0;
};

struct Stage1Result {
  std::filesystem::path last_checkpoint;
  std::filesystem::path log_path;
  std::vector<Stage1EpochLog> epochs;
};

inline const std::vector<std::string> kStage1LogColumns{"epoch", "L_adv_mod_D", "L_adv_mod_G", "L_cyc",
                                                         "L_seg_mod", "wall_time_s"};

/// Trains the translation model on unpaired normalized slices and writes
/// `out_dir`/train_log.csv, `out_dir`/last.ckpt and per-epoch checkpoints.
Stage1Result train_stage1(const Stage1Config& cfg, const SampleSet& source, const SampleSet& target,
                          const std::filesystem::path& out_dir,
                          const std::function<void(const Stage1EpochLog&)>& on_epoch = {});

nets::TranslationModel load_translation_model(const std::filesystem::path& checkpoint);

struct PseudoTargetDataset {
  std::vector<Volume> volumes;
  /// Originating source volume id per entry.
  std::vector<std::string> source_ids;
  std::string checkpoint_id;
};

/// Translates every source volume slice by slice with G_T∘E_S (evaluation
/// mode) and reassembles it. Masks are copied unchanged.
PseudoTargetDataset synthesize_pseudo_targets(nets::TranslationModelImpl& model,
                                              const std::vector<Volume>& source_volumes,
                                              const std::string& checkpoint_id);

/// Volumes as MVL1 files plus provenance.json.
void save_pseudo_targets(const PseudoTargetDataset& ds, const std::filesystem::path& dir);
PseudoTargetDataset load_pseudo_targets(const std::filesystem::path& dir);

/// Mean per-volume Dice of G_seg^T(E_T(X_S')) against Y_S over annotated
/// volumes with a non-empty mask.
double translated_segmentation_dice(nets::TranslationModelImpl& model, const std::vector<Volume>& source_volumes);

/// Mean absolute S -> T -> S reconstruction error on the given slices.
double cycle_reconstruction_error(nets::TranslationModelImpl& model, const torch::Tensor& source_slices);

}  // namespace xmodseg
