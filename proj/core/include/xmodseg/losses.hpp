#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace xmodseg {

/// Named non-negative loss coefficients.
class LossWeights {
 public:
  LossWeights() = default;
  LossWeights(std::initializer_list<std::pair<const std::string, double>> init) : w_(init) {}

  double operator[](const std::string& name) const;
  void set(const std::string& name, double value) { w_[name] = value; }
  bool contains(const std::string& name) const { return w_.count(name) != 0; }
  double sum() const;
  const std::map<std::string, double>& values() const { return w_; }

  /// Subset of the weights restricted to `names` (missing names are skipped).
  LossWeights restricted_to(const std::vector<std::string>& names) const;

  bool operator==(const LossWeights&) const = default;

 private:
  std::map<std::string, double> w_;
};

void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);

namespace weight_names {
inline constexpr const char* kAdvMod = "adv_mod";
inline constexpr const char* kSegMod = "seg_mod";
inline constexpr const char* kCyc = "cyc";
inline constexpr const char* kAdvGen = "adv_gen";
inline constexpr const char* kRec = "rec";
inline constexpr const char* kLat = "lat";
inline constexpr const char* kSegPT = "seg_pT";
inline constexpr const char* kSegST = "seg_st";
}  // namespace weight_names

/// Translation-stage defaults before normalization: (adv 1, seg 1, cyc 10).
LossWeights default_translation_weights();
/// Segmentation-stage defaults before normalization: adversarial 5,
/// reconstruction 50, latent 5 and the given pseudo-target weight.
LossWeights default_segmentation_weights(double seg_pt);

/// Divides each weight by the total. Throws when a weight is negative or
/// every weight is zero.
LossWeights normalize_weights(const LossWeights& w);

torch::Tensor hinge_discriminator_loss(const torch::Tensor& real_scores,
                                       const torch::Tensor& fake_scores);
torch::Tensor hinge_generator_loss(const torch::Tensor& fake_scores);

/// Mean absolute difference.
torch::Tensor l1_reconstruction(const torch::Tensor& x, const torch::Tensor& y);

inline constexpr double kDiceSmoothing = 1.0;

/// 1 - (2 sum(p g) + eps) / (sum p + sum g + eps), summed over every element.
torch::Tensor soft_dice_loss(const torch::Tensor& pred_prob, const torch::Tensor& target_mask,
                             double eps = kDiceSmoothing);

/// Scalar loss terms keyed by weight name.
using LossTerms = std::map<std::string, torch::Tensor>;

/// Weighted sum of `terms` with normalized `weights`. Every weight name must
/// have a term; the error lists what is missing.
torch::Tensor weighted_loss(const LossTerms& terms, const LossWeights& normalized_weights);

/// L_trans: requires the adv_mod, seg_mod and cyc terms. Batches without
/// annotated slices pass a zero seg_mod term.
torch::Tensor translation_loss(const LossTerms& terms, const LossWeights& normalized_weights);

struct CodePair {
  torch::Tensor original;
  torch::Tensor recovered;
};

/// Latent code pairs gathered from the two translation directions.
struct LatentPairs {
  std::vector<CodePair> common;
  /// (sampled u, re-encoded u_AP) pairs from absence-to-presence.
  std::vector<CodePair> unique;
};

/// Mean L1 over all paired codes, weighting each pair by its element count.
/// With `expect_unique` the absence-to-presence pair is mandatory.
torch::Tensor latent_reconstruction_loss(const LatentPairs& pairs, bool expect_unique = true);

enum class SegmentationVariant { kSelfSupervised, kSemiSupervised };

const char* to_string(SegmentationVariant v);
SegmentationVariant segmentation_variant_from_string(const std::string& s);

/// L_Seg^init. The semi-supervised variant requires adv_gen, rec, lat and
/// seg_pT terms; the self-supervised variant requires seg_pT only and rejects
/// the translation terms. Weights are restricted to the present terms and
/// renormalized.
torch::Tensor segmentation_init_loss(const LossTerms& terms, const LossWeights& weights,
                                     SegmentationVariant variant);

/// L_Seg^ST = L_Seg^init + lambda_st L_seg^st, every weight (seg_st included)
/// normalized jointly.
torch::Tensor segmentation_st_loss(const LossTerms& init_terms, const torch::Tensor& st_term,
                                   const LossWeights& weights, SegmentationVariant variant);

}  // namespace xmodseg
