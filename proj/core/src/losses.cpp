#include "xmodseg/losses.hpp"

#include <numeric>

#include "xmodseg/error.hpp"

namespace xmodseg {

double LossWeights::operator[](const std::string& name) const {
  auto it = w_.find(name);
  if (it == w_.end()) throw ValidationError("weights." + name, "no such loss weight");
  return it->second;
}

double LossWeights::sum() const {
  return std::accumulate(w_.begin(), w_.end(), 0.0,
                         [](double acc, const auto& kv) { return acc + kv.second; });
}

LossWeights LossWeights::restricted_to(const std::vector<std::string>& names) const {
  LossWeights out;
  for (const auto& n : names) {
    if (contains(n)) out.set(n, (*this)[n]);
  }
  return out;
}

void to_json(nlohmann::json& j, const LossWeights& w) { j = w.values(); }

void from_json(const nlohmann::json& j, LossWeights& w) {
  w = LossWeights{};
  for (const auto& [k, v] : j.items()) w.set(k, v.get<double>());
}

LossWeights default_translation_weights() {
  return {{weight_names::kAdvMod, 1.0}, {weight_names::kSegMod, 1.0}, {weight_names::kCyc, 10.0}};
}

LossWeights default_segmentation_weights(double seg_pt) {
  return {{weight_names::kAdvGen, 5.0},
          {weight_names::kRec, 50.0},
          {weight_names::kLat, 5.0},
          {weight_names::kSegPT, seg_pt}};
}

LossWeights normalize_weights(const LossWeights& w) {
  for (const auto& [k, v] : w.values()) {
    if (!(v >= 0.0)) throw ValidationError("weights." + k, "must be non-negative");
  }
  const double total = w.sum();
  if (!(total > 0.0)) throw ValidationError("weights", "at least one weight must be positive");
  LossWeights out;
  for (const auto& [k, v] : w.values()) out.set(k, v / total);
  return out;
}

namespace {

void require_nonempty(const torch::Tensor& t, const char* what) {
  if (!t.defined() || t.numel() == 0) throw ShapeError(std::string(what) + " is empty");
}

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes()) {
    std::ostringstream os;
    os << what << ": shape mismatch " << a.sizes() << " vs " << b.sizes();
    throw ShapeError(os.str());
  }
}

}  // namespace

torch::Tensor hinge_discriminator_loss(const torch::Tensor& real_scores,
                                       const torch::Tensor& fake_scores) {
  require_nonempty(real_scores, "real scores");
  require_nonempty(fake_scores, "fake scores");
  return torch::relu(1.0 - real_scores).mean() + torch::relu(1.0 + fake_scores).mean();
}

torch::Tensor hinge_generator_loss(const torch::Tensor& fake_scores) {
  require_nonempty(fake_scores, "fake scores");
  return -fake_scores.mean();
}

torch::Tensor l1_reconstruction(const torch::Tensor& x, const torch::Tensor& y) {
  require_same_shape(x, y, "l1_reconstruction");
  require_nonempty(x, "l1 input");
  return (x - y).abs().mean();
}

torch::Tensor soft_dice_loss(const torch::Tensor& pred_prob, const torch::Tensor& target_mask,
                             double eps) {
  require_same_shape(pred_prob, target_mask, "soft_dice_loss");
  const auto target = target_mask.to(pred_prob.dtype());
  const auto intersection = (pred_prob * target).sum();
  const auto denom = pred_prob.sum() + target.sum();
  return 1.0 - (2.0 * intersection + eps) / (denom + eps);
}

torch::Tensor weighted_loss(const LossTerms& terms, const LossWeights& normalized_weights) {
  std::string missing;
  for (const auto& [name, _] : normalized_weights.values()) {
    if (terms.count(name) == 0 || !terms.at(name).defined()) {
      missing += (missing.empty() ? "" : ", ") + name;
    }
  }
  if (!missing.empty()) throw ValidationError("loss_terms", "missing component(s): " + missing);
  torch::Tensor total;
  for (const auto& [name, w] : normalized_weights.values()) {
    auto term = w * terms.at(name);
    total = total.defined() ? total + term : term;
  }
  return total;
}

torch::Tensor translation_loss(const LossTerms& terms, const LossWeights& normalized_weights) {
  std::string missing;
  for (const char* name : {weight_names::kAdvMod, weight_names::kSegMod, weight_names::kCyc}) {
    if (terms.count(name) == 0 || !terms.at(name).defined()) {
      missing += (missing.empty() ? "" : ", ") + std::string(name);
    }
  }
  if (!missing.empty()) throw ValidationError("loss_terms", "missing component(s): " + missing);
  return weighted_loss(terms, normalized_weights.restricted_to({weight_names::kAdvMod,
                                                                weight_names::kSegMod,
                                                                weight_names::kCyc}));
}

torch::Tensor latent_reconstruction_loss(const LatentPairs& pairs, bool expect_unique) {
  if (pairs.common.empty()) throw ValidationError("latent.common", "no common-code pair");
  if (expect_unique && pairs.unique.empty()) {
    throw ValidationError("latent.unique", "missing (u, u_AP) pair");
  }
  torch::Tensor abs_sum;
  std::int64_t count = 0;
  auto accumulate = [&](const CodePair& p) {
    require_same_shape(p.original, p.recovered, "latent_reconstruction_loss");
    auto s = (p.original - p.recovered).abs().sum();
    abs_sum = abs_sum.defined() ? abs_sum + s : s;
    count += p.original.numel();
  };
  for (const auto& p : pairs.common) accumulate(p);
  for (const auto& p : pairs.unique) accumulate(p);
  return abs_sum / static_cast<double>(count);
}

const char* to_string(SegmentationVariant v) {
  return v == SegmentationVariant::kSelfSupervised ? "self_supervised" : "semi_supervised";
}

SegmentationVariant segmentation_variant_from_string(const std::string& s) {
  if (s == "self_supervised") return SegmentationVariant::kSelfSupervised;
  if (s == "semi_supervised") return SegmentationVariant::kSemiSupervised;
  throw ValidationError("variant", "expected self_supervised or semi_supervised, got '" + s + "'");
}

namespace {

std::vector<std::string> init_term_names(const LossTerms& terms, SegmentationVariant variant) {
  using namespace weight_names;
  const std::vector<std::string> translation{kAdvGen, kRec, kLat};
  if (terms.count(kSegPT) == 0) throw ValidationError("loss_terms", "missing component(s): seg_pT");
  if (variant == SegmentationVariant::kSelfSupervised) {
    for (const auto& n : translation) {
      if (terms.count(n) != 0) {
        throw ValidationError("loss_terms",
                              "term '" + n + "' is not part of the self-supervised variant");
      }
    }
    return {kSegPT};
  }
  std::string missing;
  for (const auto& n : translation) {
    if (terms.count(n) == 0) missing += (missing.empty() ? "" : ", ") + n;
  }
  if (!missing.empty()) throw ValidationError("loss_terms", "missing component(s): " + missing);
  return {kAdvGen, kRec, kLat, kSegPT};
}

}  // namespace

torch::Tensor segmentation_init_loss(const LossTerms& terms, const LossWeights& weights,
                                     SegmentationVariant variant) {
  const auto names = init_term_names(terms, variant);
  return weighted_loss(terms, normalize_weights(weights.restricted_to(names)));
}

torch::Tensor segmentation_st_loss(const LossTerms& init_terms, const torch::Tensor& st_term,
                                   const LossWeights& weights, SegmentationVariant variant) {
  if (init_terms.count(weight_names::kSegST) != 0) {
    throw ValidationError("loss_terms", "seg_st must be passed separately");
  }
  auto names = init_term_names(init_terms, variant);
  names.push_back(weight_names::kSegST);
  if (!weights.contains(weight_names::kSegST)) {
    throw ValidationError("weights.seg_st", "required during self-training");
  }
  LossTerms all = init_terms;
  all[weight_names::kSegST] = st_term;
  return weighted_loss(all, normalize_weights(weights.restricted_to(names)));
}

}  // namespace xmodseg
