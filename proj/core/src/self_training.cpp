#include "xmodseg/self_training.hpp"

#include <cmath>
#include <fstream>

#include "xmodseg/error.hpp"
#include "xmodseg/hash.hpp"
#include "xmodseg/nets/checkpoint.hpp"
#include "xmodseg/training.hpp"
#include "xmodseg/volume_io.hpp"

namespace xmodseg {

namespace fs = std::filesystem;

void SelfTrainingConfig::validate() const {
  if (iterations < 1) throw ValidationError("self_training.iterations", "k must be >= 1");
  if (epochs_per_iteration < 1) throw ValidationError("self_training.epochs_per_iteration", "must be >= 1");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("self_training.alpha", "must lie in (0, 1)");
  if (lr && !(*lr > 0.0)) throw ValidationError("self_training.lr", "must be > 0");
}

void to_json(nlohmann::json& j, const SelfTrainingConfig& c) {
  j = nlohmann::json{{"iterations", c.iterations}, {"epochs_per_iteration", c.epochs_per_iteration},
                     {"alpha", c.alpha}};
  if (c.lr) j["lr"] = *c.lr;
}

void from_json(const nlohmann::json& j, SelfTrainingConfig& c) {
  c = SelfTrainingConfig{};
  for (const auto& [key, value] : j.items()) {
    if (key == "iterations") c.iterations = value.get<int>();
    else if (key == "epochs_per_iteration") c.epochs_per_iteration = value.get<int>();
    else if (key == "alpha") c.alpha = value.get<double>();
    else if (key == "lr") c.lr = value.is_null() ? std::nullopt : std::optional<double>(value.get<double>());
    else throw ValidationError("self_training." + key, "unknown key");
  }
}

Mask threshold_probabilities(std::span<const float> prob, double alpha) {
  Mask m(prob.size());
  for (std::size_t i = 0; i < prob.size(); ++i) m[i] = static_cast<double>(prob[i]) >= alpha ? 1 : 0;
  return m;
}

PseudoLabelSet generate_pseudo_labels(nets::SegmentationNetImpl& model, const std::vector<Volume>& target_volumes,
                                      double alpha, int iteration, const std::string& checkpoint_id) {
  PseudoLabelSet set;
  set.iteration = iteration;
  set.alpha = alpha;
  set.checkpoint_id = checkpoint_id;
  for (const auto& v : target_volumes) {
    Volume out = v;
    out.mask = threshold_probabilities(segment_volume(model, v), alpha);
    out.presence = presence_from_mask(*out.mask);
    set.volumes.push_back(std::move(out));
  }
  return set;
}

nlohmann::json load_lineage(const fs::path& dir) {
  const auto p = dir / "lineage.json";
  if (!fs::exists(p)) return nlohmann::json::array();
  nlohmann::json j;
  std::ifstream(p) >> j;
  return j;
}

void save_pseudo_labels(const PseudoLabelSet& set, const fs::path& dir) {
  const auto sub = dir / ("iter_" + std::to_string(set.iteration));
  auto lineage = load_lineage(dir);
  if (!lineage.empty() && lineage.back().at("iteration").get<int>() >= set.iteration) {
    throw ValidationError("self_training.iteration", "iteration indices must increase");
  }
  fs::create_directories(sub);
  for (const auto& v : set.volumes) save_mask(v, sub / (v.id + ".mvl"));
  lineage.push_back({{"iteration", set.iteration},
                     {"alpha", set.alpha},
                     {"checkpoint_id", set.checkpoint_id},
                     {"directory", sub.filename().string()},
                     {"volume_count", set.volumes.size()}});
  std::ofstream(dir / "lineage.json") << lineage.dump(2) << '\n';
}

SelfTrainingResult run_self_training(const SelfTrainingConfig& cfg, const Stage2Config& stage2,
                                     const fs::path& initial_checkpoint, Stage2Data data,
                                     const std::vector<Volume>& unlabeled_target, const fs::path& out_dir,
                                     const std::vector<Volume>& monitor) {
  cfg.validate();
  if (!fs::exists(initial_checkpoint)) {
    throw MissingArtifactError("train-seg", "initial checkpoint " + initial_checkpoint.string() + " not found");
  }
  if (unlabeled_target.empty()) throw ValidationError("self_training.target", "no target volumes to label");
  SelfTrainingResult result;
  fs::path current = initial_checkpoint;
  fs::create_directories(out_dir);
  CsvWriter metrics(out_dir / "iterations.csv",
                    {"iteration", "input_checkpoint", "val_before", "val_after", "monitor_before", "monitor_after",
                     "pseudo_label_voxels"});
  for (int i = 1; i <= cfg.iterations; ++i) {
    SelfTrainingIteration it;
    it.iteration = i;
    it.input_checkpoint_id = file_sha256(current);
    auto model = load_segmentation_model(current);
    // Labels for round i come only from the checkpoint chosen after round i-1.
    auto labels = generate_pseudo_labels(*model, unlabeled_target, cfg.alpha, i - 1, it.input_checkpoint_id);
    save_pseudo_labels(labels, out_dir / "pseudo_labels");
    for (const auto& v : labels.volumes) {
      for (auto m : *v.mask) it.labeled_voxels += m;
    }
    it.monitor_before = mean_validation_dice(*model, monitor);

    auto cfg2 = stage2;
    cfg2.epochs = cfg.epochs_per_iteration;
    if (cfg.lr) cfg2.optimizer.lr = *cfg.lr;
    cfg2.seed = stage2.seed + static_cast<std::uint64_t>(i) * 7919;
    data.self_labeled = make_hemisphere_set(labels.volumes);
    Stage2Options opts;
    opts.init_checkpoint = current;
    opts.lineage = {{"self_training_iteration", i}, {"input_checkpoint_id", it.input_checkpoint_id},
                    {"pseudo_label_iteration", i - 1}};
    auto res = train_stage2(cfg2, data, out_dir / ("iter_" + std::to_string(i)), opts);
    it.val_before = res.initial_val_dice.value_or(std::nan(""));
    it.val_after = res.best_val_dice;
    it.output_checkpoint = res.best_checkpoint;
    auto tuned = load_segmentation_model(res.best_checkpoint);
    it.monitor_after = mean_validation_dice(*tuned, monitor);
    metrics.row({std::to_string(i), it.input_checkpoint_id, format_number(it.val_before), format_number(it.val_after),
                 format_number(it.monitor_before), format_number(it.monitor_after),
                 std::to_string(it.labeled_voxels)});
    current = res.best_checkpoint;
    result.iterations.push_back(it);
  }
  result.final_checkpoint = current;
  return result;
}

}  // namespace xmodseg
