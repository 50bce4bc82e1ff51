#include "xmodseg/config.hpp"

#include <cmath>
#include <fstream>

#include "xmodseg/error.hpp"

namespace xmodseg {

namespace fs = std::filesystem;

namespace {

void check_fraction(double v, const std::string& field, bool allow_zero) {
  const bool ok = allow_zero ? (v >= 0.0 && v <= 1.0) : (v > 0.0 && v <= 1.0);
  if (!ok) throw ValidationError(field, allow_zero ? "must lie in [0, 1]" : "must lie in (0, 1]");
}

}  // namespace

void DataConfig::validate() const {
  phantom.validate();
  bool listed = false;
  for (double f : kSourceAnnotationFractions) listed = listed || std::abs(f - source_annotation_fraction) < 1e-9;
  if (!listed) {
    throw ValidationError("data.source_annotation_fraction", "must be one of 0.01, 0.1, 0.4, 0.7, 1.0");
  }
  check_fraction(target_annotation_fraction, "data.target_annotation_fraction", true);
  check_fraction(source_train_fraction, "data.source_train_fraction", false);
  check_fraction(target_train_fraction, "data.target_train_fraction", false);
  check_fraction(target_val_fraction, "data.target_val_fraction", true);
  if (target_train_fraction + target_val_fraction >= 1.0) {
    throw ValidationError("data.target_val_fraction", "training plus validation share must leave a test split");
  }
  if (phantom.volume_count < 10) {
    throw ValidationError("data.phantom.volume_count", "needs at least 10 volumes to fill every split");
  }
}

void to_json(nlohmann::json& j, const DataConfig& c) {
  j = nlohmann::json{{"phantom", c.phantom},
                     {"source_annotation_fraction", c.source_annotation_fraction},
                     {"target_annotation_fraction", c.target_annotation_fraction},
                     {"source_train_fraction", c.source_train_fraction},
                     {"target_train_fraction", c.target_train_fraction},
                     {"target_val_fraction", c.target_val_fraction}};
}

void from_json(const nlohmann::json& j, DataConfig& c) {
  c = DataConfig{};
  for (const auto& [key, value] : j.items()) {
    if (key == "phantom") c.phantom = value.get<PhantomConfig>();
    else if (key == "source_annotation_fraction") c.source_annotation_fraction = value.get<double>();
    else if (key == "target_annotation_fraction") c.target_annotation_fraction = value.get<double>();
    else if (key == "source_train_fraction") c.source_train_fraction = value.get<double>();
    else if (key == "target_train_fraction") c.target_train_fraction = value.get<double>();
    else if (key == "target_val_fraction") c.target_val_fraction = value.get<double>();
    else throw ValidationError("data." + key, "unknown key");
  }
}

void ReferenceConfig::validate() const {
  if (epochs < 0) throw ValidationError("references.epochs", "must be >= 0");
}

void to_json(nlohmann::json& j, const ReferenceConfig& c) {
  j = nlohmann::json{{"baseline", c.baseline}, {"supervised", c.supervised}, {"epochs", c.epochs}};
}

void from_json(const nlohmann::json& j, ReferenceConfig& c) {
  c = ReferenceConfig{};
  for (const auto& [key, value] : j.items()) {
    if (key == "baseline") c.baseline = value.get<bool>();
    else if (key == "supervised") c.supervised = value.get<bool>();
    else if (key == "epochs") c.epochs = value.get<int>();
    else throw ValidationError("references." + key, "unknown key");
  }
}

ExperimentConfig ExperimentConfig::desk() {
  ExperimentConfig c;
  c.preset = "desk";
  c.data.phantom.volume_count = 200;
  c.data.phantom.dims = {16, 32, 32};

  // Short schedules need larger steps than the full preset.
  c.stage1.epochs = 30;
  c.stage1.batch_size = 15;
  c.stage1.optimizer.lr = 1e-3;
  c.stage1.slices_per_epoch = 600;
  c.stage1.keep_epoch_checkpoints = false;
  auto& g = c.stage1.model.generator;
  g.base_channels = 8;
  g.depth = 3;
  g.attention_layers = 1;
  g.heads = 4;
  auto& d1 = c.stage1.model.discriminator;
  d1.width_scale = 0.25;
  d1.num_scales = 2;
  d1.num_downsamples = 3;

  c.stage2.epochs = 16;
  c.stage2.batch_size = 4;
  c.stage2.optimizer.lr = 3e-3;
  // One full-annotation pass; fixed so every annotation fraction gets the same number of updates.
  c.stage2.steps_per_epoch = 40;
  c.stage2.keep_epoch_checkpoints = false;
  auto& m = c.stage2.model;
  m = nets::SegmentationNetConfig::paper_default(SegmentationVariant::kSemiSupervised);
  m.encoder = {{8, 1, 0, 0}, {16, 2, 0, 0}, {32, 0, 1, 2}, {64, 0, 1, 4}};
  m.decoder = {{32, 0, 1, 2}, {16, 2, 0, 0}, {8, 2, 0, 0}};
  m.discriminator.width_scale = 0.25;
  m.discriminator.num_scales = 2;
  m.discriminator.num_downsamples = 2;

  c.self_training.iterations = 3;
  c.self_training.epochs_per_iteration = 4;
  c.self_training.lr = 1e-3;
  c.finalize();
  return c;
}

ExperimentConfig ExperimentConfig::full() {
  ExperimentConfig c;
  c.preset = "full";
  c.data.phantom.dims = {16, 32, 32};
  c.stage1.model.discriminator.num_downsamples = 3;
  c.finalize();
  return c;
}

ExperimentConfig ExperimentConfig::from_preset(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "full") return full();
  throw ValidationError("preset", "unknown preset '" + name + "' (expected desk or full)");
}

void ExperimentConfig::finalize() {
  if (seed) {
    data.phantom.seed = *seed;
    stage1.seed = *seed;
    stage2.seed = *seed;
  }
  if (!seg_pt_explicit) {
    stage2.weights.set(weight_names::kSegPT, seg_pt_weight_for_fraction(data.source_annotation_fraction));
  }
  const auto& dims = data.phantom.dims;
  if (!stage1.model.generator.identity_toy) stage1.model.generator.input_size = dims.height;
  stage1.model.discriminator.spatial_dims = 2;
  stage1.model.discriminator.input_size = {dims.height, dims.width};
  stage2.model.input_dims = {dims.depth, dims.height, (dims.width + 1) / 2};
  stage2.model.discriminator.spatial_dims = 3;
  stage2.model.discriminator.input_size = {stage2.model.input_dims.depth, stage2.model.input_dims.height,
                                           stage2.model.input_dims.width};
}

void ExperimentConfig::set_seed(std::uint64_t s) {
  seed = s;
  finalize();
}

void ExperimentConfig::validate() const {
  if (schema_version != kConfigSchemaVersion) {
    throw ValidationError("schema_version", "unsupported version " + std::to_string(schema_version) +
                                                " (expected " + std::to_string(kConfigSchemaVersion) + ")");
  }
  data.validate();
  if (data.phantom.dims.height != data.phantom.dims.width) {
    throw ValidationError("data.phantom.dims", "slices must be square (height == width)");
  }
  stage1.validate();
  stage2.validate();
  self_training.validate();
  references.validate();
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json{{"schema_version", c.schema_version},
                     {"preset", c.preset},
                     {"data", c.data},
                     {"stage1", c.stage1},
                     {"stage2", c.stage2},
                     {"self_training", c.self_training},
                     {"references", c.references}};
  if (c.seed) j["seed"] = *c.seed;
}

ExperimentConfig parse_config(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("config", "top level must be an object");
  try {
    if (!j.contains("schema_version")) throw ValidationError("schema_version", "missing");
    const int version = j.at("schema_version").get<int>();
    if (version != kConfigSchemaVersion) {
      throw ValidationError("schema_version", "unsupported version " + std::to_string(version));
    }
    const auto preset = j.value("preset", std::string("desk"));
    nlohmann::json merged = ExperimentConfig::from_preset(preset);
    merged.merge_patch(j);

    ExperimentConfig c;
    for (const auto& [key, value] : merged.items()) {
      if (key == "schema_version") c.schema_version = value.get<int>();
      else if (key == "preset") c.preset = value.get<std::string>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "data") c.data = value.get<DataConfig>();
      else if (key == "stage1") c.stage1 = value.get<Stage1Config>();
      else if (key == "stage2") c.stage2 = value.get<Stage2Config>();
      else if (key == "self_training") c.self_training = value.get<SelfTrainingConfig>();
      else if (key == "references") c.references = value.get<ReferenceConfig>();
      else throw ValidationError(key, "unknown key");
    }
    const auto pt = nlohmann::json::json_pointer("/stage2/weights/seg_pT");
    c.seg_pt_explicit = j.contains(pt);
    c.finalize();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config", std::string("malformed value: ") + e.what());
  }
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config", path.string() + ": " + e.what());
  }
  return parse_config(j);
}

void save_config(const ExperimentConfig& c, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << nlohmann::json(c).dump(2) << '\n';
}

}  // namespace xmodseg
