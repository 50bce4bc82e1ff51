#include "xmodseg/stage1.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

#include "xmodseg/error.hpp"
#include "xmodseg/hash.hpp"
#include "xmodseg/metrics.hpp"
#include "xmodseg/nets/checkpoint.hpp"
#include "xmodseg/volume_io.hpp"

namespace xmodseg {

namespace fs = std::filesystem;
using nets::TranslationModelImpl;

void Stage1Config::validate() const {
  if (epochs < 1) throw ValidationError("stage1.epochs", "must be >= 1");
  if (batch_size < 1) throw ValidationError("stage1.batch_size", "must be >= 1");
  if (slices_per_epoch < 0) throw ValidationError("stage1.slices_per_epoch", "must be >= 0");
  optimizer.validate("stage1.optimizer");
  for (const char* n : {weight_names::kAdvMod, weight_names::kSegMod, weight_names::kCyc}) {
    if (!weights.contains(n)) throw ValidationError(std::string("stage1.weights.") + n, "missing");
  }
  normalize_weights(weights);
  model.generator.validate();
  model.discriminator.validate();
  if (!model.generator.identity_toy) {
    for (auto extent : model.discriminator.input_size) {
      if (extent != model.generator.input_size) {
        throw ValidationError("stage1.model.discriminator.input_size", "must equal the generator input size");
      }
    }
  }
}

void to_json(nlohmann::json& j, const Stage1Config& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"optimizer", c.optimizer},
                     {"weights", c.weights},
                     {"augmentation", c.augmentation},
                     {"seed", c.seed},
                     {"slices_per_epoch", c.slices_per_epoch},
                     {"keep_epoch_checkpoints", c.keep_epoch_checkpoints},
                     {"model", c.model}};
}

void from_json(const nlohmann::json& j, Stage1Config& c) {
  c = Stage1Config{};
  for (const auto& [key, value] : j.items()) {
    if (key == "epochs") c.epochs = value.get<int>();
    else if (key == "batch_size") c.batch_size = value.get<std::int64_t>();
    else if (key == "optimizer") c.optimizer = value.get<OptimizerConfig>();
    else if (key == "weights") c.weights = value.get<LossWeights>();
    else if (key == "augmentation") c.augmentation = value.get<bool>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else if (key == "slices_per_epoch") c.slices_per_epoch = value.get<std::int64_t>();
    else if (key == "keep_epoch_checkpoints") c.keep_epoch_checkpoints = value.get<bool>();
    else if (key == "model") c.model = value.get<nets::TranslationModelConfig>();
    else throw ValidationError("stage1." + key, "unknown key");
  }
}

CycleOutputs forward_cycle(TranslationModelImpl& model, const torch::Tensor& x_s, const torch::Tensor& x_t,
                           const std::optional<torch::Tensor>& y_s,
                           const std::optional<torch::Tensor>& annotated) {
  if (x_s.dim() != 4 || x_t.dim() != 4) throw ShapeError("translation batches must be (batch, 1, H, W)");
  if (x_s.sizes().slice(2) != x_t.sizes().slice(2)) {
    throw ShapeError("source and target slices differ in spatial size: " + c10::str(x_s.sizes()) + " vs " +
                     c10::str(x_t.sizes()));
  }
  CycleOutputs out;
  auto fs_ = model.source_to_target->encode(x_s);
  out.x_s_prime = model.source_to_target->translate(fs_);
  out.y_s_hat = model.source_to_target->segment(fs_);
  auto ft_prime = model.target_to_source->encode(out.x_s_prime);
  out.x_s_dprime = model.target_to_source->translate(ft_prime);
  out.y_s_prime_hat = model.target_to_source->segment(ft_prime);

  auto ft = model.target_to_source->encode(x_t);
  out.x_t_prime = model.target_to_source->translate(ft);
  out.x_t_dprime = model.source_to_target->translate(model.source_to_target->encode(out.x_t_prime));

  out.terms[weight_names::kCyc] = l1_reconstruction(out.x_s_dprime, x_s) + l1_reconstruction(out.x_t_dprime, x_t);

  if (y_s && y_s->defined() && y_s->numel() > 0) {
    if (y_s->sizes() != x_s.sizes()) throw ShapeError("source masks must match the source batch shape");
    torch::Tensor rows;
    if (annotated && annotated->defined()) {
      rows = annotated->nonzero().flatten();
    } else {
      rows = torch::arange(x_s.size(0));
    }
    if (rows.numel() > 0) {
      auto y = y_s->index_select(0, rows);
      out.terms[weight_names::kSegMod] = 0.5 * (soft_dice_loss(out.y_s_hat.index_select(0, rows), y) +
                                                soft_dice_loss(out.y_s_prime_hat.index_select(0, rows), y));
    }
  }
  return out;
}

torch::Tensor translation_discriminator_loss(TranslationModelImpl& model, const CycleOutputs& out,
                                             const torch::Tensor& x_s, const torch::Tensor& x_t) {
  auto lt = nets::multiscale_discriminator_loss(model.disc_target->forward(x_t),
                                                model.disc_target->forward(out.x_s_prime.detach()));
  auto ls = nets::multiscale_discriminator_loss(model.disc_source->forward(x_s),
                                                model.disc_source->forward(out.x_t_prime.detach()));
  return lt + ls;
}

torch::Tensor translation_generator_adversarial_loss(TranslationModelImpl& model, const CycleOutputs& out) {
  return nets::multiscale_generator_loss(model.disc_target->forward(out.x_s_prime)) +
         nets::multiscale_generator_loss(model.disc_source->forward(out.x_t_prime));
}

CycleStep cycle_step(TranslationModelImpl& model, const torch::Tensor& x_s, const torch::Tensor& x_t,
                     const std::optional<torch::Tensor>& y_s, const std::optional<torch::Tensor>& annotated) {
  CycleStep step;
  step.outputs = forward_cycle(model, x_s, x_t, y_s, annotated);
  for (const auto& [k, v] : step.outputs.terms) step.losses[k] = v.item<double>();
  step.losses["adv_mod_D"] = translation_discriminator_loss(model, step.outputs, x_s, x_t).item<double>();
  step.losses[weight_names::kAdvMod] = translation_generator_adversarial_loss(model, step.outputs).item<double>();
  return step;
}

namespace {

std::string epoch_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "epoch_%04d.ckpt", epoch);
  return buf;
}

torch::Tensor slices_of(const Volume& v) {
  return torch::from_blob(const_cast<float*>(v.data.data()), {v.dims.depth, 1, v.dims.height, v.dims.width},
                          torch::kFloat32)
      .clone();
}

Volume from_slices(const torch::Tensor& t, const Volume& like) {
  Volume out = like;
  auto c = t.contiguous().to(torch::kFloat32);
  out.data.assign(c.data_ptr<float>(), c.data_ptr<float>() + c.numel());
  return out;
}

}  // namespace

Stage1Result train_stage1(const Stage1Config& cfg, const SampleSet& source, const SampleSet& target,
                          const fs::path& out_dir, const std::function<void(const Stage1EpochLog&)>& on_epoch) {
  cfg.validate();
  if (source.size() == 0) throw ValidationError("stage1.source", "no source slices");
  if (target.size() == 0) throw ValidationError("stage1.target", "no target slices");
  if (!cfg.model.generator.identity_toy) {
    const auto s = cfg.model.generator.input_size;
    if (source.images.size(2) != s || source.images.size(3) != s || target.images.size(2) != s ||
        target.images.size(3) != s) {
      throw ShapeError("slices must be " + std::to_string(s) + "x" + std::to_string(s) +
                       " for this generator, got " + c10::str(source.images.sizes()) + " and " +
                       c10::str(target.images.sizes()));
    }
  }
  seed_everything(cfg.seed);
  std::mt19937_64 rng(cfg.seed ^ 0x5eedULL);
  nets::TranslationModel model(cfg.model);
  model->train();
  auto g_opt = make_optimizer(model->generator_parameters(), cfg.optimizer);
  auto d_opt = make_optimizer(model->discriminator_parameters(), cfg.optimizer);
  const auto weights = normalize_weights(cfg.weights);

  fs::create_directories(out_dir / "checkpoints");
  Stage1Result result;
  result.log_path = out_dir / "train_log.csv";
  result.last_checkpoint = out_dir / "last.ckpt";
  CsvWriter log(result.log_path, kStage1LogColumns);
  const auto start = std::chrono::steady_clock::now();

  nets::CheckpointManifest manifest{"translation", cfg.model};
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double sum_d = 0, sum_g = 0, sum_cyc = 0, sum_seg = 0;
    int steps = 0, seg_steps = 0;
    for (const auto& batch : shuffled_batches(source.size(), cfg.batch_size, rng, cfg.slices_per_epoch)) {
      auto xs = index_rows(source.images, batch);
      auto ys = index_rows(source.masks, batch);
      auto ann = index_rows(source.annotated, batch);
      auto tidx = random_indices(target.size(), static_cast<std::int64_t>(batch.size()), rng);
      auto xt = index_rows(target.images, tidx);
      if (cfg.augmentation) {
        augment_batch(xs, ys, rng);
        auto unused = torch::zeros_like(xt);
        augment_batch(xt, unused, rng);
      }
      auto out = forward_cycle(*model, xs, xt, ys, ann);

      d_opt->zero_grad();
      auto ld = translation_discriminator_loss(*model, out, xs, xt);
      ld.backward();
      d_opt->step();

      g_opt->zero_grad();
      auto lg_adv = translation_generator_adversarial_loss(*model, out);
      LossTerms terms = out.terms;
      terms[weight_names::kAdvMod] = lg_adv;
      const bool has_seg = terms.count(weight_names::kSegMod) != 0;
      if (!has_seg) terms[weight_names::kSegMod] = torch::zeros({});
      auto lg = translation_loss(terms, weights);
      lg.backward();
      g_opt->step();

      sum_d += ld.item<double>();
      sum_g += lg_adv.item<double>();
      sum_cyc += terms[weight_names::kCyc].item<double>();
      if (has_seg) {
        sum_seg += terms[weight_names::kSegMod].item<double>();
        ++seg_steps;
      }
      ++steps;
      if (!std::isfinite(ld.item<double>()) || !std::isfinite(lg.item<double>())) {
        throw Error("stage1: non-finite loss at epoch " + std::to_string(epoch));
      }
    }
    Stage1EpochLog rec;
    rec.epoch = epoch;
    rec.adv_mod_d = sum_d / steps;
    rec.adv_mod_g = sum_g / steps;
    rec.cyc = sum_cyc / steps;
    rec.seg_mod = seg_steps > 0 ? sum_seg / seg_steps : std::numeric_limits<double>::quiet_NaN();
    rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log.row({std::to_string(epoch), format_number(rec.adv_mod_d), format_number(rec.adv_mod_g),
             format_number(rec.cyc), format_number(rec.seg_mod), format_number(rec.wall_time_s)});
    manifest.extra = {{"epoch", epoch}, {"seed", cfg.seed}};
    if (cfg.keep_epoch_checkpoints) {
      nets::save_checkpoint(out_dir / "checkpoints" / epoch_name(epoch), manifest, *model);
    }
    nets::save_checkpoint(result.last_checkpoint, manifest, *model);
    result.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

nets::TranslationModel load_translation_model(const fs::path& checkpoint) {
  auto ck = nets::read_checkpoint(checkpoint);
  nets::TranslationModel model(ck.manifest.config.get<nets::TranslationModelConfig>());
  nets::load_state(*model, ck, "translation");
  model->eval();
  return model;
}

PseudoTargetDataset synthesize_pseudo_targets(TranslationModelImpl& model, const std::vector<Volume>& source_volumes,
                                              const std::string& checkpoint_id) {
  PseudoTargetDataset ds;
  ds.checkpoint_id = checkpoint_id;
  const bool was_training = model.is_training();
  model.eval();
  torch::NoGradGuard no_grad;
  const auto& g = model.config().generator;
  for (const auto& v : source_volumes) {
    v.validate();
    if (!g.identity_toy && (v.dims.height != g.input_size || v.dims.width != g.input_size)) {
      throw ShapeError("volume '" + v.id + "' slices are " + std::to_string(v.dims.height) + "x" +
                       std::to_string(v.dims.width) + ", the translation model expects " +
                       std::to_string(g.input_size) + "x" + std::to_string(g.input_size));
    }
    auto x = slices_of(v);
    auto y = model.source_to_target->translate(model.source_to_target->encode(x));
    Volume pt = from_slices(y, v);
    pt.modality = Modality::kTarget;
    ds.volumes.push_back(std::move(pt));
    ds.source_ids.push_back(v.id);
  }
  model.train(was_training);
  return ds;
}

void save_pseudo_targets(const PseudoTargetDataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  save_volume_dir(ds.volumes, dir);
  nlohmann::json prov{{"checkpoint_id", ds.checkpoint_id}, {"volumes", nlohmann::json::array()}};
  for (std::size_t i = 0; i < ds.volumes.size(); ++i) {
    prov["volumes"].push_back({{"id", ds.volumes[i].id}, {"source_id", ds.source_ids[i]}});
  }
  std::ofstream(dir / "provenance.json") << prov.dump(2) << '\n';
}

PseudoTargetDataset load_pseudo_targets(const fs::path& dir) {
  const auto prov_path = dir / "provenance.json";
  if (!fs::exists(prov_path)) throw MissingArtifactError("synth", "no provenance.json in " + dir.string());
  nlohmann::json prov;
  std::ifstream(prov_path) >> prov;
  PseudoTargetDataset ds;
  ds.checkpoint_id = prov.at("checkpoint_id").get<std::string>();
  ds.volumes = load_volume_dir(dir);
  std::map<std::string, std::string> source_of;
  for (const auto& e : prov.at("volumes")) source_of[e.at("id").get<std::string>()] = e.at("source_id").get<std::string>();
  for (const auto& v : ds.volumes) {
    auto it = source_of.find(v.id);
    if (it == source_of.end()) throw FormatError(0, "pseudo-target '" + v.id + "' missing from provenance.json");
    ds.source_ids.push_back(it->second);
  }
  return ds;
}

double translated_segmentation_dice(TranslationModelImpl& model, const std::vector<Volume>& source_volumes) {
  const bool was_training = model.is_training();
  model.eval();
  torch::NoGradGuard no_grad;
  double total = 0;
  int n = 0;
  for (const auto& v : source_volumes) {
    if (!v.mask || !v.has_tumor()) continue;
    auto x = slices_of(v);
    auto xp = model.source_to_target->translate(model.source_to_target->encode(x));
    auto p = model.target_to_source->segment(model.target_to_source->encode(xp)).contiguous();
    std::span<const float> prob(p.data_ptr<float>(), static_cast<std::size_t>(p.numel()));
    total += dice_score(binarize(prob), *v.mask);
    ++n;
  }
  model.train(was_training);
  if (n == 0) throw ValidationError("volumes", "no annotated volume with a tumor");
  return total / n;
}

double cycle_reconstruction_error(TranslationModelImpl& model, const torch::Tensor& source_slices) {
  const bool was_training = model.is_training();
  model.eval();
  torch::NoGradGuard no_grad;
  auto xp = model.source_to_target->translate(model.source_to_target->encode(source_slices));
  auto xpp = model.target_to_source->translate(model.target_to_source->encode(xp));
  model.train(was_training);
  return (xpp - source_slices).abs().mean().item<double>();
}

}  // namespace xmodseg
