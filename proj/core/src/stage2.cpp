#include "xmodseg/stage2.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "xmodseg/error.hpp"
#include "xmodseg/metrics.hpp"
#include "xmodseg/nets/checkpoint.hpp"

namespace xmodseg {

namespace fs = std::filesystem;
using nets::SegmentationNetImpl;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string epoch_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "epoch_%04d.ckpt", epoch);
  return buf;
}

}  // namespace

void Stage2Config::validate() const {
  if (epochs < 1) throw ValidationError("stage2.epochs", "must be >= 1");
  if (batch_size < 1) throw ValidationError("stage2.batch_size", "must be >= 1");
  if (steps_per_epoch < 0) throw ValidationError("stage2.steps_per_epoch", "must be >= 0");
  optimizer.validate("stage2.optimizer");
  if (!weights.contains(weight_names::kSegPT) || !(weights[weight_names::kSegPT] > 0.0)) {
    throw ValidationError("stage2.weights.seg_pT", "must be > 0");
  }
  if (variant() == SegmentationVariant::kSemiSupervised && ablation.any_translation()) {
    for (const char* n : {weight_names::kAdvGen, weight_names::kRec, weight_names::kLat}) {
      if (!weights.contains(n)) throw ValidationError(std::string("stage2.weights.") + n, "missing");
    }
  }
  if (ablation.absence_to_presence && !ablation.presence_to_absence) {
    throw ValidationError("stage2.ablation.absence_to_presence", "requires presence_to_absence");
  }
  normalize_weights(weights);
  model.validate();
}

void to_json(nlohmann::json& j, const Stage2Config& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"optimizer", c.optimizer},
                     {"weights", c.weights},
                     {"seed", c.seed},
                     {"steps_per_epoch", c.steps_per_epoch},
                     {"keep_epoch_checkpoints", c.keep_epoch_checkpoints},
                     {"ablation",
                      {{"presence_to_absence", c.ablation.presence_to_absence},
                       {"absence_to_presence", c.ablation.absence_to_presence}}},
                     {"model", c.model}};
}

void from_json(const nlohmann::json& j, Stage2Config& c) {
  c = Stage2Config{};
  for (const auto& [key, value] : j.items()) {
    if (key == "epochs") c.epochs = value.get<int>();
    else if (key == "batch_size") c.batch_size = value.get<std::int64_t>();
    else if (key == "optimizer") c.optimizer = value.get<OptimizerConfig>();
    else if (key == "weights") c.weights = value.get<LossWeights>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else if (key == "steps_per_epoch") c.steps_per_epoch = value.get<std::int64_t>();
    else if (key == "keep_epoch_checkpoints") c.keep_epoch_checkpoints = value.get<bool>();
    else if (key == "ablation") {
      for (const auto& [k, v] : value.items()) {
        if (k == "presence_to_absence") c.ablation.presence_to_absence = v.get<bool>();
        else if (k == "absence_to_presence") c.ablation.absence_to_presence = v.get<bool>();
        else throw ValidationError("stage2.ablation." + k, "unknown key");
      }
    } else if (key == "model") c.model = value.get<nets::SegmentationNetConfig>();
    else throw ValidationError("stage2." + key, "unknown key");
  }
}

double seg_pt_weight_for_fraction(double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ValidationError("annotation_fraction", "must lie in (0, 1]");
  }
  static const std::vector<std::pair<double, double>> schedule{
      {1.0, 100.0}, {0.7, 50.0}, {0.4, 25.0}, {0.1, 1.0}, {0.01, 0.1}};
  for (const auto& [f, w] : schedule) {
    if (fraction >= f - 1e-12) return w;
  }
  return schedule.back().second;
}

SampleSet make_hemisphere_set(const std::vector<Volume>& volumes) {
  std::vector<Volume> halves;
  halves.reserve(volumes.size() * 2);
  for (const auto& v : volumes) {
    auto [l, r] = split_hemispheres(v);
    halves.push_back(std::move(l));
    halves.push_back(std::move(r));
  }
  return make_volume_set(halves);
}

std::pair<SampleSet, SampleSet> make_presence_sets(const std::vector<Volume>& volumes) {
  std::vector<Volume> absent, present;
  for (const auto& v : volumes) {
    auto [l, r] = split_hemispheres(v);
    for (auto* h : {&l, &r}) {
      if (h->presence == PresenceLabel::kUnknown) {
        throw ValidationError("target_volumes", "hemisphere '" + h->id + "' has no presence label");
      }
      auto& dst = h->presence == PresenceLabel::kPresent ? present : absent;
      h->mask.reset();
      dst.push_back(std::move(*h));
    }
  }
  return {make_volume_set(absent), make_volume_set(present)};
}

std::vector<float> segment_volume(SegmentationNetImpl& model, const Volume& v) {
  if (v.dims.width % 2 != 0) throw ShapeError("volume width must be even to stitch hemispheres");
  auto [l, r] = split_hemispheres(v);
  l.mask.reset();
  r.mask.reset();
  auto set = make_volume_set({l, r});
  const bool was_training = model.is_training();
  model.eval();
  torch::Tensor p;
  {
    torch::NoGradGuard no_grad;
    p = model.segment(set.images).contiguous();
  }
  model.train(was_training);
  const auto half = static_cast<std::size_t>(p.size(2) * p.size(3) * p.size(4));
  std::span<const float> all(p.data_ptr<float>(), 2 * half);
  return join_hemispheres(all.subspan(0, half), all.subspan(half, half), v.dims);
}

double mean_validation_dice(SegmentationNetImpl& model, const std::vector<Volume>& volumes) {
  double total = 0;
  int n = 0;
  for (const auto& v : volumes) {
    if (!v.mask || !v.has_tumor()) continue;
    const auto prob = segment_volume(model, v);
    total += dice_score(binarize(prob), *v.mask);
    ++n;
  }
  return n > 0 ? total / n : kNaN;
}

nets::SegmentationNet load_segmentation_model(const fs::path& checkpoint) {
  auto ck = nets::read_checkpoint(checkpoint);
  nets::SegmentationNet model(ck.manifest.config.get<nets::SegmentationNetConfig>());
  nets::load_state(*model, ck, "segmentation");
  model->eval();
  return model;
}

namespace {

struct StepLosses {
  torch::Tensor total;
  torch::Tensor disc;
  std::map<std::string, double> values;
  torch::Tensor u_sample;
};

void accumulate(std::map<std::string, std::pair<double, int>>& acc, const std::map<std::string, double>& v) {
  for (const auto& [k, x] : v) {
    auto& a = acc[k];
    a.first += x;
    a.second += 1;
  }
}

double mean_of(const std::map<std::string, std::pair<double, int>>& acc, const std::string& k) {
  auto it = acc.find(k);
  return it == acc.end() || it->second.second == 0 ? kNaN : it->second.first / it->second.second;
}

}  // namespace

Stage2Result train_stage2(const Stage2Config& cfg, const Stage2Data& data, const fs::path& out_dir,
                          const Stage2Options& options) {
  using namespace weight_names;
  cfg.validate();
  const bool semi = cfg.variant() == SegmentationVariant::kSemiSupervised;
  const bool translate = semi && cfg.ablation.presence_to_absence;
  const bool a_to_p = translate && cfg.ablation.absence_to_presence;
  const bool self_training = data.self_labeled.size() > 0;
  if (data.labeled.size() == 0) throw ValidationError("stage2.labeled", "no annotated training volumes");
  if (data.labeled.annotated_count() != data.labeled.size()) {
    throw ValidationError("stage2.labeled", "every labeled sample needs a mask");
  }
  if (translate && data.absent.size() == 0) {
    throw ValidationError("stage2.target", "semi-supervised training needs A-labeled real target volumes");
  }
  if (translate && data.present.size() == 0) {
    throw ValidationError("stage2.target", "semi-supervised training needs P-labeled real target volumes");
  }
  LossWeights weights = cfg.weights;
  if (self_training && !weights.contains(kSegST)) weights.set(kSegST, weights[kSegPT]);

  seed_everything(cfg.seed);
  std::mt19937_64 rng(cfg.seed ^ 0x2b5eedULL);
  nets::SegmentationNet model(cfg.model);
  if (options.init_checkpoint) {
    auto ck = nets::read_checkpoint(*options.init_checkpoint);
    nets::load_state(*model, ck, "segmentation");
  }
  model->train();
  auto g_opt = make_optimizer(model->generator_parameters(), cfg.optimizer);
  std::unique_ptr<torch::optim::Adam> d_opt;
  if (translate) d_opt = make_optimizer(model->discriminator_parameters(), cfg.optimizer);

  fs::create_directories(out_dir / "checkpoints");
  Stage2Result result;
  result.log_path = out_dir / "train_log.csv";
  result.best_checkpoint = out_dir / "best.ckpt";
  result.last_checkpoint = out_dir / "last.ckpt";
  result.best_val_dice = -std::numeric_limits<double>::infinity();
  CsvWriter log(result.log_path, kStage2LogColumns);
  std::ofstream steps_log;
  if (a_to_p) steps_log.open(out_dir / "u_samples.jsonl", std::ios::trunc);

  nets::CheckpointManifest manifest{"segmentation", cfg.model};
  const auto save = [&](const fs::path& p, int epoch, double val) {
    manifest.extra = {{"epoch", epoch}, {"val_dice", format_number(val)}, {"seed", cfg.seed},
                      {"lineage", options.lineage}};
    nets::save_checkpoint(p, manifest, *model);
  };

  if (options.init_checkpoint && !data.validation.empty()) {
    const double v0 = mean_validation_dice(*model, data.validation);
    result.initial_val_dice = v0;
    result.best_val_dice = std::isnan(v0) ? result.best_val_dice : v0;
    save(result.best_checkpoint, -1, v0);
  }

  const auto variant_for_loss = translate ? SegmentationVariant::kSemiSupervised : SegmentationVariant::kSelfSupervised;
  const auto b = cfg.batch_size;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::map<std::string, std::pair<double, int>> acc;
    std::vector<std::vector<std::int64_t>> batches;
    if (cfg.steps_per_epoch > 0) {
      for (std::int64_t s = 0; s < cfg.steps_per_epoch; ++s) {
        batches.push_back(random_indices(data.labeled.size(), std::min(b, data.labeled.size()), rng));
      }
    } else {
      batches = shuffled_batches(data.labeled.size(), b, rng);
    }
    for (std::size_t step = 0; step < batches.size(); ++step) {
      const auto& batch = batches[step];
      auto x_l = index_rows(data.labeled.images, batch);
      auto y_l = index_rows(data.labeled.masks, batch);
      LossTerms terms;
      std::map<std::string, double> values;
      terms[kSegPT] = soft_dice_loss(model->segment(x_l), y_l);

      torch::Tensor x_a, x_p;
      nets::PresenceToAbsence pa;
      nets::AbsenceToPresence ap;
      if (translate) {
        x_p = index_rows(data.present.images, random_indices(data.present.size(), b, rng));
        x_a = index_rows(data.absent.images, random_indices(data.absent.size(), b, rng));
        pa = nets::presence_to_absence(*model, x_p);
        auto rec = l1_reconstruction(pa.x_pp, x_p);
        LatentPairs pairs;
        auto re_pa = model->encode_partition(pa.x_pa);
        pairs.common.push_back({pa.codes.c, re_pa.c});
        if (a_to_p) {
          const auto f = std::int64_t{1} << (cfg.model.encoder.size() - 1);
          const auto u_channels = cfg.model.bottleneck_channels() - cfg.model.common_channels();
          auto u = torch::randn({x_a.size(0), u_channels, x_a.size(2) / f, x_a.size(3) / f, x_a.size(4) / f});
          ap = nets::absence_to_presence(*model, x_a, u);
          rec = rec + l1_reconstruction(ap.x_aa, x_a);
          auto re_ap = model->encode_partition(ap.x_ap);
          pairs.common.push_back({ap.codes.c, re_ap.c});
          pairs.unique.push_back({u, re_ap.u});
          auto flat = u.flatten().contiguous();
          steps_log << nlohmann::json{{"epoch", epoch},
                                      {"step", step},
                                      {"u", std::vector<float>(flat.data_ptr<float>(),
                                                               flat.data_ptr<float>() + flat.numel())}}
                           .dump()
                    << '\n';
        }
        terms[kRec] = rec;
        terms[kLat] = latent_reconstruction_loss(pairs, a_to_p);

        // Discriminators first, on detached fakes.
        d_opt->zero_grad();
        auto ld = nets::multiscale_discriminator_loss(model->disc_absent()->forward(x_a),
                                                      model->disc_absent()->forward(pa.x_pa.detach()));
        if (a_to_p) {
          ld = ld + nets::multiscale_discriminator_loss(model->disc_present()->forward(x_p),
                                                        model->disc_present()->forward(ap.x_ap.detach()));
        }
        ld.backward();
        d_opt->step();
        values["adv_gen_D"] = ld.item<double>();

        auto lg = nets::multiscale_generator_loss(model->disc_absent()->forward(pa.x_pa));
        if (a_to_p) lg = lg + nets::multiscale_generator_loss(model->disc_present()->forward(ap.x_ap));
        terms[kAdvGen] = lg;
      }

      torch::Tensor total;
      if (self_training) {
        auto idx = random_indices(data.self_labeled.size(), b, rng);
        auto x_s = index_rows(data.self_labeled.images, idx);
        auto y_s = index_rows(data.self_labeled.masks, idx);
        auto st = soft_dice_loss(model->segment(x_s), y_s);
        values[kSegST] = st.item<double>();
        total = segmentation_st_loss(terms, st, weights, variant_for_loss);
      } else {
        total = segmentation_init_loss(terms, weights, variant_for_loss);
      }
      g_opt->zero_grad();
      total.backward();
      g_opt->step();

      for (const auto& [k, t] : terms) values[k] = t.item<double>();
      if (!std::isfinite(total.item<double>())) {
        throw Error("stage2: non-finite loss at epoch " + std::to_string(epoch));
      }
      accumulate(acc, values);
    }

    Stage2EpochLog rec;
    rec.epoch = epoch;
    rec.adv_gen_d = mean_of(acc, "adv_gen_D");
    rec.adv_gen_g = mean_of(acc, kAdvGen);
    rec.rec = mean_of(acc, kRec);
    rec.lat = mean_of(acc, kLat);
    rec.seg_pt = mean_of(acc, kSegPT);
    rec.seg_st = mean_of(acc, kSegST);
    rec.val_dice = data.validation.empty() ? kNaN : mean_validation_dice(*model, data.validation);
    log.row({std::to_string(epoch), format_number(rec.adv_gen_d), format_number(rec.adv_gen_g),
             format_number(rec.rec), format_number(rec.lat), format_number(rec.seg_pt), format_number(rec.seg_st),
             format_number(rec.val_dice)});
    if (cfg.keep_epoch_checkpoints) save(out_dir / "checkpoints" / epoch_name(epoch), epoch, rec.val_dice);
    save(result.last_checkpoint, epoch, rec.val_dice);
    // Without validation data the last epoch is the best one.
    if (std::isnan(rec.val_dice) || rec.val_dice > result.best_val_dice) {
      if (!std::isnan(rec.val_dice)) result.best_val_dice = rec.val_dice;
      save(result.best_checkpoint, epoch, rec.val_dice);
    }
    result.epochs.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);
  }
  if (std::isinf(result.best_val_dice)) result.best_val_dice = kNaN;
  return result;
}

}  // namespace xmodseg
