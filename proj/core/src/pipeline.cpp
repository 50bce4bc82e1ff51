#include "xmodseg/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include "xmodseg/hash.hpp"
#include "xmodseg/phantom.hpp"
#include "xmodseg/report.hpp"
#include "xmodseg/self_training.hpp"
#include "xmodseg/stage1.hpp"
#include "xmodseg/stage2.hpp"
#include "xmodseg/volume_io.hpp"

#ifndef XMODSEG_VERSION
#define XMODSEG_VERSION "unknown"
#endif

namespace xmodseg {

namespace fs = std::filesystem;

const char* code_version() { return XMODSEG_VERSION; }

namespace {

constexpr const char* kInProgressMarker = ".stage_in_progress";

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

Logger logger_or_default(const StageOptions& opt) {
  if (opt.log) return opt.log;
  return [](const std::string& msg) { std::cerr << "[xmodseg] " << msg << std::endl; };
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp);
    if (!out) throw Error("cannot write " + path.string());
    out << j.dump(2) << '\n';
  }
  fs::rename(tmp, path);
}

nlohmann::json digest_outputs(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto name = e.path().filename().string();
    if (name == kStageManifestName || name == kInProgressMarker) continue;
    files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  nlohmann::json out = nlohmann::json::object();
  for (const auto& f : files) out[fs::relative(f, dir).generic_string()] = file_sha256(f);
  return out;
}

bool outputs_intact(const fs::path& dir, const nlohmann::json& outputs) {
  for (const auto& [rel, digest] : outputs.items()) {
    const auto p = dir / rel;
    if (!fs::exists(p) || file_sha256(p) != digest.get<std::string>()) return false;
  }
  return true;
}

std::string checkpoint_id(const fs::path& checkpoint, const std::string& producer) {
  if (!fs::is_regular_file(checkpoint)) {
    throw MissingArtifactError(producer, "checkpoint " + checkpoint.string() + " not found");
  }
  return file_sha256(checkpoint);
}

std::vector<Volume> without_masks(std::vector<Volume> volumes) {
  for (auto& v : volumes) v.mask.reset();
  return volumes;
}

std::vector<Volume> with_masks(const std::vector<Volume>& volumes) {
  std::vector<Volume> out;
  for (const auto& v : volumes) {
    if (v.mask) out.push_back(v);
  }
  return out;
}

fs::path pseudo_subdir(const fs::path& pseudo_dir, const std::string& name) {
  const auto p = pseudo_dir / name;
  if (!fs::is_directory(p)) throw MissingArtifactError(stage_names::kSynth, "missing pseudo-target set " + p.string());
  return p;
}

Stage2Data build_stage2_data(const ExperimentConfig& cfg, const PhantomSplits& splits, const fs::path& pseudo_dir) {
  auto labeled = load_pseudo_targets(pseudo_subdir(pseudo_dir, "train")).volumes;
  const auto n_target = annotated_count(splits.target_train.size(), cfg.data.target_annotation_fraction);
  for (std::size_t i = 0; i < n_target; ++i) labeled.push_back(splits.target_train[i]);
  Stage2Data data;
  data.labeled = make_hemisphere_set(labeled);
  auto [absent, present] = make_presence_sets(splits.target_train);
  data.absent = std::move(absent);
  data.present = std::move(present);
  data.validation = load_pseudo_targets(pseudo_subdir(pseudo_dir, "val")).volumes;
  return data;
}

Stage2Options stage2_options(const Logger& log, const std::string& stage, nlohmann::json lineage) {
  Stage2Options o;
  o.lineage = std::move(lineage);
  o.on_epoch = [log, stage](const Stage2EpochLog& e) {
    std::ostringstream s;
    s << stage << " epoch " << e.epoch << " L_seg_pT=" << format_number(e.seg_pt)
      << " L_rec=" << format_number(e.rec) << " val_dice=" << format_number(e.val_dice);
    log(s.str());
  };
  return o;
}

std::string producer_of(const std::string& experiment) {
  if (experiment == "baseline" || experiment == "supervised") return stage_names::kReferences;
  if (experiment == "adapted") return stage_names::kSelfTrain;
  return stage_names::kTrainSeg;
}

}  // namespace

std::string stage_cache_key(const std::string& stage, const nlohmann::json& config_subtree,
                            const std::map<std::string, std::string>& inputs) {
  const nlohmann::json j{{"stage", stage}, {"config", config_subtree}, {"inputs", inputs},
                         {"code_version", code_version()}};
  return sha256_hex(j.dump());
}

nlohmann::json read_stage_manifest(const fs::path& dir) {
  std::ifstream in(dir / kStageManifestName);
  if (!in) return nullptr;
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception&) {
    return nullptr;
  }
  return j;
}

std::string artifact_id_of(const fs::path& dir, const std::string& producer) {
  const auto m = read_stage_manifest(dir);
  if (m.is_null() || !m.contains("artifact_id")) {
    throw MissingArtifactError(producer, "no completed '" + producer + "' output in " + dir.string());
  }
  return m.at("artifact_id").get<std::string>();
}

StageRecord run_stage(const std::string& stage, const fs::path& out_dir, const nlohmann::json& config_subtree,
                      const std::map<std::string, std::string>& inputs, const StageOptions& options,
                      const std::function<void()>& body) {
  const auto log = logger_or_default(options);
  StageRecord rec;
  rec.stage = stage;
  rec.out_dir = out_dir;
  rec.cache_key = stage_cache_key(stage, config_subtree, inputs);

  const auto previous = read_stage_manifest(out_dir);
  if (options.resume && !previous.is_null() && previous.value("cache_key", "") == rec.cache_key &&
      !fs::exists(out_dir / kInProgressMarker) && outputs_intact(out_dir, previous.at("outputs"))) {
    rec.cached = true;
    rec.artifact_id = previous.at("artifact_id").get<std::string>();
    log(stage + ": cached (" + rec.cache_key.substr(0, 12) + ")");
    return rec;
  }
  // Only directories this tool wrote are cleared.
  if (fs::exists(out_dir / kStageManifestName) || fs::exists(out_dir / kInProgressMarker)) {
    for (const auto& e : fs::directory_iterator(out_dir)) fs::remove_all(e.path());
  }
  fs::create_directories(out_dir);
  std::ofstream(out_dir / kInProgressMarker) << stage << '\n';

  const auto started = utc_timestamp();
  const auto t0 = std::chrono::steady_clock::now();
  log(stage + ": running");
  body();
  rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const auto outputs = digest_outputs(out_dir);
  rec.artifact_id = sha256_hex(outputs.dump());
  const nlohmann::json manifest{{"stage", stage},
                                {"cache_key", rec.cache_key},
                                {"config_hash", sha256_hex(config_subtree.dump())},
                                {"config", config_subtree},
                                {"code_version", code_version()},
                                {"inputs", inputs},
                                {"outputs", outputs},
                                {"artifact_id", rec.artifact_id},
                                {"started", started},
                                {"finished", utc_timestamp()},
                                {"wall_time_s", rec.wall_time_s}};
  write_json(out_dir / kStageManifestName, manifest);
  fs::remove(out_dir / kInProgressMarker);
  log(stage + ": done in " + format_number(rec.wall_time_s) + " s");
  return rec;
}

std::size_t annotated_count(std::size_t n, double f) {
  if (n == 0 || f <= 0.0) return 0;
  const auto k = static_cast<std::size_t>(std::llround(f * static_cast<double>(n)));
  return std::clamp<std::size_t>(k, 1, n);
}

PhantomSplits make_splits(const DataConfig& cfg) {
  cfg.validate();
  std::vector<Volume> source, target;
  for (const auto& raw : generate_phantom_dataset(cfg.phantom)) {
    auto v = normalize_volume(raw);
    (v.modality == Modality::kSource ? source : target).push_back(std::move(v));
  }
  PhantomSplits s;
  const auto ns = source.size();
  const auto n_src_train =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(cfg.source_train_fraction * ns)), 1, ns - 1);
  s.source_train.assign(source.begin(), source.begin() + static_cast<std::ptrdiff_t>(n_src_train));
  s.source_holdout.assign(source.begin() + static_cast<std::ptrdiff_t>(n_src_train), source.end());
  const auto n_annotated = annotated_count(s.source_train.size(), cfg.source_annotation_fraction);
  for (std::size_t i = n_annotated; i < s.source_train.size(); ++i) s.source_train[i].mask.reset();

  const auto nt = target.size();
  const auto n_tr = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.target_train_fraction * nt)));
  const auto n_val = static_cast<std::size_t>(std::llround(cfg.target_val_fraction * nt));
  if (n_tr + n_val >= nt) {
    throw ValidationError("data.target_val_fraction", "no target volume left for the test split");
  }
  auto it = target.begin();
  s.target_train.assign(it, it + static_cast<std::ptrdiff_t>(n_tr));
  s.target_val.assign(it + static_cast<std::ptrdiff_t>(n_tr), it + static_cast<std::ptrdiff_t>(n_tr + n_val));
  s.target_test.assign(it + static_cast<std::ptrdiff_t>(n_tr + n_val), target.end());
  return s;
}

PhantomSplits load_splits(const fs::path& data_dir) {
  auto load = [&](const char* name) {
    const auto p = data_dir / name;
    if (!fs::is_directory(p)) throw MissingArtifactError(stage_names::kGenData, "missing split " + p.string());
    return load_volume_dir(p);
  };
  PhantomSplits s;
  s.source_train = load("source_train");
  s.source_holdout = load("source_holdout");
  s.target_train = load("target_train");
  s.target_val = load("target_val");
  s.target_test = load("target_test");
  return s;
}

StageRecord gen_data(const ExperimentConfig& cfg, const fs::path& out, const StageOptions& opt) {
  return run_stage(stage_names::kGenData, out, nlohmann::json(cfg.data), {}, opt, [&] {
    const auto s = make_splits(cfg.data);
    nlohmann::json manifest{{"splits", nlohmann::json::object()}};
    auto put = [&](const char* name, const std::vector<Volume>& vols) {
      save_volume_dir(vols, out / name);
      nlohmann::json ids = nlohmann::json::array();
      std::size_t annotated = 0, tumor = 0;
      for (const auto& v : vols) {
        ids.push_back(v.id);
        annotated += v.mask.has_value();
        tumor += v.presence == PresenceLabel::kPresent;
      }
      manifest["splits"][name] = {{"count", vols.size()}, {"annotated", annotated}, {"with_tumor", tumor},
                                  {"ids", ids}};
    };
    put("source_train", s.source_train);
    put("source_holdout", s.source_holdout);
    put("target_train", s.target_train);
    put("target_val", s.target_val);
    put("target_test", s.target_test);
    manifest["config"] = cfg.data;
    write_json(out / "manifest.json", manifest);
  });
}

StageRecord train_translation(const ExperimentConfig& cfg, const fs::path& data_dir, const fs::path& out,
                              const StageOptions& opt) {
  const auto log = logger_or_default(opt);
  const std::map<std::string, std::string> inputs{{"data", artifact_id_of(data_dir, stage_names::kGenData)}};
  return run_stage(stage_names::kTrainTrans, out, nlohmann::json(cfg.stage1), inputs, opt, [&] {
    const auto s = load_splits(data_dir);
    const auto source = make_slice_set(s.source_train);
    const auto target = make_slice_set(without_masks(s.target_train));
    train_stage1(cfg.stage1, source, target, out, [&](const Stage1EpochLog& e) {
      std::ostringstream m;
      m << "train-trans epoch " << e.epoch << " L_adv_mod_D=" << format_number(e.adv_mod_d)
        << " L_adv_mod_G=" << format_number(e.adv_mod_g) << " L_cyc=" << format_number(e.cyc)
        << " L_seg_mod=" << format_number(e.seg_mod) << " t=" << format_number(e.wall_time_s);
      log(m.str());
    });
  });
}

StageRecord synthesize(const fs::path& checkpoint, const fs::path& data_dir, const fs::path& out,
                       const StageOptions& opt) {
  const auto ckpt_id = checkpoint_id(checkpoint, stage_names::kTrainTrans);
  const std::map<std::string, std::string> inputs{{"checkpoint", ckpt_id},
                                                  {"data", artifact_id_of(data_dir, stage_names::kGenData)}};
  return run_stage(stage_names::kSynth, out, nlohmann::json::object(), inputs, opt, [&] {
    const auto s = load_splits(data_dir);
    auto model = load_translation_model(checkpoint);
    save_pseudo_targets(synthesize_pseudo_targets(*model, with_masks(s.source_train), ckpt_id), out / "train");
    save_pseudo_targets(synthesize_pseudo_targets(*model, s.source_holdout, ckpt_id), out / "val");
  });
}

StageRecord train_segmentation(const ExperimentConfig& cfg, const fs::path& data_dir, const fs::path& pseudo_dir,
                               const fs::path& out, const StageOptions& opt) {
  const auto log = logger_or_default(opt);
  const std::map<std::string, std::string> inputs{{"data", artifact_id_of(data_dir, stage_names::kGenData)},
                                                  {"pseudo", artifact_id_of(pseudo_dir, stage_names::kSynth)}};
  const nlohmann::json subtree{{"stage2", cfg.stage2},
                               {"target_annotation_fraction", cfg.data.target_annotation_fraction}};
  return run_stage(stage_names::kTrainSeg, out, subtree, inputs, opt, [&] {
    const auto s = load_splits(data_dir);
    const auto data = build_stage2_data(cfg, s, pseudo_dir);
    train_stage2(cfg.stage2, data, out, stage2_options(log, stage_names::kTrainSeg, inputs));
  });
}

StageRecord self_train(const ExperimentConfig& cfg, const fs::path& checkpoint, const fs::path& data_dir,
                       const fs::path& pseudo_dir, const fs::path& out, const StageOptions& opt) {
  const auto log = logger_or_default(opt);
  const std::map<std::string, std::string> inputs{{"checkpoint", checkpoint_id(checkpoint, stage_names::kTrainSeg)},
                                                  {"data", artifact_id_of(data_dir, stage_names::kGenData)},
                                                  {"pseudo", artifact_id_of(pseudo_dir, stage_names::kSynth)}};
  const nlohmann::json subtree{{"self_training", cfg.self_training},
                               {"stage2", cfg.stage2},
                               {"target_annotation_fraction", cfg.data.target_annotation_fraction}};
  return run_stage(stage_names::kSelfTrain, out, subtree, inputs, opt, [&] {
    const auto s = load_splits(data_dir);
    const auto data = build_stage2_data(cfg, s, pseudo_dir);
    const auto result = run_self_training(cfg.self_training, cfg.stage2, checkpoint, data,
                                          without_masks(s.target_train), out, s.target_val);
    for (const auto& it : result.iterations) {
      log("self-train iteration " + std::to_string(it.iteration) + " val " + format_number(it.val_before) +
          " -> " + format_number(it.val_after) + ", monitor " + format_number(it.monitor_before) + " -> " +
          format_number(it.monitor_after));
    }
    fs::copy_file(result.final_checkpoint, out / "final.ckpt", fs::copy_options::overwrite_existing);
  });
}

StageRecord train_references(const ExperimentConfig& cfg, const fs::path& data_dir, const fs::path& out,
                             const StageOptions& opt) {
  const auto log = logger_or_default(opt);
  const std::map<std::string, std::string> inputs{{"data", artifact_id_of(data_dir, stage_names::kGenData)}};
  const nlohmann::json subtree{{"references", cfg.references}, {"stage2", cfg.stage2}};
  return run_stage(stage_names::kReferences, out, subtree, inputs, opt, [&] {
    const auto s = load_splits(data_dir);
    auto rc = cfg.stage2;
    rc.ablation = {false, false};
    if (cfg.references.epochs > 0) rc.epochs = cfg.references.epochs;
    if (cfg.references.baseline) {
      Stage2Data d;
      d.labeled = make_hemisphere_set(with_masks(s.source_train));
      d.validation = s.source_holdout;
      train_stage2(rc, d, out / "baseline", stage2_options(log, "references/baseline", inputs));
    }
    if (cfg.references.supervised) {
      Stage2Data d;
      d.labeled = make_hemisphere_set(s.target_train);
      d.validation = s.target_val;
      train_stage2(rc, d, out / "supervised", stage2_options(log, "references/supervised", inputs));
    }
  });
}

StageRecord evaluate(const std::map<std::string, fs::path>& checkpoints, const fs::path& data_dir,
                     const fs::path& out, const StageOptions& opt) {
  if (checkpoints.empty()) throw ValidationError("checkpoints", "nothing to evaluate");
  std::map<std::string, std::string> inputs;
  for (const auto& [name, path] : checkpoints) inputs[name] = checkpoint_id(path, producer_of(name));
  const bool split_dir = fs::is_directory(data_dir / "target_test");
  if (split_dir) {
    inputs["data"] = artifact_id_of(data_dir, stage_names::kGenData);
  } else {
    if (!fs::is_directory(data_dir)) throw MissingArtifactError(stage_names::kGenData, "missing " + data_dir.string());
    inputs["data"] = sha256_hex(digest_outputs(data_dir).dump());
  }
  return run_stage(stage_names::kEval, out, nlohmann::json::object(), inputs, opt, [&] {
    const auto volumes = load_volume_dir(split_dir ? data_dir / "target_test" : data_dir);
    if (with_masks(volumes).empty()) throw ValidationError("data", "no labeled test volume in " + data_dir.string());
    ReportInputs ri;
    for (const auto& [name, path] : checkpoints) {
      auto r = evaluate_checkpoint(name, path, volumes);
      ri.records.insert(ri.records.end(), r.begin(), r.end());
    }
    emit_report(ri, out);
  });
}

StageRecord report(const std::vector<fs::path>& in_dirs, const fs::path& out, const StageOptions& opt) {
  if (in_dirs.empty()) throw ValidationError("in", "at least one input directory is required");
  std::map<std::string, std::string> inputs;
  std::vector<fs::path> metrics_files;
  for (const auto& dir : in_dirs) {
    fs::path m = dir / "metrics.csv";
    if (!fs::exists(m)) m = dir / "eval" / "metrics.csv";
    if (!fs::exists(m)) throw MissingArtifactError(stage_names::kEval, "no metrics.csv in " + dir.string());
    metrics_files.push_back(m);
    inputs[dir.lexically_normal().generic_string()] = file_sha256(m);
  }
  return run_stage(stage_names::kReport, out, nlohmann::json::object(), inputs, opt, [&] {
    ReportInputs ri;
    SeriesPlot fraction_plot{"source_annotation_fraction", {}};
    const bool prefix = in_dirs.size() > 1;
    for (std::size_t i = 0; i < in_dirs.size(); ++i) {
      const auto& dir = in_dirs[i];
      const auto name = dir.lexically_normal().filename().string();
      const auto tag = prefix ? name + "/" : std::string();
      auto records = read_metrics_csv(metrics_files[i]);
      for (auto& r : records) r.experiment = tag + r.experiment;
      const auto summaries = summarize(records);
      ri.records.insert(ri.records.end(), records.begin(), records.end());
      if (fs::exists(dir / "trans" / "train_log.csv")) ri.logs[tag + "stage1"] = dir / "trans" / "train_log.csv";
      if (fs::exists(dir / "seg" / "train_log.csv")) ri.logs[tag + "stage2"] = dir / "seg" / "train_log.csv";
      const auto iters = dir / "self_train" / "iterations.csv";
      if (fs::exists(iters)) {
        auto table = read_log_csv(iters);
        table.erase("input_checkpoint");
        table.erase("pseudo_label_voxels");
        nlohmann::json rows = nlohmann::json::object();
        for (const auto& [col, values] : table) {
          nlohmann::json vals = nlohmann::json::array();
          for (double v : values) vals.push_back(std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr));
          rows[col] = vals;
        }
        ri.extra["self_training"][name] = rows;
        ri.series[tag + "self_training"] = {"iteration", std::move(table)};
      }
      std::ifstream cfg_in(dir / "config.json");
      if (cfg_in) {
        nlohmann::json cfg;
        cfg_in >> cfg;
        const auto frac = cfg.at("data").at("source_annotation_fraction").get<double>();
        ri.extra["runs"][name] = {{"source_annotation_fraction", frac}};
        // One point per run; runs lacking an experiment contribute NaN.
        fraction_plot.table["source_annotation_fraction"].push_back(frac);
        for (const char* exp : {"adapted", "adapted_init"}) {
          double dice = std::nan("");
          for (const auto& s : summaries) {
            if (s.experiment == tag + exp) dice = s.mean_dice;
          }
          fraction_plot.table[exp].push_back(dice);
        }
      }
    }
    auto& xs = fraction_plot.table["source_annotation_fraction"];
    if (xs.size() > 1) {
      // Sort points by fraction so the polyline runs left to right.
      std::vector<std::size_t> order(xs.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::sort(order.begin(), order.end(), [&](auto a, auto b) { return xs[a] < xs[b]; });
      for (auto& [col, values] : fraction_plot.table) {
        std::vector<double> sorted;
        for (auto k : order) sorted.push_back(values[k]);
        values = std::move(sorted);
      }
      ri.series["dice_vs_annotation_fraction"] = std::move(fraction_plot);
    }
    emit_report(ri, out);
  });
}

RunResult run_pipeline(const ExperimentConfig& cfg, const fs::path& root, const StageOptions& opt) {
  cfg.validate();
  fs::create_directories(root);
  save_config(cfg, root / "config.json");
  nlohmann::json run{{"config_hash", sha256_hex(nlohmann::json(cfg).dump())},
                     {"code_version", code_version()},
                     {"seed", cfg.seed ? nlohmann::json(*cfg.seed) : nlohmann::json(nullptr)},
                     {"started", utc_timestamp()},
                     {"resume", opt.resume},
                     {"stages", nlohmann::json::array()}};
  const auto manifest_path = root / "run_manifest.json";
  write_json(manifest_path, run);

  RunResult result;
  auto step = [&](const std::string& name, const std::function<StageRecord()>& fn) {
    try {
      auto rec = fn();
      run["stages"].push_back({{"stage", rec.stage},
                               {"status", rec.cached ? "cached" : "ran"},
                               {"dir", fs::relative(rec.out_dir, root).generic_string()},
                               {"cache_key", rec.cache_key},
                               {"artifact_id", rec.artifact_id},
                               {"wall_time_s", rec.wall_time_s}});
      write_json(manifest_path, run);
      result.stages.push_back(rec);
    } catch (const std::exception& e) {
      run["stages"].push_back({{"stage", name}, {"status", "failed"}, {"error", e.what()}});
      run["finished"] = utc_timestamp();
      write_json(manifest_path, run);
      if (dynamic_cast<const StageFailure*>(&e)) throw;
      throw StageFailure(name, e.what());
    }
  };

  const auto data = root / "data", trans = root / "trans", synth = root / "synth", seg = root / "seg",
             st = root / "self_train", refs = root / "refs", eval = root / "eval";
  step(stage_names::kGenData, [&] { return gen_data(cfg, data, opt); });
  step(stage_names::kTrainTrans, [&] { return train_translation(cfg, data, trans, opt); });
  step(stage_names::kSynth, [&] { return synthesize(trans / "last.ckpt", data, synth, opt); });
  step(stage_names::kTrainSeg, [&] { return train_segmentation(cfg, data, synth, seg, opt); });
  step(stage_names::kSelfTrain, [&] { return self_train(cfg, seg / "best.ckpt", data, synth, st, opt); });
  std::map<std::string, fs::path> checkpoints{{"adapted_init", seg / "best.ckpt"}, {"adapted", st / "final.ckpt"}};
  if (cfg.references.baseline || cfg.references.supervised) {
    step(stage_names::kReferences, [&] { return train_references(cfg, data, refs, opt); });
    if (cfg.references.baseline) checkpoints["baseline"] = refs / "baseline" / "best.ckpt";
    if (cfg.references.supervised) checkpoints["supervised"] = refs / "supervised" / "best.ckpt";
  }
  step(stage_names::kEval, [&] { return evaluate(checkpoints, data, eval, opt); });
  step(stage_names::kReport, [&] { return report({root}, root / "report", opt); });
  run["finished"] = utc_timestamp();
  write_json(manifest_path, run);
  result.report_dir = root / "report";
  return result;
}

}  // namespace xmodseg
