#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xmodseg/config.hpp"
#include "xmodseg/error.hpp"
#include "xmodseg/volume.hpp"

namespace xmodseg {

const char* code_version();

namespace stage_names {
inline constexpr const char* kGenData = "gen-data";
inline constexpr const char* kTrainTrans = "train-trans";
inline constexpr const char* kSynth = "synth";
inline constexpr const char* kTrainSeg = "train-seg";
inline constexpr const char* kSelfTrain = "self-train";
inline constexpr const char* kReferences = "references";
inline constexpr const char* kEval = "eval";
inline constexpr const char* kReport = "report";
}  // namespace stage_names

inline constexpr const char* kStageManifestName = "stage_manifest.json";

/// A stage failed; `stage()` names it.
class StageFailure : public Error {
 public:
  StageFailure(std::string stage, const std::string& what)
      : Error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

struct StageRecord {
  std::string stage;
  std::filesystem::path out_dir;
  std::string cache_key;
  /// SHA-256 over the stage's output file digests.
  std::string artifact_id;
  bool cached = false;
  double wall_time_s = 0;
};

/// Progress messages; defaults to stderr.
using Logger = std::function<void(const std::string&)>;

struct StageOptions {
  /// Skip the stage when its manifest carries the same cache key and every
  /// listed output still matches its digest.
  bool resume = false;
  Logger log;
};

/// Cache key: SHA-256 of the stage name, its config subtree, the upstream
/// artifact ids and the code version.
std::string stage_cache_key(const std::string& stage, const nlohmann::json& config_subtree,
                            const std::map<std::string, std::string>& inputs);

/// Artifact id recorded in `dir`/stage_manifest.json. Throws
/// MissingArtifactError naming `producer` when absent.
std::string artifact_id_of(const std::filesystem::path& dir, const std::string& producer);

nlohmann::json read_stage_manifest(const std::filesystem::path& dir);

/// Runs `body` inside the stage protocol: cache check, clearing a previous
/// attempt, timing, output digests and the stage manifest.
StageRecord run_stage(const std::string& stage, const std::filesystem::path& out_dir,
                      const nlohmann::json& config_subtree, const std::map<std::string, std::string>& inputs,
                      const StageOptions& options, const std::function<void()>& body);

/// Split volumes as written by gen-data.
struct PhantomSplits {
  std::vector<Volume> source_train;
  std::vector<Volume> source_holdout;
  std::vector<Volume> target_train;
  std::vector<Volume> target_val;
  std::vector<Volume> target_test;
};

/// Normalized phantoms split by modality and role. Masks of source training
/// volumes beyond the annotated share are removed.
PhantomSplits make_splits(const DataConfig& cfg);
PhantomSplits load_splits(const std::filesystem::path& data_dir);

/// Number of annotated volumes out of `n` for fraction `f`: max(1, round(f n)),
/// or 0 when f is 0.
std::size_t annotated_count(std::size_t n, double f);

StageRecord gen_data(const ExperimentConfig& cfg, const std::filesystem::path& out, const StageOptions& opt = {});
StageRecord train_translation(const ExperimentConfig& cfg, const std::filesystem::path& data_dir,
                              const std::filesystem::path& out, const StageOptions& opt = {});
/// Pseudo-targets of the annotated source training volumes (train/) and of
/// the held-out source volumes (val/).
StageRecord synthesize(const std::filesystem::path& checkpoint, const std::filesystem::path& data_dir,
                       const std::filesystem::path& out, const StageOptions& opt = {});
StageRecord train_segmentation(const ExperimentConfig& cfg, const std::filesystem::path& data_dir,
                               const std::filesystem::path& pseudo_dir, const std::filesystem::path& out,
                               const StageOptions& opt = {});
/// Writes final.ckpt next to the per-iteration outputs.
StageRecord self_train(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint,
                       const std::filesystem::path& data_dir, const std::filesystem::path& pseudo_dir,
                       const std::filesystem::path& out, const StageOptions& opt = {});
/// No-adaptation baseline (baseline/) and target-supervised model (supervised/).
StageRecord train_references(const ExperimentConfig& cfg, const std::filesystem::path& data_dir,
                             const std::filesystem::path& out, const StageOptions& opt = {});
/// Dice and ASSD of each named checkpoint on the target test split (or on
/// every volume of `data_dir` when it is not a gen-data directory).
StageRecord evaluate(const std::map<std::string, std::filesystem::path>& checkpoints,
                     const std::filesystem::path& data_dir, const std::filesystem::path& out,
                     const StageOptions& opt = {});
/// Merges metrics.csv files found in `inputs` (directly or under eval/) and
/// the training logs of run directories into one report.
StageRecord report(const std::vector<std::filesystem::path>& inputs, const std::filesystem::path& out,
                   const StageOptions& opt = {});

struct RunResult {
  std::vector<StageRecord> stages;
  std::filesystem::path report_dir;
};

/// gen-data -> train-trans -> synth -> train-seg -> self-train -> references
/// -> eval -> report under `root`, with root/run_manifest.json updated after
/// every stage. Failures surface as StageFailure.
RunResult run_pipeline(const ExperimentConfig& cfg, const std::filesystem::path& root,
                       const StageOptions& opt = {});

}  // namespace xmodseg
