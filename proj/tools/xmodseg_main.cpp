#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "xmodseg/config.hpp"
#include "xmodseg/pipeline.hpp"

namespace fs = std::filesystem;
using namespace xmodseg;

namespace {

struct CommonArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool resume = false;
};

ExperimentConfig resolve_config(const CommonArgs& a) {
  auto cfg = a.config.empty() ? ExperimentConfig::desk() : load_config(a.config);
  if (a.seed) cfg.set_seed(*a.seed);
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* sub, CommonArgs& a, bool with_config, bool out_required = true) {
  if (with_config) {
    sub->add_option("--config", a.config, "Experiment config (JSON); the desk preset when omitted")
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", a.seed, "Global seed overriding the config");
  }
  auto* out = sub->add_option("--out", a.out, "Output directory");
  if (out_required) out->required();
  sub->add_flag("--resume", a.resume, "Reuse outputs whose cache key matches");
}

/// "name=path" or a bare path named after its parent directory.
std::pair<std::string, fs::path> parse_named_checkpoint(const std::string& s) {
  const auto eq = s.find('=');
  if (eq != std::string::npos) return {s.substr(0, eq), fs::path(s.substr(eq + 1))};
  fs::path p(s);
  auto name = p.parent_path().filename().string();
  if (name.empty()) name = p.stem().string();
  return {name, p};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-modality tumor segmentation with translation, residual disentanglement and self-training"};
  app.require_subcommand(1);

  CommonArgs common;
  std::string data_dir, pseudo_dir, checkpoint;
  std::vector<std::string> checkpoints, in_dirs;
  std::optional<int> iters;

  auto* gen = app.add_subcommand("gen-data", "Generate and split normalized phantom volumes");
  add_common(gen, common, true);

  auto* trans = app.add_subcommand("train-trans", "Train the tumor-aware translation model");
  add_common(trans, common, true);
  trans->add_option("--data", data_dir, "gen-data output directory")->required();

  auto* synth = app.add_subcommand("synth", "Translate annotated source volumes into pseudo-targets");
  add_common(synth, common, false);
  synth->add_option("--checkpoint", checkpoint, "Translation checkpoint")->required();
  synth->add_option("--in,--data", data_dir, "gen-data output directory")->required();

  auto* seg = app.add_subcommand("train-seg", "Train the target segmentation model");
  add_common(seg, common, true);
  seg->add_option("--pseudo", pseudo_dir, "synth output directory")->required();
  seg->add_option("--target,--data", data_dir, "gen-data output directory")->required();

  auto* st = app.add_subcommand("self-train", "Refine a segmentation checkpoint with pseudo-labels");
  add_common(st, common, true);
  st->add_option("--checkpoint", checkpoint, "Segmentation checkpoint")->required();
  st->add_option("--iters", iters, "Self-training iterations")->check(CLI::PositiveNumber);
  st->add_option("--pseudo", pseudo_dir, "synth output directory")->required();
  st->add_option("--target,--data", data_dir, "gen-data output directory")->required();

  auto* ev = app.add_subcommand("eval", "Dice and ASSD of checkpoints on labeled volumes");
  add_common(ev, common, false);
  ev->add_option("--checkpoint", checkpoints, "Checkpoint, optionally as name=path (repeatable)")->required();
  ev->add_option("--data", data_dir, "gen-data directory (its test split) or a directory of volumes")
      ->required();

  auto* rep = app.add_subcommand("report", "Merge evaluation results into CSV, JSON and SVG plots");
  add_common(rep, common, false);
  rep->add_option("--in", in_dirs, "Run or eval directories")->required();

  auto* run = app.add_subcommand("run", "Full pipeline from data generation to report");
  add_common(run, common, true);

  CLI11_PARSE(app, argc, argv);

  const auto* chosen = app.get_subcommands().front();
  const std::string stage = chosen->get_name();
  try {
    StageOptions opt;
    opt.resume = common.resume;
    if (chosen == gen) {
      gen_data(resolve_config(common), common.out, opt);
    } else if (chosen == trans) {
      train_translation(resolve_config(common), data_dir, common.out, opt);
    } else if (chosen == synth) {
      synthesize(checkpoint, data_dir, common.out, opt);
    } else if (chosen == seg) {
      train_segmentation(resolve_config(common), data_dir, pseudo_dir, common.out, opt);
    } else if (chosen == st) {
      auto cfg = resolve_config(common);
      if (iters) cfg.self_training.iterations = *iters;
      cfg.validate();
      self_train(cfg, checkpoint, data_dir, pseudo_dir, common.out, opt);
    } else if (chosen == ev) {
      std::map<std::string, fs::path> named;
      for (const auto& c : checkpoints) {
        auto [name, path] = parse_named_checkpoint(c);
        if (!named.emplace(name, path).second) {
          throw ValidationError("checkpoint", "duplicate experiment name '" + name + "'");
        }
      }
      evaluate(named, data_dir, common.out, opt);
    } else if (chosen == rep) {
      std::vector<fs::path> dirs(in_dirs.begin(), in_dirs.end());
      report(dirs, common.out, opt);
    } else if (chosen == run) {
      const auto result = run_pipeline(resolve_config(common), common.out, opt);
      std::cout << "report: " << result.report_dir.string() << '\n';
    }
  } catch (const StageFailure& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: stage '" << stage << "' failed: " << e.what() << '\n';
    return 2;
  }
  return EXIT_SUCCESS;
}
