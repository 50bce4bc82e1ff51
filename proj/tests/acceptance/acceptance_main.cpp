// Acceptance checks: prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.
#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "../support/gradcheck.hpp"
#include "../support/tiny_config.hpp"
#include "xmodseg/config.hpp"
#include "xmodseg/error.hpp"
#include "xmodseg/losses.hpp"
#include "xmodseg/metrics.hpp"
#include "xmodseg/nets/attention.hpp"
#include "xmodseg/nets/segmentation_net.hpp"
#include "xmodseg/phantom.hpp"
#include "xmodseg/pipeline.hpp"
#include "xmodseg/report.hpp"
#include "xmodseg/self_training.hpp"
#include "xmodseg/stage1.hpp"
#include "xmodseg/stage2.hpp"
#include "xmodseg/volume.hpp"

using namespace xmodseg;
using test_support::max_gradient_relative_error;
using test_support::randn_away_from;
namespace fs = std::filesystem;

namespace {

/// Collects failed sub-checks of one criterion.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok) failures_.push_back(what);
  }
  void near(double got, double want, double tol, const std::string& what) {
    std::ostringstream s;
    s.precision(17);
    s << what << ": got " << got << ", want " << want << " +- " << tol;
    expect(std::abs(got - want) <= tol, s.str());
  }
  bool ok() const { return failures_.empty(); }
  std::string summary() const {
    std::string out;
    for (const auto& f : failures_) out += (out.empty() ? "" : "; ") + f;
    return out;
  }

 private:
  std::vector<std::string> failures_;
};

struct Outcome {
  bool pass = false;
  std::string detail;
};

Outcome from_checks(const Checks& c, const std::string& ok_detail) {
  return {c.ok(), c.ok() ? ok_detail : c.summary()};
}

torch::Tensor d(std::vector<double> v) { return torch::tensor(v, torch::kFloat64); }
double val(const torch::Tensor& t) { return t.item<double>(); }
torch::Tensor scalar(double v) { return torch::tensor(v, torch::kFloat64); }

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Outcome loss_oracles() {
  Checks c;
  c.near(val(hinge_discriminator_loss(d({0, 0}), d({0, 0}))), 2.0, 1e-12, "hinge D(0,0)");
  c.near(val(hinge_discriminator_loss(d({1, 1}), d({-1, -1}))), 0.0, 1e-12, "hinge D(+1,-1)");
  c.near(val(hinge_generator_loss(d({0, 0}))), 0.0, 1e-12, "hinge G(0)");
  c.near(val(hinge_generator_loss(d({2, 0}))), -1.0, 1e-12, "hinge G([2,0])");
  auto four = torch::zeros({10}, torch::kFloat64);
  four.slice(0, 0, 4).fill_(1.0);
  c.near(val(soft_dice_loss(torch::zeros({10}, torch::kFloat64), four, 1.0)), 0.8, 1e-12, "soft Dice 4-voxel");
  auto forty = torch::zeros({100}, torch::kFloat64);
  forty.slice(0, 0, 40).fill_(1.0);
  c.near(val(soft_dice_loss(forty, forty, 1.0)), 0.0, 1e-12, "soft Dice perfect");
  auto z = torch::zeros({5}, torch::kFloat64);
  c.near(val(soft_dice_loss(z, z, 1.0)), 0.0, 1e-12, "soft Dice empty");
  c.near(val(l1_reconstruction(d({0.3, -0.7}), d({0.3, -0.7}))), 0.0, 1e-12, "L1 x==y");
  c.near(val(l1_reconstruction(d({0, 1}), d({1, 0}))), 1.0, 1e-12, "L1 [0,1]/[1,0]");
  c.near(val(l1_reconstruction(d({-1, 1}), d({1, 1}))), 1.0, 1e-12, "L1 [-1,1]/[1,1]");
  const auto w = normalize_weights(default_translation_weights());
  LossTerms t{{"adv_mod", scalar(0.3)}, {"seg_mod", scalar(0.6)}, {"cyc", scalar(0.12)}};
  c.near(val(translation_loss(t, w)), 0.175, 1e-12, "translation loss");
  auto code = torch::randn({2, 3}, torch::kFloat64);
  LatentPairs shifted{{{code, code}}, {{code, code + 0.5}}};
  c.near(val(latent_reconstruction_loss(shifted)), 0.25, 1e-12, "latent loss");
  return from_checks(c, "hinge, soft Dice, L1, translation and latent oracles exact to 1e-12");
}

Outcome gradient_checks() {
  constexpr int kPoints = 20;
  constexpr double kTol = 1e-4;
  torch::manual_seed(2024);
  std::map<std::string, double> worst;
  auto record = [&](const std::string& name, double e) { worst[name] = std::max(worst[name], e); };
  const auto wt = normalize_weights(default_translation_weights());
  auto ws = default_segmentation_weights(50.0);
  ws.set("seg_st", 50.0);
  const auto ws_init = ws.restricted_to({"adv_gen", "rec", "lat", "seg_pT"});
  for (int i = 0; i < kPoints; ++i) {
    record("hinge_D", max_gradient_relative_error([](const auto& x) { return hinge_discriminator_loss(x[0], x[1]); },
                                                  {randn_away_from({6}, {1.0, -1.0}),
                                                   randn_away_from({6}, {1.0, -1.0})}));
    record("hinge_G", max_gradient_relative_error([](const auto& x) { return hinge_generator_loss(x[0]); },
                                                  {torch::randn({6}, torch::kFloat64)}));
    auto y = torch::randn({2, 4}, torch::kFloat64);
    record("l1", max_gradient_relative_error([](const auto& x) { return l1_reconstruction(x[0], x[1]); },
                                             {y + randn_away_from({2, 4}, {0.0}), y}));
    auto g = (torch::rand({3, 5}, torch::kFloat64) > 0.5).to(torch::kFloat64);
    record("soft_dice", max_gradient_relative_error([&](const auto& x) { return soft_dice_loss(x[0], g); },
                                                    {torch::rand({3, 5}, torch::kFloat64)}));
    auto c0 = torch::randn({2, 3}, torch::kFloat64);
    auto u0 = torch::randn({2, 2}, torch::kFloat64);
    record("latent", max_gradient_relative_error(
                         [](const auto& x) {
                           LatentPairs p{{{x[0], x[1]}}, {{x[2], x[3]}}};
                           return latent_reconstruction_loss(p);
                         },
                         {c0, c0 + randn_away_from({2, 3}, {0.0}), u0, u0 + randn_away_from({2, 2}, {0.0})}));
    record("translation", max_gradient_relative_error(
                              [&](const auto& x) {
                                LossTerms t{{"adv_mod", x[0][0]}, {"seg_mod", x[0][1]}, {"cyc", x[0][2]}};
                                return translation_loss(t, wt);
                              },
                              {torch::rand({3}, torch::kFloat64)}));
    record("seg_init", max_gradient_relative_error(
                           [&](const auto& x) {
                             LossTerms t{{"adv_gen", x[0][0]}, {"rec", x[0][1]}, {"lat", x[0][2]}, {"seg_pT", x[0][3]}};
                             return segmentation_init_loss(t, ws_init, SegmentationVariant::kSemiSupervised);
                           },
                           {torch::rand({4}, torch::kFloat64)}));
    record("seg_st", max_gradient_relative_error(
                         [&](const auto& x) {
                           LossTerms t{{"adv_gen", x[0][0]}, {"rec", x[0][1]}, {"lat", x[0][2]}, {"seg_pT", x[0][3]}};
                           return segmentation_st_loss(t, x[0][4], ws, SegmentationVariant::kSemiSupervised);
                         },
                         {torch::rand({5}, torch::kFloat64)}));
  }
  Checks c;
  std::string detail;
  for (const auto& [name, e] : worst) {
    c.expect(e < kTol, name + " max relative error " + sci(e));
    detail += (detail.empty() ? "" : ", ") + name + " " + sci(e);
  }
  return from_checks(c, "max relative error over 20 points: " + detail);
}

Outcome weight_normalization() {
  Checks c;
  auto t = normalize_weights(default_translation_weights());
  c.near(t.sum(), 1.0, 1e-12, "stage-1 sum");
  c.near(t["adv_mod"], 1.0 / 12.0, 1e-12, "adv_mod");
  c.near(t["seg_mod"], 1.0 / 12.0, 1e-12, "seg_mod");
  c.near(t["cyc"], 10.0 / 12.0, 1e-12, "cyc");
  c.near(t["cyc"] / t["adv_mod"], 10.0, 1e-12, "cyc/adv_mod ratio");
  auto s = normalize_weights(default_segmentation_weights(100.0));
  c.near(s.sum(), 1.0, 1e-12, "stage-2 sum");
  c.near(s["adv_gen"], 5.0 / 160.0, 1e-12, "adv_gen");
  c.near(s["rec"], 50.0 / 160.0, 1e-12, "rec");
  c.near(s["lat"], 5.0 / 160.0, 1e-12, "lat");
  c.near(s["seg_pT"], 100.0 / 160.0, 1e-12, "seg_pT");
  c.near(s["rec"] / s["lat"], 10.0, 1e-12, "rec/lat ratio");
  c.near(s["seg_pT"] / s["adv_gen"], 20.0, 1e-12, "seg_pT/adv_gen ratio");
  bool threw = false;
  try {
    normalize_weights(LossWeights{{"a", 0.0}, {"b", 0.0}});
  } catch (const ValidationError&) {
    threw = true;
  }
  c.expect(threw, "all-zero weights accepted");
  return from_checks(c, "(1,1,10) and (5,50,5,100) sum to 1, ratios preserved");
}

nets::SegmentationNetConfig small_semi_model() {
  nets::SegmentationNetConfig m;
  m.variant = SegmentationVariant::kSemiSupervised;
  m.encoder = {{4, 1, 0, 0}, {8, 1, 0, 0}, {16, 0, 1, 2}};
  m.decoder = {{8, 0, 1, 2}, {4, 1, 0, 0}};
  m.input_dims = {8, 8, 8};
  m.discriminator.spatial_dims = 3;
  m.discriminator.width_scale = 0.1;
  m.discriminator.num_scales = 2;
  m.discriminator.num_downsamples = 2;
  m.discriminator.input_size = {8, 8, 8};
  return m;
}

Outcome structural_contracts() {
  Checks c;
  torch::manual_seed(7);
  nets::SegmentationNet model(small_semi_model());
  const auto audit = nets::audit_parameter_sharing(*model);
  c.expect(audit.passed, "sharing audit: shared " + std::to_string(audit.shared) + " of body " +
                             std::to_string(audit.body) + ", residual-only " + std::to_string(audit.residual_only) +
                             ", segmentation-only " + std::to_string(audit.segmentation_only));

  auto x = torch::randn({2, 1, 8, 8, 8});
  auto pa = nets::presence_to_absence(*model, x);
  c.expect(torch::equal(pa.x_pp - pa.x_pa, pa.delta_pp), "X_PP - X_PA differs from delta_PP");
  auto ap = nets::absence_to_presence(*model, x, torch::randn_like(pa.codes.u));
  c.expect(torch::equal(ap.x_ap - ap.x_aa, ap.delta_ap), "X_AP - X_AA differs from delta_AP");

  PhantomConfig pc;
  pc.volume_count = 2;
  pc.dims = {8, 12, 10};
  pc.seed = 3;
  for (const auto& v : generate_phantom_dataset(pc)) {
    for (int axis = 0; axis < 3; ++axis) {
      c.expect(reassemble_volume(slice_volume(v, axis)) == v, "slice round trip on axis " + std::to_string(axis));
    }
  }

  auto self_cfg = small_semi_model();
  self_cfg.variant = SegmentationVariant::kSelfSupervised;
  nets::SegmentationNet self_model(self_cfg);
  self_model->eval();
  auto rec = nets::capture_attention(*self_model, [&] { self_model->segment(torch::randn({1, 1, 8, 8, 8})); });
  const double row_err = nets::max_row_sum_error(rec);
  c.expect(!rec.layers.empty() && row_err < 1e-5, "attention row sum error " + sci(row_err));
  return from_checks(c, "sharing audit passed, additive residual bitwise, slice round trip bitwise, attention row "
                        "error " + sci(row_err));
}

Outcome threshold_properties() {
  Checks c;
  SelfTrainingConfig cfg;
  c.near(cfg.alpha, 0.6, 0.0, "default alpha");
  auto parsed = nlohmann::json{{"iterations", 1}}.get<SelfTrainingConfig>();
  c.near(parsed.alpha, 0.6, 0.0, "alpha when omitted");
  std::vector<float> edge{0.59f, 0.60f, 0.61f};
  c.expect(threshold_probabilities(edge, cfg.alpha) == Mask{0, 1, 1}, "boundary case at 0.6");
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  int violations = 0;
  for (int i = 0; i < 100; ++i) {
    std::vector<float> p(8 * 16 * 16);
    for (auto& x : p) x = u(rng);
    const double a1 = 0.05 + 0.9 * u(rng);
    const double a2 = a1 + (1.0 - a1) * u(rng);
    const auto lo = threshold_probabilities(p, a1);
    const auto hi = threshold_probabilities(p, a2);
    for (std::size_t k = 0; k < p.size(); ++k) violations += hi[k] > lo[k];
  }
  c.expect(violations == 0, std::to_string(violations) + " voxels break monotonicity");
  return from_checks(c, "alpha 0.6 default, monotone on 100 random volumes");
}

Outcome metric_oracles() {
  Checks c;
  c.near(dice_score(Mask{1, 0, 0}, Mask{1, 1, 0}), 2.0 / 3.0, 1e-15, "Dice 2/3");
  Mask a(8, 0), b(8, 0);
  a[1] = 1;
  b[4] = 1;
  c.near(assd(a, b, {1, 1, 8}, {1, 1, 1}), 3.0, 1e-12, "ASSD single voxel");
  std::mt19937_64 rng(5);
  std::bernoulli_distribution bern(0.3);
  double worst = 0;
  for (int i = 0; i < 50; ++i) {
    Mask p(200), g(200);
    for (auto& x : p) x = bern(rng);
    for (auto& x : g) x = bern(rng);
    auto tp = torch::tensor(std::vector<double>(p.begin(), p.end()), torch::kFloat64);
    auto tg = torch::tensor(std::vector<double>(g.begin(), g.end()), torch::kFloat64);
    worst = std::max(worst, std::abs(val(soft_dice_loss(tp, tg, 1e-12)) + dice_score(p, g) - 1.0));
  }
  c.expect(worst < 1e-9, "soft Dice loss + Dice score deviates from 1 by " + sci(worst));
  return from_checks(c, "Dice 2/3, ASSD 3.0, loss + score = 1 within " + sci(worst));
}

StageOptions stage_options(bool verbose) {
  StageOptions o;
  o.resume = true;
  if (!verbose) o.log = [](const std::string&) {};
  return o;
}

/// Mean target-test Dice per experiment for one pipeline run, plus the validation Dice before
/// and after self-training as "val_before" and "val_after".
std::map<std::string, double> run_and_score(const ExperimentConfig& cfg, const fs::path& root, bool verbose) {
  std::cerr << "[acceptance] pipeline " << root << std::endl;
  run_pipeline(cfg, root, stage_options(verbose));
  std::map<std::string, double> out;
  for (const auto& s : summarize(read_metrics_csv(root / "eval" / "metrics.csv"))) out[s.experiment] = s.mean_dice;
  const auto iters = read_log_csv(root / "self_train" / "iterations.csv");
  out["val_before"] = iters.at("val_before").front();
  out["val_after"] = iters.at("val_after").back();
  return out;
}

ExperimentConfig desk_run(std::uint64_t seed, double source_fraction, bool references) {
  auto cfg = ExperimentConfig::desk();
  cfg.data.source_annotation_fraction = source_fraction;
  cfg.references.baseline = references;
  cfg.references.supervised = references;
  cfg.set_seed(seed);
  return cfg;
}

std::string fraction_tag(double f) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frac_%g", f);
  return buf;
}

Outcome adaptation_analogue(const fs::path& work, const std::vector<std::uint64_t>& seeds, bool verbose,
                            std::map<std::string, double>& seed_one_scores) {
  // Validation Dice is measured on the held-out pseudo-target split, the only labeled
  // validation data when the target is unannotated. Target-test deltas are reported alongside.
  std::vector<double> gain, ratio, val_delta, test_delta;
  std::string detail;
  for (auto seed : seeds) {
    const auto scores = run_and_score(desk_run(seed, 1.0, true), work / ("seed_" + std::to_string(seed)), verbose);
    if (seed == seeds.front()) seed_one_scores = scores;
    const double adapted = scores.at("adapted"), init = scores.at("adapted_init");
    const double base = scores.at("baseline"), sup = scores.at("supervised");
    gain.push_back(adapted - base);
    ratio.push_back(sup > 0 ? adapted / sup : 0.0);
    val_delta.push_back(scores.at("val_after") - scores.at("val_before"));
    test_delta.push_back(adapted - init);
    detail += " seed " + std::to_string(seed) + ": adapted " + fmt(adapted) + " init " + fmt(init) + " baseline " +
              fmt(base) + " supervised " + fmt(sup) + " val " + fmt(scores.at("val_before")) + "->" +
              fmt(scores.at("val_after")) + ";";
  }
  Checks c;
  c.expect(median(gain) >= 0.10, "(a) median gain over baseline " + fmt(median(gain)) + " < 0.10");
  c.expect(median(ratio) >= 0.85, "(b) median share of supervised Dice " + fmt(median(ratio)) + " < 0.85");
  const double worst = *std::min_element(val_delta.begin(), val_delta.end());
  c.expect(worst >= -0.01, "(c) self-training lowered validation Dice by " + fmt(-worst));
  c.expect(median(val_delta) > 0.0, "(c) median validation change " + fmt(median(val_delta)) + " <= 0");
  const std::string summary = "gain " + fmt(median(gain)) + ", share " + fmt(median(ratio)) +
                              ", validation change " + fmt(median(val_delta)) + " (medians); target-test change " +
                              fmt(median(test_delta)) + " median, " +
                              fmt(*std::min_element(test_delta.begin(), test_delta.end())) + " worst;";
  return {c.ok(), (c.ok() ? summary : c.summary() + "; " + summary) + detail};
}

Outcome annotation_fraction_trend(const fs::path& work, std::uint64_t seed, bool verbose,
                                  const std::map<std::string, double>& full_scores) {
  const std::vector<double> fractions{0.01, 0.1, 0.4, 1.0};
  std::vector<double> dice;
  std::string detail;
  for (double f : fractions) {
    double v = 0;
    if (f == 1.0 && full_scores.count("adapted")) {
      v = full_scores.at("adapted");
    } else {
      v = run_and_score(desk_run(seed, f, false), work / (fraction_tag(f) + "_seed_" + std::to_string(seed)),
                        verbose)
              .at("adapted");
    }
    dice.push_back(v);
    detail += " " + fmt(f * 100) + "%: " + fmt(v) + ";";
  }
  Checks c;
  const double retention = dice.back() > 0 ? dice.front() / dice.back() : 0.0;
  c.expect(retention >= 0.80, "1% retains " + fmt(retention) + " of the 100% Dice (< 0.80)");
  for (std::size_t i = 1; i < dice.size(); ++i) {
    c.expect(dice[i] >= dice[i - 1] - 0.02,
             "Dice drops from " + fmt(dice[i - 1]) + " to " + fmt(dice[i]) + " at " + fmt(fractions[i] * 100) + "%");
  }
  return {c.ok(), (c.ok() ? "retention " + fmt(retention) + ";" : c.summary() + ";") + detail};
}

Outcome determinism(const fs::path& work) {
  Checks c;
  StageOptions quiet = stage_options(false);
  quiet.resume = false;
  const auto cfg = test_support::tiny_experiment(17);
  const auto a = gen_data(cfg, work / "det_a" / "data", quiet);
  const auto b = gen_data(cfg, work / "det_b" / "data", quiet);
  c.expect(a.artifact_id == b.artifact_id, "generated datasets differ");

  const auto s = make_splits(cfg.data);
  auto src = make_slice_set(s.source_train);
  auto tgt = make_slice_set(s.target_train);
  auto r1 = train_stage1(cfg.stage1, src, tgt, work / "det_a" / "trans");
  auto r2 = train_stage1(cfg.stage1, src, tgt, work / "det_b" / "trans");
  const auto& e1 = r1.epochs.at(0);
  const auto& e2 = r2.epochs.at(0);
  c.expect(e1.adv_mod_d == e2.adv_mod_d && e1.adv_mod_g == e2.adv_mod_g && e1.cyc == e2.cyc &&
               (e1.seg_mod == e2.seg_mod || (std::isnan(e1.seg_mod) && std::isnan(e2.seg_mod))),
           "stage-1 epoch-0 losses differ");

  Stage2Data data;
  data.labeled = make_hemisphere_set(s.source_train);
  std::tie(data.absent, data.present) = make_presence_sets(s.target_train);
  auto q1 = train_stage2(cfg.stage2, data, work / "det_a" / "seg");
  auto q2 = train_stage2(cfg.stage2, data, work / "det_b" / "seg");
  const auto& f1 = q1.epochs.at(0);
  const auto& f2 = q2.epochs.at(0);
  c.expect(f1.adv_gen_d == f2.adv_gen_d && f1.adv_gen_g == f2.adv_gen_g && f1.rec == f2.rec && f1.lat == f2.lat &&
               f1.seg_pt == f2.seg_pt,
           "stage-2 epoch-0 losses differ");
  return from_checks(c, "datasets and stage-1/stage-2 epoch-0 losses repeat exactly");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  fs::path work = fs::temp_directory_path() / "xmodseg_acceptance";
  std::vector<std::uint64_t> seeds{1, 2, 3};
  bool skip_experiments = false;
  bool fresh = false;
  bool verbose = false;
  app.add_option("--work", work, "directory for pipeline runs (reused across invocations)");
  app.add_option("--seeds", seeds, "seeds for the adaptation experiment")->expected(1, 16);
  app.add_flag("--skip-experiments", skip_experiments, "report criteria 7 and 8 as FAIL without running them");
  app.add_flag("--fresh", fresh, "delete earlier runs under --work first");
  app.add_flag("--verbose", verbose, "print pipeline progress");
  CLI11_PARSE(app, argc, argv);
  if (fresh) fs::remove_all(work);
  fs::create_directories(work);
  torch::set_num_threads(1);

  int failed = 0;
  auto report = [&](int id, const std::string& name, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << "): " << o.detail << std::endl;
  };

  report(1, "loss oracles", loss_oracles);
  report(2, "gradient checks", gradient_checks);
  report(3, "weight normalization", weight_normalization);
  report(4, "structural contracts", structural_contracts);
  report(5, "threshold properties", threshold_properties);
  report(6, "metric oracles", metric_oracles);
  std::map<std::string, double> seed_one;
  if (skip_experiments) {
    report(7, "domain adaptation analogue", [] { return Outcome{false, "skipped"}; });
    report(8, "annotation fraction trend", [] { return Outcome{false, "skipped"}; });
  } else {
    report(7, "domain adaptation analogue", [&] { return adaptation_analogue(work, seeds, verbose, seed_one); });
    report(8, "annotation fraction trend",
           [&] { return annotation_fraction_trend(work, seeds.front(), verbose, seed_one); });
  }
  report(9, "determinism", [&] { return determinism(work / "determinism"); });
  return failed == 0 ? 0 : 1;
}
