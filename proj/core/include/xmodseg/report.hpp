#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xmodseg/nets/segmentation_net.hpp"
#include "xmodseg/volume.hpp"

namespace xmodseg {

struct EvalRecord {
  std::string experiment;
  std::string volume_id;
  double dice = 0;
  /// +inf when exactly one of prediction and truth is empty.
  double assd = 0;
  bool truth_empty = false;
};

/// Maps a normalized volume to a tumor probability map of the same size.
using Segmenter = std::function<std::vector<float>(const Volume&)>;

/// Dice and ASSD (threshold 0.5) for every annotated volume.
std::vector<EvalRecord> evaluate_segmenter(const std::string& experiment, const Segmenter& segmenter,
                                           const std::vector<Volume>& volumes);
std::vector<EvalRecord> evaluate_checkpoint(const std::string& experiment, const std::filesystem::path& checkpoint,
                                            const std::vector<Volume>& volumes);

struct ExperimentSummary {
  std::string experiment;
  /// Volumes with a non-empty ground truth (the ones aggregated).
  int volumes = 0;
  double mean_dice = 0;
  double std_dice = 0;
  double median_dice = 0;
  /// Over volumes with finite ASSD.
  double mean_assd = 0;
  int infinite_assd = 0;
};

std::vector<ExperimentSummary> summarize(const std::vector<EvalRecord>& records);

inline const std::vector<std::string> kMetricsColumns{"experiment", "volume_id", "dice", "assd"};

void write_metrics_csv(const std::vector<EvalRecord>& records, const std::filesystem::path& path);
std::vector<EvalRecord> read_metrics_csv(const std::filesystem::path& path);

/// One training-log CSV as column name -> values (blank cells become NaN).
std::map<std::string, std::vector<double>> read_log_csv(const std::filesystem::path& path);

/// Line chart of the given columns against `x_column`.
std::string line_chart_svg(const std::string& title, const std::map<std::string, std::vector<double>>& log,
                           const std::vector<std::string>& columns, const std::string& x_column = "epoch");
/// Mean Dice per experiment with one-standard-deviation whiskers.
std::string dice_bar_chart_svg(const std::vector<ExperimentSummary>& summaries);

/// Columns of equal length; every column other than `x_column` becomes a line.
struct SeriesPlot {
  std::string x_column;
  std::map<std::string, std::vector<double>> table;
};

struct ReportInputs {
  std::vector<EvalRecord> records;
  /// Name -> training log CSV to plot.
  std::map<std::string, std::filesystem::path> logs;
  /// Name -> extra line chart (for example Dice against annotation fraction).
  std::map<std::string, SeriesPlot> series;
  nlohmann::json extra = nlohmann::json::object();
};

/// Writes metrics.csv, summary.json and SVG plots into `out_dir`.
void emit_report(const ReportInputs& inputs, const std::filesystem::path& out_dir);
nlohmann::json load_summary(const std::filesystem::path& summary_json);

}  // namespace xmodseg
