#include "xmodseg/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "xmodseg/error.hpp"
#include "xmodseg/metrics.hpp"
#include "xmodseg/stage2.hpp"
#include "xmodseg/training.hpp"

namespace xmodseg {

namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_cell(const std::string& s) {
  if (s.empty()) return kNaN;
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  return std::stod(s);
}

/// Non-numeric cells (hashes, names) become NaN.
double parse_log_cell(const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = parse_cell(s);
    if (s.empty() || s == "inf" || s == "-inf") return v;
    std::stod(s, &used);
    return used == s.size() ? v : kNaN;
  } catch (const std::exception&) {
    return kNaN;
  }
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};

std::string fmt(double v, int precision = 3) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

}  // namespace

std::vector<EvalRecord> evaluate_segmenter(const std::string& experiment, const Segmenter& segmenter,
                                           const std::vector<Volume>& volumes) {
  std::vector<EvalRecord> out;
  for (const auto& v : volumes) {
    if (!v.mask) continue;
    const auto pred = binarize(segmenter(v));
    EvalRecord r;
    r.experiment = experiment;
    r.volume_id = v.id;
    r.dice = dice_score(pred, *v.mask);
    r.assd = assd(pred, *v.mask, v.dims, v.spacing);
    r.truth_empty = !v.has_tumor();
    out.push_back(std::move(r));
  }
  if (out.empty()) throw ValidationError("volumes", "no labeled test volume to evaluate");
  return out;
}

std::vector<EvalRecord> evaluate_checkpoint(const std::string& experiment, const fs::path& checkpoint,
                                            const std::vector<Volume>& volumes) {
  auto model = load_segmentation_model(checkpoint);
  return evaluate_segmenter(experiment, [&](const Volume& v) { return segment_volume(*model, v); }, volumes);
}

std::vector<ExperimentSummary> summarize(const std::vector<EvalRecord>& records) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const EvalRecord*>> groups;
  for (const auto& r : records) {
    if (!groups.count(r.experiment)) order.push_back(r.experiment);
    groups[r.experiment].push_back(&r);
  }
  std::vector<ExperimentSummary> out;
  for (const auto& name : order) {
    ExperimentSummary s;
    s.experiment = name;
    std::vector<double> dice;
    double assd_sum = 0;
    int assd_n = 0;
    for (const auto* r : groups[name]) {
      if (r->truth_empty) continue;
      dice.push_back(r->dice);
      if (std::isfinite(r->assd)) {
        assd_sum += r->assd;
        ++assd_n;
      } else {
        ++s.infinite_assd;
      }
    }
    s.volumes = static_cast<int>(dice.size());
    if (!dice.empty()) {
      s.mean_dice = std::accumulate(dice.begin(), dice.end(), 0.0) / static_cast<double>(dice.size());
      double var = 0;
      for (double d : dice) var += (d - s.mean_dice) * (d - s.mean_dice);
      s.std_dice = std::sqrt(var / static_cast<double>(dice.size()));
      auto sorted = dice;
      std::sort(sorted.begin(), sorted.end());
      const auto n = sorted.size();
      s.median_dice = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    } else {
      s.mean_dice = s.std_dice = s.median_dice = kNaN;
    }
    s.mean_assd = assd_n > 0 ? assd_sum / assd_n : kNaN;
    out.push_back(s);
  }
  return out;
}

void write_metrics_csv(const std::vector<EvalRecord>& records, const fs::path& path) {
  CsvWriter csv(path, kMetricsColumns);
  for (const auto& r : records) {
    csv.row({r.experiment, r.volume_id, format_number(r.dice), r.truth_empty ? "" : format_number(r.assd)});
  }
}

std::vector<EvalRecord> read_metrics_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("eval", "cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (split_csv_line(line) != kMetricsColumns) throw FormatError(0, "unexpected metrics header in " + path.string());
  std::vector<EvalRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 4) throw FormatError(0, "bad metrics row: " + line);
    EvalRecord r;
    r.experiment = cells[0];
    r.volume_id = cells[1];
    r.dice = parse_cell(cells[2]);
    r.truth_empty = cells[3].empty();
    r.assd = r.truth_empty ? kNaN : parse_cell(cells[3]);
    out.push_back(std::move(r));
  }
  return out;
}

std::map<std::string, std::vector<double>> read_log_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("train", "cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  const auto header = split_csv_line(line);
  std::map<std::string, std::vector<double>> out;
  for (const auto& h : header) out[h];
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    cells.resize(header.size());
    for (std::size_t i = 0; i < header.size(); ++i) out[header[i]].push_back(parse_log_cell(cells[i]));
  }
  return out;
}

std::string line_chart_svg(const std::string& title, const std::map<std::string, std::vector<double>>& log,
                           const std::vector<std::string>& columns, const std::string& x_column) {
  constexpr double W = 640, H = 360, L = 60, R = 170, T = 40, B = 40;
  const auto& epochs = log.count(x_column) ? log.at(x_column) : std::vector<double>{};
  double xmin = 0, xmax = 1, ymin = std::numeric_limits<double>::infinity(), ymax = -ymin;
  if (!epochs.empty()) {
    xmin = epochs.front();
    xmax = std::max(epochs.back(), xmin + 1);
  }
  for (const auto& c : columns) {
    if (!log.count(c)) continue;
    for (double v : log.at(c)) {
      if (!std::isfinite(v)) continue;
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
    }
  }
  if (!std::isfinite(ymin)) ymin = 0, ymax = 1;
  if (ymax - ymin < 1e-9) ymax = ymin + 1;
  auto sx = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
  auto sy = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << escape(title) << "</text>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = ymin + (ymax - ymin) * i / 4.0;
    s << "<text x=\"" << L - 5 << "\" y=\"" << sy(y) + 4 << "\" text-anchor=\"end\">" << fmt(y) << "</text>\n";
    const double x = xmin + (xmax - xmin) * i / 4.0;
    s << "<text x=\"" << sx(x) << "\" y=\"" << H - B + 15 << "\" text-anchor=\"middle\">" << fmt(x) << "</text>\n";
  }
  s << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 8 << "\" text-anchor=\"middle\">" << escape(x_column) << "</text>\n";
  int k = 0;
  for (const auto& c : columns) {
    if (!log.count(c)) continue;
    const auto& ys = log.at(c);
    const char* color = kPalette[k % 8];
    std::ostringstream pts;
    for (std::size_t i = 0; i < ys.size() && i < epochs.size(); ++i) {
      if (std::isfinite(ys[i])) pts << sx(epochs[i]) << ',' << sy(ys[i]) << ' ';
    }
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"" << pts.str() << "\"/>\n";
    const double ly = T + 14.0 * k;
    s << "<line x1=\"" << W - R + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 30 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    s << "<text x=\"" << W - R + 35 << "\" y=\"" << ly + 4 << "\">" << escape(c) << "</text>\n";
    ++k;
  }
  s << "</svg>\n";
  return s.str();
}

std::string dice_bar_chart_svg(const std::vector<ExperimentSummary>& summaries) {
  constexpr double W = 640, H = 360, L = 60, R = 20, T = 40, B = 60;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">Dice per experiment</text>\n";
  auto sy = [&](double y) { return H - B - y * (H - T - B); };
  s << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double y = i / 5.0;
    s << "<text x=\"" << L - 5 << "\" y=\"" << sy(y) + 4 << "\" text-anchor=\"end\">" << fmt(y, 2) << "</text>\n";
  }
  const double slot = summaries.empty() ? 1 : (W - L - R) / static_cast<double>(summaries.size());
  for (std::size_t i = 0; i < summaries.size(); ++i) {
    const auto& e = summaries[i];
    const double m = std::isfinite(e.mean_dice) ? e.mean_dice : 0.0;
    const double x = L + slot * static_cast<double>(i) + slot * 0.2;
    const double w = slot * 0.6;
    s << "<rect x=\"" << x << "\" y=\"" << sy(m) << "\" width=\"" << w << "\" height=\"" << sy(0) - sy(m)
      << "\" fill=\"" << kPalette[i % 8] << "\"/>\n";
    if (std::isfinite(e.std_dice)) {
      const double cx = x + w / 2;
      s << "<line x1=\"" << cx << "\" y1=\"" << sy(std::min(1.0, m + e.std_dice)) << "\" x2=\"" << cx << "\" y2=\""
        << sy(std::max(0.0, m - e.std_dice)) << "\" stroke=\"black\"/>\n";
    }
    s << "<text x=\"" << x + w / 2 << "\" y=\"" << H - B + 15 << "\" text-anchor=\"middle\">" << escape(e.experiment)
      << "</text>\n";
    s << "<text x=\"" << x + w / 2 << "\" y=\"" << sy(m) - 4 << "\" text-anchor=\"middle\">" << fmt(m) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

void emit_report(const ReportInputs& inputs, const fs::path& out_dir) {
  fs::create_directories(out_dir / "plots");
  write_metrics_csv(inputs.records, out_dir / "metrics.csv");
  const auto summaries = summarize(inputs.records);
  nlohmann::json j{{"experiments", nlohmann::json::array()}, {"extra", inputs.extra}};
  auto num = [](double v) -> nlohmann::json { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  for (const auto& s : summaries) {
    j["experiments"].push_back({{"experiment", s.experiment},
                                {"volumes", s.volumes},
                                {"mean_dice", num(s.mean_dice)},
                                {"std_dice", num(s.std_dice)},
                                {"median_dice", num(s.median_dice)},
                                {"mean_assd", num(s.mean_assd)},
                                {"infinite_assd", s.infinite_assd}});
  }
  std::ofstream(out_dir / "summary.json") << j.dump(2) << '\n';
  std::ofstream(out_dir / "plots" / "dice.svg") << dice_bar_chart_svg(summaries);
  for (const auto& [name, path] : inputs.logs) {
    if (!fs::exists(path)) continue;
    const auto log = read_log_csv(path);
    std::vector<std::string> columns;
    for (const auto& [col, values] : log) {
      if (col != "epoch" && col != "wall_time_s") columns.push_back(col);
    }
    std::ofstream(out_dir / "plots" / (name + ".svg")) << line_chart_svg(name, log, columns);
  }
  for (const auto& [name, plot] : inputs.series) {
    std::vector<std::string> columns;
    for (const auto& [col, values] : plot.table) {
      if (col != plot.x_column) columns.push_back(col);
    }
    std::ofstream(out_dir / "plots" / (name + ".svg")) << line_chart_svg(name, plot.table, columns, plot.x_column);
  }
}

nlohmann::json load_summary(const fs::path& summary_json) {
  std::ifstream in(summary_json);
  if (!in) throw MissingArtifactError("report", "cannot open " + summary_json.string());
  nlohmann::json j;
  in >> j;
  return j;
}

}  // namespace xmodseg
