#include "mammoseg/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace mammoseg {
namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError(path, "cannot open for writing");
  return f;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError(path, "cannot open for reading");
  return f;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  cells.push_back(cur);
  return cells;
}

}  // namespace

SummaryStat summarize(const std::string& metric, const std::vector<double>& values) {
  if (values.empty()) throw ContractError("cannot summarize an empty metric");
  SummaryStat s;
  s.metric = metric;
  s.n = std::int64_t(values.size());
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  for (double v : sorted) s.mean += v;
  s.mean /= double(sorted.size());
  s.median = quantile_sorted(sorted, 0.5);
  s.q1 = quantile_sorted(sorted, 0.25);
  s.q3 = quantile_sorted(sorted, 0.75);
  s.min = sorted.front();
  s.max = sorted.back();
  return s;
}

void write_per_sample_csv(const EvalReport& report, const std::string& path) {
  auto f = open_out(path);
  f << "filename,dice,iou\n";
  for (std::size_t i = 0; i < report.names.size(); ++i)
    f << report.names[i] << "," << fmt(report.dice[i]) << "," << fmt(report.iou[i]) << "\n";
}

EvalReport read_per_sample_csv(const std::string& path) {
  auto f = open_in(path);
  EvalReport r;
  std::string line;
  bool header = true;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    auto cells = split_csv(line);
    if (cells.size() != 3) throw ParseError("per-sample row needs 3 cells: " + line, 0);
    r.names.push_back(cells[0]);
    r.dice.push_back(std::stod(cells[1]));
    r.iou.push_back(std::stod(cells[2]));
  }
  return r;
}

void write_summary_csv(const std::vector<SummaryStat>& stats,
                       const std::vector<std::string>& notes, const std::string& path) {
  auto f = open_out(path);
  f << "metric,mean,median,q1,q3,min,max,n\n";
  for (const SummaryStat& s : stats)
    f << s.metric << "," << fmt(s.mean) << "," << fmt(s.median) << "," << fmt(s.q1) << ","
      << fmt(s.q3) << "," << fmt(s.min) << "," << fmt(s.max) << "," << s.n << "\n";
  for (const std::string& note : notes) f << "# " << note << "\n";
}

void write_confusion_csv(const ConfusionMatrix& m, const std::string& path) {
  auto f = open_out(path);
  f << "truth\\pred";
  for (int c = 0; c < m.classes; ++c) f << "," << c;
  f << "\n";
  for (int t = 0; t < m.classes; ++t) {
    f << t;
    for (int p = 0; p < m.classes; ++p) f << "," << m.at(t, p);
    f << "\n";
  }
}

ConfusionMatrix read_confusion_csv(const std::string& path) {
  auto f = open_in(path);
  std::string line;
  if (!std::getline(f, line)) throw ParseError("empty confusion csv", 0);
  const int classes = int(split_csv(line).size()) - 1;
  ConfusionMatrix m(classes);
  for (int t = 0; t < classes; ++t) {
    if (!std::getline(f, line)) throw ParseError("confusion csv truncated", 0);
    auto cells = split_csv(line);
    if (int(cells.size()) != classes + 1)
      throw ParseError("confusion row needs " + std::to_string(classes + 1) + " cells", 0);
    for (int p = 0; p < classes; ++p) m.at(t, p) = std::stoll(cells[std::size_t(p + 1)]);
  }
  return m;
}

void write_roc_csv(const RocCurve& roc, const std::string& path) {
  auto f = open_out(path);
  f << "fpr,tpr\n";
  for (const auto& [fpr, tpr] : roc.points) f << fmt(fpr) << "," << fmt(tpr) << "\n";
  f << "# auc," << fmt(roc.auc) << "\n";
}

RocCurve read_roc_csv(const std::string& path) {
  auto f = open_in(path);
  RocCurve roc;
  std::string line;
  bool header = true;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    if (line.rfind("# auc,", 0) == 0) {
      roc.auc = std::stod(line.substr(6));
      continue;
    }
    auto cells = split_csv(line);
    if (cells.size() != 2) throw ParseError("roc row needs 2 cells: " + line, 0);
    roc.points.emplace_back(std::stod(cells[0]), std::stod(cells[1]));
  }
  return roc;
}

void write_seg_loss_csv(const std::vector<EpochStats>& rows, const std::string& path) {
  auto f = open_out(path);
  f << "epoch,gen_loss,disc_loss,dice_term,adv_term\n";
  for (const EpochStats& r : rows)
    f << r.epoch << "," << fmt(r.gen_loss) << "," << fmt(r.disc_loss) << ","
      << fmt(r.dice_term) << "," << fmt(r.adv_term) << "\n";
}

std::vector<EpochStats> read_seg_loss_csv(const std::string& path) {
  auto f = open_in(path);
  std::vector<EpochStats> rows;
  std::string line;
  bool header = true;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    auto cells = split_csv(line);
    if (cells.size() != 5) throw ParseError("loss row needs 5 cells: " + line, 0);
    EpochStats r;
    r.epoch = std::stoi(cells[0]);
    r.gen_loss = std::stod(cells[1]);
    r.disc_loss = std::stod(cells[2]);
    r.dice_term = std::stod(cells[3]);
    r.adv_term = std::stod(cells[4]);
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// SVG figures

namespace {

constexpr int kW = 640, kH = 420;
constexpr int kLeft = 70, kRight = 20, kTop = 40, kBottom = 50;

std::string svg_head(const std::string& title) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
     << "\" viewBox=\"0 0 " << kW << " " << kH << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << kW / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\""
     << " font-size=\"16\">" << title << "</text>\n";
  return os.str();
}

double map_y(double v, double lo, double hi) {
  return kH - kBottom - (v - lo) / (hi - lo) * (kH - kTop - kBottom);
}

double map_x(double v, double lo, double hi) {
  return kLeft + (v - lo) / (hi - lo) * (kW - kLeft - kRight);
}

void axis_labels_y(std::ostringstream& os, double lo, double hi) {
  for (int i = 0; i <= 4; ++i) {
    const double v = lo + (hi - lo) * i / 4.0;
    const double y = map_y(v, lo, hi);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    os << "<line x1=\"" << kLeft - 4 << "\" y1=\"" << y << "\" x2=\"" << kW - kRight
       << "\" y2=\"" << y << "\" stroke=\"#dddddd\"/>\n"
       << "<text x=\"" << kLeft - 8 << "\" y=\"" << y + 4
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << buf
       << "</text>\n";
  }
}

const char* kSeriesColors[6] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

}  // namespace

void write_boxplot_svg(const std::vector<std::pair<std::string, std::vector<double>>>& series,
                       const std::string& title, const std::string& path) {
  if (series.empty()) throw ContractError("boxplot needs at least one series");
  double lo = 1e300, hi = -1e300;
  for (const auto& [name, values] : series) {
    if (values.empty()) throw ContractError("boxplot series '" + name + "' is empty");
    for (double v : values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (hi <= lo) {
    hi = lo + 1e-9;
    lo -= 1e-9;
  }
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;

  std::ostringstream os;
  os << svg_head(title);
  axis_labels_y(os, lo, hi);
  const double slot = double(kW - kLeft - kRight) / double(series.size());
  for (std::size_t s = 0; s < series.size(); ++s) {
    std::vector<double> sorted = series[s].second;
    std::sort(sorted.begin(), sorted.end());
    const double q1 = quantile_sorted(sorted, 0.25);
    const double med = quantile_sorted(sorted, 0.5);
    const double q3 = quantile_sorted(sorted, 0.75);
    const double iqr = q3 - q1;
    double wlo = q1, whi = q3;
    for (double v : sorted) {
      if (v >= q1 - 1.5 * iqr) {
        wlo = v;
        break;
      }
    }
    for (auto it = sorted.rbegin(); it != sorted.rend(); ++it) {
      if (*it <= q3 + 1.5 * iqr) {
        whi = *it;
        break;
      }
    }
    const double cx = kLeft + slot * (double(s) + 0.5);
    const double half = std::min(40.0, slot * 0.3);
    auto Y = [&](double v) { return map_y(v, lo, hi); };
    os << "<line x1=\"" << cx << "\" y1=\"" << Y(wlo) << "\" x2=\"" << cx << "\" y2=\""
       << Y(whi) << "\" stroke=\"black\"/>\n";
    for (double w : {wlo, whi})
      os << "<line x1=\"" << cx - half / 2 << "\" y1=\"" << Y(w) << "\" x2=\"" << cx + half / 2
         << "\" y2=\"" << Y(w) << "\" stroke=\"black\"/>\n";
    os << "<rect x=\"" << cx - half << "\" y=\"" << Y(q3) << "\" width=\"" << 2 * half
       << "\" height=\"" << Y(q1) - Y(q3) << "\" fill=\"#aec7e8\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << cx - half << "\" y1=\"" << Y(med) << "\" x2=\"" << cx + half
       << "\" y2=\"" << Y(med) << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
    for (double v : sorted)
      if (v < q1 - 1.5 * iqr || v > q3 + 1.5 * iqr)
        os << "<circle cx=\"" << cx << "\" cy=\"" << Y(v) << "\" r=\"2.5\" fill=\"black\"/>\n";
    os << "<text x=\"" << cx << "\" y=\"" << kH - kBottom + 18
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
       << series[s].first << "</text>\n";
  }
  os << "</svg>\n";
  open_out(path) << os.str();
}

void write_roc_svg(const RocCurve& roc, const std::string& title, const std::string& path) {
  std::ostringstream os;
  os << svg_head(title);
  axis_labels_y(os, 0.0, 1.0);
  os << "<line x1=\"" << map_x(0, 0, 1) << "\" y1=\"" << map_y(0, 0, 1) << "\" x2=\""
     << map_x(1, 0, 1) << "\" y2=\"" << map_y(1, 0, 1)
     << "\" stroke=\"#bbbbbb\" stroke-dasharray=\"4 3\"/>\n";
  os << "<polyline fill=\"none\" stroke=\"#d62728\" stroke-width=\"2\" points=\"";
  for (const auto& [fpr, tpr] : roc.points) os << map_x(fpr, 0, 1) << "," << map_y(tpr, 0, 1) << " ";
  os << "\"/>\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "AUC = %.4f", roc.auc);
  os << "<text x=\"" << kW - kRight - 10 << "\" y=\"" << kH - kBottom - 12
     << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"13\">" << buf
     << "</text>\n";
  os << "<text x=\"" << (kLeft + kW - kRight) / 2 << "\" y=\"" << kH - 14
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">false positive "
        "rate</text>\n";
  os << "</svg>\n";
  open_out(path) << os.str();
}

void write_curves_svg(const std::vector<std::pair<std::string, std::vector<double>>>& curves,
                      const std::string& title, const std::string& y_label,
                      const std::string& path) {
  if (curves.empty()) throw ContractError("curve figure needs at least one series");
  double lo = 1e300, hi = -1e300;
  std::size_t n = 0;
  for (const auto& [name, values] : curves) {
    n = std::max(n, values.size());
    for (double v : values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (n < 2) throw ContractError("curve figure needs at least two points");
  if (hi <= lo) hi = lo + 1e-9;

  std::ostringstream os;
  os << svg_head(title);
  axis_labels_y(os, lo, hi);
  for (std::size_t s = 0; s < curves.size(); ++s) {
    const auto& values = curves[s].second;
    os << "<polyline fill=\"none\" stroke=\"" << kSeriesColors[s % 6]
       << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < values.size(); ++i)
      os << map_x(double(i), 0, double(n - 1)) << "," << map_y(values[i], lo, hi) << " ";
    os << "\"/>\n";
    os << "<text x=\"" << kW - kRight - 10 << "\" y=\"" << kTop + 16 + 16 * double(s)
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\" fill=\""
       << kSeriesColors[s % 6] << "\">" << curves[s].first << "</text>\n";
  }
  os << "<text x=\"" << (kLeft + kW - kRight) / 2 << "\" y=\"" << kH - 14
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">epoch ("
     << y_label << ")</text>\n";
  os << "</svg>\n";
  open_out(path) << os.str();
}

}  // namespace mammoseg
