#include "semivit/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "semivit/errors.hpp"
#include "semivit/metrics.hpp"

namespace semivit {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                    "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

std::string svg_line_plot(const std::string& title, const std::string& xlabel,
                          const std::string& ylabel, const std::vector<Series>& series) {
  const double w = 640, h = 400, left = 64, right = 160, top = 36, bottom = 48;
  const double pw = w - left - right, ph = h - top - bottom;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  auto sx = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto sy = [&](double y) { return top + ph - (y - y0) / (y1 - y0) * ph; };

  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + px(w) + "\" height=\"" + px(h) +
         "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<text x=\"" + px(w / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">" +
         escape(title) + "</text>\n";
  out += "<rect x=\"" + px(left) + "\" y=\"" + px(top) + "\" width=\"" + px(pw) + "\" height=\"" +
         px(ph) + "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double fx = x0 + (x1 - x0) * t / 4, fy = y0 + (y1 - y0) * t / 4;
    out += "<text x=\"" + px(sx(fx)) + "\" y=\"" + px(top + ph + 16) +
           "\" text-anchor=\"middle\">" + num(fx) + "</text>\n";
    out += "<text x=\"" + px(left - 6) + "\" y=\"" + px(sy(fy) + 4) + "\" text-anchor=\"end\">" +
           num(fy) + "</text>\n";
    out += "<line x1=\"" + px(left) + "\" x2=\"" + px(left + pw) + "\" y1=\"" + px(sy(fy)) +
           "\" y2=\"" + px(sy(fy)) + "\" stroke=\"#ddd\"/>\n";
  }
  out += "<text x=\"" + px(left + pw / 2) + "\" y=\"" + px(h - 10) + "\" text-anchor=\"middle\">" +
         escape(xlabel) + "</text>\n";
  out += "<text transform=\"translate(16," + px(top + ph / 2) +
         ") rotate(-90)\" text-anchor=\"middle\">" + escape(ylabel) + "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kPalette[k % (sizeof kPalette / sizeof *kPalette)];
    std::string pts;
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      pts += px(sx(s.x[i])) + "," + px(sy(s.y[i])) + " ";
    }
    out += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
           "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
    const double ly = top + 14 + 16 * static_cast<double>(k);
    out += "<line x1=\"" + px(left + pw + 10) + "\" x2=\"" + px(left + pw + 30) + "\" y1=\"" +
           px(ly - 4) + "\" y2=\"" + px(ly - 4) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    out += "<text x=\"" + px(left + pw + 34) + "\" y=\"" + px(ly) + "\">" + escape(s.name) +
           "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

std::vector<std::string> plot_metrics(const std::string& metrics_path, const std::string& out_dir) {
  const std::vector<Json> records = read_metrics(metrics_path);
  std::string run_id;
  Series teacher{"teacher", {}, {}}, student{"student", {}, {}};
  Series clean{"clean (pre-mix)", {}, {}}, clean_after{"included in L_u", {}, {}};
  Series lambda{"mean lambda", {}, {}};
  for (const auto& r : records) {
    if (r.contains("run_id") && run_id.empty()) run_id = r["run_id"].get<std::string>();
    const std::string kind = r.value("kind", "");
    if (kind == "eval") {
      const double e = r.value("global_epoch", 0.0);
      student.x.push_back(e);
      student.y.push_back(r["student_top1"].get<double>());
      if (r.contains("teacher_top1")) {
        teacher.x.push_back(e);
        teacher.y.push_back(r["teacher_top1"].get<double>());
      }
    } else if (kind == "step" && r.contains("clean_fraction")) {
      const double s = r["step"].get<double>();
      clean.x.push_back(s);
      clean.y.push_back(r["clean_fraction"].get<double>());
      clean_after.x.push_back(s);
      clean_after.y.push_back(r["clean_fraction_after"].get<double>());
      lambda.x.push_back(s);
      lambda.y.push_back(r["mean_lambda"].get<double>());
    }
  }
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> written;
  auto emit = [&](const std::string& file, const std::string& svg) {
    const std::string path = (std::filesystem::path(out_dir) / file).string();
    std::ofstream out(path);
    if (!out) throw DataError("cannot write plot " + path);
    out << svg;
    written.push_back(path);
  };
  const std::string suffix = run_id.empty() ? "" : " (" + run_id + ")";
  if (!student.x.empty()) {
    std::vector<Series> acc{student};
    if (!teacher.x.empty()) acc.insert(acc.begin(), teacher);
    emit("accuracy_vs_epoch.svg", svg_line_plot("Top-1 accuracy" + suffix, "epoch", "top-1 (%)", acc));
  }
  if (!clean.x.empty()) {
    emit("clean_fraction_vs_step.svg",
         svg_line_plot("Pseudo-label clean fraction" + suffix, "step", "fraction", {clean, clean_after}));
    emit("mean_lambda_vs_step.svg",
         svg_line_plot("Mean unlabeled mixing lambda" + suffix, "step", "lambda", {lambda}));
  }
  return written;
}

}  // namespace semivit
