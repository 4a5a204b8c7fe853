#include "semivit/ablation.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>

#include "semivit/checkpoint.hpp"
#include "semivit/errors.hpp"
#include "semivit/metrics.hpp"
#include "semivit/pipeline.hpp"
#include "semivit/plot.hpp"

namespace semivit {

namespace fs = std::filesystem;

AblationAxis parse_axis(std::string_view spec) {
  const auto eq = spec.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("axis '" + std::string(spec) + "' must look like key=v1,v2");
  }
  AblationAxis a;
  a.key = std::string(spec.substr(0, eq));
  std::string_view rest = spec.substr(eq + 1);
  while (true) {
    const auto comma = rest.find(',');
    std::string v(rest.substr(0, comma));
    if (v.empty()) throw ConfigError("axis '" + a.key + "' has an empty value");
    a.values.push_back(v);
    if (comma == std::string_view::npos) break;
    rest = rest.substr(comma + 1);
  }
  return a;
}

bool is_failed_accuracy(double top1, int num_classes) {
  return top1 <= 2.0 * 100.0 / static_cast<double>(num_classes);
}

namespace {

// Newest checkpoint of the run if it matches the configuration, else "" (fresh start).
std::string resumable(const RunConfig& cfg, bool enabled) {
  if (!enabled) return "";
  const auto latest = latest_checkpoint(run_dir_for(cfg));
  if (!latest) return "";
  try {
    return load_checkpoint(*latest).config_hash == cfg.hash() ? *latest : "";
  } catch (const DataError&) {
    return "";
  }
}

void mean_spread(const std::vector<double>& v, double& mean, double& spread) {
  mean = spread = 0;
  if (v.empty()) return;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) return;
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  spread = std::sqrt(ss / static_cast<double>(v.size() - 1));
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

std::vector<AblationRow> aggregate_runs(const std::vector<AblationRun>& runs) {
  std::vector<AblationRow> rows;
  std::vector<std::vector<double>> teacher, student, stage2;
  for (const auto& r : runs) {
    std::size_t k = 0;
    while (k < rows.size() && rows[k].variant != r.variant) ++k;
    if (k == rows.size()) {
      rows.push_back(AblationRow{});
      rows.back().variant = r.variant;
      teacher.emplace_back();
      student.emplace_back();
      stage2.emplace_back();
    }
    AblationRow& row = rows[k];
    ++row.runs;
    if (!r.ok) continue;
    ++row.completed;
    if (r.failed) ++row.failed;
    teacher[k].push_back(r.teacher_top1);
    student[k].push_back(r.student_top1);
    if (r.stage2_top1) stage2[k].push_back(*r.stage2_top1);
  }
  for (std::size_t k = 0; k < rows.size(); ++k) {
    mean_spread(teacher[k], rows[k].teacher_mean, rows[k].teacher_spread);
    mean_spread(student[k], rows[k].student_mean, rows[k].student_spread);
    if (!stage2[k].empty()) {
      double m, s;
      mean_spread(stage2[k], m, s);
      rows[k].stage2_mean = m;
    }
  }
  return rows;
}

std::string format_table(const std::vector<AblationRow>& rows) {
  std::string out =
      "| variant | runs | teacher top-1 | student top-1 | stage-2 top-1 | notes |\n"
      "|---|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    std::string notes;
    if (r.completed < r.runs) notes += std::to_string(r.runs - r.completed) + " errored ";
    if (r.failed > 0) notes += std::to_string(r.failed) + "/" + std::to_string(r.completed) + " FAILED";
    const bool none = r.completed == 0;
    out += "| " + r.variant + " | " + std::to_string(r.runs) + " | " +
           (none ? "-" : fmt(r.teacher_mean) + " ± " + fmt(r.teacher_spread)) + " | " +
           (none ? "-" : fmt(r.student_mean) + " ± " + fmt(r.student_spread)) + " | " +
           (r.stage2_mean ? fmt(*r.stage2_mean) : "-") + " | " + notes + " |\n";
  }
  return out;
}

AblationResult run_ablation(const ConfigMap& base, const std::vector<AblationAxis>& axes,
                            const AblationOptions& opts) {
  for (const auto& a : axes) {
    if (a.values.empty()) throw ConfigError("axis '" + a.key + "' has no values");
  }
  // Validate every combination before running anything.
  std::vector<std::map<std::string, std::string>> combos{{}};
  for (const auto& a : axes) {
    std::vector<std::map<std::string, std::string>> next;
    for (const auto& c : combos) {
      for (const auto& v : a.values) {
        auto m = c;
        m[a.key] = v;
        next.push_back(std::move(m));
      }
    }
    combos = std::move(next);
  }
  std::vector<RunConfig> configs;
  for (const auto& c : combos) {
    ConfigMap m = base;
    for (const auto& [k, v] : c) m.set(k, v);
    std::string name;
    for (const auto& [k, v] : c) name += (name.empty() ? "" : "_") + k.substr(k.rfind('.') + 1) + "-" + v;
    m.set("run.name", name.empty() ? "base" : name);
    m.set("run.out_dir", (fs::path(opts.out_dir) / "runs").string());
    configs.push_back(RunConfig::from_map(m));
  }

  fs::create_directories(opts.out_dir);
  AblationResult res;
  std::map<std::uint64_t, std::pair<std::string, double>> shared;  // stage2 hash -> (ckpt, top1)
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const RunConfig& cfg = configs[i];
    AblationRun run;
    run.overrides = combos[i];
    for (const auto& [k, v] : combos[i]) {
      if (k == "run.seed") continue;
      run.variant += (run.variant.empty() ? "" : ", ") + k + "=" + v;
    }
    if (run.variant.empty()) run.variant = "base";
    run.run_id = run_id_for(cfg);
    run.run_dir = run_dir_for(cfg);
    try {
      PipelineOptions po;
      po.log = opts.log;
      const bool can_share = opts.share_stage2 && cfg.stage2_enabled && cfg.stage2.epochs > 0 &&
                             cfg.stage3_enabled;
      if (can_share) {
        const std::uint64_t h = cfg.stage2_hash();
        if (!shared.count(h)) {
          RunConfig s2 = cfg;
          s2.stage3_enabled = false;
          s2.name = "stage2";
          s2.out_dir = (fs::path(opts.out_dir) / "shared").string();
          PipelineOptions p2 = po;
          p2.resume_from = resumable(s2, opts.resume);
          const RunManifest m = run_pipeline(s2, p2);
          shared[h] = {(fs::path(m.run_dir) / "checkpoints" / "stage2_final.ckpt").string(),
                       m.final_student->top1};
        }
        po.stage2_checkpoint = shared[h].first;
        run.stage2_top1 = shared[h].second;
      }
      po.resume_from = resumable(cfg, opts.resume);
      const RunManifest m = run_pipeline(cfg, po);
      run.ok = true;
      run.student_top1 = m.final_student->top1;
      run.teacher_top1 = m.reported.top1;
      run.failed = is_failed_accuracy(run.teacher_top1, cfg.data.num_classes);
      if (!run.stage2_top1 && m.stage2_final) run.stage2_top1 = m.stage2_final->top1;
      for (const auto& r : read_metrics(m.metrics_path)) {
        if (r.value("kind", "") == "eval") {
          run.curve.emplace_back(r["global_epoch"].get<double>(), r["top1"].get<double>());
        }
      }
    } catch (const std::exception& e) {
      run.ok = false;
      run.error = e.what();
      if (opts.log) *opts.log << "[ablation] run " << run.run_id << " errored: " << e.what() << "\n";
    }
    res.runs.push_back(std::move(run));
  }

  res.rows = aggregate_runs(res.runs);
  res.table = format_table(res.rows);
  const fs::path dir(opts.out_dir);
  {
    const std::string p = (dir / "table.md").string();
    std::ofstream(p) << res.table;
    res.files.push_back(p);
  }
  {
    Json j = Json::array();
    for (const auto& r : res.runs) {
      Json o;
      o["run_id"] = r.run_id;
      o["variant"] = r.variant;
      o["overrides"] = r.overrides;
      o["ok"] = r.ok;
      if (!r.ok) o["error"] = r.error;
      o["teacher_top1"] = r.teacher_top1;
      o["student_top1"] = r.student_top1;
      if (r.stage2_top1) o["stage2_top1"] = *r.stage2_top1;
      o["failed"] = r.failed;
      j.push_back(o);
    }
    const std::string p = (dir / "runs.json").string();
    std::ofstream(p) << j.dump(2) << "\n";
    res.files.push_back(p);
  }
  // Mean curve per variant over its completed runs.
  std::vector<Series> curves;
  for (const auto& row : res.rows) {
    Series s{row.variant, {}, {}};
    std::map<double, std::pair<double, int>> acc;
    for (const auto& r : res.runs) {
      if (r.variant != row.variant || !r.ok) continue;
      for (auto [e, v] : r.curve) {
        acc[e].first += v;
        acc[e].second += 1;
      }
    }
    for (auto& [e, sv] : acc) {
      s.x.push_back(e);
      s.y.push_back(sv.first / sv.second);
    }
    curves.push_back(std::move(s));
  }
  const std::string p = (dir / "accuracy_vs_epoch.svg").string();
  std::ofstream(p) << svg_line_plot("Top-1 vs epoch (mean over seeds)", "epoch", "top-1 (%)", curves);
  res.files.push_back(p);
  return res;
}

}  // namespace semivit
