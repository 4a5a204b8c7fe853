#pragma once
// Cross-product ablation runs with a shared stage-2 prefix, an aggregated
// comparison table and accuracy plots.

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "semivit/config.hpp"

namespace semivit {

struct AblationAxis {
  std::string key;
  std::vector<std::string> values;
};

// "key=v1,v2,..."; throws ConfigError.
AblationAxis parse_axis(std::string_view spec);

struct AblationRun {
  std::map<std::string, std::string> overrides;
  std::string variant;  // every non-seed override, "base" when there are none
  std::string run_id;
  std::string run_dir;
  bool ok = false;  // ran to completion
  std::string error;
  double teacher_top1 = 0;  // teacher in ema_teacher mode, else the student
  double student_top1 = 0;
  std::optional<double> stage2_top1;
  bool failed = false;  // final top-1 <= 2x chance
  std::vector<std::pair<double, double>> curve;  // (global epoch, reported top-1)
};

struct AblationRow {
  std::string variant;
  std::size_t runs = 0;
  std::size_t completed = 0;
  std::size_t failed = 0;
  double teacher_mean = 0, teacher_spread = 0;  // spread = sample standard deviation
  double student_mean = 0, student_spread = 0;
  std::optional<double> stage2_mean;
};

bool is_failed_accuracy(double top1, int num_classes);

// Rows in first-appearance order of the variants; only completed runs enter
// the statistics.
std::vector<AblationRow> aggregate_runs(const std::vector<AblationRun>& runs);
std::string format_table(const std::vector<AblationRow>& rows);

struct AblationOptions {
  std::string out_dir = "ablation";
  bool share_stage2 = true;
  // Continue each run from its newest checkpoint when that checkpoint was
  // written with the same configuration; finished runs are only re-evaluated.
  bool resume = false;
  std::ostream* log = nullptr;
};

struct AblationResult {
  std::vector<AblationRun> runs;
  std::vector<AblationRow> rows;
  std::string table;
  std::vector<std::string> files;
};

// Individual run errors are recorded in the result, never rethrown.
AblationResult run_ablation(const ConfigMap& base, const std::vector<AblationAxis>& axes,
                            const AblationOptions& opts);

}  // namespace semivit
