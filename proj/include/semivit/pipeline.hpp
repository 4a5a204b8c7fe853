#pragma once
// Staged training runs: optional stage-1 initialization, supervised fine-tuning
// on the labeled split (stage 2), then semi-supervised fine-tuning (stage 3).

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "semivit/config.hpp"
#include "semivit/core_types.hpp"
#include "semivit/evaluate.hpp"
#include "semivit/metrics.hpp"

namespace semivit {

struct PipelineOptions {
  // Checkpoint to resume from, or "auto" for the most advanced checkpoint in
  // the run directory.
  std::string resume_from;
  // Skip stage 2 and start stage 3 from this checkpoint's student.
  std::string stage2_checkpoint;
  // Return after this many training epochs in this invocation, as if killed
  // right after the last checkpoint write. Negative = no limit.
  int stop_after_epochs = -1;
  std::ostream* log = nullptr;
};

struct RunManifest {
  std::string run_id;
  std::string run_dir;
  std::string config_snapshot;
  std::vector<std::string> stages;
  std::vector<std::string> dataset_sources;
  std::uint64_t seed = 0;
  std::string source_revision;
  std::string metrics_path;
  std::vector<std::string> checkpoints;
  bool completed = false;
  std::optional<Accuracy> stage2_final;  // student after stage 2
  std::optional<Accuracy> final_student;
  std::optional<Accuracy> final_teacher;  // stage 3 in ema_teacher mode
  Accuracy reported;                      // teacher if present, else student

  Json to_json() const;
};

struct LoadedData {
  Dataset train;
  Split split;
  Dataset eval;
  std::vector<std::string> sources;
};

LoadedData load_data(const RunConfig& cfg);

std::string run_id_for(const RunConfig& cfg);
std::string run_dir_for(const RunConfig& cfg);
std::string source_revision();

// Throws ConfigError for invalid configuration, NonFiniteError (after saving a
// checkpoint of the last good state) on divergence, DataError on bad inputs.
RunManifest run_pipeline(const RunConfig& cfg, const PipelineOptions& opts = {});

// Newest checkpoint in a run directory (by global step, then stage), if any.
std::optional<std::string> latest_checkpoint(const std::string& run_dir);

}  // namespace semivit
