#pragma once
// Run configuration: a flat "dotted.key = value" text format plus the typed
// RunConfig built from it.
//
//   # comment
//   run.seed = 3
//   stage3.tau = 0.6
//
// Every key must be known; unknown keys and malformed values raise ConfigError
// naming the key.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "semivit/augment.hpp"
#include "semivit/core_types.hpp"
#include "semivit/vit.hpp"

namespace semivit {

class ConfigMap {
 public:
  static ConfigMap parse(std::string_view text, std::string_view origin = "<config>");
  static ConfigMap load(const std::string& path);

  void set(const std::string& key, const std::string& value);
  // "key=value" (whitespace around either side is trimmed).
  void apply_override(std::string_view assignment);
  void erase(const std::string& key) { entries_.erase(key); }

  std::optional<std::string> find(const std::string& key) const;
  bool contains(const std::string& key) const { return entries_.count(key) > 0; }
  const std::map<std::string, std::string>& entries() const { return entries_; }

  // Sorted "key = value" lines; parse(dump()) reproduces the map.
  std::string dump() const;

 private:
  std::map<std::string, std::string> entries_;
};

struct DataConfig {
  std::string source = "synthetic";  // synthetic | manifest
  std::string train_manifest;        // fully labeled training set, split by label_fraction
  std::string labeled_manifest;      // alternatively, a pre-made split
  std::string unlabeled_manifest;
  std::string eval_manifest;
  int num_classes = 10;
  double label_fraction = 0.1;
  // Synthetic benchmark.
  int synthetic_train = 5000;
  int synthetic_eval = 1000;
  int image_size = 32;
  double synthetic_noise = 0.06;
  std::uint64_t synthetic_seed = 0;
};

struct AugmentConfig {
  double weak_crop_min = 0.7;
  double weak_jitter = 0.4;
  double strong_crop_min = 0.35;
  int ra_ops = 2;
  int ra_magnitude = 9;
  double erase_prob = 0.25;
  std::string labeled_policy = "strong";  // strong | weak | identity

  AugmentPolicy weak() const;
  AugmentPolicy strong() const;
  AugmentPolicy labeled() const;
};

struct RunConfig {
  std::string name = "run";
  std::string out_dir = "runs";
  std::uint64_t seed = 0;
  DataConfig data;
  ViTConfig model;
  AugmentConfig augment;
  std::string init = "scratch";  // or a checkpoint path
  bool stage2_enabled = true;
  bool stage3_enabled = true;
  StageConfig stage2;
  StageConfig stage3;
  int eval_interval = 1;        // epochs
  int checkpoint_interval = 0;  // epochs; 0 = only at stage end
  int eval_batch = 250;

  RunConfig();

  static RunConfig from_map(const ConfigMap& map);
  ConfigMap to_map() const;
  // Throws ConfigError with the dotted key of the offending field.
  void validate() const;
  // Hash of the canonical dump; recorded in checkpoints.
  std::uint64_t hash() const;
  // Hash of every key that influences stage 2 (used to share stage-2 results).
  std::uint64_t stage2_hash() const;
  // Model config with the drop-path rate of the given stage.
  ViTConfig model_for(const StageConfig& stage) const;
};

// All known keys in sorted order.
std::vector<std::string> known_config_keys();

std::string hex64(std::uint64_t v);

}  // namespace semivit
