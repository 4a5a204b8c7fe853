// Command-line front end: synth, split, train, eval, ablate, plot.
//
// Exit codes: 0 success, 2 configuration error, 3 run failure.

#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "semivit/ablation.hpp"
#include "semivit/checkpoint.hpp"
#include "semivit/config.hpp"
#include "semivit/errors.hpp"
#include "semivit/evaluate.hpp"
#include "semivit/metrics.hpp"
#include "semivit/pipeline.hpp"
#include "semivit/plot.hpp"
#include "semivit/synthetic.hpp"

namespace fs = std::filesystem;
using namespace semivit;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRun = 3;

RunConfig load_config(const std::string& path, const std::vector<std::string>& sets) {
  ConfigMap m = path.empty() ? ConfigMap{} : ConfigMap::load(path);
  for (const auto& s : sets) m.apply_override(s);
  return RunConfig::from_map(m);
}

int cmd_synth(const std::string& out, int train, int eval, std::uint64_t seed, double noise) {
  SyntheticSpec spec;
  spec.train_size = train;
  spec.eval_size = eval;
  spec.seed = seed;
  spec.noise = noise;
  for (bool is_eval : {false, true}) {
    const Dataset d = make_synthetic(spec, is_eval);
    const std::string part = is_eval ? "eval" : "train";
    fs::create_directories(fs::path(out) / part);
    std::vector<ManifestEntry> entries;
    const std::size_t px = d.images.row_size();
    for (std::size_t i = 0; i < d.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "%06zu.ppm", i);
      const std::string rel = part + "/" + name;
      write_pnm((fs::path(out) / rel).string(),
                std::span<const float>(d.images.data() + i * px, px), 3,
                static_cast<std::size_t>(spec.image_size), static_cast<std::size_t>(spec.image_size));
      entries.push_back({rel, d.labels[i]});
    }
    write_manifest((fs::path(out) / (part + ".txt")).string(), entries);
  }
  std::cout << "wrote " << out << "/train.txt and " << out << "/eval.txt\n";
  return 0;
}

int cmd_split(const std::string& manifest, double fraction, std::uint64_t seed, int num_classes,
              const std::string& out) {
  const std::vector<ManifestEntry> entries = read_manifest(manifest);
  std::vector<int> labels;
  for (const auto& e : entries) labels.push_back(e.label);
  const Split s = split_dataset(labels, num_classes, fraction, seed);
  // Paths are rewritten relative to the output directory's manifests.
  const fs::path base = fs::absolute(fs::path(manifest)).parent_path();
  auto resolve = [&](const std::string& p) {
    return fs::path(p).is_absolute() ? p : (base / p).lexically_normal().string();
  };
  std::vector<ManifestEntry> lab, unl;
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (std::size_t i : s.labeled) {
    lab.push_back({resolve(entries[i].path), entries[i].label});
    ++counts[static_cast<std::size_t>(entries[i].label)];
  }
  for (std::size_t i : s.unlabeled) unl.push_back({resolve(entries[i].path), -1});
  fs::create_directories(out);
  write_manifest((fs::path(out) / "labeled.txt").string(), lab);
  write_manifest((fs::path(out) / "unlabeled.txt").string(), unl);
  Json j;
  j["labeled"] = lab.size();
  j["unlabeled"] = unl.size();
  j["per_class"] = counts;
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& resume, const std::string& stage2) {
  PipelineOptions opts;
  opts.resume_from = resume;
  opts.stage2_checkpoint = stage2;
  opts.log = &std::cerr;
  const RunManifest m = run_pipeline(cfg, opts);
  std::cout << m.to_json().dump(2) << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& ckpt_path, const std::string& which) {
  const Checkpoint c = load_checkpoint(ckpt_path);
  const LoadedData data = load_data(cfg);
  const VisionTransformer<float> model(cfg.model_for(cfg.stage3));
  ParamSet<float> params = model.make_params();
  if (which == "teacher") {
    if (c.teacher.count() == 0) throw ConfigError("--which: checkpoint has no teacher parameters");
    load_params_by_name(params, c.teacher, false);
  } else {
    load_params_by_name(params, c.student, false);
  }
  const Accuracy a = evaluate(model, params, data.eval, static_cast<std::size_t>(cfg.eval_batch));
  Json j{{"run_id", c.run_id}, {"checkpoint", ckpt_path}, {"params", which}, {"top1", a.top1},
         {"top5", a.top5}, {"count", a.count}};
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_ablate(const std::string& config, const std::vector<std::string>& sets,
               const std::vector<std::string>& axes_spec, const std::string& out, bool no_share,
               bool resume) {
  ConfigMap base = config.empty() ? ConfigMap{} : ConfigMap::load(config);
  for (const auto& s : sets) base.apply_override(s);
  std::vector<AblationAxis> axes;
  for (const auto& a : axes_spec) axes.push_back(parse_axis(a));
  AblationOptions opts;
  opts.out_dir = out;
  opts.share_stage2 = !no_share;
  opts.resume = resume;
  opts.log = &std::cerr;
  const AblationResult r = run_ablation(base, axes, opts);
  std::cout << r.table;
  for (const auto& f : r.files) std::cout << "wrote " << f << "\n";
  return 0;
}

int cmd_plot(const std::string& metrics, const std::string& out) {
  for (const auto& f : plot_metrics(metrics, out)) std::cout << "wrote " << f << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised vision transformer training"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "Write the synthetic benchmark as PPM images + manifests");
  std::string synth_out;
  int synth_train = 5000, synth_eval = 1000;
  std::uint64_t synth_seed = 0;
  double synth_noise = 0.06;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--train", synth_train, "Training images");
  synth->add_option("--eval", synth_eval, "Evaluation images");
  synth->add_option("--seed", synth_seed, "Generator seed");
  synth->add_option("--noise", synth_noise, "Pixel noise std");

  auto* split = app.add_subcommand("split", "Per-class labeled/unlabeled split of a manifest");
  std::string split_manifest, split_out;
  double split_fraction = 0.1;
  std::uint64_t split_seed = 0;
  int split_classes = 10;
  split->add_option("--manifest", split_manifest, "Labeled manifest to split")->required();
  split->add_option("--fraction", split_fraction, "Labeled fraction per class");
  split->add_option("--seed", split_seed, "Split seed");
  split->add_option("--num-classes", split_classes, "Number of classes");
  split->add_option("--out", split_out, "Output directory")->required();

  std::string config;
  std::vector<std::string> sets;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config, "Config file (dotted key = value lines)");
    sub->add_option("--set", sets, "Override key=value (repeatable)");
  };

  auto* train = app.add_subcommand("train", "Run the staged pipeline");
  add_config(train);
  std::string resume, stage2_ckpt;
  train->add_option("--resume", resume, "Checkpoint to resume from, or 'auto'");
  train->add_option("--stage2-checkpoint", stage2_ckpt, "Start stage 3 from this checkpoint");

  auto* eval = app.add_subcommand("eval", "Top-1/top-5 of a checkpoint on the evaluation set");
  add_config(eval);
  std::string eval_ckpt, which = "teacher";
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval->add_option("--which", which, "teacher or student")
      ->check(CLI::IsMember({"teacher", "student"}));

  auto* ablate = app.add_subcommand("ablate", "Cross-product ablation with a comparison table");
  add_config(ablate);
  std::vector<std::string> axes;
  std::string ablate_out = "ablation";
  bool no_share = false, ablate_resume = false;
  ablate->add_option("--axis", axes, "key=v1,v2 (repeatable)")->required();
  ablate->add_option("--out", ablate_out, "Output directory");
  ablate->add_flag("--no-share-stage2", no_share, "Run stage 2 separately for every run");
  ablate->add_flag("--resume", ablate_resume, "Continue runs left by an earlier invocation");

  auto* plot = app.add_subcommand("plot", "SVG plots from a metrics stream");
  std::string plot_metrics_path, plot_out;
  plot->add_option("--metrics", plot_metrics_path, "metrics.jsonl")->required();
  plot->add_option("--out", plot_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*synth) return cmd_synth(synth_out, synth_train, synth_eval, synth_seed, synth_noise);
    if (*split) return cmd_split(split_manifest, split_fraction, split_seed, split_classes, split_out);
    if (*train) return cmd_train(load_config(config, sets), resume, stage2_ckpt);
    if (*eval) return cmd_eval(load_config(config, sets), eval_ckpt, which);
    if (*ablate) return cmd_ablate(config, sets, axes, ablate_out, no_share, ablate_resume);
    if (*plot) return cmd_plot(plot_metrics_path, plot_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRun;
  }
  return 0;
}
