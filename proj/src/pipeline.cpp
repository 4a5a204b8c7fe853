#include "semivit/pipeline.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>

#include "semivit/augment.hpp"
#include "semivit/checkpoint.hpp"
#include "semivit/errors.hpp"
#include "semivit/losses.hpp"
#include "semivit/synthetic.hpp"
#include "semivit/teacher_student.hpp"

#ifndef SEMIVIT_SOURCE_REVISION
#define SEMIVIT_SOURCE_REVISION "unknown"
#endif

namespace semivit {

namespace fs = std::filesystem;

namespace {

Json accuracy_json(const Accuracy& a) { return Json{{"top1", a.top1}, {"top5", a.top5}}; }

Dataset concat_datasets(Dataset a, const Dataset& b) {
  if (a.num_classes != b.num_classes) throw DataError("datasets disagree on num_classes");
  a.images = concat_rows(a.images, b.images);
  a.labels.insert(a.labels.end(), b.labels.begin(), b.labels.end());
  a.paths.insert(a.paths.end(), b.paths.begin(), b.paths.end());
  return a;
}

void check_labels(const Dataset& d, const std::string& what) {
  for (std::size_t i = 0; i < d.labels.size(); ++i) {
    if (d.labels[i] < 0 || d.labels[i] >= d.num_classes) {
      throw DataError(what + ": label " + std::to_string(d.labels[i]) + " at entry " +
                      std::to_string(i) + " outside [0, " + std::to_string(d.num_classes) + ")");
    }
  }
}

// Mutable training state that survives across stages and checkpoints.
struct State {
  int stage = 2;
  int epochs_done = 0;          // within `stage`
  bool stage_complete = false;
  std::int64_t global_step = 0;
  StudentState<float> student;
  TeacherState<float> teacher;
};

class Runner {
 public:
  Runner(const RunConfig& cfg, const PipelineOptions& opts) : cfg_(cfg), opts_(opts) {}

  RunManifest run();

 private:
  void log(const std::string& msg) {
    if (opts_.log) *opts_.log << "[" << run_id_ << "] " << msg << std::endl;
  }
  std::uint64_t stage_seed(int stage) const {
    return derive_seed(cfg_.seed, "stage", {static_cast<std::uint64_t>(stage)});
  }
  const StageConfig& stage_cfg(int stage) const { return stage == 2 ? cfg_.stage2 : cfg_.stage3; }
  bool run_stage(int stage);
  void evaluate_record(int stage, int epoch, int global_epoch);
  std::string save(const std::string& name);

  const RunConfig& cfg_;
  const PipelineOptions& opts_;
  std::string run_id_, run_dir_;
  LoadedData data_;
  MetricsWriter metrics_;
  RunManifest manifest_;
  State st_;
  int epochs_this_call_ = 0;
  int global_epoch_ = 0;
  std::optional<Accuracy> last_student_, last_teacher_;
};

std::string Runner::save(const std::string& name) {
  Checkpoint c;
  c.run_id = run_id_;
  c.config_hash = cfg_.hash();
  c.global_step = st_.global_step;
  c.stage = st_.stage;
  c.epochs_done = st_.epochs_done;
  c.stage_complete = st_.stage_complete;
  c.optimizer_steps = st_.student.optimizer.steps();
  c.metrics_lines = metrics_.lines();
  c.student = st_.student.params;
  if (st_.stage == 3) c.teacher = st_.teacher.params;
  c.adam_m = st_.student.optimizer.first_moment();
  c.adam_v = st_.student.optimizer.second_moment();
  c.meta["global_epoch"] = std::to_string(global_epoch_);
  if (last_student_) c.meta["student_top1"] = std::to_string(last_student_->top1);
  if (last_teacher_) c.meta["teacher_top1"] = std::to_string(last_teacher_->top1);
  const std::string path = (fs::path(run_dir_) / "checkpoints" / (name + ".ckpt")).string();
  save_checkpoint(path, c);
  manifest_.checkpoints.push_back(path);
  return path;
}

void Runner::evaluate_record(int stage, int epoch, int global_epoch) {
  VisionTransformer<float> model(cfg_.model_for(stage_cfg(stage == 3 ? 3 : 2)));
  const std::size_t eb = static_cast<std::size_t>(cfg_.eval_batch);
  last_student_ = evaluate(model, st_.student.params, data_.eval, eb);
  const bool with_teacher = stage == 3 && cfg_.stage3.framework == Framework::kEmaTeacher;
  last_teacher_.reset();
  if (with_teacher) last_teacher_ = evaluate(model, st_.teacher.params, data_.eval, eb);
  const Accuracy& rep = with_teacher ? *last_teacher_ : *last_student_;
  Json r;
  r["run_id"] = run_id_;
  r["kind"] = "eval";
  r["stage"] = stage;
  r["epoch"] = epoch;
  r["global_epoch"] = global_epoch;
  r["step"] = st_.global_step;
  r["top1"] = rep.top1;
  r["top5"] = rep.top5;
  r["reported"] = with_teacher ? "teacher" : "student";
  r["student_top1"] = last_student_->top1;
  r["student_top5"] = last_student_->top5;
  if (with_teacher) {
    r["teacher_top1"] = last_teacher_->top1;
    r["teacher_top5"] = last_teacher_->top5;
  }
  metrics_.write(r);
  log("stage " + std::to_string(stage) + " epoch " + std::to_string(epoch) + ": top1 " +
      std::to_string(rep.top1) + " (student " + std::to_string(last_student_->top1) + ")");
}

// Returns false when the invocation stopped early on request.
bool Runner::run_stage(int stage) {
  const StageConfig& sc = stage_cfg(stage);
  const VisionTransformer<float> model(cfg_.model_for(sc));
  const std::uint64_t seed = stage_seed(stage);
  BatchStream stream(data_.split.labeled, stage == 3 ? data_.split.unlabeled : std::vector<std::size_t>{},
                     static_cast<std::size_t>(sc.batch_size), sc.unlabeled_ratio, seed);
  const std::size_t spe = stream.steps_per_epoch();
  const ScheduleState sched{sc.base_lr, static_cast<std::int64_t>(sc.warmup_epochs * spe),
                            static_cast<std::int64_t>(sc.epochs * spe), sc.min_lr};
  const std::vector<ParamGroup> groups =
      model.param_groups(st_.student.params, sc.layer_decay, sc.weight_decay);
  const AugmentPolicy labeled_policy = cfg_.augment.labeled();
  const AugmentPolicy weak = cfg_.augment.weak();
  const AugmentPolicy strong = cfg_.augment.strong();
  StageConfig step_cfg = sc;
  step_cfg.seed = cfg_.seed;
  st_.student.step = st_.global_step;

  for (int epoch = st_.epochs_done; epoch < sc.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double loss_sum = 0;
    for (std::size_t step = 0; step < spe; ++step) {
      const std::uint64_t stage_step = static_cast<std::uint64_t>(epoch) * spe + step;
      const BatchStream::Batch b = stream.batch(static_cast<std::size_t>(epoch), step);
      LabeledBatch<float> lab = gather_labeled<float>(data_.train, b.labeled);
      lab.images = apply(labeled_policy, lab.images, derive_seed(seed, "augment", {stage_step}));
      StepContext ctx;
      ctx.lr = lr_at(sched, static_cast<std::int64_t>(stage_step));
      ctx.groups = groups;
      ctx.seed = derive_seed(seed, "step", {stage_step});
      LossReport r;
      try {
        if (stage == 2) {
          r = supervised_step(model, st_.student, lab, step_cfg, ctx);
        } else {
          const UnlabeledBatch<float> ub = gather_unlabeled<float>(data_.train, b.unlabeled);
          const ViewPair<float> views =
              make_views(ub, weak, strong, derive_seed(seed, "views", {stage_step}));
          r = semi_step(model, st_.student, st_.teacher, lab, views, step_cfg, ctx);
        }
      } catch (const NonFiniteError& e) {
        Json a{{"run_id", run_id_}, {"kind", "abort"}, {"stage", stage}, {"step", st_.global_step},
               {"error", e.what()}};
        metrics_.write(a);
        if (st_.student.params.all_finite()) {
          const std::string p = save("abort_step" + std::to_string(st_.global_step));
          log("non-finite value, last good state saved to " + p);
        }
        throw;
      }
      Json rec;
      rec["run_id"] = run_id_;
      rec["kind"] = "step";
      rec["stage"] = stage;
      rec["epoch"] = epoch;
      rec["step"] = st_.global_step;
      rec["lr"] = ctx.lr;
      rec["loss_l"] = r.labeled;
      rec["loss_u"] = r.unlabeled;
      rec["mu"] = stage == 3 ? sc.mu : 0.0;
      rec["loss"] = r.total;
      if (stage == 3) {
        rec["clean_fraction"] = r.clean_fraction;
        rec["clean_fraction_after"] = r.clean_fraction_after;
        rec["mean_confidence"] = r.mean_confidence;
        rec["mean_lambda"] = r.mean_lambda;
      }
      metrics_.write(rec);
      loss_sum += r.total;
      ++st_.global_step;
    }
    st_.epochs_done = epoch + 1;
    ++global_epoch_;
    const bool last = st_.epochs_done == sc.epochs;
    st_.stage_complete = last;
    if (st_.epochs_done % cfg_.eval_interval == 0 || last) {
      evaluate_record(stage, st_.epochs_done, global_epoch_);
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log("stage " + std::to_string(stage) + " epoch " + std::to_string(st_.epochs_done) + "/" +
        std::to_string(sc.epochs) + " mean loss " + std::to_string(loss_sum / spe) + " (" +
        std::to_string(secs) + " s)");
    if (last) {
      save("stage" + std::to_string(stage) + "_final");
    } else if (cfg_.checkpoint_interval > 0 && st_.epochs_done % cfg_.checkpoint_interval == 0) {
      char name[48];
      std::snprintf(name, sizeof name, "stage%d_epoch%04d", stage, st_.epochs_done);
      save(name);
    }
    ++epochs_this_call_;
    if (opts_.stop_after_epochs >= 0 && epochs_this_call_ >= opts_.stop_after_epochs && !last) {
      return false;
    }
  }
  st_.stage_complete = true;
  return true;
}

RunManifest Runner::run() {
  cfg_.validate();
  run_id_ = run_id_for(cfg_);
  run_dir_ = run_dir_for(cfg_);
  fs::create_directories(fs::path(run_dir_) / "checkpoints");
  {
    std::ofstream snap(fs::path(run_dir_) / "config.snapshot");
    snap << "# run " << run_id_ << "\n" << cfg_.to_map().dump();
  }
  manifest_.run_id = run_id_;
  manifest_.run_dir = run_dir_;
  manifest_.config_snapshot = cfg_.to_map().dump();
  manifest_.seed = cfg_.seed;
  manifest_.source_revision = source_revision();
  manifest_.metrics_path = (fs::path(run_dir_) / "metrics.jsonl").string();
  manifest_.stages.push_back("stage1:" + cfg_.init);
  if (cfg_.stage2_enabled && opts_.stage2_checkpoint.empty()) manifest_.stages.push_back("stage2");
  if (!opts_.stage2_checkpoint.empty()) manifest_.stages.push_back("stage2:" + opts_.stage2_checkpoint);
  if (cfg_.stage3_enabled) manifest_.stages.push_back("stage3");

  data_ = load_data(cfg_);
  manifest_.dataset_sources = data_.sources;

  const VisionTransformer<float> model(cfg_.model_for(cfg_.stage2));
  AdamWConfig acfg{cfg_.stage2.beta1, cfg_.stage2.beta2, 1e-8, cfg_.stage2.weight_decay};
  st_.student.params = model.init_params(derive_seed(cfg_.seed, "init"));
  st_.student.optimizer = AdamW<float>(st_.student.params, acfg);

  std::string resume = opts_.resume_from;
  if (resume == "auto") {
    auto latest = latest_checkpoint(run_dir_);
    resume = latest ? *latest : "";
  }

  if (!resume.empty()) {
    Checkpoint c = load_checkpoint(resume);
    if (c.config_hash != cfg_.hash()) {
      throw ConfigError("checkpoint " + resume + " was written with a different configuration");
    }
    metrics_ = MetricsWriter(manifest_.metrics_path, false, c.metrics_lines);
    load_params_by_name(st_.student.params, c.student, false);
    st_.stage = c.stage;
    st_.epochs_done = c.epochs_done;
    st_.stage_complete = c.stage_complete;
    st_.global_step = c.global_step;
    const StageConfig& sc = stage_cfg(c.stage);
    st_.student.optimizer = AdamW<float>(st_.student.params, AdamWConfig{sc.beta1, sc.beta2, 1e-8, sc.weight_decay});
    if (c.adam_m.count() > 0) {
      load_params_by_name(st_.student.optimizer.first_moment(), c.adam_m, false);
      load_params_by_name(st_.student.optimizer.second_moment(), c.adam_v, false);
    }
    st_.student.optimizer.set_steps(c.optimizer_steps);
    if (c.teacher.count() > 0) {
      st_.teacher.params = st_.student.params;
      load_params_by_name(st_.teacher.params, c.teacher, false);
    }
    if (auto meta = read_sidecar(resume); meta.count("global_epoch")) {
      global_epoch_ = std::stoi(meta["global_epoch"]);
    }
    log("resumed from " + resume + " at step " + std::to_string(st_.global_step));
  } else {
    metrics_ = MetricsWriter(manifest_.metrics_path, true);
    if (!opts_.stage2_checkpoint.empty()) {
      Checkpoint c = load_checkpoint(opts_.stage2_checkpoint);
      load_params_by_name(st_.student.params, c.student, false);
      st_.stage = 2;
      st_.stage_complete = true;
      st_.epochs_done = cfg_.stage2.epochs;
      st_.global_step = c.global_step;
      if (auto meta = read_sidecar(opts_.stage2_checkpoint); meta.count("global_epoch")) {
        global_epoch_ = std::stoi(meta["global_epoch"]);
      }
    } else if (cfg_.init != "scratch") {
      Checkpoint c = load_checkpoint(cfg_.init);
      load_params_by_name(st_.student.params, c.student, true);
    }
    if (!cfg_.stage2_enabled && opts_.stage2_checkpoint.empty()) {
      st_.stage = 2;
      st_.stage_complete = true;
    }
  }

  bool finished = true;
  if (st_.stage == 2 && !st_.stage_complete && cfg_.stage2_enabled) {
    if (cfg_.stage2.epochs > 0) finished = run_stage(2);
    if (finished) st_.stage_complete = true;
  }
  if (finished && st_.stage == 2 && st_.stage_complete && cfg_.stage2_enabled &&
      cfg_.stage2.epochs > 0) {
    manifest_.stage2_final = last_student_;
  }
  if (finished && cfg_.stage3_enabled && !(st_.stage == 3 && st_.stage_complete)) {
    if (st_.stage == 2) {
      // Stage 3 starts from the stage-2 student; the teacher is an exact copy.
      st_.stage = 3;
      st_.epochs_done = 0;
      st_.stage_complete = false;
      st_.teacher.params = st_.student.params;
      const StageConfig& sc = cfg_.stage3;
      st_.student.optimizer = AdamW<float>(st_.student.params, AdamWConfig{sc.beta1, sc.beta2, 1e-8, sc.weight_decay});
    }
    st_.teacher.momentum = cfg_.stage3.ema_momentum;
    if (cfg_.stage3.epochs > 0) finished = run_stage(3);
  }

  if (!finished) {
    log("stopped early on request");
    manifest_.completed = false;
    return manifest_;
  }

  // Final evaluation of whatever the run ended with.
  const bool with_teacher = st_.stage == 3 && cfg_.stage3_enabled &&
                            cfg_.stage3.framework == Framework::kEmaTeacher && st_.teacher.params.count() > 0;
  const VisionTransformer<float> eval_model(cfg_.model_for(cfg_.stage3));
  const std::size_t eb = static_cast<std::size_t>(cfg_.eval_batch);
  manifest_.final_student = evaluate(eval_model, st_.student.params, data_.eval, eb);
  if (with_teacher) manifest_.final_teacher = evaluate(eval_model, st_.teacher.params, data_.eval, eb);
  manifest_.reported = with_teacher ? *manifest_.final_teacher : *manifest_.final_student;
  Json f;
  f["run_id"] = run_id_;
  f["kind"] = "final";
  f["step"] = st_.global_step;
  f["global_epoch"] = global_epoch_;
  f["top1"] = manifest_.reported.top1;
  f["top5"] = manifest_.reported.top5;
  f["reported"] = with_teacher ? "teacher" : "student";
  f["student_top1"] = manifest_.final_student->top1;
  f["student_top5"] = manifest_.final_student->top5;
  if (with_teacher) {
    f["teacher_top1"] = manifest_.final_teacher->top1;
    f["teacher_top5"] = manifest_.final_teacher->top5;
  }
  metrics_.write(f);
  manifest_.completed = true;
  std::ofstream(fs::path(run_dir_) / "manifest.json") << manifest_.to_json().dump(2) << "\n";
  return manifest_;
}

}  // namespace

Json RunManifest::to_json() const {
  Json j;
  j["run_id"] = run_id;
  j["run_dir"] = run_dir;
  j["seed"] = seed;
  j["source_revision"] = source_revision;
  j["stages"] = stages;
  j["dataset_sources"] = dataset_sources;
  j["metrics"] = metrics_path;
  j["checkpoints"] = checkpoints;
  j["completed"] = completed;
  if (stage2_final) j["stage2_final"] = accuracy_json(*stage2_final);
  if (final_student) j["final_student"] = accuracy_json(*final_student);
  if (final_teacher) j["final_teacher"] = accuracy_json(*final_teacher);
  j["reported"] = accuracy_json(reported);
  j["config"] = config_snapshot;
  return j;
}

LoadedData load_data(const RunConfig& cfg) {
  LoadedData d;
  const int c = cfg.data.num_classes;
  if (cfg.data.source == "synthetic") {
    SyntheticSpec spec;
    spec.num_classes = c;
    spec.image_size = cfg.data.image_size;
    spec.train_size = cfg.data.synthetic_train;
    spec.eval_size = cfg.data.synthetic_eval;
    spec.noise = cfg.data.synthetic_noise;
    spec.seed = cfg.data.synthetic_seed;
    d.train = make_synthetic(spec, false);
    d.eval = make_synthetic(spec, true);
    d.sources.push_back("synthetic:seed=" + std::to_string(spec.seed));
    d.split = split_dataset(d.train.labels, c, cfg.data.label_fraction, derive_seed(cfg.seed, "split"));
  } else if (!cfg.data.labeled_manifest.empty()) {
    Dataset lab = load_manifest_dataset(cfg.data.labeled_manifest, c);
    check_labels(lab, cfg.data.labeled_manifest);
    d.sources.push_back(cfg.data.labeled_manifest);
    const std::size_t n_lab = lab.size();
    if (!cfg.data.unlabeled_manifest.empty()) {
      Dataset unl = load_manifest_dataset(cfg.data.unlabeled_manifest, c);
      d.sources.push_back(cfg.data.unlabeled_manifest);
      d.train = concat_datasets(std::move(lab), unl);
    } else {
      d.train = std::move(lab);
    }
    d.split.labeled.resize(n_lab);
    std::iota(d.split.labeled.begin(), d.split.labeled.end(), std::size_t{0});
    d.split.unlabeled.resize(d.train.size());
    std::iota(d.split.unlabeled.begin(), d.split.unlabeled.end(), std::size_t{0});
  } else {
    d.train = load_manifest_dataset(cfg.data.train_manifest, c);
    check_labels(d.train, cfg.data.train_manifest);
    d.sources.push_back(cfg.data.train_manifest);
    d.split = split_dataset(d.train.labels, c, cfg.data.label_fraction, derive_seed(cfg.seed, "split"));
  }
  if (cfg.data.source == "manifest") {
    d.eval = load_manifest_dataset(cfg.data.eval_manifest, c);
    check_labels(d.eval, cfg.data.eval_manifest);
    d.sources.push_back(cfg.data.eval_manifest);
  }
  if (d.train.images.dim(1) != static_cast<std::size_t>(cfg.model.in_chans)) {
    throw ConfigError("model.in_chans: data has " + std::to_string(d.train.images.dim(1)) + " channels");
  }
  const std::size_t s = static_cast<std::size_t>(cfg.model.image_size);
  if (d.train.images.dim(2) != s || d.train.images.dim(3) != s) {
    throw ConfigError("model.image_size: training images are " + std::to_string(d.train.images.dim(2)) +
                      "x" + std::to_string(d.train.images.dim(3)));
  }
  if (d.eval.size() == 0) throw DataError("evaluation set is empty");
  return d;
}

std::string run_id_for(const RunConfig& cfg) { return cfg.name + "-" + hex64(cfg.hash()).substr(0, 8); }

std::string run_dir_for(const RunConfig& cfg) {
  return (fs::path(cfg.out_dir) / run_id_for(cfg)).string();
}

std::string source_revision() { return SEMIVIT_SOURCE_REVISION; }

RunManifest run_pipeline(const RunConfig& cfg, const PipelineOptions& opts) {
  Runner r(cfg, opts);
  return r.run();
}

std::optional<std::string> latest_checkpoint(const std::string& run_dir) {
  const fs::path dir = fs::path(run_dir) / "checkpoints";
  if (!fs::exists(dir)) return std::nullopt;
  std::optional<std::string> best;
  std::tuple<std::int64_t, int, int, bool> best_key{-1, 0, 0, false};
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() != ".ckpt") continue;
    if (e.path().filename().string().rfind("abort", 0) == 0) continue;
    const Checkpoint c = load_checkpoint(e.path().string());
    std::tuple<std::int64_t, int, int, bool> key{c.global_step, c.stage, c.epochs_done, c.stage_complete};
    if (!best || key > best_key) {
      best = e.path().string();
      best_key = key;
    }
  }
  return best;
}

}  // namespace semivit
