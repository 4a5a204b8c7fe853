// Acceptance checks. Prints one PASS/FAIL line per criterion and exits non-zero
// if any selected criterion fails.
//
//   acceptance --config configs/desk.conf --cli build/tools/semivit --work /tmp/acc
//   acceptance --only 1,2,3 ...
//   acceptance --only 5,6,7 --resume ...   (continue an interrupted ablation)

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "oracle.hpp"
#include "semivit/ablation.hpp"
#include "semivit/config.hpp"
#include "semivit/metrics.hpp"
#include "semivit/mixup.hpp"
#include "semivit/pipeline.hpp"
#include "semivit/teacher_student.hpp"

using namespace semivit;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Collects failures with a short reason; the first few are reported.
struct Checker {
  std::size_t checks = 0, failures = 0;
  std::vector<std::string> first;

  void expect(bool ok, const std::string& what) {
    ++checks;
    if (ok) return;
    ++failures;
    if (first.size() < 3) first.push_back(what);
  }
  Outcome outcome(const std::string& summary) const {
    Outcome o;
    o.pass = failures == 0;
    o.detail = summary + " (" + std::to_string(checks) + " checks";
    if (failures) {
      o.detail += ", " + std::to_string(failures) + " failed: ";
      for (const auto& f : first) o.detail += f + "; ";
    }
    o.detail += ")";
    return o;
  }
};

std::string sci(double v) {
  std::ostringstream s;
  s.setf(std::ios::scientific);
  s.precision(2);
  s << v;
  return s.str();
}

std::string fmt(double v, int prec = 2) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(prec);
  s << v;
  return s.str();
}

// ---------------------------------------------------------------- criterion 1

Outcome formula_suite() {
  Checker c;
  // EMA: fixed point, copy, no-op, geometric decay toward a fixed student.
  ParamSet<double> s;
  s.add("w", {5}, 1, true);
  s.add("b", {3}, 2, false);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd(0, 1);
  for (auto& p : s)
    for (auto& v : p.value) v = nd(rng);
  for (double m : {0.0, 0.5, 0.9, 0.9999, 1.0}) {
    ParamSet<double> t = s;
    ema_update(t, s, m);
    for (std::size_t i = 0; i < t.count(); ++i)
      for (std::size_t k = 0; k < t[i].value.size(); ++k)
        c.expect(std::abs(t[i].value[k] - s[i].value[k]) <= 1e-15 * std::abs(s[i].value[k]),
                 "ema fixed point");
  }
  ParamSet<double> t0 = s.zeros_like();
  for (auto& p : t0)
    for (auto& v : p.value) v = nd(rng);
  ParamSet<double> t = t0;
  ema_update(t, s, 0.0);
  c.expect(t == s, "ema m=0 copies the student");
  t = t0;
  ema_update(t, s, 1.0);
  c.expect(t == t0, "ema m=1 keeps the teacher");
  t = t0;
  for (int k = 1; k <= 20; ++k) {
    ema_update(t, s, 0.9);
    for (std::size_t i = 0; i < t.count(); ++i)
      for (std::size_t j = 0; j < t[i].value.size(); ++j) {
        const double want = std::pow(0.9, k) * (t0[i].value[j] - s[i].value[j]);
        c.expect(std::abs((t[i].value[j] - s[i].value[j]) - want) < 1e-12, "ema geometric decay");
      }
  }

  // Prob-pseudo fixture with pairing (2,3,0,1).
  {
    const std::vector<double> o{0.95, 0.40, 0.60, 0.20};
    Tensor<double> probs({4, 10});
    for (std::size_t i = 0; i < 4; ++i) {
      for (int k = 0; k < 10; ++k) probs.row(i)[k] = (1 - o[i]) / 9;
      probs.row(i)[i] = o[i];
    }
    const auto b = make_pseudo_batch(Tensor<double>({4, 1, 2, 2}, 0.5), probs, 0.5);
    const std::vector<std::size_t> pairing{2, 3, 0, 1};
    MixConfig mc;
    mc.cutmix_alpha = 0;
    Rng r(0);
    const auto m = prob_pseudo_mixup(b, mc, 0.5, pairing, MixMode::kBlend, r);
    const double lam[] = {0.95 / 1.55, 0.40 / 0.60, 0.60 / 1.55, 0.20 / 0.60};
    const double ostar[] = {0.95, 0.40, 0.95, 0.40};
    for (std::size_t i = 0; i < 4; ++i) {
      c.expect(std::abs(m.lambda[i] - lam[i]) < 1e-12, "fixture lambda");
      c.expect(std::abs(m.confidence_star[i] - ostar[i]) < 1e-12, "fixture o*");
    }
    c.expect(m.include_mask == std::vector<bool>{true, false, true, false}, "fixture mask");
  }

  // Gated mean: library loss vs a per-sample sum.
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 40, k = 2 + rng() % 9;
    Tensor<double> logits({n, k}), targets({n, k});
    std::vector<double> w(n);
    double want = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double sum = 0;
      for (std::size_t j = 0; j < k; ++j) {
        logits.row(i)[j] = 4 * nd(rng);
        sum += targets.row(i)[j] = std::abs(nd(rng));
      }
      for (std::size_t j = 0; j < k; ++j) targets.row(i)[j] /= sum;
      w[i] = (rng() % 2) ? 1.0 : 0.0;
      if (w[i] > 0) {
        want += oracle::cross_entropy({logits.row(i).begin(), logits.row(i).end()},
                                      {targets.row(i).begin(), targets.row(i).end()});
      }
    }
    want /= static_cast<double>(n);
    c.expect(std::abs(soft_target_loss<double>(logits, targets, w, n) - want) < 1e-7, "gated mean");
  }

  // The full semi-supervised loss against the straight-line float64 transcription.
  {
    const ViTConfig cfg = oracle::toy_config(1);
    const VisionTransformer<double> model(cfg);
    StageConfig sc;
    sc.mixup_alpha = sc.cutmix_alpha = 0;
    sc.drop_path = 0;
    sc.tau = 0.3;
    sc.mu = 3;
    auto student = oracle::perturbed_params(model, 1, 0.2);
    auto teacher = oracle::perturbed_params(model, 2, 0.2);
    for (auto* p : {&student, &teacher})
      for (auto& v : p->at("head.weight").value) v *= 8;
    const auto lab = oracle::toy_labeled(cfg, 4, 3);
    const auto views = oracle::toy_views(cfg, 8, 4);
    ParamSet<double>* const no_grads = nullptr;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto want = oracle::semi_loss(cfg, sc, student, teacher, lab, views, seed);
      const auto got = compute_semi_loss(model, student, teacher, lab, views, sc, seed, no_grads);
      c.expect(std::abs(got.total - want.total) < 1e-7, "semi loss vs oracle");
    }
  }
  return c.outcome("EMA, prob-pseudo fixture, gated mean");
}

// ---------------------------------------------------------------- criterion 2

PseudoBatch<float> random_pseudo_batch(std::mt19937_64& rng, double tau) {
  const std::size_t n = 2 + rng() % 31, c = 10;
  std::normal_distribution<double> nd(0, 1);
  std::uniform_real_distribution<double> u(0, 1);
  const double sharp = 0.5 + 4 * u(rng);
  Tensor<float> logits({n, c});
  for (auto& v : logits.storage()) v = static_cast<float>(sharp * nd(rng));
  Tensor<float> images({n, 3, 8, 8});
  for (auto& v : images.storage()) v = static_cast<float>(u(rng));
  auto pl = pseudo_labels_from_logits(logits);
  return make_pseudo_batch(std::move(images), std::move(pl.probs), tau);
}

Outcome mixup_algebra() {
  Checker c;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0, 1);
  const UnlabeledMixup variants[] = {UnlabeledMixup::kNone, UnlabeledMixup::kPseudo,
                                     UnlabeledMixup::kPseudoPlus, UnlabeledMixup::kProbPseudo};
  for (auto variant : variants) {
    const std::string name(to_string(variant));
    for (int trial = 0; trial < 1000; ++trial) {
      const double tau = 0.2 + 0.7 * u(rng);
      const auto b = random_pseudo_batch(rng, tau);
      MixConfig mc;
      mc.mixup_alpha = 0.8;
      mc.cutmix_alpha = 0;
      mc.label_smoothing = (trial % 2) ? 0.1 : 0.0;
      Rng r(static_cast<std::uint64_t>(trial));
      const auto m = mix_unlabeled(variant, b, mc, tau, r);
      const std::size_t px = b.images_strong.row_size();
      const int k = b.num_classes();
      for (std::size_t i = 0; i < m.size(); ++i) {
        const std::size_t si = m.source[i], pj = m.partner[i];
        const double lam = m.lambda[i];
        double err = 0;
        for (std::size_t p = 0; p < px; ++p) {
          const double want = lam * b.images_strong.row(si)[p] + (1 - lam) * b.images_strong.row(pj)[p];
          err = std::max(err, std::abs(want - m.images.row(i)[p]));
        }
        c.expect(err <= 1e-6, name + " reconstruction");
        double sum = 0;
        for (int j = 0; j < k; ++j) sum += m.soft_labels.row(i)[j];
        c.expect(std::abs(sum - 1) <= 1e-5, name + " label sum");
        if (variant == UnlabeledMixup::kProbPseudo) {
          const double oi = b.confidence[si], oj = b.confidence[pj];
          c.expect((oi >= oj) == (lam >= 0.5), name + " monotonicity");
          c.expect(!b.clean_mask[si] || m.include_mask[i], name + " gate widening");
        }
        if (variant == UnlabeledMixup::kPseudoPlus) {
          c.expect(b.clean_mask[si] && b.clean_mask[pj], name + " purity");
        }
        if (variant == UnlabeledMixup::kNone) {
          c.expect(lam == 1.0 && si == i, name + " identity");
        }
      }
      if (variant == UnlabeledMixup::kPseudoPlus) {
        const auto clean = static_cast<std::size_t>(std::count(b.clean_mask.begin(), b.clean_mask.end(), true));
        c.expect(m.size() == clean, name + " keeps every clean sample");
      } else {
        c.expect(m.size() == b.size(), name + " batch size");
      }
    }
  }
  return c.outcome("4 variants x 1000 random batches");
}

// ---------------------------------------------------------------- criterion 3

Outcome gradient_correctness() {
  Checker c;
  StageConfig sc;
  sc.mixup_alpha = 0;
  sc.cutmix_alpha = 0;
  sc.drop_path = 0;
  sc.tau = 0.3;
  sc.mu = 2;
  const auto a = oracle::semi_gradient_check(sc, 1, 4);
  // Labeled mixup, drop path and the full cutmix/mixup switch on.
  sc.mixup_alpha = 0.8;
  sc.cutmix_alpha = 1.0;
  sc.unlabeled_cutmix = true;
  sc.drop_path = 0.2;
  const auto b = oracle::semi_gradient_check(sc, 1, 4);
  for (const auto& g : {a, b}) {
    c.expect(g.checked >= 50, "coordinate count " + std::to_string(g.checked));
    c.expect(g.max_rel_err < 1e-4, "relative error " + sci(g.max_rel_err));
    c.expect(g.teacher_path_grad == 0.0, "teacher path gradient");
  }
  return c.outcome(std::to_string(a.checked + b.checked) + " coordinates, max rel err " +
                   sci(std::max(a.max_rel_err, b.max_rel_err)) + ", teacher-path gradient " +
                   sci(std::max(a.teacher_path_grad, b.teacher_path_grad)));
}

// ---------------------------------------------------------------- criterion 4

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism(const ConfigMap& desk, const fs::path& work) {
  Checker c;
  ConfigMap m = desk;
  for (const char* kv : {"run.name=determinism", "data.synthetic.train_size=400",
                         "data.synthetic.eval_size=100", "data.synthetic.image_size=16",
                         "model.image_size=16", "model.patch_size=4", "model.embed_dim=16",
                         "model.depth=1", "model.num_heads=2", "stage2.epochs=3", "stage2.warmup_epochs=1",
                         "stage2.batch_size=8",
                         "stage3.epochs=3", "stage3.batch_size=8", "stage3.unlabeled_ratio=2",
                         "stage3.drop_path=0.1", "stage3.cutmix_alpha=1.0", "run.eval_interval=1",
                         "run.checkpoint_interval=1"}) {
    m.apply_override(kv);
  }
  m.set("run.out_dir", (work / "determinism").string());
  const RunConfig cfg = RunConfig::from_map(m);
  const std::string dir = run_dir_for(cfg);

  auto fresh = [&](int stop_after) {
    fs::remove_all(dir);
    PipelineOptions po;
    po.stop_after_epochs = stop_after;
    return run_pipeline(cfg, po);
  };
  const RunManifest a = fresh(-1);
  const std::string stream_a = slurp(a.metrics_path);
  const RunManifest b = fresh(-1);
  const std::string stream_b = slurp(b.metrics_path);
  c.expect(!stream_a.empty() && stream_a == stream_b, "repeat run streams differ");

  // Killed mid stage 2, then mid stage 3, then resumed to the end.
  fresh(2);
  PipelineOptions po;
  po.resume_from = "auto";
  po.stop_after_epochs = 2;
  run_pipeline(cfg, po);
  po.stop_after_epochs = -1;
  const RunManifest r = run_pipeline(cfg, po);
  const std::string stream_r = slurp(r.metrics_path);
  c.expect(stream_r == stream_a, "resumed stream differs");
  c.expect(r.reported.top1 == a.reported.top1, "resumed final accuracy differs");
  const auto lines = std::count(stream_a.begin(), stream_a.end(), '\n');
  return c.outcome("two runs and a twice-killed run give identical " + std::to_string(lines) +
                   "-record streams");
}

// ---------------------------------------------------------------- criteria 5-7

struct AblationOutcomes {
  Outcome table1, table3;
};

const AblationRow* row_for(const std::vector<AblationRow>& rows, const std::string& variant) {
  for (const auto& r : rows)
    if (r.variant == variant) return &r;
  return nullptr;
}

AblationOutcomes mixup_ablation(const ConfigMap& desk, const fs::path& work, bool resume) {
  AblationOptions ao;
  ao.out_dir = (work / "mixup_ablation").string();
  ao.log = &std::cerr;
  ao.resume = resume;
  if (!resume) fs::remove_all(ao.out_dir);
  ConfigMap base = desk;
  base.set("run.out_dir", ao.out_dir);
  base.set("stage3.framework", "ema_teacher");
  const std::vector<AblationAxis> axes{
      parse_axis("stage3.unlabeled_mixup=none,pseudo,pseudo_plus,prob_pseudo"),
      parse_axis("run.seed=0,1,2")};
  const AblationResult res = run_ablation(base, axes, ao);
  std::cerr << res.table;

  AblationOutcomes out;
  auto key = [](const char* v) { return std::string("stage3.unlabeled_mixup=") + v; };
  const AblationRow* prob = row_for(res.rows, key("prob_pseudo"));
  const AblationRow* none = row_for(res.rows, key("none"));
  if (!prob || !none || prob->completed != 3 || none->completed != 3 || !prob->stage2_mean) {
    out.table1 = {false, "ablation runs did not complete"};
    out.table3 = out.table1;
    return out;
  }
  const double base2 = *prob->stage2_mean;
  const double gain = prob->teacher_mean - base2;
  out.table1.pass = gain >= 2.0;
  out.table1.detail = "prob_pseudo teacher " + fmt(prob->teacher_mean) + " vs stage-2 " + fmt(base2) +
                      " (gain " + fmt(gain) + ", need >= 2.00, 3 seeds)";

  const double margin = prob->teacher_mean - none->teacher_mean;
  out.table3.pass = margin >= 0.5;
  std::string order;
  bool monotone = true;
  double prev = -1;
  for (const char* v : {"none", "pseudo", "pseudo_plus", "prob_pseudo"}) {
    const AblationRow* r = row_for(res.rows, key(v));
    const double mean = r && r->completed ? r->teacher_mean : NAN;
    order += std::string(order.empty() ? "" : ", ") + v + " " + fmt(mean);
    monotone = monotone && mean >= prev;
    prev = mean;
  }
  out.table3.detail = "prob_pseudo - none = " + fmt(margin) + " (need >= 0.50); ordering " + order +
                      (monotone ? " [soft ordering holds]" : " [soft ordering not met]");
  std::ofstream(work / "mixup_ablation" / "report.txt")
      << res.table << "\n" << out.table1.detail << "\n" << out.table3.detail << "\n";
  return out;
}

Outcome framework_comparison(const ConfigMap& desk, const fs::path& work, bool resume) {
  AblationOptions ao;
  ao.out_dir = (work / "framework").string();
  ao.log = &std::cerr;
  ao.resume = resume;
  if (!resume) fs::remove_all(ao.out_dir);
  ConfigMap base = desk;
  base.set("run.out_dir", ao.out_dir);
  base.set("run.seed", "0");
  const AblationResult res = run_ablation(base, {parse_axis("stage3.framework=ema_teacher,fixmatch")}, ao);
  std::cerr << res.table;
  Checker c;
  c.expect(res.runs.size() == 2, "two runs");
  std::string detail;
  const int classes = RunConfig::from_map(desk).data.num_classes;
  for (const auto& r : res.runs) {
    c.expect(r.ok, r.variant + " did not complete: " + r.error);
    c.expect(r.failed == is_failed_accuracy(r.teacher_top1, classes), "failure annotation");
    detail += r.variant.substr(r.variant.find('=') + 1) + " " + fmt(r.teacher_top1) +
              (r.failed ? " (FAILED)" : "") + ", ";
  }
  c.expect(res.runs.size() == 2 && res.runs[0].stage2_top1 == res.runs[1].stage2_top1,
           "stage-2 checkpoint shared");
  c.expect(res.table.find("fixmatch") != std::string::npos, "comparison row emitted");
  if (!res.runs.empty() && res.runs[0].stage2_top1) detail += "stage-2 " + fmt(*res.runs[0].stage2_top1);
  return c.outcome(detail);
}

// ---------------------------------------------------------------- criterion 8

Outcome split_correctness(const std::string& cli, const fs::path& work) {
  Checker c;
  const fs::path dir = work / "split";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::vector<int> sizes{50, 15, 25, 73, 44, 35, 96, 10, 61, 5};
  std::vector<ManifestEntry> entries;
  std::mt19937_64 rng(3);
  for (int k = 0; k < 10; ++k)
    for (int i = 0; i < sizes[k]; ++i) entries.push_back({"img/" + std::to_string(k) + "_" + std::to_string(i) + ".ppm", k});
  std::shuffle(entries.begin(), entries.end(), rng);
  write_manifest((dir / "train.txt").string(), entries);

  for (int tenths : {1, 3, 5}) {
    std::string outs[2];
    for (int run = 0; run < 2; ++run) {
      const fs::path out = dir / ("f" + std::to_string(tenths) + "_" + std::to_string(run));
      const std::string cmd = "\"" + cli + "\" split --manifest \"" + (dir / "train.txt").string() +
                              "\" --fraction " + fmt(tenths / 10.0, 1) + " --seed 4 --out \"" +
                              out.string() + "\" > /dev/null";
      c.expect(std::system(cmd.c_str()) == 0, "split command failed");
      outs[run] = slurp((out / "labeled.txt").string());
      if (run == 0) {
        std::map<int, int> per;
        for (const auto& e : read_manifest((out / "labeled.txt").string())) ++per[e.label];
        for (int k = 0; k < 10; ++k) {
          // round(x) for x = size * tenths / 10, halves rounded up, in integers.
          const int want = (sizes[k] * tenths * 2 + 10) / 20;
          c.expect(per[k] == want, "class " + std::to_string(k) + " count " + std::to_string(per[k]) +
                                       " != " + std::to_string(want));
        }
        c.expect(read_manifest((out / "unlabeled.txt").string()).size() == entries.size(),
                 "unlabeled set is the full training set");
      }
    }
    c.expect(!outs[0].empty() && outs[0] == outs[1], "invocations differ");
  }
  return c.outcome("10-class fixture at fractions 0.1/0.3/0.5, two CLI invocations each");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string config_path = "configs/desk.conf", cli = "semivit", work = "acceptance_work";
  std::vector<int> only;
  bool resume = false;
  app.add_option("--config", config_path, "Desk-scale benchmark config");
  app.add_option("--cli", cli, "Path to the semivit command-line tool");
  app.add_option("--work", work, "Scratch directory for runs");
  app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',');
  app.add_flag("--resume", resume, "Reuse ablation runs left in the work directory");
  CLI11_PARSE(app, argc, argv);

  const fs::path wd = fs::absolute(work);
  fs::create_directories(wd);
  const std::set<int> sel(only.begin(), only.end());
  auto want = [&](int k) { return sel.empty() || sel.count(k); };

  std::map<int, std::pair<std::string, std::function<Outcome()>>> crit;
  std::optional<AblationOutcomes> ablation;
  auto ablation_part = [&](bool table1) {
    if (!ablation) ablation = mixup_ablation(ConfigMap::load(config_path), wd, resume);
    return table1 ? ablation->table1 : ablation->table3;
  };
  crit[1] = {"formula suite", formula_suite};
  crit[2] = {"mixup algebra", mixup_algebra};
  crit[3] = {"gradient correctness", gradient_correctness};
  crit[4] = {"determinism and resume", [&] { return determinism(ConfigMap::load(config_path), wd); }};
  crit[5] = {"semi-supervised gain over supervised", [&] { return ablation_part(true); }};
  crit[6] = {"unlabeled mixup variants", [&] { return ablation_part(false); }};
  crit[7] = {"framework comparison", [&] { return framework_comparison(ConfigMap::load(config_path), wd, resume); }};
  crit[8] = {"split correctness", [&] { return split_correctness(cli, wd); }};

  int failed = 0;
  for (auto& [k, entry] : crit) {
    if (!want(k)) continue;
    Outcome o;
    try {
      o = entry.second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << k << " " << entry.first << ": " << o.detail
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
