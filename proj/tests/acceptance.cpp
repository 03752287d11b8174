// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck_cases.hpp"
#include "handaug/augmentor.hpp"
#include "handaug/cli.hpp"
#include "handaug/evaluation.hpp"
#include "handaug/refinement.hpp"
#include "handaug/training.hpp"
#include "test_support.hpp"

using namespace handaug;
namespace ts = testing_support;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------------------

Verdict kinematics() {
  const auto t0 = Clock::now();
  PoseSampler sampler;
  sampler.sigma_rot_x = sampler.sigma_rot_y = sampler.sigma_rot_z = 1.0;
  sampler.sigma_shape = 0.2;
  RandomState rng(1);
  double worst = 0.0;
  std::size_t n = 0;
  for (; n < 2000; ++n) {
    const Skeleton s = sampler.sample(rng);
    if (!validate(s).is_valid) return {false, "sampler produced an invalid pose"};
    worst = std::max(worst, ts::max_joint_error(s, forward_kinematics(decompose(s))));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-6 && secs < 10.0,
          std::to_string(n) + " poses, max joint error " + fmt("%.3g", worst) + " mm, " + fmt("%.2f", secs) + " s"};
}

Verdict augmentation_geometry() {
  RandomState rng(2);
  double dist_err = 0.0, bone_err = 0.0;
  bool palm_fixed = true;
  for (int i = 0; i < 500; ++i) {
    const Skeleton s = ts::random_skeleton(1000 + i);
    const Skeleton r = rotate_viewpoint(s, rng.normal(0.0, 1.0), rng.normal(0.0, 1.0));
    for (std::size_t a = 0; a < kNumJoints; ++a)
      for (std::size_t b = a + 1; b < kNumJoints; ++b) {
        const double d0 = (s[a] - s[b]).norm(), d1 = (r[a] - r[b]).norm();
        dist_err = std::max(dist_err, std::abs(d1 - d0) / d0);
      }
    const double tau = rng.uniform(0.3, 2.5);
    const Skeleton t = scale_shape(s, tau);
    palm_fixed = palm_fixed && t[kWrist] == s[kWrist];
    for (std::size_t f = 0; f < kNumFingers; ++f) palm_fixed = palm_fixed && t[mcp_index(f)] == s[mcp_index(f)];
    for (std::size_t b = kNumFingers; b < kNumBones; ++b)
      bone_err = std::max(bone_err, std::abs(t.bone_length(b) - tau * s.bone_length(b)) / (tau * s.bone_length(b)));
  }
  return {dist_err < 1e-9 && bone_err < 1e-9 && palm_fixed,
          "pairwise distance rel err " + fmt("%.3g", dist_err) + ", finger bone rel err " + fmt("%.3g", bone_err) +
              ", palm " + (palm_fixed ? "bitwise fixed" : "MOVED")};
}

Verdict gradients() {
  const auto t0 = Clock::now();
  double prim = 0.0, losses = 0.0;
  std::string worst_case;
  for (const auto& pc : ts::primitive_cases())
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const double e = ts::primitive_max_error(pc, seed);
      if (e > prim) {
        prim = e;
        worst_case = pc.name;
      }
    }
  std::size_t probes = 0, skipped = 0;
  for (auto term : {ts::LossTerm::g, ts::LossTerm::e, ts::LossTerm::p, ts::LossTerm::u, ts::LossTerm::energy})
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const auto r = ts::loss_gradient_check(term, seed);
      losses = std::max(losses, r.max_rel_error);
      probes += r.probes;
      skipped += r.skipped;
    }
  const double secs = seconds_since(t0);
  return {prim < 1e-4 && losses < 1e-4 && secs < 120.0,
          std::to_string(ts::primitive_cases().size()) + " primitives x 20 seeds max rel err " + fmt("%.2g", prim) +
              " (" + worst_case + "); 5 losses x 20 seeds max rel err " + fmt("%.2g", losses) + " over " +
              std::to_string(probes) + " probes (" + std::to_string(skipped) + " kink crossings skipped); " +
              fmt("%.1f", secs) + " s"};
}

// Linear stand-ins at resolution 8 with constant discriminator logits 0:
// G and E are exact inverses on the first 63 pixels.
struct StubModel {
  ad::Graph<double>& g;
  ad::Graph<double>& graph() { return g; }
  Tensor<double> sel(bool transpose) const {
    Tensor<double> p(transpose ? Shape{63, 64} : Shape{64, 63});
    for (std::size_t i = 0; i < 63; ++i) p[transpose ? i * 64 + i : i * 63 + i] = 1.0;
    return p;
  }
  Var estimate(Var x) { return ad::matmul(g, ad::flatten(g, x), g.constant(sel(false))); }
  Var generate(Var y) {
    return ad::reshape(g, ad::matmul(g, y, g.constant(sel(true))), Shape{g.value(y).dim(0), 1, 8, 8});
  }
  Var depth_logit(Var x) { return g.constant(Tensor<double>(Shape{g.value(x).dim(0), 1})); }
  Var skeleton_logit(Var y) { return g.constant(Tensor<double>(Shape{g.value(y).dim(0), 1})); }
};

Verdict loss_oracles() {
  RandomState rng(4);
  PairedBatch<double> p{Tensor<double>(Shape{3, 1, 8, 8}), ts::random_tensor<double>({3, 63}, rng)};
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t i = 0; i < 63; ++i) p.depth[s * 64 + i] = p.skeleton[s * 63 + i];
  const UnpairedBatch<double> u{ts::random_tensor<double>({5, 63}, rng)};
  ad::Graph<double> g;
  StubModel m{g};
  Objective<double, StubModel> obj(m, p, &u);
  struct Check {
    const char* name;
    double got, want;
  };
  const Check checks[] = {{"L_G", obj.value(obj.loss_g()), -1.386294},
                          {"L_E", obj.value(obj.loss_e()), -1.386294},
                          {"L_P", obj.value(obj.loss_p()), -2.772589},
                          {"L_U", obj.value(obj.loss_u()), -4.158883}};
  Verdict v{true, ""};
  for (const auto& c : checks) {
    const bool ok = std::abs(c.got - c.want) < 1e-5;
    v.pass = v.pass && ok;
    v.detail += std::string(v.detail.empty() ? "" : ", ") + c.name + " " + fmt("%.6f", c.got) +
                (ok ? "" : " (expected " + fmt("%.6f", c.want) + ")");
  }
  if (!v.pass)
    v.detail += "; L_U has four log terms and two residuals, so perfect maps with D = 0.5 give 4 log 0.5";
  return v;
}

struct SmokeRun {
  PairedDataset paired = ts::small_dataset(64, 51, 16);
  UnpairedSkeletonSet unpaired;
  RenderConfig rc = ts::small_render(16);
  TrainConfig config;
  SmokeRun() {
    RandomState rng(52);
    AugmentConfig ac;
    ac.m = 3;
    unpaired = augment_set(skeletons_of(paired), ac, rng);
    config.epochs = 5;
    config.batch_size = 16;
    config.lambda = 0.5;
    config.learning_rate = 1e-3;
    config.use_inplane_aug = true;
    config.seed = 53;
  }
};

Verdict composition() {
  SmokeRun run;
  std::size_t steps = 0, bad = 0;
  double worst = 0.0;
  TrainHooks<float> hooks;
  hooks.on_step = [&](const LossBreakdown& lb) {
    ++steps;
    const double want = lb.l_g + lb.l_e + run.config.lambda * (lb.l_p + lb.l_u);
    const double rel = std::abs(lb.total - want) / std::max(std::abs(want), 1e-12);
    worst = std::max(worst, rel);
    bad += rel > 1e-6;
  };
  train<float>(run.paired, run.unpaired, run.config, run.rc, nullptr, hooks);
  return {steps == 20 && bad == 0,
          std::to_string(steps) + " steps over 5 epochs, max rel deviation " + fmt("%.2g", worst)};
}

Verdict decoupling() {
  SmokeRun run;
  run.config.epochs = 2;
  std::size_t subs = 0, leaks = 0, idle = 0;
  TrainHooks<float> hooks;
  hooks.on_sub_update = [&](SubUpdate which, const ModelBundle<float>& before, const ModelBundle<float>& after) {
    ++subs;
    for (Net n : kAllNets) {
      const bool same = before.params(n) == after.params(n);
      if (n == updated_net(which))
        idle += same;
      else
        leaks += !same;
    }
  };
  train<float>(run.paired, run.unpaired, run.config, run.rc, nullptr, hooks);
  return {subs == 8 * 4 && leaks == 0 && idle == 0,
          std::to_string(subs) + " sub-updates, " + std::to_string(leaks) + " touched another network, " +
              std::to_string(idle) + " left their own network unchanged"};
}

// ---------------------------------------------------------------------------
// Ablation and refinement share one synthetic setup.

struct Ablation {
  PairedDataset train_set, test_set;
  UnpairedSkeletonSet unpaired;
  RenderConfig rc;
  TrainConfig base;
  std::vector<std::uint64_t> seeds;
  // mean held-out error per variant, averaged over seeds: none, unpaired, in-plane, both
  std::array<double, 4> error{};
  std::array<std::vector<double>, 4> per_seed;
  ModelBundle<float> both_model;  // first seed
  double seconds = 0.0;
};

Ablation run_ablation() {
  Ablation a;
  a.rc.resolution = 32;
  PoseSampler narrow;  // training views: small rotations, one hand shape
  PoseSampler wide = narrow;
  wide.sigma_rot_x = wide.sigma_rot_y = wide.sigma_rot_z = 0.8;
  wide.sigma_shape = 0.15;
  // Same streams as `gen-data --seed 1`, `gen-data --seed 2` and `augment --seed 1`.
  RandomState train_rng(stage_seed(1, Stage::data)), test_rng(stage_seed(2, Stage::data));
  a.train_set = make_dataset(512, narrow, a.rc, train_rng);
  a.test_set = make_dataset(256, wide, a.rc, test_rng);
  RandomState aug_rng(stage_seed(1, Stage::augment));
  a.unpaired = augment_set(skeletons_of(a.train_set), AugmentConfig{}, aug_rng);  // M = 10

  a.base.epochs = 30;
  a.base.lambda = 1e-2;
  a.base.learning_rate = 1e-3;
  a.seeds = {1, 2};

  const auto t0 = Clock::now();
  for (std::size_t variant = 0; variant < 4; ++variant) {
    for (std::uint64_t seed : a.seeds) {
      TrainConfig c = a.base;
      c.seed = stage_seed(seed, Stage::train);
      c.use_unpaired = variant == 1 || variant == 3;
      c.use_inplane_aug = variant >= 2;
      auto [bundle, log] = train<float>(a.train_set, c.use_unpaired ? a.unpaired : UnpairedSkeletonSet{}, c, a.rc,
                                        &a.test_set);
      a.per_seed[variant].push_back(log.back().heldout_mm);
      if (variant == 3 && seed == a.seeds.front()) a.both_model = std::move(bundle);
    }
    double s = 0;
    for (double e : a.per_seed[variant]) s += e;
    a.error[variant] = s / static_cast<double>(a.per_seed[variant].size());
  }
  a.seconds = seconds_since(t0);
  return a;
}

Verdict ablation_direction(const Ablation& a) {
  const auto& e = a.error;
  const bool u_helps = e[1] < e[0], ip_helps = e[2] < e[0], both_best = e[3] < e[1] && e[3] < e[2];
  std::string d = "held-out mean error (mm, mean of " + std::to_string(a.seeds.size()) + " seeds): none " +
                  fmt("%.2f", e[0]) + ", M=10 " + fmt("%.2f", e[1]) + ", in-plane " + fmt("%.2f", e[2]) + ", both " +
                  fmt("%.2f", e[3]) + "; " + fmt("%.0f", a.seconds) + " s";
  if (!u_helps) d += "; augmentation did not lower error";
  if (!ip_helps) d += "; in-plane rotation did not lower error";
  if (!both_best) d += "; combination not below both";
  return {u_helps && ip_helps && both_best && a.seconds < 1800.0, d};
}

Verdict refinement_direction(const Ablation& a) {
  const auto& model = a.both_model;
  std::vector<const DepthMap*> maps;
  for (const auto& r : a.test_set.records) maps.push_back(&r.depth);
  const std::vector<Skeleton> raw = hpe_forward_all<float>(maps, model);
  const auto gts = skeletons_of(a.test_set);

  RefineConfig rc;  // gamma 1e-5, lambda_ref 0.01, R = 50
  double before = 0.0, after = 0.0;
  std::size_t failed = 0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    rc.seed = derive_seed(stage_seed(7, Stage::eval), i);
    const RefineResult r = multiview_refine(raw[i], a.test_set.records[i].depth, model, rc);
    failed += r.failed_views;
    before += mean_error(raw[i], gts[i]);
    after += mean_error(r.skeleton, gts[i]);
  }
  before /= static_cast<double>(raw.size());
  after /= static_cast<double>(raw.size());

  // First-order descent: the energy's directional derivative along the step
  // direction, by central differences in double precision.
  const auto dmodel = model.cast<double>();
  std::size_t descending = 0;
  double worst_slope = -INFINITY;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    Tensor<double> y(Shape{1, 63});
    dmodel.frame.normalize_into(raw[i], y.data());
    ad::Graph<double> g;
    BoundModel<double> m(g, dmodel);
    const Var yv = g.variable(y, "y");
    const Var e = refine_energy<double>(m, yv, &a.test_set.records[i].depth, rc.lambda_ref, nullptr);
    Tensor<double> dir = ad::backward(g, e)[yv];
    double norm = 0.0;
    for (double& v : dir.values()) {
      v = -v;
      norm += v * v;
    }
    norm = std::sqrt(norm);
    if (norm == 0.0) {
      ++descending;
      continue;
    }
    const double h = 1e-4 / norm;
    auto energy_at = [&](double t) {
      Tensor<double> yt = y;
      for (std::size_t k = 0; k < 63; ++k) yt[k] += t * dir[k];
      return refine_energy_value(yt, a.test_set.records[i].depth, dmodel, rc.lambda_ref);
    };
    const double slope = (energy_at(h) - energy_at(-h)) / (2 * h);
    worst_slope = std::max(worst_slope, slope);
    descending += slope <= 0.0;
  }
  const bool pass = after <= before && descending == raw.size() && failed == 0;
  return {pass, "mean error unrefined " + fmt("%.6f", before) + " mm, multiview R=50 " + fmt("%.6f", after) +
                    " mm; descent direction on " + std::to_string(descending) + "/" + std::to_string(raw.size()) +
                    " frames (max slope " + fmt("%.3g", worst_slope) + ")"};
}

Verdict metric_oracle() {
  RandomState rng(9);
  std::vector<Skeleton> preds, gts;
  for (std::size_t i = 0; i < 200; ++i) {
    const Skeleton gt = ts::random_skeleton(5000 + i);
    Skeleton p = gt;
    if (i % 4 == 0) {
      // error lands exactly on an integer epsilon
      const double k = static_cast<double>(rng.below(12));
      p[rng.below(kNumJoints)] += Vec3(3 * k, 4 * k, 0);
    } else {
      const double s = rng.uniform(0.5, 20.0);
      for (std::size_t j = 0; j < kNumJoints; ++j) p[j] += Vec3(rng.normal(0, s), rng.normal(0, s), rng.normal(0, s));
    }
    preds.push_back(p);
    gts.push_back(gt);
  }
  const auto eps = default_epsilons();
  std::size_t mismatches = 0, boundary = 0;
  for (Criterion c : {Criterion::worst, Criterion::mean}) {
    const auto curve = proportion_curve(preds, gts, eps, c);
    for (std::size_t k = 0; k < eps.size(); ++k) {
      std::size_t count = 0;
      for (std::size_t i = 0; i < preds.size(); ++i) {
        double err = 0.0;
        for (std::size_t j = 0; j < kNumJoints; ++j) {
          const double d = (preds[i][j] - gts[i][j]).norm();
          err = c == Criterion::worst ? std::max(err, d) : err + d / 21.0;
        }
        count += err < eps[k];
        if (c == Criterion::worst) boundary += err == eps[k];
      }
      mismatches += curve[k].proportion_percent != 100.0 * static_cast<double>(count) / 200.0;
    }
  }
  return {mismatches == 0 && boundary > 0, "200 frames x 81 epsilons x 2 criteria, " + std::to_string(mismatches) +
                                               " mismatches, " + std::to_string(boundary) +
                                               " frames with error exactly on a grid point"};
}

// ---------------------------------------------------------------------------

struct Cli {
  std::string out;
  int code = 0;
};

Cli cli_run(std::vector<std::string> args) {
  args.insert(args.begin(), "handaug");
  std::vector<const char*> argv;
  for (const auto& s : args) argv.push_back(s.c_str());
  std::ostringstream out, err;
  Cli r;
  r.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str() + err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// gen-data, augment, train for 3 epochs, eval; returns every artifact keyed
// by its path relative to `dir`, plus the concatenated console output.
std::map<std::string, std::string> pipeline(const fs::path& dir, bool& ok) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto p = (dir / "p.hpsd").string(), t = (dir / "t.hpsd").string(), u = (dir / "u.hpsu").string();
  std::string console;
  auto step = [&](std::vector<std::string> args) {
    const Cli r = cli_run(std::move(args));
    ok = ok && r.code == 0;
    console += r.out;
  };
  step({"gen-data", "--n", "96", "--res", "16", "--seed", "11", "--out", p});
  step({"gen-data", "--n", "32", "--res", "16", "--seed", "12", "--out", t});
  step({"augment", "--in", p, "--m", "4", "--seed", "11", "--out", u});
  step({"train", "--paired", p, "--unpaired", u, "--out-dir", (dir / "run").string(), "--epochs", "3", "--batch-size",
        "16", "--lr", "1e-3", "--lambda", "0.01", "--inplane-aug", "--seed", "11", "--heldout", t});
  step({"eval", "--checkpoint", (dir / "run" / "epoch_003.hpck").string(), "--test", t, "--out",
        (dir / "curve.csv").string(), "--refine", "multiview", "--r", "5", "--seed", "11"});
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = slurp(e.path());
  files["<console>"] = console;
  return files;
}

Verdict determinism() {
  const fs::path root = fs::temp_directory_path() / "handaug_acceptance";
  bool ok = true;
  const auto a = pipeline(root / "a", ok);
  const auto b = pipeline(root / "b", ok);
  std::size_t differing = 0;
  for (const auto& [name, bytes] : a) {
    auto it = b.find(name);
    differing += it == b.end() || it->second != bytes;
  }
  differing += a.size() != b.size();

  // Resume: 3 epochs then 2 more from the checkpoint, against 5 straight.
  const fs::path d = root / "a";
  const auto p = (d / "p.hpsd").string(), u = (d / "u.hpsu").string(), t = (d / "t.hpsd").string();
  const std::vector<std::string> common = {"--paired", p, "--unpaired", u, "--heldout", t, "--batch-size", "16",
                                           "--lr", "1e-3", "--lambda", "0.01", "--inplane-aug", "--seed", "11",
                                           "--epochs", "5"};
  auto train_args = [&](const std::string& out) {
    std::vector<std::string> args = {"train", "--out-dir", out};
    args.insert(args.end(), common.begin(), common.end());
    return args;
  };
  ok = ok && cli_run(train_args((root / "straight").string())).code == 0;
  auto resumed = train_args((d / "run").string());
  resumed.push_back("--resume");
  resumed.push_back((d / "run" / "epoch_003.hpck").string());
  ok = ok && cli_run(resumed).code == 0;
  const bool resume_equal = slurp(root / "straight" / "epoch_005.hpck") == slurp(d / "run" / "epoch_005.hpck") &&
                            !slurp(d / "run" / "epoch_005.hpck").empty();
  const bool csv_equal = slurp(root / "straight" / "losses.csv") == slurp(d / "run" / "losses.csv");
  fs::remove_all(root);
  return {ok && differing == 0 && resume_equal && csv_equal,
          std::to_string(a.size()) + " artifacts compared across two runs, " + std::to_string(differing) +
              " differ; resumed checkpoint " + (resume_equal ? "bitwise equal" : "DIFFERS") + ", loss log " +
              (csv_equal ? "equal" : "DIFFERS")};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const char* name, const Verdict& v) {
    std::cout << "C" << id << " " << (v.pass ? "PASS" : "FAIL") << " " << name << ": " << v.detail << std::endl;
    failures += !v.pass;
  };
  report(1, "kinematics round trip", kinematics());
  report(2, "augmentation geometry", augmentation_geometry());
  report(3, "gradient correctness", gradients());
  report(4, "loss arithmetic oracles", loss_oracles());
  report(5, "objective composition", composition());
  report(6, "decoupled sub-updates", decoupling());
  const Ablation ablation = run_ablation();
  report(7, "ablation direction", ablation_direction(ablation));
  report(8, "refinement direction", refinement_direction(ablation));
  report(9, "metric oracle", metric_oracle());
  report(10, "determinism and persistence", determinism());
  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << std::endl;
  return failures == 0 ? 0 : 1;
}
