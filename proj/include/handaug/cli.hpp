#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "handaug/augmentor.hpp"
#include "handaug/config.hpp"
#include "handaug/dataset.hpp"
#include "handaug/depth_renderer.hpp"
#include "handaug/evaluation.hpp"
#include "handaug/networks.hpp"
#include "handaug/persistence.hpp"
#include "handaug/random.hpp"
#include "handaug/refinement.hpp"
#include "handaug/training.hpp"

namespace handaug::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumeric = 3;

namespace detail {

// Flag values win over the config file, which wins over built-in defaults.
template <class V>
void override_if_set(const CLI::Option* opt, const V& flag, V& target) {
  if (opt->count() > 0) target = flag;
}

inline RunConfig base_config(const std::string& config_path) {
  return config_path.empty() ? RunConfig{} : load_run_config(config_path);
}

inline std::string epoch_checkpoint_name(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%03zu.hpck", epoch);
  return buf;
}

inline std::string g9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace detail

/// Runs one command line. Output goes to `out`, diagnostics to `err`.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  const RunConfig defaults;
  CLI::App app{"Skeleton-augmented hand pose estimation pipeline"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Synthesize a paired depth/skeleton dataset");
  std::size_t gen_n = 0;
  std::string gen_out, gen_config;
  std::size_t gen_res = defaults.render.resolution;
  std::uint64_t gen_seed = defaults.seed;
  PoseSampler sampler;
  double gen_rot_sigma = sampler.sigma_rot_x, gen_rot_z_sigma = sampler.sigma_rot_z, gen_shape_sigma = sampler.sigma_shape;
  gen->add_option("--n", gen_n, "Number of records")->required();
  gen->add_option("--out", gen_out, "Output dataset file (.hpsd)")->required();
  auto* gen_res_opt = gen->add_option("--res", gen_res, "Depth map resolution (multiple of 4)");
  auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "Master seed");
  gen->add_option("--config", gen_config, "key = value config file");
  gen->add_option("--rot-sigma", gen_rot_sigma, "Std-dev of the global rotation about x and y (rad)");
  gen->add_option("--rot-z-sigma", gen_rot_z_sigma, "Std-dev of the global in-plane rotation (rad)");
  gen->add_option("--shape-sigma", gen_shape_sigma, "Std-dev of the finger-bone scale factor");

  // augment
  auto* aug = app.add_subcommand("augment", "Build the unpaired skeleton set from a paired dataset");
  std::string aug_in, aug_out, aug_config;
  std::size_t aug_m = defaults.augment.m;
  std::uint64_t aug_seed = defaults.seed;
  AugmentConfig aug_defaults;
  double aug_sigma_theta = aug_defaults.sigma_theta, aug_sigma_tau = aug_defaults.sigma_tau;
  aug->add_option("--in", aug_in, "Input paired dataset")->required();
  aug->add_option("--out", aug_out, "Output unpaired set (.hpsu)")->required();
  auto* aug_m_opt = aug->add_option("--m", aug_m, "Augmented copies per source skeleton");
  auto* aug_seed_opt = aug->add_option("--seed", aug_seed, "Master seed");
  aug->add_option("--config", aug_config, "key = value config file");
  auto* aug_st_opt = aug->add_option("--sigma-theta", aug_sigma_theta, "Std-dev of the viewpoint angles (rad)");
  auto* aug_stau_opt = aug->add_option("--sigma-tau", aug_sigma_tau, "Std-dev of the shape factor tau");

  // train
  auto* tr = app.add_subcommand("train", "Train the estimator, generator and both discriminators");
  std::string tr_paired, tr_unpaired, tr_config, tr_out_dir, tr_heldout, tr_resume;
  std::uint64_t tr_seed = defaults.seed;
  TrainConfig tdef;
  std::size_t tr_epochs = tdef.epochs, tr_batch = tdef.batch_size;
  double tr_lambda = tdef.lambda, tr_lr = tdef.learning_rate, tr_dlr = tdef.learning_rate;
  bool tr_inplane = tdef.use_inplane_aug;
  tr->add_option("--paired", tr_paired, "Paired training set")->required();
  tr->add_option("--unpaired", tr_unpaired, "Unpaired skeleton set; omitted means no unpaired terms");
  tr->add_option("--config", tr_config, "key = value config file");
  tr->add_option("--out-dir", tr_out_dir, "Directory for checkpoints and losses.csv")->required();
  tr->add_option("--heldout", tr_heldout, "Paired set for the per-epoch held-out error");
  tr->add_option("--resume", tr_resume, "Checkpoint to continue from");
  auto* tr_seed_opt = tr->add_option("--seed", tr_seed, "Master seed");
  auto* tr_epochs_opt = tr->add_option("--epochs", tr_epochs, "Total number of epochs");
  auto* tr_batch_opt = tr->add_option("--batch-size", tr_batch, "Mini-batch size");
  auto* tr_lambda_opt = tr->add_option("--lambda", tr_lambda, "Consistency weight lambda");
  auto* tr_lr_opt = tr->add_option("--lr", tr_lr, "Adam learning rate");
  auto* tr_dlr_opt = tr->add_option("--disc-lr", tr_dlr, "Discriminator learning rate (default: --lr)");
  auto* tr_inplane_opt = tr->add_flag("--inplane-aug", tr_inplane, "Random in-plane rotation of paired samples");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a paired test set");
  std::string ev_ck, ev_test, ev_out, ev_config, ev_refine = "none";
  RefineConfig rdef;
  double ev_gamma = rdef.gamma, ev_lambda_ref = rdef.lambda_ref, ev_view_sigma = rdef.view_sigma;
  std::size_t ev_r = rdef.views;
  std::uint64_t ev_seed = defaults.seed;
  ev->add_option("--checkpoint", ev_ck, "Checkpoint file")->required();
  ev->add_option("--test", ev_test, "Paired test set")->required();
  ev->add_option("--out", ev_out, "Curve CSV (epsilon_mm,worst_pct,mean_pct)")->required();
  ev->add_option("--config", ev_config, "key = value config file");
  ev->add_option("--refine", ev_refine, "none | single | multiview")
      ->check(CLI::IsMember({"none", "single", "multiview"}));
  auto* ev_gamma_opt = ev->add_option("--gamma", ev_gamma, "Refinement step size");
  auto* ev_lref_opt = ev->add_option("--lambda-ref", ev_lambda_ref, "Refinement reconstruction weight");
  auto* ev_r_opt = ev->add_option("--r", ev_r, "Number of views for multiview refinement");
  auto* ev_vs_opt = ev->add_option("--view-sigma", ev_view_sigma, "Std-dev of the view rotation angles (rad)");
  auto* ev_seed_opt = ev->add_option("--seed", ev_seed, "Master seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (gen->parsed()) {
      RunConfig cfg = detail::base_config(gen_config);
      detail::override_if_set(gen_res_opt, gen_res, cfg.render.resolution);
      detail::override_if_set(gen_seed_opt, gen_seed, cfg.seed);
      sampler.sigma_rot_x = sampler.sigma_rot_y = gen_rot_sigma;
      sampler.sigma_rot_z = gen_rot_z_sigma;
      sampler.sigma_shape = gen_shape_sigma;
      sampler.center = Vec3(cfg.render.center_x, cfg.render.center_y, 0.5 * (cfg.render.near_mm + cfg.render.far_mm));
      if (cfg.render.resolution % 4 != 0) throw InvalidArgument("--res must be a multiple of 4");
      RandomState rng(stage_seed(cfg.seed, Stage::data));
      const PairedDataset d = make_dataset(gen_n, sampler, cfg.render, rng);
      std::size_t valid = 0;
      for (const auto& r : d.records) valid += validate(r.skeleton).is_valid ? 1 : 0;
      save_dataset(d, gen_out);
      out << "records=" << d.size() << " valid=" << valid << " resolution=" << d.resolution << "\n";
      return kExitOk;
    }

    if (aug->parsed()) {
      RunConfig cfg = detail::base_config(aug_config);
      detail::override_if_set(aug_m_opt, aug_m, cfg.augment.m);
      detail::override_if_set(aug_seed_opt, aug_seed, cfg.seed);
      detail::override_if_set(aug_st_opt, aug_sigma_theta, cfg.augment.sigma_theta);
      detail::override_if_set(aug_stau_opt, aug_sigma_tau, cfg.augment.sigma_tau);
      const PairedDataset d = load_dataset(aug_in);
      const auto sources = skeletons_of(d);
      RandomState rng(stage_seed(cfg.seed, Stage::augment));
      const UnpairedSkeletonSet u = augment_set(sources, cfg.augment, rng);
      save_unpaired(u, aug_out);
      out << "skeletons=" << u.size() << "\n";
      return kExitOk;
    }

    if (tr->parsed()) {
      RunConfig cfg = detail::base_config(tr_config);
      detail::override_if_set(tr_seed_opt, tr_seed, cfg.seed);
      detail::override_if_set(tr_epochs_opt, tr_epochs, cfg.train.epochs);
      detail::override_if_set(tr_batch_opt, tr_batch, cfg.train.batch_size);
      detail::override_if_set(tr_lambda_opt, tr_lambda, cfg.train.lambda);
      detail::override_if_set(tr_lr_opt, tr_lr, cfg.train.learning_rate);
      if (tr_dlr_opt->count() > 0) cfg.train.discriminator_learning_rate = tr_dlr;
      if (tr_inplane_opt->count() > 0) cfg.train.use_inplane_aug = tr_inplane;
      TrainConfig tc = cfg.train;
      tc.seed = stage_seed(cfg.seed, Stage::train);
      tc.use_unpaired = tc.use_unpaired && !tr_unpaired.empty();

      const PairedDataset paired = load_dataset(tr_paired);
      const UnpairedSkeletonSet unpaired = tr_unpaired.empty() ? UnpairedSkeletonSet{} : load_unpaired(tr_unpaired);
      std::optional<PairedDataset> heldout;
      if (!tr_heldout.empty()) heldout = load_dataset(tr_heldout);
      if (paired.resolution != cfg.render.resolution) cfg.render.resolution = paired.resolution;

      std::filesystem::create_directories(tr_out_dir);
      const std::filesystem::path dir(tr_out_dir);
      TrainState<float> state = tr_resume.empty()
                                    ? initial_state<float>(paired.resolution, SkeletonFrame::for_render(cfg.render), tc)
                                    : load_checkpoint(tr_resume, tc);
      const std::string csv_path = (dir / "losses.csv").string();
      std::ofstream csv(csv_path, tr_resume.empty() ? std::ios::trunc : std::ios::app);
      if (!csv) throw IoError("cannot open '" + csv_path + "' for writing");
      if (tr_resume.empty()) csv << "epoch,l_g,l_e,l_p,l_u,total,heldout_mm\n";

      TrainHooks<float> hooks;
      hooks.on_epoch = [&](const EpochLog& e, const TrainState<float>& s) {
        save_checkpoint(s, (dir / detail::epoch_checkpoint_name(e.epoch)).string());
        const auto& l = e.losses;
        csv << e.epoch << ',' << detail::g9(l.l_g) << ',' << detail::g9(l.l_e) << ',' << detail::g9(l.l_p) << ','
            << detail::g9(l.l_u) << ',' << detail::g9(l.total) << ',' << detail::g9(e.heldout_mm) << '\n';
        csv.flush();
        out << "epoch " << e.epoch << " total=" << detail::g9(l.total) << " heldout_mm=" << detail::g9(e.heldout_mm)
            << "\n";
      };
      train_from(state, paired, unpaired, tc, cfg.render, heldout ? &*heldout : nullptr, hooks);
      return kExitOk;
    }

    if (ev->parsed()) {
      RunConfig cfg = detail::base_config(ev_config);
      detail::override_if_set(ev_seed_opt, ev_seed, cfg.seed);
      detail::override_if_set(ev_gamma_opt, ev_gamma, cfg.refine.gamma);
      detail::override_if_set(ev_lref_opt, ev_lambda_ref, cfg.refine.lambda_ref);
      detail::override_if_set(ev_r_opt, ev_r, cfg.refine.views);
      detail::override_if_set(ev_vs_opt, ev_view_sigma, cfg.refine.view_sigma);
      const Checkpoint ck = load_checkpoint(ev_ck);
      const PairedDataset test = load_dataset(ev_test);
      if (test.resolution != ck.bundle.resolution)
        throw ContractError("test set resolution " + std::to_string(test.resolution) +
                            " does not match checkpoint resolution " + std::to_string(ck.bundle.resolution));
      if (test.size() == 0) throw ContractError("test set is empty");

      std::vector<const DepthMap*> maps;
      for (const auto& r : test.records) maps.push_back(&r.depth);
      std::vector<Skeleton> preds = hpe_forward_all<float>(maps, ck.bundle);
      std::size_t failed = 0;
      if (ev_refine != "none") {
        const std::uint64_t eval_seed = stage_seed(cfg.seed, Stage::eval);
        for (std::size_t i = 0; i < preds.size(); ++i) {
          RefineConfig rc = cfg.refine;
          rc.seed = derive_seed(eval_seed, i);
          const RefineResult r = ev_refine == "single" ? refine(preds[i], test.records[i].depth, ck.bundle, rc)
                                                       : multiview_refine(preds[i], test.records[i].depth, ck.bundle, rc);
          preds[i] = r.skeleton;
          failed += r.failed_views;
        }
      }
      const auto gts = skeletons_of(test);
      const auto eps = default_epsilons();
      const auto worst = proportion_curve(preds, gts, eps, Criterion::worst);
      const auto mean = proportion_curve(preds, gts, eps, Criterion::mean);
      std::ofstream csv(ev_out, std::ios::trunc);
      if (!csv) throw IoError("cannot open '" + ev_out + "' for writing");
      write_dual_curve_csv(csv, worst, mean);
      if (!csv) throw IoError("failed writing '" + ev_out + "'");
      double sum = 0.0;
      for (std::size_t i = 0; i < preds.size(); ++i) sum += mean_error(preds[i], gts[i]);
      out << "frames=" << preds.size() << " mean_error_mm=" << format_fixed6(sum / static_cast<double>(preds.size()))
          << " failed_views=" << failed << "\n";
      return kExitOk;
    }
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace handaug::cli
