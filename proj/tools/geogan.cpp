#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "geogan/io.hpp"
#include "geogan/pipeline.hpp"
#include "geogan/plot.hpp"

using namespace geogan;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  uint64_t seed = 0;
  bool seed_set = false;
  bool deterministic = false;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool config_required = true) {
  auto* copt = cmd->add_option("--config", o.config_path,
                               "experiment config file (JSON)");
  if (config_required) copt->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", o.out_dir, "output directory");
  cmd->add_option("--seed", o.seed, "run seed (overrides the config's list)")
      ->each([&o](const std::string&) { o.seed_set = true; });
  cmd->add_flag("--deterministic", o.deterministic,
                "record the determinism flag; execution is seed-deterministic "
                "either way");
}

ExperimentConfig load_config(const CommonOpts& o) {
  ExperimentConfig cfg = o.config_path.empty()
                             ? ExperimentConfig{}
                             : ExperimentConfig::from_file(o.config_path);
  if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
  if (o.deterministic) cfg.deterministic = true;
  if (o.seed_set) cfg.seeds = {o.seed};
  return cfg;
}

std::vector<uint64_t> run_seeds(const ExperimentConfig& cfg, const CommonOpts& o) {
  if (o.seed_set) return {o.seed};
  return cfg.seeds;
}

void print_metrics_line(const std::string& armname, uint64_t seed,
                        const MetricsReport& m) {
  std::printf("%s seed=%llu fluid DM %.4f (hd %.3f, %d/%d defined)\n",
              armname.c_str(), static_cast<unsigned long long>(seed),
              m.fluid_dice_mean, m.fluid_hd_mean, m.fluid_hd_defined,
              m.fluid_hd_defined + m.fluid_hd_missing);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"geometry-aware generative augmentation pipeline"};
  app.require_subcommand(1);

  CommonOpts o_phantom, o_gan, o_gen, o_seg, o_eval, o_ablate, o_source, o_grid,
      o_report;

  auto* c_phantom = app.add_subcommand("phantom-gen", "generate the phantom dataset");
  add_common(c_phantom, o_phantom);

  auto* c_gan = app.add_subcommand("train-gan", "train the mask generator");
  add_common(c_gan, o_gan);

  auto* c_gen = app.add_subcommand("generate", "generate the synthetic set");
  add_common(c_gen, o_gen);

  auto* c_seg = app.add_subcommand("train-seg", "train the segmenter for the arm");
  add_common(c_seg, o_seg);

  auto* c_eval = app.add_subcommand("evaluate", "run the full protocol and report metrics");
  add_common(c_eval, o_eval);

  auto* c_ablate = app.add_subcommand("ablate", "run the full arm plus six ablations");
  add_common(c_ablate, o_ablate);

  auto* c_source = app.add_subcommand("source-study",
                                      "diseased/normal/mixed training-source comparison");
  add_common(c_source, o_source);

  double grid_step = 0.25;
  auto* c_grid = app.add_subcommand("grid", "lambda grid search on the tuning split");
  add_common(c_grid, o_grid);
  c_grid->add_option("--step", grid_step, "grid step within [0,1] (reference protocol: 0.05)");

  auto* c_report = app.add_subcommand("report", "summaries and plots from completed runs");
  add_common(c_report, o_report, /*config_required=*/false);
  int n_panels = 6;
  c_report->add_option("--panels", n_panels, "mosaic panel count");

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_phantom->parsed()) {
      ExperimentConfig cfg = load_config(o_phantom);
      cfg.validate();
      std::printf("dataset: %s\n", ensure_dataset(cfg).c_str());
    } else if (c_gan->parsed()) {
      ExperimentConfig cfg = load_config(o_gan);
      for (uint64_t seed : run_seeds(cfg, o_gan)) {
        RunResult r = run_protocol(cfg, seed, Stage::train_gan);
        std::printf("generator: %s\n", r.manifest.paths.at("gan").c_str());
      }
    } else if (c_gen->parsed()) {
      ExperimentConfig cfg = load_config(o_gen);
      for (uint64_t seed : run_seeds(cfg, o_gen)) {
        RunResult r = run_protocol(cfg, seed, Stage::generate);
        std::printf("generated: %s\n", r.manifest.paths.at("generated").c_str());
      }
    } else if (c_seg->parsed()) {
      ExperimentConfig cfg = load_config(o_seg);
      for (uint64_t seed : run_seeds(cfg, o_seg)) {
        RunResult r = run_protocol(cfg, seed, Stage::train_seg);
        std::printf("segmenter: %s\n", r.manifest.paths.at("seg").c_str());
      }
    } else if (c_eval->parsed()) {
      ExperimentConfig cfg = load_config(o_eval);
      for (uint64_t seed : run_seeds(cfg, o_eval)) {
        RunResult r = run_protocol(cfg, seed);
        print_metrics_line(arm_name(cfg.arm), seed, r.metrics);
      }
    } else if (c_ablate->parsed()) {
      ExperimentConfig cfg = load_config(o_ablate);
      ComparisonTable t = run_ablation_suite(cfg, run_seeds(cfg, o_ablate));
      std::printf("%s", t.to_markdown().c_str());
    } else if (c_source->parsed()) {
      ExperimentConfig cfg = load_config(o_source);
      ComparisonTable t = run_source_study(cfg, run_seeds(cfg, o_source));
      std::printf("%s", t.to_markdown().c_str());
    } else if (c_grid->parsed()) {
      ExperimentConfig cfg = load_config(o_grid);
      const uint64_t seed = run_seeds(cfg, o_grid).front();
      GridSpec spec;
      spec.step = grid_step;
      GridResult r = grid_search_lambdas(spec, [&](real l1, real l2) {
        return tuning_split_score(cfg, l1, l2, seed);
      });
      write_text_file(cfg.out_dir + "/grid.json", r.to_json_text());
      draw_heatmap(cfg.out_dir + "/grid_surface.png",
                   "TUNING FLUID DICE OVER (L1, L2)", r.surface, r.n1, r.n2);
      std::printf("best lambda1=%.2f lambda2=%.2f score=%.4f (%dx%d cells)\n",
                  r.best_l1, r.best_l2, r.best_score, r.n1, r.n2);
    } else if (c_report->parsed()) {
      std::string out = o_report.out_dir;
      if (out.empty() && !o_report.config_path.empty())
        out = load_config(o_report).out_dir;
      GEOGAN_CHECK(!out.empty(), "report: pass --out or --config");
      emit_report(out, n_panels);
      std::printf("report: %s/report\n", out.c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
