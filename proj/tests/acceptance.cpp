// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Heavy artifacts (the ablation runs) are shared across criteria.

#include <chrono>
#include <cstdio>
#include <filesystem>

#include "geogan/pipeline.hpp"
#include "geogan/training.hpp"
#include "geogan/io.hpp"
#include "json.hpp"
#include "oracles.hpp"

using namespace geogan;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

struct Criterion {
  const char* label;
  std::chrono::steady_clock::time_point t0;

  explicit Criterion(const char* l) : label(l), t0(std::chrono::steady_clock::now()) {}

  void result(bool pass, const std::string& detail) {
    const real dt =
        std::chrono::duration<real>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] %s (%s; %.1fs)\n", pass ? "PASS" : "FAIL", label,
                detail.c_str(), dt);
    std::fflush(stdout);
    if (!pass) ++g_failures;
  }
};

// Desk-scale configuration all comparative criteria run at.
ExperimentConfig desk_config(const std::string& out) {
  ExperimentConfig c;
  c.n_per_class = 125;  // 150 train / 50 val / 50 test
  c.phantom_seed = 20240601;
  c.gan.steps = 160;
  c.seg.steps = 260;
  c.seg.eval_every = 65;
  c.relation.steps = 400;
  c.synthetic_per_base = 5;
  c.seeds = {11, 22, 33};
  c.out_dir = out;
  c.deterministic = true;
  return c;
}

std::vector<const ImageSample*> ptrs(const std::vector<ImageSample>& v) {
  std::vector<const ImageSample*> out;
  for (const auto& s : v) out.push_back(&s);
  return out;
}

// --- criterion 1 -------------------------------------------------------------

void criterion_metric_oracles() {
  Criterion c("1. metric oracles: Dice exact, HD within 1e-9 on 1000 random 8x8 pairs");
  Rng rng(1001);
  int dice_bad = 0, hd_bad = 0, hd_checked = 0;
  real worst_hd = 0;
  for (int k = 0; k < 1000; ++k) {
    std::vector<uint8_t> a(64), b(64);
    for (auto& v : a) v = rng.uniform() < 0.35 ? 1 : 0;
    for (auto& v : b) v = rng.uniform() < 0.35 ? 1 : 0;
    if (dice(a, b, 1) != oracle::dice_brute(a, b, 1)) ++dice_bad;
    const auto got = hausdorff(a, b, 8, 8, 1);
    const auto want = oracle::hausdorff_brute(a, b, 8, 8, 1);
    if (got.has_value() != want.has_value()) {
      ++hd_bad;
      continue;
    }
    if (got) {
      ++hd_checked;
      const real err = std::abs(*got - *want);
      worst_hd = std::max(worst_hd, err);
      if (err > 1e-9) ++hd_bad;
    }
  }
  char buf[128];
  std::snprintf(buf, sizeof(buf), "dice mismatches %d, hd mismatches %d of %d, worst |err| %.2e",
                dice_bad, hd_bad, hd_checked, worst_hd);
  c.result(dice_bad == 0 && hd_bad == 0, buf);
}

// --- criterion 2 -------------------------------------------------------------

void criterion_kl() {
  Criterion c("2. KL closed form vs numerical integration (100 pairs, 1e-5); zero at equality");
  Rng rng(2002);
  real worst = 0;
  bool zero_ok = true;
  for (int k = 0; k < 100; ++k) {
    const real mq = 3 * rng.normal(), mp = 3 * rng.normal();
    const real sq = 0.2 + 2 * rng.uniform(), sp = 0.2 + 2 * rng.uniform();
    LatentHierarchy h;
    LatentLevel lvl;
    lvl.level = 1;
    lvl.prior_mu = {1, 1, 1, {mp}};
    lvl.prior_sigma = {1, 1, 1, {sp}};
    lvl.post_mu = {1, 1, 1, {mq}};
    lvl.post_sigma = {1, 1, 1, {sq}};
    h.levels.push_back(lvl);
    worst = std::max(worst, std::abs(kl_terms(h)[0] -
                                     oracle::kl_normal_numeric(mq, sq, mp, sp)));
    lvl.post_mu = lvl.prior_mu;
    lvl.post_sigma = lvl.prior_sigma;
    h.levels[0] = lvl;
    if (kl_terms(h)[0] != 0.0) zero_ok = false;
  }
  char buf[96];
  std::snprintf(buf, sizeof(buf), "worst |closed - numeric| %.2e, exact zero at equality: %s",
                worst, zero_ok ? "yes" : "no");
  c.result(worst < 1e-5 && zero_ok, buf);
}

// --- criterion 3 -------------------------------------------------------------

struct GradInstance {
  GeneratorBundle bundle;
  RelationNet relation;
  Discriminator disc;
  ClassNet cls;
  GanTrainConfig cfg;
  std::vector<ImageSample> data;
  std::vector<const ImageSample*> batch;
  FixedNoise noise;

  GradInstance()
      : bundle(GeneratorBundle::create(
            [] {
              GeneratorConfig g;
              g.height = 16;
              g.width = 16;
              g.resolution_levels = 5;
              g.latent_levels = 4;
              g.base_channels = 4;
              return g;
            }(),
            31001)),
        relation(5, 16, 16, 31002),
        disc(5, 16, 16, 4, 31003),
        cls(16, 16, 4, 31004) {
    relation.freeze();
    cfg.weights = LossWeights{0.9, 0.95};
    cfg.sampling = true;
    PhantomConfig pc;
    pc.height = 16;
    pc.width = 16;
    pc.fluid_area_min = 6;
    pc.fluid_area_max = 12;
    pc.min_fluid_region_area = 4;
    pc.wave_amp_min = 0.2;
    pc.wave_amp_max = 0.6;
    pc.harmonic_amp_max = 0.2;
    pc.base_jitter_frac = 0.01;
    for (uint64_t i = 0; i < 2; ++i) {
      data.push_back(generate_sample(pc, ClassLabel::diseased, i));
      data.back().sample_id = "gc" + std::to_string(i);
    }
    for (const auto& s : data) batch.push_back(&s);
    noise = draw_fixed_noise(bundle, 2, 777);
    // A generic transform keeps bilinear sampling away from exact lattice
    // points, where its derivative is one-sided.
    auto* b = bundle.stn->params().find("fc2.b");
    Rng rng(31005);
    for (auto& v : b->p->val) v = 0.4 * rng.normal();
    // Gradients flow only through the generator side.
    disc.params().set_requires_grad(false);
    cls.params().set_requires_grad(false);
    relation.params().set_requires_grad(false);
  }

  real value(bool elbo_side) {
    auto gl = build_generator_loss(bundle, relation, disc, cls, cfg, batch,
                                   noise, /*beta=*/1.0);
    return elbo_side ? gl->neg_elbo->val[0] : gl->total->val[0];
  }

  void grads(bool elbo_side, const std::vector<NodeP>& params) {
    for (const auto& p : params) std::fill(p->grad.begin(), p->grad.end(), 0.0);
    auto gl = build_generator_loss(bundle, relation, disc, cls, cfg, batch,
                                   noise, 1.0);
    gl->graph.backward(elbo_side ? gl->neg_elbo : gl->total);
  }
};

void criterion_gradients() {
  Criterion c("3. gradient checks: ELBO and L_g vs central differences (rel err < 1e-3)");
  GradInstance inst;

  auto collect = [](std::initializer_list<ParamStore*> stores) {
    std::vector<NodeP> out;
    for (auto* s : stores)
      for (const auto& p : s->trainable()) out.push_back(p);
    return out;
  };
  // (a) the ELBO objective, over its own parameters.
  auto elbo_params = collect({&inst.bundle.gen->prior_params(),
                              &inst.bundle.gen->posterior_params(),
                              &inst.bundle.gen->decoder_params()});
  auto res_a = oracle::grad_check([&] { return inst.value(true); },
                                  [&] { inst.grads(true, elbo_params); },
                                  elbo_params, 24, 3101, 1e-3);
  // (b) L_g, over all generator-side parameters including the transformer.
  auto g_params = collect({&inst.bundle.stn->params(),
                           &inst.bundle.gen->prior_params(),
                           &inst.bundle.gen->posterior_params(),
                           &inst.bundle.gen->decoder_params()});
  auto res_b = oracle::grad_check([&] { return inst.value(false); },
                                  [&] { inst.grads(false, g_params); },
                                  g_params, 24, 3102, 1e-3);
  char buf[128];
  std::snprintf(buf, sizeof(buf),
                "elbo: %d/%d failed (worst %.2e); L_g: %d/%d failed (worst %.2e)",
                res_a.failed, res_a.checked, res_a.worst_rel, res_b.failed,
                res_b.checked, res_b.worst_rel);
  c.result(res_a.failed == 0 && res_b.failed == 0, buf);
}

// --- criterion 4 -------------------------------------------------------------

void criterion_latent_shapes() {
  Criterion c("4. latent shape rule: 64x64 with L=4 gives 64/32/16/8 grids");
  GeneratorConfig cfg;  // 64x64, L=4
  HierarchicalGenerator gen(cfg, 41);
  PhantomConfig pc;
  const ImageSample s = generate_sample(pc, ClassLabel::diseased, 4);
  const LatentHierarchy h =
      gen.prior_forward(s, ClassCondition::from(ClassLabel::diseased));
  bool ok = h.levels.size() == 4;
  const int want[4] = {8, 16, 32, 64};
  std::string detail;
  for (size_t i = 0; i < h.levels.size() && ok; ++i) {
    const auto& lvl = h.levels[i];
    ok = lvl.prior_mu.h == want[i] && lvl.prior_mu.w == want[i] &&
         lvl.z.h == want[i];
    detail += std::to_string(lvl.prior_mu.h) + "x" + std::to_string(lvl.prior_mu.w) +
              (i + 1 < h.levels.size() ? ", " : "");
  }
  c.result(ok, "coarsest to finest: " + detail);
}

// --- criteria 5-10 share the desk-scale runs ----------------------------------

ComparisonTable g_ablation_table;
ExperimentConfig g_desk;

void criterion_relation_learnability() {
  Criterion c("6. relation net reaches >= 0.95 held-out pair accuracy on phantom masks");
  const std::string dataset_dir = ensure_dataset(g_desk);
  ensure_relation_net(g_desk, dataset_dir);
  std::string report_json;
  RelationNet net = RelationNet::load(dataset_dir + "/relation.ckpt", &report_json);
  const auto j = nlohmann::json::parse(report_json);
  const real acc = j["holdout_accuracy"].get<real>();
  char buf[96];
  std::snprintf(buf, sizeof(buf), "holdout accuracy %.4f over %d pairs", acc,
                j["holdout_pairs"].get<int>());
  c.result(acc >= 0.95, buf);

  // Supplementary pair-probability checks from the module contract: correct
  // real pairs score high, swapped pairs drop for the majority.
  DatasetSplits splits = load_dataset(dataset_dir);
  int correct_hi = 0, swap_lo = 0, total = 0;
  for (size_t i = 0; i < splits.test.size() && total < 200; ++i) {
    const ImageSample& s = splits.test[i];
    std::vector<int> count(g_desk.phantom.n_labels, 0);
    for (uint8_t m : s.mask) ++count[m];
    for (int li = 0; li < g_desk.phantom.n_labels && total < 200; ++li)
      for (int lj = 0; lj < g_desk.phantom.n_labels && total < 200; ++lj) {
        if (li == lj || !count[li] || !count[lj]) continue;
        const size_t hw = s.mask.size();
        std::vector<real> mi(hw, 0), mj(hw, 0);
        for (size_t p = 0; p < hw; ++p) {
          mi[p] = s.mask[p] == li;
          mj[p] = s.mask[p] == lj;
        }
        const real p_ok = shape_pair_prob(net, mi, mj, s.height, s.width, li);
        const real p_swap = shape_pair_prob(net, mj, mi, s.height, s.width, li);
        correct_hi += p_ok >= 0.95;
        swap_lo += p_swap < 0.5;
        ++total;
      }
  }
  std::printf("       relation checks: correct pairs >=0.95 on %d/%d, swapped <0.5 on %d/%d\n",
              correct_hi, total, swap_lo, total);
}

void run_ablation_and_criteria() {
  {
    Criterion c("8. ablation direction: full >= each only* arm (mean fluid Dice, 3 seeds)");
    g_ablation_table = run_ablation_suite(g_desk, g_desk.seeds);
    const ArmSummary* full = g_ablation_table.find("full");
    bool ok = full && full->complete;
    std::string detail;
    if (ok) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "full %.3f (%.3f)", full->dice_mean, full->dice_std);
      detail = buf;
      for (const char* name : {"onlyL_class", "onlyL_shape", "onlySamp"}) {
        const ArmSummary* a = g_ablation_table.find(name);
        if (!a || !a->complete) {
          ok = false;
          detail += std::string("; ") + name + " incomplete";
          continue;
        }
        std::snprintf(buf, sizeof(buf), "; %s %.3f", name, a->dice_mean);
        detail += buf;
        if (full->dice_mean < a->dice_mean) ok = false;
      }
      detail += "; table: " + g_desk.out_dir + "/ablation_table.md";
    } else {
      detail = "full arm incomplete";
    }
    c.result(ok, detail);
  }
}

void criterion_diversity() {
  Criterion c("5. diversity: sampled generations differ, mean mode identical, noSamp == mean");
  // The trained full-arm checkpoint from the first ablation seed.
  ExperimentConfig full_cfg = g_desk;
  full_cfg.arm = Arm::geogan;
  full_cfg.ablation = Ablation::full;
  const std::string full_dir = run_dir_for(full_cfg, g_desk.seeds[0]);
  GeneratorBundle bundle = GeneratorBundle::load(full_dir + "/gan.ckpt");

  const std::string dataset_dir = ensure_dataset(g_desk);
  DatasetSplits splits = load_dataset(dataset_dir);
  const ImageSample* base = nullptr;
  for (const auto& s : splits.val)
    if (s.class_label == ClassLabel::diseased) {
      base = &s;
      break;
    }

  const ClassCondition cond = ClassCondition::from(ClassLabel::diseased);
  std::vector<std::vector<uint8_t>> sampled;
  for (int k = 0; k < 16; ++k)
    sampled.push_back(generate(bundle, *base, cond, 500 + k).hard_mask);
  int identical_pairs = 0;
  real var_sum = 0;
  const size_t hw = sampled[0].size();
  for (size_t p = 0; p < hw; ++p) {
    real mean = 0;
    for (const auto& m : sampled) mean += m[p];
    mean /= sampled.size();
    for (const auto& m : sampled) var_sum += (m[p] - mean) * (m[p] - mean);
  }
  for (int i = 0; i < 16; ++i)
    for (int j = i + 1; j < 16; ++j)
      if (sampled[i] == sampled[j]) ++identical_pairs;

  const auto mean1 = generate(bundle, *base, cond, 1, LatentMode::mean);
  const auto mean2 = generate(bundle, *base, cond, 2, LatentMode::mean);
  const bool mean_identical = mean1.hard_mask == mean2.hard_mask &&
                              mean1.soft_mask == mean2.soft_mask;

  // noSamp arm generation must equal explicit mean-mode generation from the
  // noSamp checkpoint.
  ExperimentConfig ns_cfg = g_desk;
  ns_cfg.arm = Arm::geogan;
  ns_cfg.ablation = Ablation::noSamp;
  const std::string ns_dir = run_dir_for(ns_cfg, g_desk.seeds[0]);
  bool nosamp_ok = true;
  {
    GeneratorBundle ns = GeneratorBundle::load(ns_dir + "/gan.ckpt");
    DatasetSplits sp2 = load_dataset(dataset_dir);
    // First generated sample of the noSamp run.
    const auto lines = read_lines(ns_dir + "/generated/generated.jsonl");
    const auto rec = nlohmann::json::parse(lines.front());
    const std::string sid = rec["sample_id"].get<std::string>();
    const std::string base_id = rec["base_id"].get<std::string>();
    const uint64_t gseed = rec["latent_seed"].get<uint64_t>();
    const ImageSample* b2 = nullptr;
    for (const auto& s : sp2.val)
      if (s.sample_id == base_id) b2 = &s;
    GrayImage8 stored = read_png_gray8(ns_dir + "/generated/" + sid + ".mask.png");
    const auto regen = generate(ns, *b2, ClassCondition::from(b2->class_label),
                                gseed, LatentMode::mean);
    nosamp_ok = std::equal(stored.px.begin(), stored.px.end(),
                           regen.hard_mask.begin());
  }

  // Fluid-preservation contract on the trained model: 100 seeds.
  int with_fluid = 0;
  for (int k = 0; k < 100; ++k) {
    const auto gsmp = generate(bundle, *base, cond, 9000 + k);
    const uint8_t fl = static_cast<uint8_t>(g_desk.phantom.fluid_label());
    if (std::find(gsmp.hard_mask.begin(), gsmp.hard_mask.end(), fl) !=
        gsmp.hard_mask.end())
      ++with_fluid;
  }

  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "pixel variance %.3f, identical sampled pairs %d/120, mean-mode "
                "identical: %s, noSamp==mean: %s, fluid in %d/100",
                var_sum / hw, identical_pairs, mean_identical ? "yes" : "no",
                nosamp_ok ? "yes" : "no", with_fluid);
  c.result(var_sum > 0 && identical_pairs == 0 && mean_identical && nosamp_ok &&
               with_fluid >= 90,
           buf);
}

void criterion_headline() {
  Criterion c("7. desk-scale ordering: geogan >= classical_da + 0.01 and >= no_aug + 0.01");
  const ArmSummary* full = g_ablation_table.find("full");
  std::vector<real> da_dice, na_dice;
  for (uint64_t seed : g_desk.seeds) {
    ExperimentConfig da = g_desk;
    da.arm = Arm::classical_da;
    da.ablation = Ablation::full;
    da_dice.push_back(run_protocol(da, seed).metrics.fluid_dice_mean);
    ExperimentConfig na = g_desk;
    na.arm = Arm::no_aug;
    na.ablation = Ablation::full;
    na_dice.push_back(run_protocol(na, seed).metrics.fluid_dice_mean);
  }
  auto mean = [](const std::vector<real>& v) {
    real m = 0;
    for (real x : v) m += x;
    return m / v.size();
  };
  const real gg = full ? full->dice_mean : 0;
  const real da = mean(da_dice), na = mean(na_dice);
  char buf[128];
  std::snprintf(buf, sizeof(buf), "geogan %.4f vs classical_da %.4f vs no_aug %.4f",
                gg, da, na);
  c.result(full && full->complete && gg >= da + 0.01 && gg >= na + 0.01, buf);
}

void criterion_source_study() {
  Criterion c("9. source study: diseased-only beats normal-only on diseased-test fluid Dice");
  const ComparisonTable t = run_source_study(g_desk, g_desk.seeds);
  const ArmSummary* dis = t.find("diseased");
  const ArmSummary* nor = t.find("normal");
  const ArmSummary* mix = t.find("mixed");
  bool ok = dis && nor && dis->complete && nor->complete &&
            dis->dice_mean > nor->dice_mean;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "diseased %.4f, normal %.4f, mixed %s%.4f",
                dis ? dis->dice_mean : -1, nor ? nor->dice_mean : -1,
                (mix && mix->complete) ? "" : "(incomplete) ",
                mix ? mix->dice_mean : -1);
  c.result(ok, buf);
  if (mix && mix->complete && dis && nor) {
    const bool between = mix->dice_mean <= std::max(dis->dice_mean, nor->dice_mean) &&
                         mix->dice_mean >= std::min(dis->dice_mean, nor->dice_mean);
    std::printf("       mixed arm lies between the two: %s (reported, not enforced)\n",
                between ? "yes" : "no");
  }
}

void criterion_reproducibility() {
  Criterion c("10. reproducibility: two deterministic ablate runs emit identical metric tables");
  // Reduced scale: the contract is about determinism, not statistics. The
  // class count stays high enough for relation pretraining (>= 100 masks).
  ExperimentConfig small = g_desk;
  small.n_per_class = 90;
  small.gan.steps = 6;
  small.seg.steps = 20;
  small.seg.eval_every = 10;
  small.relation.steps = 60;
  small.synthetic_per_base = 2;
  small.seeds = {5};
  small.deterministic = true;

  ExperimentConfig a = small;
  a.out_dir = g_desk.out_dir + "/repro_a";
  ExperimentConfig b = small;
  b.out_dir = g_desk.out_dir + "/repro_b";
  fs::remove_all(a.out_dir);
  fs::remove_all(b.out_dir);
  run_ablation_suite(a, a.seeds);
  run_ablation_suite(b, b.seeds);
  const std::string ta = read_text_file(a.out_dir + "/ablation_table.json");
  const std::string tb = read_text_file(b.out_dir + "/ablation_table.json");
  const std::string ra = read_text_file(a.out_dir + "/ablation_raw.jsonl");
  const std::string rb = read_text_file(b.out_dir + "/ablation_raw.jsonl");
  c.result(ta == tb && ra == rb,
           ta == tb ? "tables byte-identical" : "tables differ");
}

}  // namespace

int main(int argc, char** argv) {
  std::string out = "acceptance_out";
  if (argc > 1) out = argv[1];
  g_desk = desk_config(out);

  std::printf("acceptance suite; artifacts under %s\n", out.c_str());
  criterion_metric_oracles();
  criterion_kl();
  criterion_gradients();
  criterion_latent_shapes();
  criterion_relation_learnability();  // 6 before 5/7/8: builds the dataset
  run_ablation_and_criteria();        // 8 (runs the shared ablation suite)
  criterion_diversity();              // 5 (uses the trained checkpoints)
  criterion_headline();               // 7 (adds the classical_da / no_aug arms)
  criterion_source_study();           // 9
  criterion_reproducibility();        // 10

  std::printf("%d criterion failure(s)\n", g_failures);
  // Leave the summary tables with the artifacts for inspection.
  if (fs::exists(out)) {
    try {
      emit_report(out);
      std::printf("report written to %s/report\n", out.c_str());
    } catch (const std::exception& e) {
      std::printf("report generation skipped: %s\n", e.what());
    }
  }
  return g_failures == 0 ? 0 : 1;
}
