#include "doctest.h"
#include "geogan/adversary.hpp"
#include "geogan/training.hpp"
#include "oracles.hpp"

using namespace geogan;

namespace {
constexpr int kH = 16, kW = 16, kN = 5;

NodeP uniform_pair(Graph& g, int n) {
  return g.zeros(Shape(n, 2 * kN, kH, kW));
}
}  // namespace

TEST_CASE("blind discriminator yields 2*log(2) and a perfect one near zero") {
  Discriminator d(kN, kH, kW, 4, 1);
  // Zero the head so D outputs logit 0 (probability one half) everywhere.
  auto* w = d.params().find("fc.w");
  auto* b = d.params().find("fc.b");
  std::fill(w->p->val.begin(), w->p->val.end(), 0.0);
  std::fill(b->p->val.begin(), b->p->val.end(), 0.0);
  Graph g(false);
  NodeP loss = adv_loss_d(g, d, uniform_pair(g, 3), uniform_pair(g, 3));
  CHECK(loss->val[0] == doctest::Approx(2 * std::log(2.0)).epsilon(1e-12));

  // Saturated logits approximate the clamped-perfect case.
  std::fill(b->p->val.begin(), b->p->val.end(), 40.0);
  Graph g2(false);
  NodeP real_logit = d.logits(g2, uniform_pair(g2, 2));
  CHECK(real_logit->val[0] > 30.0);
  NodeP lr = bce_logits_const(g2, real_logit, 1.0);
  CHECK(lr->val[0] < 1e-12);
}

TEST_CASE("class loss formula cases") {
  // -log 0.9 for prediction (0.9, 0.1) on class 0; log 2 for the uniform one.
  Graph g(false);
  NodeP logits = g.constant(Shape(1, 2), {std::log(0.9), std::log(0.1)});
  NodeP l = ce_rows(g, logits, {0});
  CHECK(l->val[0] == doctest::Approx(0.105360516).epsilon(1e-7));
  NodeP uniform = g.zeros(Shape(1, 2));
  NodeP l2 = ce_rows(g, uniform, {1});
  CHECK(l2->val[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  NodeP sure = g.constant(Shape(1, 2), {200.0, 0.0});
  NodeP l3 = ce_rows(g, sure, {0});
  CHECK(l3->val[0] == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("total generator loss combines linearly with the configured weights") {
  LossWeights w;  // 0.9, 0.95
  LossBundle b = total_generator_loss(1.0, 1.0, 1.0, -2.0, {0.5, 0.5}, w);
  CHECK(b.total == doctest::Approx(2.85).epsilon(1e-12));
  CHECK(std::abs(b.total - (b.adv + w.lambda1 * b.cls + w.lambda2 * b.shape)) < 1e-6);

  LossWeights zero{0.0, 0.0};
  CHECK(total_generator_loss(1.7, 3.0, 4.0, 0, {}, zero).total ==
        doctest::Approx(1.7));
  CHECK(total_generator_loss(0, 0, 0, 0, {}, w).total == doctest::Approx(0.0));
  CHECK_THROWS_AS(validate_weights(LossWeights{1.5, 0.0}), Error);
}

TEST_CASE("shape loss: pair bookkeeping and the uniform-probability value") {
  RelationNet net(kN, kH, kW, 3);
  net.freeze();
  // Kill the head: logits all zero, every pair probability is exactly 1/n.
  auto* w = net.params().find("fc2.w");
  auto* b = net.params().find("fc2.b");
  std::fill(w->p->val.begin(), w->p->val.end(), 0.0);
  std::fill(b->p->val.begin(), b->p->val.end(), 0.0);

  PhantomConfig pc;
  pc.height = kH;
  pc.width = kW;
  pc.fluid_area_min = 6;
  pc.fluid_area_max = 12;
  pc.min_fluid_region_area = 4;
  pc.wave_amp_min = 0.2;
  pc.wave_amp_max = 0.6;
  pc.harmonic_amp_max = 0.2;
  pc.base_jitter_frac = 0.01;
  const ImageSample s = generate_sample(pc, ClassLabel::diseased, 1);

  Graph g(false);
  NodeP soft = g.constant(Shape(1, kN, kH, kW), one_hot(s.mask, kN));
  const auto out = shape_loss(g, net, soft);
  // All five labels present: n(n-1) = 20 ordered pairs, uniform probability.
  CHECK(out.pairs_used == kN * (kN - 1));
  CHECK_FALSE(out.all_skipped);
  CHECK(out.loss->val[0] == doctest::Approx(std::log(5.0)).epsilon(1e-9));

  // Single-label mask: everything skipped, zero loss plus the warning flag.
  Graph g2(false);
  auto blank = g2.zeros(Shape(1, kN, kH, kW));
  for (int p = 0; p < kH * kW; ++p) blank->val[p] = 1.0;  // all background
  const auto out2 = shape_loss(g2, net, blank);
  CHECK(out2.all_skipped);
  CHECK(out2.loss->val[0] == doctest::Approx(0.0));

  // Pairs involving an absent label are skipped and the normalizer shrinks.
  std::vector<uint8_t> no_fluid = s.mask;
  for (auto& m : no_fluid)
    if (m == kN - 1) m = 1;
  Graph g3(false);
  NodeP soft3 = g3.constant(Shape(1, kN, kH, kW), one_hot(no_fluid, kN));
  const auto out3 = shape_loss(g3, net, soft3);
  CHECK(out3.pairs_used == (kN - 1) * (kN - 2));
  CHECK(out3.loss->val[0] == doctest::Approx(std::log(5.0)).epsilon(1e-9));
}

TEST_CASE("shape_pair_prob is a probability and requires a pretrained net") {
  RelationNet raw(kN, kH, kW, 4);
  std::vector<real> a(kH * kW, 0.0), b(kH * kW, 0.0);
  a[5] = 1.0;
  b[10] = 1.0;
  CHECK_THROWS_AS(shape_pair_prob(raw, a, b, kH, kW, 1), Error);
  raw.freeze();
  Rng rng(2);
  for (auto& e : raw.params().find("fc2.w")->p->val) e = rng.normal();
  const real p = shape_pair_prob(raw, a, b, kH, kW, 1);
  CHECK(p >= 0.0);
  CHECK(p <= 1.0);
}

TEST_CASE("relation pretraining requires at least 100 masks") {
  RelationNet net(kN, kH, kW, 5);
  std::vector<const ImageSample*> few;
  PhantomConfig pc;
  pc.height = kH;
  pc.width = kW;
  pc.fluid_area_min = 6;
  pc.fluid_area_max = 12;
  pc.min_fluid_region_area = 4;
  pc.wave_amp_min = 0.2;
  pc.wave_amp_max = 0.6;
  pc.harmonic_amp_max = 0.2;
  pc.base_jitter_frac = 0.01;
  ImageSample s = generate_sample(pc, ClassLabel::diseased, 0);
  for (int i = 0; i < 50; ++i) few.push_back(&s);
  RelationPretrainConfig rc;
  CHECK_THROWS_AS(pretrain_relation_net(net, few, rc, 1), Error);
}

TEST_CASE("adversarial generator gradient wrt the generated input matches finite differences") {
  Discriminator d(kN, kH, kW, 4, 9);
  Rng rng(10);
  auto fake_derived = make_leaf(Shape(2, kN, kH, kW), true);
  for (auto& v : fake_derived->val) v = rng.uniform();
  auto build = [&](Graph& g) {
    auto base = g.zeros(Shape(2, kN, kH, kW));
    NodeP pair = concat_c(g, {base, fake_derived});
    return adv_loss_g(g, d, pair);
  };
  auto loss_value = [&]() {
    Graph g(false);
    return build(g)->val[0];
  };
  auto compute = [&]() {
    std::fill(fake_derived->grad.begin(), fake_derived->grad.end(), 0.0);
    Graph g;
    g.backward(build(g));
  };
  auto res = oracle::grad_check(loss_value, compute, {fake_derived}, 20, 77, 1e-3);
  CHECK_MESSAGE(res.failed == 0, "worst rel ", res.worst_rel);
}

TEST_CASE("relation net weights are frozen through generator training") {
  GeneratorConfig gc;
  gc.height = 16;
  gc.width = 16;
  gc.resolution_levels = 5;
  gc.latent_levels = 3;
  gc.base_channels = 4;
  GeneratorBundle bundle = GeneratorBundle::create(gc, 5);
  RelationNet relation(gc.n_labels, gc.height, gc.width, 6);
  relation.freeze();
  const auto before = relation.params().snapshot();

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
  std::vector<ImageSample> data;
  for (uint64_t i = 0; i < 6; ++i) {
    data.push_back(generate_sample(pc, ClassLabel::diseased, i));
    data.back().sample_id = "s" + std::to_string(i);
  }
  std::vector<const ImageSample*> ptrs;
  for (const auto& s : data) ptrs.push_back(&s);

  GanTrainConfig cfg;
  cfg.steps = 3;
  cfg.batch = 4;
  GanTrainer trainer(bundle, relation, cfg, 1);
  const LossBundle last = trainer.train(ptrs);
  CHECK(relation.params().snapshot() == before);
  CHECK(bundle.trained);
  // Linear-combination invariant on the logged step.
  CHECK(std::abs(last.total - (last.adv + cfg.weights.lambda1 * last.cls +
                               cfg.weights.lambda2 * last.shape)) < 1e-6);
  CHECK(last.cls >= 0);
  CHECK(last.shape >= 0);
}
