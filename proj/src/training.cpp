#include "geogan/training.hpp"

#include <cmath>

#include "geogan/io.hpp"
#include "json.hpp"

namespace geogan {

using nlohmann::json;

namespace {

std::vector<NodeP> collect(std::initializer_list<ParamStore*> stores) {
  std::vector<NodeP> out;
  for (ParamStore* s : stores)
    for (const auto& p : s->trainable()) out.push_back(p);
  return out;
}

// Per-sample nearest-neighbor warp of the base masks by the proposed affines;
// the reconstruction targets. Discrete labels, no gradient.
std::vector<int> warped_targets(const std::vector<const ImageSample*>& batch,
                                const NodeP& theta) {
  std::vector<int> out;
  for (size_t n = 0; n < batch.size(); ++n) {
    AffineTransform t;
    for (int i = 0; i < 6; ++i) t.m[i] = theta->val[n * 6 + i];
    const auto warped = warp_mask_nearest(batch[n]->mask, batch[n]->height,
                                          batch[n]->width, t);
    for (uint8_t m : warped) out.push_back(m);
  }
  return out;
}

NodeP onehot_from_labels(Graph& g, const std::vector<int>& labels, int N,
                         int n_labels, int h, int w) {
  auto node = g.zeros(Shape(N, n_labels, h, w));
  const size_t hw = static_cast<size_t>(h) * w;
  for (int n = 0; n < N; ++n)
    for (size_t p = 0; p < hw; ++p)
      node->val[(n * n_labels + labels[n * hw + p]) * hw + p] = 1.0;
  return node;
}

}  // namespace

FixedNoise draw_fixed_noise(const GeneratorBundle& b, int batch, uint64_t seed) {
  FixedNoise out;
  Rng rng(mix_seed(seed, tag("fixed_noise")));
  const int L = b.cfg.latent_levels;
  const int zc = b.cfg.latent_channels;
  for (int i = 0; i < L; ++i) {
    const int l = L - i;
    auto [h, w] = b.gen->latent_shape(l);
    std::vector<real> eps(static_cast<size_t>(batch) * zc * h * w);
    for (auto& e : eps) e = rng.normal();
    out.posterior_eps.push_back(std::move(eps));
  }
  return out;
}

std::unique_ptr<GanLossGraph> build_generator_loss(
    GeneratorBundle& b, RelationNet& relation, Discriminator& disc,
    ClassNet& cls, const GanTrainConfig& cfg,
    const std::vector<const ImageSample*>& batch, const FixedNoise& noise,
    real beta) {
  const GeneratorConfig& gc = b.cfg;
  const int N = static_cast<int>(batch.size());
  auto out = std::make_unique<GanLossGraph>();
  Graph& g = out->graph;

  std::vector<ClassCondition> conds;
  std::vector<int> cond_idx;
  for (const auto* s : batch) {
    conds.push_back(ClassCondition::from(s->class_label));
    cond_idx.push_back(conds.back().index());
  }

  NodeP base_img = batch_images(g, batch);
  NodeP base_mask = batch_onehot_masks(g, batch, gc.n_labels);
  NodeP cond = batch_conditions(g, conds);

  NodeP theta = b.stn->propose(g, base_mask, cond);
  NodeP wimg = grid_sample_affine(g, base_img, theta);
  NodeP wmask = grid_sample_affine(g, base_mask, theta);

  const std::vector<int> targets = warped_targets(batch, theta);
  NodeP target_oh = onehot_from_labels(g, targets, N, gc.n_labels, gc.height, gc.width);

  HierarchicalGenerator::ZSource post_zs;
  if (cfg.sampling) {
    post_zs.mode = LatentMode::sample;
    post_zs.eps = &noise.posterior_eps;
  } else {
    post_zs.mode = LatentMode::mean;
  }
  auto post = b.gen->posterior_chain(g, wimg, wmask, target_oh, cond, post_zs);

  HierarchicalGenerator::ZSource prior_zs;
  prior_zs.inject = &post.z;  // teacher forcing keeps both chains aligned
  auto prior = b.gen->prior_chain(g, wimg, wmask, cond, prior_zs);

  NodeP logits = b.gen->decode_logits(g, post.z, cond);
  NodeP recon_ce = ce_softmax(g, logits, targets, CeReduction::SumPixelsMeanBatch);
  out->kls = b.gen->kl_nodes(g, post, prior);
  NodeP kl_total = out->kls[0];
  for (size_t i = 1; i < out->kls.size(); ++i) kl_total = add(g, kl_total, out->kls[i]);
  out->neg_elbo = add(g, recon_ce, mul_scalar(g, kl_total, beta));

  NodeP soft = softmax_c(g, logits);
  out->soft_mask = soft;
  NodeP fake_pair = concat_c(g, {base_mask, soft});
  out->adv = adv_loss_g(g, disc, fake_pair);
  out->total = out->adv;

  if (cfg.weights.lambda1 != 0.0) {
    out->cls = class_loss(g, cls, wimg, cond_idx);
    out->total = add(g, out->total, mul_scalar(g, out->cls, cfg.weights.lambda1));
  } else {
    out->cls = g.zeros(Shape(1, 1));
  }
  if (cfg.weights.lambda2 != 0.0) {
    auto sl = shape_loss(g, relation, soft);
    out->shape = sl.loss;
    out->shape_all_skipped = sl.all_skipped;
    out->total = add(g, out->total, mul_scalar(g, out->shape, cfg.weights.lambda2));
  } else {
    out->shape = g.zeros(Shape(1, 1));
  }
  return out;
}

GanTrainer::GanTrainer(GeneratorBundle& bundle, RelationNet& relation,
                       const GanTrainConfig& cfg, uint64_t seed)
    : bundle_(bundle),
      relation_(relation),
      cfg_(cfg),
      disc_(bundle.cfg.n_labels, bundle.cfg.height, bundle.cfg.width,
            cfg.disc_base_channels, mix_seed(seed, tag("disc"))),
      cls_(bundle.cfg.height, bundle.cfg.width, cfg.disc_base_channels,
           mix_seed(seed, tag("cls"))),
      opt_g_(collect({&bundle.stn->params(), &bundle.gen->prior_params(),
                      &bundle.gen->posterior_params(),
                      &bundle.gen->decoder_params()}),
             cfg.lr),
      opt_d_(collect({&disc_.params(), &cls_.params()}), cfg.lr),
      shuffle_rng_(mix_seed(seed, tag("gan_shuffle"))),
      sample_rng_(mix_seed(seed, tag("gan_sample"))),
      jitter_rng_(mix_seed(seed, tag("gan_jitter"))) {
  validate_weights(cfg.weights);
  if (cfg_.weights.lambda2 != 0.0)
    GEOGAN_CHECK(relation_.ready(),
                 "gan trainer: relation net must be pretrained when lambda2 != 0");
}

real GanTrainer::beta_at(int step) const {
  const int warm = std::max(1, static_cast<int>(cfg_.steps * cfg_.beta_warmup_frac));
  const real f = std::min(1.0, static_cast<real>(step + 1) / warm);
  return cfg_.beta * f;
}

LossBundle GanTrainer::step(const std::vector<const ImageSample*>& batch) {
  const GeneratorConfig& gc = bundle_.cfg;
  const int N = static_cast<int>(batch.size());

  // --- generator update ---
  bundle_.stn->params().set_requires_grad(true);
  bundle_.gen->prior_params().set_requires_grad(true);
  bundle_.gen->posterior_params().set_requires_grad(true);
  bundle_.gen->decoder_params().set_requires_grad(true);
  disc_.params().set_requires_grad(false);
  cls_.params().set_requires_grad(false);
  relation_.params().set_requires_grad(false);

  FixedNoise noise;
  if (cfg_.sampling) {
    const int L = gc.latent_levels;
    for (int i = 0; i < L; ++i) {
      auto [h, w] = bundle_.gen->latent_shape(L - i);
      std::vector<real> eps(static_cast<size_t>(N) * gc.latent_channels * h * w);
      for (auto& e : eps) e = sample_rng_.normal();
      noise.posterior_eps.push_back(std::move(eps));
    }
  }
  const real beta = beta_at(step_index_);
  auto gl = build_generator_loss(bundle_, relation_, disc_, cls_, cfg_, batch,
                                 noise, beta);
  NodeP g_obj = add(gl->graph, gl->total,
                    mul_scalar(gl->graph, gl->neg_elbo, cfg_.elbo_weight));
  opt_g_.zero_grad();
  gl->graph.backward(g_obj);
  opt_g_.step();

  std::vector<real> kl_values;
  for (const auto& k : gl->kls) kl_values.push_back(k->val[0]);
  LossBundle losses = total_generator_loss(
      gl->adv->val[0], gl->cls->val[0], gl->shape->val[0], -gl->neg_elbo->val[0],
      kl_values, cfg_.weights, gl->shape_all_skipped);

  // --- discriminator update ---
  // Real pairs are mildly jittered real masks; fake pairs reuse this step's
  // generated masks as constants, so no gradient reaches the generator.
  bundle_.stn->params().set_requires_grad(false);
  bundle_.gen->prior_params().set_requires_grad(false);
  bundle_.gen->posterior_params().set_requires_grad(false);
  bundle_.gen->decoder_params().set_requires_grad(false);
  disc_.params().set_requires_grad(true);
  cls_.params().set_requires_grad(true);

  Graph gd;
  const size_t mhw = static_cast<size_t>(gc.n_labels) * gc.height * gc.width;
  auto real_pair = gd.zeros(Shape(N, 2 * gc.n_labels, gc.height, gc.width));
  auto fake_pair = gd.zeros(Shape(N, 2 * gc.n_labels, gc.height, gc.width));
  for (int n = 0; n < N; ++n) {
    const auto base_oh = one_hot(batch[n]->mask, gc.n_labels);
    const AffineTransform jit = sample_da_transform(cfg_.real_pair_jitter, jitter_rng_);
    const auto jit_mask = warp_mask_nearest(batch[n]->mask, gc.height, gc.width, jit);
    const auto jit_oh = one_hot(jit_mask, gc.n_labels);
    real* rp = real_pair->val.data() + n * real_pair->shape.chw();
    std::copy(base_oh.begin(), base_oh.end(), rp);
    std::copy(jit_oh.begin(), jit_oh.end(), rp + mhw);
    real* fp = fake_pair->val.data() + n * fake_pair->shape.chw();
    std::copy(base_oh.begin(), base_oh.end(), fp);
    std::copy(gl->soft_mask->val.begin() + n * mhw,
              gl->soft_mask->val.begin() + (n + 1) * mhw, fp + mhw);
  }
  NodeP d_obj = adv_loss_d(gd, disc_, real_pair, fake_pair);
  if (cfg_.weights.lambda1 != 0.0) {
    NodeP imgs = batch_images(gd, batch);
    std::vector<int> true_cls;
    for (const auto* s : batch)
      true_cls.push_back(static_cast<int>(s->class_label));
    NodeP d_cls = class_loss(gd, cls_, imgs, true_cls);
    d_obj = add(gd, d_obj, mul_scalar(gd, d_cls, cfg_.weights.lambda1));
  }
  opt_d_.zero_grad();
  gd.backward(d_obj);
  opt_d_.step();
  last_d_loss_ = d_obj->val[0];

  return losses;
}

LossBundle GanTrainer::train(const std::vector<const ImageSample*>& train_set,
                             const std::string& log_path) {
  GEOGAN_CHECK(!train_set.empty(), "gan trainer: empty training set");
  std::vector<size_t> order(train_set.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle_rng_.shuffle(order);
  size_t cursor = 0;

  LossBundle last;
  std::string log_buffer;
  for (step_index_ = 0; step_index_ < cfg_.steps; ++step_index_) {
    std::vector<const ImageSample*> batch;
    for (int b = 0; b < cfg_.batch; ++b) {
      if (cursor >= order.size()) {
        cursor = 0;
        shuffle_rng_.shuffle(order);
      }
      batch.push_back(train_set[order[cursor++]]);
    }
    last = step(batch);
    if (!log_path.empty() &&
        (step_index_ % cfg_.log_every == 0 || step_index_ + 1 == cfg_.steps)) {
      json rec{{"step", step_index_},
               {"L_g", last.total},
               {"L_adv", last.adv},
               {"L_class", last.cls},
               {"L_shape", last.shape},
               {"elbo", last.elbo},
               {"kl_per_level", last.kl_per_level},
               {"lambda1", cfg_.weights.lambda1},
               {"lambda2", cfg_.weights.lambda2},
               {"L_d", last_d_loss_}};
      log_buffer += rec.dump() + "\n";
    }
  }
  if (!log_path.empty()) append_text_file(log_path, log_buffer);

  bundle_.trained = true;
  bundle_.step += cfg_.steps;
  bundle_.rng_state = sample_rng_.state();
  return last;
}

}  // namespace geogan
