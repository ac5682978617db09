#include "geogan/genmodel.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

namespace geogan {

using nlohmann::json;

void validate_config(const GeneratorConfig& cfg) {
  GEOGAN_CHECK(cfg.latent_levels >= 1, "generator: need at least one latent level");
  GEOGAN_CHECK(cfg.latent_levels <= cfg.resolution_levels,
               "generator: latent_levels must be <= resolution_levels");
  GEOGAN_CHECK(cfg.base_channels >= 2, "generator: base_channels too small");
  GEOGAN_CHECK(cfg.latent_channels >= 1, "generator: latent_channels too small");
  const int div = 1 << (cfg.resolution_levels - 1);
  GEOGAN_CHECK(cfg.height % div == 0 && cfg.width % div == 0,
               "generator: image side must be divisible by 2^(resolution_levels-1)");
  GEOGAN_CHECK(cfg.n_labels >= 2, "generator: need at least two labels");
}

bool LatentHierarchy::has_prior() const {
  for (const auto& l : levels)
    if (l.prior_mu.empty() || l.prior_sigma.empty()) return false;
  return !levels.empty();
}

bool LatentHierarchy::has_posterior() const {
  for (const auto& l : levels)
    if (l.post_mu.empty() || l.post_sigma.empty()) return false;
  return !levels.empty();
}

bool LatentHierarchy::has_z() const {
  for (const auto& l : levels)
    if (l.z.empty()) return false;
  return !levels.empty();
}

LatentHierarchy sample_latents(const LatentHierarchy& h, LatentMode mode,
                               uint64_t seed) {
  const bool post = h.has_posterior();
  GEOGAN_CHECK(post || h.has_prior(),
               "sample_latents: no (mu, sigma) side present");
  LatentHierarchy out = h;
  Rng rng(mix_seed(seed, tag("latents")));
  for (auto& lvl : out.levels) {
    const Grid& mu = post ? lvl.post_mu : lvl.prior_mu;
    const Grid& sigma = post ? lvl.post_sigma : lvl.prior_sigma;
    lvl.z = mu;
    if (mode == LatentMode::sample) {
      for (size_t i = 0; i < lvl.z.v.size(); ++i)
        lvl.z.v[i] = mu.v[i] + sigma.v[i] * rng.normal();
    }
  }
  return out;
}

std::vector<real> kl_terms(const LatentHierarchy& h) {
  GEOGAN_CHECK(h.has_prior() && h.has_posterior(),
               "kl_terms: both prior and posterior sides must be filled");
  std::vector<real> out;
  for (const auto& lvl : h.levels) {
    real acc = 0;
    for (size_t i = 0; i < lvl.prior_mu.v.size(); ++i) {
      const real mp = lvl.prior_mu.v[i], sp = lvl.prior_sigma.v[i];
      const real mq = lvl.post_mu.v[i], sq = lvl.post_sigma.v[i];
      const real d = mq - mp;
      acc += std::log(sp) - std::log(sq) +
             (sq * sq + d * d) / (2 * sp * sp) - 0.5;
    }
    out.push_back(acc);
  }
  return out;
}

real elbo(real reconstruction_ce, const std::vector<real>& kls, real beta) {
  real kl = 0;
  for (real k : kls) kl += k;
  return -(reconstruction_ce + beta * kl);
}

std::vector<uint8_t> argmax_mask(const std::vector<real>& soft, int n_labels,
                                 int h, int w) {
  std::vector<uint8_t> out(static_cast<size_t>(h) * w, 0);
  const size_t hw = out.size();
  for (size_t p = 0; p < hw; ++p) {
    int best = 0;
    real bv = soft[p];
    for (int c = 1; c < n_labels; ++c)
      if (soft[c * hw + p] > bv) {  // strict: ties keep the lowest index
        bv = soft[c * hw + p];
        best = c;
      }
    out[p] = static_cast<uint8_t>(best);
  }
  return out;
}

// --- HierarchicalGenerator ----------------------------------------------------

namespace {
int ch_at(const GeneratorConfig& cfg, int scale) {
  return scale == 0 ? cfg.base_channels : 2 * cfg.base_channels;
}
}  // namespace

HierarchicalGenerator::HierarchicalGenerator(const GeneratorConfig& cfg,
                                             uint64_t init_seed)
    : cfg_(cfg) {
  validate_config(cfg);
  Rng rp(mix_seed(init_seed, tag("prior")));
  Rng rq(mix_seed(init_seed, tag("posterior")));
  Rng rd(mix_seed(init_seed, tag("decoder")));

  const int in_prior = 1 + cfg.n_labels + 2;           // image + mask + condition
  const int in_post = in_prior + cfg.n_labels;         // + target mask
  prior_ = build_tower(prior_ps_, in_prior, rp);
  post_ = build_tower(post_ps_, in_post, rq);

  const int zc = cfg.latent_channels;
  const int L = cfg.latent_levels;
  dec_in_ = Conv(dec_ps_, "in", zc + 2, ch_at(cfg, L - 1), 3, 1, 1, rd);
  dec_up_.resize(L - 1);
  for (int s = L - 2; s >= 0; --s)
    dec_up_[s] = Conv(dec_ps_, "up" + std::to_string(s), ch_at(cfg, s + 1) + zc,
                      ch_at(cfg, s), 3, 1, 1, rd);
  dec_mid_ = Conv(dec_ps_, "mid", ch_at(cfg, 0), ch_at(cfg, 0), 3, 1, 1, rd);
  dec_head_ = Conv(dec_ps_, "head", ch_at(cfg, 0), cfg.n_labels, 1, 1, 0, rd);

  sync_posterior_to_prior();
}

HierarchicalGenerator::Tower HierarchicalGenerator::build_tower(
    ParamStore& ps, int in_channels, Rng& rng) const {
  Tower t;
  const int R = cfg_.resolution_levels;
  const int L = cfg_.latent_levels;
  const int zc = cfg_.latent_channels;
  for (int s = 0; s < R; ++s) {
    const int ci = s == 0 ? in_channels : ch_at(cfg_, s - 1);
    t.enc.emplace_back(ps, "enc" + std::to_string(s), ci, ch_at(cfg_, s), 3,
                       s == 0 ? 1 : 2, 1, rng);
  }
  // Ascent convs target scales R-2 .. 0; the channel arriving from scale s+1
  // includes a z concat when s+1 hosts a latent level.
  t.up.resize(R - 1);
  for (int s = R - 2; s >= 0; --s) {
    const int from = ch_at(cfg_, s + 1) + (s + 1 <= L - 1 ? zc : 0);
    t.up[s] = Conv(ps, "up" + std::to_string(s), from + ch_at(cfg_, s),
                   ch_at(cfg_, s), 3, 1, 1, rng);
  }
  for (int l = L; l >= 1; --l)
    t.heads.emplace_back(ps, "head" + std::to_string(l), ch_at(cfg_, l - 1),
                         2 * zc, 3, 1, 1, rng);
  return t;
}

void HierarchicalGenerator::sync_posterior_to_prior() {
  const int in_prior = 1 + cfg_.n_labels + 2;
  for (const auto& e : prior_ps_.entries()) {
    auto* pe = post_ps_.find(e.name);
    GEOGAN_CHECK(pe != nullptr, "sync: missing posterior tensor " + e.name);
    if (e.name == "enc0.w") {
      // Posterior first conv has extra target-mask input channels: copy the
      // shared slice, zero the rest.
      std::fill(pe->p->val.begin(), pe->p->val.end(), 0.0);
      const int co = e.p->shape.n, k2 = e.p->shape.h * e.p->shape.w;
      const int ci_post = pe->p->shape.c;
      for (int o = 0; o < co; ++o)
        for (int c = 0; c < in_prior; ++c)
          for (int k = 0; k < k2; ++k)
            pe->p->val[(o * ci_post + c) * k2 + k] =
                e.p->val[(o * in_prior + c) * k2 + k];
    } else {
      GEOGAN_CHECK(pe->p->shape == e.p->shape, "sync: shape mismatch " + e.name);
      pe->p->val = e.p->val;
    }
  }
}

HierarchicalGenerator::ChainOut HierarchicalGenerator::run_chain(
    Graph& g, const Tower& t, NodeP input, NodeP cond, const ZSource& zs) const {
  const int R = cfg_.resolution_levels;
  const int L = cfg_.latent_levels;
  const int zc = cfg_.latent_channels;

  std::vector<NodeP> feats(R);
  NodeP h = input;
  for (int s = 0; s < R; ++s) {
    h = silu(g, t.enc[s](g, h));
    feats[s] = h;
  }

  ChainOut out;
  NodeP f = feats[R - 1];
  for (int s = R - 1; s >= 0; --s) {
    if (s <= L - 1) {
      const int l = s + 1;
      NodeP head = t.heads[L - l](g, f);
      NodeP mu = slice_c(g, head, 0, zc);
      NodeP sigma = add_scalar(g, softplus(g, slice_c(g, head, zc, zc)),
                               cfg_.sigma_floor);
      NodeP z;
      if (zs.inject) {
        z = (*zs.inject)[L - l];
        GEOGAN_CHECK(z->shape == mu->shape, "run_chain: injected z shape mismatch");
      } else if (zs.eps) {
        const auto& e = (*zs.eps)[L - l];
        GEOGAN_CHECK(static_cast<int64_t>(e.size()) == mu->count(),
                     "run_chain: eps size mismatch");
        z = add(g, mu, mul(g, sigma, g.constant(mu->shape, e)));
      } else if (zs.mode == LatentMode::mean) {
        z = mu;
      } else {
        GEOGAN_CHECK(zs.rng != nullptr, "run_chain: sample mode needs an rng");
        std::vector<real> eps(mu->count());
        for (auto& e : eps) e = zs.rng->normal();
        z = add(g, mu, mul(g, sigma, g.constant(mu->shape, eps)));
      }
      out.mu.push_back(mu);
      out.sigma.push_back(sigma);
      out.z.push_back(z);
      f = concat_c(g, {f, z});
    }
    if (s > 0) {
      f = upsample2(g, f);
      f = concat_c(g, {f, feats[s - 1]});
      f = silu(g, t.up[s - 1](g, f));
    }
  }
  return out;
}

HierarchicalGenerator::ChainOut HierarchicalGenerator::prior_chain(
    Graph& g, NodeP image, NodeP soft_mask, NodeP cond, const ZSource& zs) const {
  NodeP cgrid = broadcast_hw(g, cond, image->shape.h, image->shape.w);
  NodeP input = concat_c(g, {image, soft_mask, cgrid});
  return run_chain(g, prior_, input, cond, zs);
}

HierarchicalGenerator::ChainOut HierarchicalGenerator::posterior_chain(
    Graph& g, NodeP image, NodeP soft_mask, NodeP target_onehot, NodeP cond,
    const ZSource& zs) const {
  NodeP cgrid = broadcast_hw(g, cond, image->shape.h, image->shape.w);
  NodeP input = concat_c(g, {image, soft_mask, cgrid, target_onehot});
  return run_chain(g, post_, input, cond, zs);
}

NodeP HierarchicalGenerator::decode_logits(Graph& g,
                                           const std::vector<NodeP>& z,
                                           NodeP cond) const {
  const int L = cfg_.latent_levels;
  GEOGAN_CHECK(static_cast<int>(z.size()) == L, "decode: need all latent levels");
  NodeP cgrid = broadcast_hw(g, cond, z[0]->shape.h, z[0]->shape.w);
  NodeP f = silu(g, dec_in_(g, concat_c(g, {z[0], cgrid})));
  for (int s = L - 2; s >= 0; --s) {
    f = upsample2(g, f);
    f = concat_c(g, {f, z[L - 1 - s]});
    f = silu(g, dec_up_[s](g, f));
  }
  f = silu(g, dec_mid_(g, f));
  return dec_head_(g, f);
}

std::vector<NodeP> HierarchicalGenerator::kl_nodes(Graph& g,
                                                   const ChainOut& posterior,
                                                   const ChainOut& prior) const {
  GEOGAN_CHECK(posterior.mu.size() == prior.mu.size(), "kl_nodes: level mismatch");
  std::vector<NodeP> out;
  for (size_t i = 0; i < posterior.mu.size(); ++i) {
    NodeP mup = prior.mu[i], sigp = prior.sigma[i];
    NodeP muq = posterior.mu[i], sigq = posterior.sigma[i];
    NodeP d = sub(g, muq, mup);
    NodeP num = add(g, square(g, sigq), square(g, d));
    NodeP den = mul_scalar(g, square(g, sigp), 2.0);
    NodeP t = add(g, sub(g, log_op(g, sigp), log_op(g, sigq)), div_ew(g, num, den));
    t = add_scalar(g, t, -0.5);
    out.push_back(mul_scalar(g, sum_all(g, t), 1.0 / mup->shape.n));
  }
  return out;
}

std::pair<int, int> HierarchicalGenerator::latent_shape(int level) const {
  GEOGAN_CHECK(level >= 1 && level <= cfg_.latent_levels, "latent_shape: bad level");
  return {cfg_.height >> (level - 1), cfg_.width >> (level - 1)};
}

namespace {

Grid grid_from_node(const NodeP& n) {
  Grid gr;
  gr.c = n->shape.c;
  gr.h = n->shape.h;
  gr.w = n->shape.w;
  gr.v = n->val;
  return gr;
}

}  // namespace

LatentHierarchy HierarchicalGenerator::prior_forward(const ImageSample& warped,
                                                     ClassCondition cond,
                                                     LatentMode mode,
                                                     uint64_t seed) const {
  GEOGAN_CHECK(warped.height == cfg_.height && warped.width == cfg_.width,
               "prior_forward: input shape mismatch");
  Graph g(false);
  NodeP img = g.constant(Shape(1, 1, cfg_.height, cfg_.width), warped.image);
  NodeP msk = g.constant(Shape(1, cfg_.n_labels, cfg_.height, cfg_.width),
                         one_hot(warped.mask, cfg_.n_labels));
  NodeP cv = g.constant(Shape(1, 2), {cond.onehot[0], cond.onehot[1]});
  Rng rng(mix_seed(seed, tag("prior_forward")));
  ZSource zs{mode, &rng, nullptr};
  ChainOut chain = prior_chain(g, img, msk, cv, zs);

  LatentHierarchy h;
  const int L = cfg_.latent_levels;
  for (int i = 0; i < L; ++i) {
    LatentLevel lvl;
    lvl.level = L - i;
    lvl.prior_mu = grid_from_node(chain.mu[i]);
    lvl.prior_sigma = grid_from_node(chain.sigma[i]);
    lvl.z = grid_from_node(chain.z[i]);
    h.levels.push_back(std::move(lvl));
  }
  return h;
}

LatentHierarchy HierarchicalGenerator::posterior_forward(
    const ImageSample& warped, const std::vector<uint8_t>& target_mask,
    ClassCondition cond) const {
  GEOGAN_CHECK(warped.height == cfg_.height && warped.width == cfg_.width,
               "posterior_forward: input shape mismatch");
  GEOGAN_CHECK(target_mask.size() == warped.mask.size(),
               "posterior_forward: target mask size mismatch");
  Graph g(false);
  NodeP img = g.constant(Shape(1, 1, cfg_.height, cfg_.width), warped.image);
  NodeP msk = g.constant(Shape(1, cfg_.n_labels, cfg_.height, cfg_.width),
                         one_hot(warped.mask, cfg_.n_labels));
  NodeP tgt = g.constant(Shape(1, cfg_.n_labels, cfg_.height, cfg_.width),
                         one_hot(target_mask, cfg_.n_labels));
  NodeP cv = g.constant(Shape(1, 2), {cond.onehot[0], cond.onehot[1]});
  ZSource zs{LatentMode::mean, nullptr, nullptr};
  ChainOut chain = posterior_chain(g, img, msk, tgt, cv, zs);

  LatentHierarchy h;
  const int L = cfg_.latent_levels;
  for (int i = 0; i < L; ++i) {
    LatentLevel lvl;
    lvl.level = L - i;
    lvl.post_mu = grid_from_node(chain.mu[i]);
    lvl.post_sigma = grid_from_node(chain.sigma[i]);
    lvl.z = grid_from_node(chain.z[i]);
    h.levels.push_back(std::move(lvl));
  }
  return h;
}

GeneratedSample HierarchicalGenerator::decode(const LatentHierarchy& h,
                                              ClassCondition cond) const {
  GEOGAN_CHECK(h.has_z(), "decode: hierarchy has no sampled latents");
  Graph g(false);
  std::vector<NodeP> zs;
  for (const auto& lvl : h.levels)
    zs.push_back(g.constant(Shape(1, lvl.z.c, lvl.z.h, lvl.z.w), lvl.z.v));
  NodeP cv = g.constant(Shape(1, 2), {cond.onehot[0], cond.onehot[1]});
  NodeP logits = decode_logits(g, zs, cv);
  NodeP soft = softmax_c(g, logits);

  GeneratedSample out;
  out.height = cfg_.height;
  out.width = cfg_.width;
  out.n_labels = cfg_.n_labels;
  out.soft_mask = soft->val;
  out.hard_mask = argmax_mask(out.soft_mask, cfg_.n_labels, cfg_.height, cfg_.width);
  out.condition = cond;
  return out;
}

// --- merge helper -------------------------------------------------------------

LatentHierarchy merge_hierarchies(const LatentHierarchy& prior,
                                  const LatentHierarchy& posterior) {
  GEOGAN_CHECK(prior.levels.size() == posterior.levels.size(),
               "merge: level count mismatch");
  LatentHierarchy out = prior;
  for (size_t i = 0; i < out.levels.size(); ++i) {
    out.levels[i].post_mu = posterior.levels[i].post_mu;
    out.levels[i].post_sigma = posterior.levels[i].post_sigma;
    if (!posterior.levels[i].z.empty()) out.levels[i].z = posterior.levels[i].z;
  }
  return out;
}

// --- GeneratorBundle ------------------------------------------------------------

GeneratorBundle GeneratorBundle::create(const GeneratorConfig& cfg,
                                        uint64_t init_seed) {
  GeneratorBundle b;
  b.cfg = cfg;
  b.stn_cfg.n_labels = cfg.n_labels;
  b.stn_cfg.height = cfg.height;
  b.stn_cfg.width = cfg.width;
  b.stn = std::make_unique<Stn>(b.stn_cfg, mix_seed(init_seed, tag("stn")));
  b.gen = std::make_unique<HierarchicalGenerator>(cfg, mix_seed(init_seed, tag("gen")));
  Rng r(init_seed);
  b.rng_state = r.state();
  return b;
}

namespace {

json generator_config_json(const GeneratorConfig& c) {
  return json{{"resolution_levels", c.resolution_levels},
              {"latent_levels", c.latent_levels},
              {"base_channels", c.base_channels},
              {"latent_channels", c.latent_channels},
              {"n_labels", c.n_labels},
              {"height", c.height},
              {"width", c.width},
              {"kl_weight", c.kl_weight},
              {"sigma_floor", c.sigma_floor}};
}

GeneratorConfig generator_config_from_json(const json& j) {
  GeneratorConfig c;
  c.resolution_levels = j.value("resolution_levels", c.resolution_levels);
  c.latent_levels = j.value("latent_levels", c.latent_levels);
  c.base_channels = j.value("base_channels", c.base_channels);
  c.latent_channels = j.value("latent_channels", c.latent_channels);
  c.n_labels = j.value("n_labels", c.n_labels);
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.kl_weight = j.value("kl_weight", c.kl_weight);
  c.sigma_floor = j.value("sigma_floor", c.sigma_floor);
  return c;
}

}  // namespace

void GeneratorBundle::save(const std::string& path) const {
  json meta{{"kind", "generator_bundle"},
            {"format_version", 1},
            {"config", generator_config_json(cfg)},
            {"trained", trained},
            {"step", step},
            {"rng_state", rng_state}};
  save_checkpoint(path, meta.dump(),
                  {{"stn", const_cast<ParamStore*>(&stn->params())},
                   {"prior", const_cast<ParamStore*>(&gen->prior_params())},
                   {"posterior", const_cast<ParamStore*>(&gen->posterior_params())},
                   {"decoder", const_cast<ParamStore*>(&gen->decoder_params())}});
}

GeneratorBundle GeneratorBundle::load(const std::string& path) {
  // The architecture must exist before tensors can be loaded, so read the
  // metadata header first, construct from its config, then load weights.
  const std::string meta_text = [&] {
    std::ifstream is(path, std::ios::binary);
    GEOGAN_CHECK(is.good(), "checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    uint32_t version = 0;
    is.read(reinterpret_cast<char*>(&version), sizeof(version));
    uint32_t len = 0;
    is.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string s(len, '\0');
    is.read(s.data(), len);
    GEOGAN_CHECK(static_cast<bool>(is), "checkpoint: truncated header in " + path);
    return s;
  }();
  const json meta = json::parse(meta_text);
  GEOGAN_CHECK(meta.value("kind", "") == "generator_bundle",
               "checkpoint: not a generator bundle: " + path);
  GeneratorBundle b = create(generator_config_from_json(meta["config"]), 0);
  load_checkpoint(path, {{"stn", &b.stn->params()},
                         {"prior", &b.gen->prior_params()},
                         {"posterior", &b.gen->posterior_params()},
                         {"decoder", &b.gen->decoder_params()}});
  b.trained = meta.value("trained", false);
  b.step = meta.value("step", static_cast<int64_t>(0));
  if (meta.contains("rng_state")) {
    auto v = meta["rng_state"].get<std::vector<uint64_t>>();
    for (size_t i = 0; i < 4 && i < v.size(); ++i) b.rng_state[i] = v[i];
  }
  return b;
}

GeneratedSample generate(const GeneratorBundle& b, const ImageSample& base,
                         ClassCondition cond, uint64_t seed, LatentMode mode) {
  GEOGAN_CHECK(b.trained,
               "generate: generator has not been trained or loaded from a "
               "trained checkpoint");
  GEOGAN_CHECK(cond.valid(), "generate: invalid class condition");
  const GeneratorConfig& cfg = b.cfg;
  GEOGAN_CHECK(base.height == cfg.height && base.width == cfg.width,
               "generate: base sample shape mismatch");

  const AffineTransform t = b.stn->propose_one(base, cond);
  ImageSample warped = apply_affine(base, t);

  Graph g(false);
  NodeP img = g.constant(Shape(1, 1, cfg.height, cfg.width), warped.image);
  NodeP msk = g.constant(Shape(1, cfg.n_labels, cfg.height, cfg.width),
                         one_hot(warped.mask, cfg.n_labels));
  NodeP cv = g.constant(Shape(1, 2), {cond.onehot[0], cond.onehot[1]});
  Rng rng(mix_seed(seed, tag("generate")));
  HierarchicalGenerator::ZSource zs{mode, &rng, nullptr};
  auto chain = b.gen->prior_chain(g, img, msk, cv, zs);
  NodeP logits = b.gen->decode_logits(g, chain.z, cv);
  NodeP soft = softmax_c(g, logits);

  GeneratedSample out;
  out.height = cfg.height;
  out.width = cfg.width;
  out.n_labels = cfg.n_labels;
  out.image.resize(warped.image.size());
  for (size_t i = 0; i < warped.image.size(); ++i)
    out.image[i] = std::round(std::clamp(warped.image[i], 0.0, 1.0) * 255.0) / 255.0;
  out.soft_mask = soft->val;
  out.hard_mask = argmax_mask(out.soft_mask, cfg.n_labels, cfg.height, cfg.width);
  out.condition = cond;
  out.base_id = base.sample_id;
  out.transform = t;
  out.latent_seed = seed;
  return out;
}

}  // namespace geogan
