#include "geogan/transforms.hpp"

#include <cmath>

namespace geogan {

namespace {
constexpr real kPi = 3.14159265358979323846;
}

bool AffineTransform::within(const AffineBounds& b, real slack) const {
  const real d = det();
  if (d < b.det_min - slack || d > b.det_max + slack) return false;
  if (std::abs(m[2]) > b.t_max + slack) return false;
  if (std::abs(m[5]) > b.t_max + slack) return false;
  return true;
}

std::vector<real> warp_image_bilinear(const std::vector<real>& img, int h,
                                      int w, const AffineTransform& t) {
  std::vector<real> out(img.size(), 0.0);
  const real sxw = w > 1 ? (w - 1) / 2.0 : 0.0;
  const real syh = h > 1 ? (h - 1) / 2.0 : 0.0;
  for (int oy = 0; oy < h; ++oy) {
    const real yn = h > 1 ? 2.0 * oy / (h - 1) - 1.0 : 0.0;
    for (int ox = 0; ox < w; ++ox) {
      const real xn = w > 1 ? 2.0 * ox / (w - 1) - 1.0 : 0.0;
      const real px = (t.m[0] * xn + t.m[1] * yn + t.m[2] + 1.0) * sxw;
      const real py = (t.m[3] * xn + t.m[4] * yn + t.m[5] + 1.0) * syh;
      const int x0 = static_cast<int>(std::floor(px));
      const int y0 = static_cast<int>(std::floor(py));
      const real fx = px - x0, fy = py - y0;
      real v = 0;
      const real wgt[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy,
                           fx * fy};
      const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
      const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
      for (int k = 0; k < 4; ++k)
        if (xs[k] >= 0 && xs[k] < w && ys[k] >= 0 && ys[k] < h)
          v += wgt[k] * img[static_cast<size_t>(ys[k]) * w + xs[k]];
      out[static_cast<size_t>(oy) * w + ox] = v;
    }
  }
  return out;
}

std::vector<uint8_t> warp_mask_nearest(const std::vector<uint8_t>& mask, int h,
                                       int w, const AffineTransform& t) {
  std::vector<uint8_t> out(mask.size(), 0);
  const real sxw = w > 1 ? (w - 1) / 2.0 : 0.0;
  const real syh = h > 1 ? (h - 1) / 2.0 : 0.0;
  for (int oy = 0; oy < h; ++oy) {
    const real yn = h > 1 ? 2.0 * oy / (h - 1) - 1.0 : 0.0;
    for (int ox = 0; ox < w; ++ox) {
      const real xn = w > 1 ? 2.0 * ox / (w - 1) - 1.0 : 0.0;
      const real px = (t.m[0] * xn + t.m[1] * yn + t.m[2] + 1.0) * sxw;
      const real py = (t.m[3] * xn + t.m[4] * yn + t.m[5] + 1.0) * syh;
      const int x0 = static_cast<int>(std::lround(px));
      const int y0 = static_cast<int>(std::lround(py));
      if (x0 >= 0 && x0 < w && y0 >= 0 && y0 < h)
        out[static_cast<size_t>(oy) * w + ox] = mask[static_cast<size_t>(y0) * w + x0];
    }
  }
  return out;
}

ImageSample apply_affine(const ImageSample& s, const AffineTransform& t) {
  ImageSample out = s;
  out.image = warp_image_bilinear(s.image, s.height, s.width, t);
  out.mask = warp_mask_nearest(s.mask, s.height, s.width, t);
  return out;
}

AffineTransform sample_da_transform(const DaConfig& cfg, Rng& rng) {
  const real theta = rng.uniform(-cfg.rot_max_deg, cfg.rot_max_deg) * kPi / 180.0;
  const real tx = rng.uniform(-cfg.trans_frac, cfg.trans_frac) * 2.0;
  const real ty = rng.uniform(-cfg.trans_frac, cfg.trans_frac) * 2.0;
  const real s = rng.uniform(cfg.scale_min, cfg.scale_max);
  AffineTransform t;
  t.m = {s * std::cos(theta), -s * std::sin(theta), tx,
         s * std::sin(theta), s * std::cos(theta), ty};
  return t;
}

ImageSample classical_da(const ImageSample& s, const DaConfig& cfg,
                         uint64_t rng_seed) {
  Rng rng(mix_seed(rng_seed, tag("classical_da")));
  return apply_affine(s, sample_da_transform(cfg, rng));
}

// --- Stn ---------------------------------------------------------------------

Stn::Stn(const StnConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
  Rng rng(mix_seed(init_seed, tag("stn_init")));
  const int c0 = cfg.base_channels;
  // Four stride-2 convs: H -> H/16.
  const int chans[5] = {cfg.n_labels, c0, 2 * c0, 2 * c0, 2 * c0};
  for (int i = 0; i < 4; ++i)
    convs_.emplace_back(params_, "conv" + std::to_string(i), chans[i],
                        chans[i + 1], 3, 2, 1, rng);
  const int fh = cfg.height / 16, fw = cfg.width / 16;
  GEOGAN_CHECK(fh > 0 && fw > 0, "stn: input too small");
  flat_dim_ = 2 * c0 * fh * fw;
  fc1_ = Dense(params_, "fc1", flat_dim_ + 2, 32, rng);
  fc2_ = Dense(params_, "fc2", 32, 6, rng, /*zero_init=*/true);
}

NodeP Stn::propose(Graph& g, NodeP mask_onehot, NodeP cond) const {
  GEOGAN_CHECK(mask_onehot->shape.c == cfg_.n_labels &&
                   mask_onehot->shape.h == cfg_.height &&
                   mask_onehot->shape.w == cfg_.width,
               "stn: mask shape mismatch");
  NodeP h = mask_onehot;
  for (const auto& cv : convs_) h = silu(g, cv(g, h));
  h = flatten(g, h);
  h = concat_c(g, {h, cond});
  h = silu(g, fc1_(g, h));
  NodeP u = fc2_(g, h);  // [N,6] raw

  const AffineBounds& b = cfg_.bounds;
  const real log_c = 0.25 * (std::log(b.det_min) + std::log(b.det_max));
  const real log_a = 0.25 * (std::log(b.det_max) - std::log(b.det_min));

  NodeP theta = mul_scalar(g, tanh_op(g, slice_c(g, u, 0, 1)), b.rot_max_rad);
  NodeP sx = exp_op(g, add_scalar(g, mul_scalar(g, tanh_op(g, slice_c(g, u, 1, 1)), log_a), log_c));
  NodeP sy = exp_op(g, add_scalar(g, mul_scalar(g, tanh_op(g, slice_c(g, u, 2, 1)), log_a), log_c));
  NodeP sh = mul_scalar(g, tanh_op(g, slice_c(g, u, 3, 1)), b.shear_max);
  NodeP tx = mul_scalar(g, tanh_op(g, slice_c(g, u, 4, 1)), b.t_max);
  NodeP ty = mul_scalar(g, tanh_op(g, slice_c(g, u, 5, 1)), b.t_max);

  NodeP ct = cos_op(g, theta);
  NodeP st = sin_op(g, theta);
  // R(theta) * [[sx, sh], [0, sy]]; det = sx*sy stays inside the det bounds.
  NodeP a = mul(g, ct, sx);
  NodeP bb = sub(g, mul(g, ct, sh), mul(g, st, sy));
  NodeP c = mul(g, st, sx);
  NodeP d = add(g, mul(g, st, sh), mul(g, ct, sy));
  return concat_c(g, {a, bb, tx, c, d, ty});
}

AffineTransform Stn::propose_one(const ImageSample& s, ClassCondition cond) const {
  Graph g(/*grad_enabled=*/false);
  NodeP mask = g.constant(Shape(1, cfg_.n_labels, cfg_.height, cfg_.width),
                          one_hot(s.mask, cfg_.n_labels));
  NodeP cv = g.constant(Shape(1, 2), std::vector<real>{cond.onehot[0], cond.onehot[1]});
  NodeP theta = propose(g, mask, cv);
  AffineTransform t;
  for (int i = 0; i < 6; ++i) t.m[i] = theta->val[i];
  return t;
}

// --- batching -----------------------------------------------------------------

std::vector<real> one_hot(const std::vector<uint8_t>& mask, int n_labels) {
  std::vector<real> out(mask.size() * n_labels, 0.0);
  const size_t hw = mask.size();
  for (size_t i = 0; i < hw; ++i) out[mask[i] * hw + i] = 1.0;
  return out;
}

NodeP batch_images(Graph& g, const std::vector<const ImageSample*>& xs) {
  GEOGAN_CHECK(!xs.empty(), "batch_images: empty batch");
  const int h = xs[0]->height, w = xs[0]->width;
  auto node = g.zeros(Shape(static_cast<int>(xs.size()), 1, h, w));
  for (size_t n = 0; n < xs.size(); ++n)
    std::copy(xs[n]->image.begin(), xs[n]->image.end(),
              node->val.begin() + n * static_cast<size_t>(h) * w);
  return node;
}

NodeP batch_onehot_masks(Graph& g, const std::vector<const ImageSample*>& xs,
                         int n_labels) {
  GEOGAN_CHECK(!xs.empty(), "batch_onehot_masks: empty batch");
  const int h = xs[0]->height, w = xs[0]->width;
  auto node = g.zeros(Shape(static_cast<int>(xs.size()), n_labels, h, w));
  const size_t chw = static_cast<size_t>(n_labels) * h * w;
  for (size_t n = 0; n < xs.size(); ++n) {
    const auto oh = one_hot(xs[n]->mask, n_labels);
    std::copy(oh.begin(), oh.end(), node->val.begin() + n * chw);
  }
  return node;
}

NodeP batch_conditions(Graph& g, const std::vector<ClassCondition>& cs) {
  auto node = g.zeros(Shape(static_cast<int>(cs.size()), 2));
  for (size_t n = 0; n < cs.size(); ++n) {
    node->val[2 * n] = cs[n].onehot[0];
    node->val[2 * n + 1] = cs[n].onehot[1];
  }
  return node;
}

std::vector<int> batch_labels(const std::vector<const ImageSample*>& xs) {
  std::vector<int> out;
  for (const auto* s : xs)
    for (uint8_t m : s->mask) out.push_back(m);
  return out;
}

}  // namespace geogan
