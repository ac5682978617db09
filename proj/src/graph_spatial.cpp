#include <Eigen/Dense>
#include <cmath>

#include "geogan/graph.hpp"

namespace geogan {

namespace {

using MatMap = Eigen::Map<Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic,
                                        Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic,
                                   Eigen::RowMajor>>;

// Unrolls one sample's receptive fields into rows of col [Ho*Wo, Ci*kh*kw].
void im2col(const real* x, int Ci, int H, int W, int KH, int KW, int stride,
            int pad, int Ho, int Wo, real* col) {
  const int K = Ci * KH * KW;
  for (int ho = 0; ho < Ho; ++ho) {
    for (int wo = 0; wo < Wo; ++wo) {
      real* row = col + (static_cast<int64_t>(ho) * Wo + wo) * K;
      for (int ci = 0; ci < Ci; ++ci) {
        const real* xc = x + static_cast<int64_t>(ci) * H * W;
        for (int ky = 0; ky < KH; ++ky) {
          const int iy = ho * stride - pad + ky;
          for (int kx = 0; kx < KW; ++kx) {
            const int ix = wo * stride - pad + kx;
            *row++ = (iy >= 0 && iy < H && ix >= 0 && ix < W)
                         ? xc[static_cast<int64_t>(iy) * W + ix]
                         : 0.0;
          }
        }
      }
    }
  }
}

// Scatters col-layout gradients back onto one sample's input gradient.
void col2im(const real* col, int Ci, int H, int W, int KH, int KW, int stride,
            int pad, int Ho, int Wo, real* gx) {
  const int K = Ci * KH * KW;
  for (int ho = 0; ho < Ho; ++ho) {
    for (int wo = 0; wo < Wo; ++wo) {
      const real* row = col + (static_cast<int64_t>(ho) * Wo + wo) * K;
      for (int ci = 0; ci < Ci; ++ci) {
        real* gc = gx + static_cast<int64_t>(ci) * H * W;
        for (int ky = 0; ky < KH; ++ky) {
          const int iy = ho * stride - pad + ky;
          for (int kx = 0; kx < KW; ++kx) {
            const int ix = wo * stride - pad + kx;
            const real v = *row++;
            if (iy >= 0 && iy < H && ix >= 0 && ix < W)
              gc[static_cast<int64_t>(iy) * W + ix] += v;
          }
        }
      }
    }
  }
}

int conv_blocks(int n) { return std::min(4, n); }

}  // namespace

NodeP conv2d(Graph& g, NodeP x, NodeP w, NodeP b, int stride, int pad) {
  const int N = x->shape.n, Ci = x->shape.c, H = x->shape.h, W = x->shape.w;
  const int Co = w->shape.n, KH = w->shape.h, KW = w->shape.w;
  GEOGAN_CHECK(w->shape.c == Ci, "conv2d: channel mismatch");
  GEOGAN_CHECK(b->count() == Co, "conv2d: bias size mismatch");
  const int Ho = (H + 2 * pad - KH) / stride + 1;
  const int Wo = (W + 2 * pad - KW) / stride + 1;
  GEOGAN_CHECK(Ho > 0 && Wo > 0, "conv2d: empty output");

  const bool rg = x->requires_grad || w->requires_grad || b->requires_grad;
  auto out = g.make(Shape(N, Co, Ho, Wo), rg);

  const int K = Ci * KH * KW;
  const int64_t HoWo = static_cast<int64_t>(Ho) * Wo;
  const int nblk = conv_blocks(N);

  parallel_blocks(nblk, [&](int blk) {
    auto [n0, n1] = block_range(N, nblk, blk);
    std::vector<real> col(HoWo * K);
    std::vector<real> ymat(HoWo * Co);
    for (int64_t n = n0; n < n1; ++n) {
      im2col(x->val.data() + n * x->shape.chw(), Ci, H, W, KH, KW, stride, pad,
             Ho, Wo, col.data());
      MatMap y(ymat.data(), HoWo, Co);
      ConstMatMap colm(col.data(), HoWo, K);
      ConstMatMap wm(w->val.data(), Co, K);
      y.noalias() = colm * wm.transpose();
      // Transpose [HoWo, Co] into NCHW, adding bias.
      real* dst = out->val.data() + n * out->shape.chw();
      for (int co = 0; co < Co; ++co) {
        const real bias = b->val[co];
        for (int64_t p = 0; p < HoWo; ++p) dst[co * HoWo + p] = ymat[p * Co + co] + bias;
      }
    }
  });

  if (out->requires_grad) {
    out->keep = {x, w, b};
    Node* xp = x.get();
    Node* wp = w.get();
    Node* bp = b.get();
    Node* op = out.get();
    out->backward = [xp, wp, bp, op, stride, pad, N, Ci, H, W, Co, KH, KW, Ho,
                     Wo, K, HoWo, nblk] {
      std::vector<std::vector<real>> dw_part, db_part;
      const bool need_w = wp->requires_grad;
      const bool need_b = bp->requires_grad;
      const bool need_x = xp->requires_grad;
      if (need_w) dw_part.assign(nblk, std::vector<real>(static_cast<size_t>(Co) * K, 0.0));
      if (need_b) db_part.assign(nblk, std::vector<real>(Co, 0.0));

      parallel_blocks(nblk, [&](int blk) {
        auto [n0, n1] = block_range(N, nblk, blk);
        std::vector<real> col(HoWo * K);
        std::vector<real> dymat(HoWo * Co);
        std::vector<real> dcol(need_x ? HoWo * K : 0);
        for (int64_t n = n0; n < n1; ++n) {
          const real* gsrc = op->grad.data() + n * op->shape.chw();
          for (int co = 0; co < Co; ++co)
            for (int64_t p = 0; p < HoWo; ++p)
              dymat[p * Co + co] = gsrc[co * HoWo + p];
          ConstMatMap dy(dymat.data(), HoWo, Co);
          if (need_w || need_x)
            im2col(xp->val.data() + n * xp->shape.chw(), Ci, H, W, KH, KW,
                   stride, pad, Ho, Wo, col.data());
          if (need_w) {
            MatMap dwp(dw_part[blk].data(), Co, K);
            ConstMatMap colm(col.data(), HoWo, K);
            dwp.noalias() += dy.transpose() * colm;
          }
          if (need_b) {
            for (int64_t p = 0; p < HoWo; ++p)
              for (int co = 0; co < Co; ++co)
                db_part[blk][co] += dymat[p * Co + co];
          }
          if (need_x) {
            MatMap dcolm(dcol.data(), HoWo, K);
            ConstMatMap wm(wp->val.data(), Co, K);
            dcolm.noalias() = dy * wm;
            col2im(dcol.data(), Ci, H, W, KH, KW, stride, pad, Ho, Wo,
                   xp->grad.data() + n * xp->shape.chw());
          }
        }
      });

      // Fixed block-ascending reduction keeps results bitwise reproducible.
      if (need_w)
        for (int blk = 0; blk < nblk; ++blk)
          for (size_t i = 0; i < wp->grad.size(); ++i) wp->grad[i] += dw_part[blk][i];
      if (need_b)
        for (int blk = 0; blk < nblk; ++blk)
          for (int co = 0; co < Co; ++co) bp->grad[co] += db_part[blk][co];
    };
  }
  return out;
}

NodeP dense(Graph& g, NodeP x, NodeP w, NodeP b) {
  GEOGAN_CHECK(x->shape.h == 1 && x->shape.w == 1, "dense: expects [N,F]");
  const int N = x->shape.n, F = x->shape.c, O = w->shape.c;
  GEOGAN_CHECK(w->shape.n == F, "dense: weight shape mismatch");
  GEOGAN_CHECK(b->count() == O, "dense: bias size mismatch");
  const bool rg = x->requires_grad || w->requires_grad || b->requires_grad;
  auto out = g.make(Shape(N, O), rg);
  {
    ConstMatMap xm(x->val.data(), N, F);
    ConstMatMap wm(w->val.data(), F, O);
    MatMap ym(out->val.data(), N, O);
    ym.noalias() = xm * wm;
    for (int n = 0; n < N; ++n)
      for (int o = 0; o < O; ++o) out->val[n * O + o] += b->val[o];
  }
  if (out->requires_grad) {
    out->keep = {x, w, b};
    Node* xp = x.get();
    Node* wp = w.get();
    Node* bp = b.get();
    Node* op = out.get();
    out->backward = [xp, wp, bp, op, N, F, O] {
      ConstMatMap go(op->grad.data(), N, O);
      if (xp->requires_grad) {
        MatMap gx(xp->grad.data(), N, F);
        ConstMatMap wm(wp->val.data(), F, O);
        gx.noalias() += go * wm.transpose();
      }
      if (wp->requires_grad) {
        MatMap gw(wp->grad.data(), F, O);
        ConstMatMap xm(xp->val.data(), N, F);
        gw.noalias() += xm.transpose() * go;
      }
      if (bp->requires_grad) {
        for (int n = 0; n < N; ++n)
          for (int o = 0; o < O; ++o) bp->grad[o] += op->grad[n * O + o];
      }
    };
  }
  return out;
}

NodeP upsample2(Graph& g, NodeP x) {
  const int N = x->shape.n, C = x->shape.c, H = x->shape.h, W = x->shape.w;
  auto out = g.make(Shape(N, C, 2 * H, 2 * W), x->requires_grad);
  for (int nc = 0; nc < N * C; ++nc) {
    const real* src = x->val.data() + static_cast<int64_t>(nc) * H * W;
    real* dst = out->val.data() + static_cast<int64_t>(nc) * 4 * H * W;
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) {
        const real v = src[i * W + j];
        real* d = dst + (2 * i) * 2 * W + 2 * j;
        d[0] = v;
        d[1] = v;
        d[2 * W] = v;
        d[2 * W + 1] = v;
      }
  }
  if (out->requires_grad) {
    out->keep = {x};
    Node* xp = x.get();
    Node* op = out.get();
    out->backward = [xp, op, N, C, H, W] {
      for (int nc = 0; nc < N * C; ++nc) {
        real* gx = xp->grad.data() + static_cast<int64_t>(nc) * H * W;
        const real* go = op->grad.data() + static_cast<int64_t>(nc) * 4 * H * W;
        for (int i = 0; i < H; ++i)
          for (int j = 0; j < W; ++j) {
            const real* s = go + (2 * i) * 2 * W + 2 * j;
            gx[i * W + j] += s[0] + s[1] + s[2 * W] + s[2 * W + 1];
          }
      }
    };
  }
  return out;
}

NodeP grid_sample_affine(Graph& g, NodeP input, NodeP theta) {
  const int N = input->shape.n, C = input->shape.c, H = input->shape.h,
            W = input->shape.w;
  GEOGAN_CHECK(theta->shape.n == N && theta->shape.c == 6 &&
                   theta->shape.h == 1 && theta->shape.w == 1,
               "grid_sample_affine: theta must be [N,6]");
  const bool rg = input->requires_grad || theta->requires_grad;
  auto out = g.make(input->shape, rg);

  const real sxw = W > 1 ? (W - 1) / 2.0 : 0.0;
  const real syh = H > 1 ? (H - 1) / 2.0 : 0.0;
  const int64_t hw = input->shape.hw();

  auto sample_forward = [&](int n) {
    const real* t = theta->val.data() + n * 6;
    const real* in = input->val.data() + n * input->shape.chw();
    real* o = out->val.data() + n * out->shape.chw();
    for (int oy = 0; oy < H; ++oy) {
      const real yn = H > 1 ? 2.0 * oy / (H - 1) - 1.0 : 0.0;
      for (int ox = 0; ox < W; ++ox) {
        const real xn = W > 1 ? 2.0 * ox / (W - 1) - 1.0 : 0.0;
        const real sx = t[0] * xn + t[1] * yn + t[2];
        const real sy = t[3] * xn + t[4] * yn + t[5];
        const real px = (sx + 1.0) * sxw;
        const real py = (sy + 1.0) * syh;
        const int x0 = static_cast<int>(std::floor(px));
        const int y0 = static_cast<int>(std::floor(py));
        const real fx = px - x0, fy = py - y0;
        const real wgt[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy,
                             fx * fy};
        const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
        const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
        for (int c = 0; c < C; ++c) {
          real v = 0;
          for (int k = 0; k < 4; ++k) {
            if (xs[k] >= 0 && xs[k] < W && ys[k] >= 0 && ys[k] < H)
              v += wgt[k] * in[c * hw + ys[k] * W + xs[k]];
          }
          o[c * hw + oy * W + ox] = v;
        }
      }
    }
  };
  const int nblk = conv_blocks(N);
  parallel_blocks(nblk, [&](int blk) {
    auto [n0, n1] = block_range(N, nblk, blk);
    for (int64_t n = n0; n < n1; ++n) sample_forward(static_cast<int>(n));
  });

  if (out->requires_grad) {
    out->keep = {input, theta};
    Node* ip = input.get();
    Node* tp = theta.get();
    Node* op = out.get();
    out->backward = [ip, tp, op, N, C, H, W, sxw, syh, hw, nblk] {
      auto sample_backward = [&](int n) {
        const real* t = tp->val.data() + n * 6;
        const real* in = ip->val.data() + n * ip->shape.chw();
        const real* go = op->grad.data() + n * op->shape.chw();
        real* gi = ip->requires_grad ? ip->grad.data() + n * ip->shape.chw() : nullptr;
        real* gt = tp->requires_grad ? tp->grad.data() + n * 6 : nullptr;
        for (int oy = 0; oy < H; ++oy) {
          const real yn = H > 1 ? 2.0 * oy / (H - 1) - 1.0 : 0.0;
          for (int ox = 0; ox < W; ++ox) {
            const real xn = W > 1 ? 2.0 * ox / (W - 1) - 1.0 : 0.0;
            const real sx = t[0] * xn + t[1] * yn + t[2];
            const real sy = t[3] * xn + t[4] * yn + t[5];
            const real px = (sx + 1.0) * sxw;
            const real py = (sy + 1.0) * syh;
            const int x0 = static_cast<int>(std::floor(px));
            const int y0 = static_cast<int>(std::floor(py));
            const real fx = px - x0, fy = py - y0;
            const real wgt[4] = {(1 - fx) * (1 - fy), fx * (1 - fy),
                                 (1 - fx) * fy, fx * fy};
            // d(weight)/d(px), d(weight)/d(py)
            const real dwx[4] = {-(1 - fy), (1 - fy), -fy, fy};
            const real dwy[4] = {-(1 - fx), -fx, (1 - fx), fx};
            const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
            const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
            real dpx = 0, dpy = 0;
            for (int c = 0; c < C; ++c) {
              const real gv = go[c * hw + oy * W + ox];
              if (gv == 0.0) continue;
              for (int k = 0; k < 4; ++k) {
                if (xs[k] >= 0 && xs[k] < W && ys[k] >= 0 && ys[k] < H) {
                  const real iv = in[c * hw + ys[k] * W + xs[k]];
                  if (gi) gi[c * hw + ys[k] * W + xs[k]] += gv * wgt[k];
                  dpx += gv * dwx[k] * iv;
                  dpy += gv * dwy[k] * iv;
                }
              }
            }
            if (gt) {
              const real dsx = dpx * sxw;
              const real dsy = dpy * syh;
              gt[0] += dsx * xn;
              gt[1] += dsx * yn;
              gt[2] += dsx;
              gt[3] += dsy * xn;
              gt[4] += dsy * yn;
              gt[5] += dsy;
            }
          }
        }
      };
      parallel_blocks(nblk, [&](int blk) {
        auto [n0, n1] = block_range(N, nblk, blk);
        for (int64_t n = n0; n < n1; ++n) sample_backward(static_cast<int>(n));
      });
    };
  }
  return out;
}

NodeP batchnorm(Graph& g, NodeP x, NodeP gamma, NodeP beta,
                std::vector<real>& running_mean, std::vector<real>& running_var,
                bool training, real momentum, real eps) {
  const int N = x->shape.n, C = x->shape.c;
  const int64_t hw = x->shape.hw();
  const int64_t m = N * hw;
  GEOGAN_CHECK(gamma->count() == C && beta->count() == C,
               "batchnorm: affine param size mismatch");
  GEOGAN_CHECK(static_cast<int>(running_mean.size()) == C &&
                   static_cast<int>(running_var.size()) == C,
               "batchnorm: running stats size mismatch");

  const bool rg = x->requires_grad || gamma->requires_grad || beta->requires_grad;
  auto out = g.make(x->shape, rg);

  auto xhat = std::make_shared<std::vector<real>>(x->val.size());
  auto inv_std = std::make_shared<std::vector<real>>(C);

  for (int c = 0; c < C; ++c) {
    real mean, var;
    if (training) {
      real acc = 0;
      for (int n = 0; n < N; ++n) {
        const real* xv = x->val.data() + (n * C + c) * hw;
        for (int64_t p = 0; p < hw; ++p) acc += xv[p];
      }
      mean = acc / static_cast<real>(m);
      real vacc = 0;
      for (int n = 0; n < N; ++n) {
        const real* xv = x->val.data() + (n * C + c) * hw;
        for (int64_t p = 0; p < hw; ++p) {
          const real d = xv[p] - mean;
          vacc += d * d;
        }
      }
      var = vacc / static_cast<real>(m);
      const real unbiased = m > 1 ? vacc / static_cast<real>(m - 1) : var;
      running_mean[c] = (1 - momentum) * running_mean[c] + momentum * mean;
      running_var[c] = (1 - momentum) * running_var[c] + momentum * unbiased;
    } else {
      mean = running_mean[c];
      var = running_var[c];
    }
    const real is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[c] = is;
    const real gm = gamma->val[c], bt = beta->val[c];
    for (int n = 0; n < N; ++n) {
      const real* xv = x->val.data() + (n * C + c) * hw;
      real* xh = xhat->data() + (n * C + c) * hw;
      real* ov = out->val.data() + (n * C + c) * hw;
      for (int64_t p = 0; p < hw; ++p) {
        xh[p] = (xv[p] - mean) * is;
        ov[p] = gm * xh[p] + bt;
      }
    }
  }

  if (out->requires_grad) {
    out->keep = {x, gamma, beta};
    Node* xp = x.get();
    Node* gp = gamma.get();
    Node* bp = beta.get();
    Node* op = out.get();
    out->backward = [xp, gp, bp, op, xhat, inv_std, N, C, hw, m, training] {
      for (int c = 0; c < C; ++c) {
        real sum_dy = 0, sum_dy_xhat = 0;
        for (int n = 0; n < N; ++n) {
          const real* go = op->grad.data() + (n * C + c) * hw;
          const real* xh = xhat->data() + (n * C + c) * hw;
          for (int64_t p = 0; p < hw; ++p) {
            sum_dy += go[p];
            sum_dy_xhat += go[p] * xh[p];
          }
        }
        if (gp->requires_grad) gp->grad[c] += sum_dy_xhat;
        if (bp->requires_grad) bp->grad[c] += sum_dy;
        if (xp->requires_grad) {
          const real gm = gp->val[c];
          const real is = (*inv_std)[c];
          if (training) {
            const real k1 = sum_dy / static_cast<real>(m);
            const real k2 = sum_dy_xhat / static_cast<real>(m);
            for (int n = 0; n < N; ++n) {
              const real* go = op->grad.data() + (n * C + c) * hw;
              const real* xh = xhat->data() + (n * C + c) * hw;
              real* gx = xp->grad.data() + (n * C + c) * hw;
              for (int64_t p = 0; p < hw; ++p)
                gx[p] += gm * is * (go[p] - k1 - xh[p] * k2);
            }
          } else {
            for (int n = 0; n < N; ++n) {
              const real* go = op->grad.data() + (n * C + c) * hw;
              real* gx = xp->grad.data() + (n * C + c) * hw;
              for (int64_t p = 0; p < hw; ++p) gx[p] += gm * is * go[p];
            }
          }
        }
      }
    };
  }
  return out;
}

}  // namespace geogan
