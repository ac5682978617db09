#include "geogan/graph.hpp"

#include <cmath>

namespace geogan {

NodeP make_leaf(const Shape& s, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->shape = s;
  n->val.assign(s.count(), 0.0);
  n->requires_grad = requires_grad;
  if (requires_grad) n->grad.assign(s.count(), 0.0);
  return n;
}

NodeP Graph::make(const Shape& s, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->shape = s;
  n->val.assign(s.count(), 0.0);
  n->requires_grad = requires_grad && grad_enabled_;
  if (n->requires_grad) n->grad.assign(s.count(), 0.0);
  tape_.push_back(n);
  return n;
}

NodeP Graph::constant(const Shape& s, const std::vector<real>& vals) {
  GEOGAN_CHECK(static_cast<int64_t>(vals.size()) == s.count(),
               "constant: size mismatch " + s.str());
  auto n = make(s, false);
  n->val = vals;
  return n;
}

NodeP Graph::constant(const Shape& s, const real* vals) {
  auto n = make(s, false);
  std::copy(vals, vals + s.count(), n->val.begin());
  return n;
}

NodeP Graph::zeros(const Shape& s) { return make(s, false); }

void Graph::backward(const NodeP& root) {
  GEOGAN_CHECK(root->count() == 1, "backward: root must be scalar");
  GEOGAN_CHECK(root->requires_grad, "backward: root does not require grad");
  root->grad[0] = 1.0;
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
    Node* n = it->get();
    if (n->requires_grad && n->backward) n->backward();
  }
}

namespace {

bool any_grad(std::initializer_list<const NodeP*> ps) {
  for (const NodeP* p : ps)
    if ((*p)->requires_grad) return true;
  return false;
}

NodeP binary_op(Graph& g, NodeP a, NodeP b, void (*fwd)(const real*, const real*, real*, int64_t),
                std::function<void(Node*, Node*, Node*)> bwd) {
  GEOGAN_CHECK(a->shape == b->shape,
               "binary op: shape mismatch " + a->shape.str() + " vs " + b->shape.str());
  auto out = g.make(a->shape, any_grad({&a, &b}));
  fwd(a->val.data(), b->val.data(), out->val.data(), out->count());
  if (out->requires_grad) {
    Node* ap = a.get();
    Node* bp = b.get();
    Node* op = out.get();
    out->keep = {a, b};
    out->backward = [ap, bp, op, bwd] { bwd(ap, bp, op); };
  }
  return out;
}

template <typename F, typename B>
NodeP unary_op(Graph& g, NodeP a, F fwd, B dydx) {
  auto out = g.make(a->shape, a->requires_grad);
  const int64_t n = out->count();
  for (int64_t i = 0; i < n; ++i) out->val[i] = fwd(a->val[i]);
  if (out->requires_grad) {
    Node* ap = a.get();
    Node* op = out.get();
    out->keep = {a};
    out->backward = [ap, op, dydx, n] {
      for (int64_t i = 0; i < n; ++i)
        ap->grad[i] += op->grad[i] * dydx(ap->val[i], op->val[i]);
    };
  }
  return out;
}

}  // namespace

NodeP add(Graph& g, NodeP a, NodeP b) {
  return binary_op(
      g, a, b,
      [](const real* x, const real* y, real* o, int64_t n) {
        for (int64_t i = 0; i < n; ++i) o[i] = x[i] + y[i];
      },
      [](Node* a, Node* b, Node* o) {
        const int64_t n = o->count();
        if (a->requires_grad)
          for (int64_t i = 0; i < n; ++i) a->grad[i] += o->grad[i];
        if (b->requires_grad)
          for (int64_t i = 0; i < n; ++i) b->grad[i] += o->grad[i];
      });
}

NodeP sub(Graph& g, NodeP a, NodeP b) {
  return binary_op(
      g, a, b,
      [](const real* x, const real* y, real* o, int64_t n) {
        for (int64_t i = 0; i < n; ++i) o[i] = x[i] - y[i];
      },
      [](Node* a, Node* b, Node* o) {
        const int64_t n = o->count();
        if (a->requires_grad)
          for (int64_t i = 0; i < n; ++i) a->grad[i] += o->grad[i];
        if (b->requires_grad)
          for (int64_t i = 0; i < n; ++i) b->grad[i] -= o->grad[i];
      });
}

NodeP mul(Graph& g, NodeP a, NodeP b) {
  return binary_op(
      g, a, b,
      [](const real* x, const real* y, real* o, int64_t n) {
        for (int64_t i = 0; i < n; ++i) o[i] = x[i] * y[i];
      },
      [](Node* a, Node* b, Node* o) {
        const int64_t n = o->count();
        if (a->requires_grad)
          for (int64_t i = 0; i < n; ++i) a->grad[i] += o->grad[i] * b->val[i];
        if (b->requires_grad)
          for (int64_t i = 0; i < n; ++i) b->grad[i] += o->grad[i] * a->val[i];
      });
}

NodeP div_ew(Graph& g, NodeP a, NodeP b) {
  return binary_op(
      g, a, b,
      [](const real* x, const real* y, real* o, int64_t n) {
        for (int64_t i = 0; i < n; ++i) o[i] = x[i] / y[i];
      },
      [](Node* a, Node* b, Node* o) {
        const int64_t n = o->count();
        if (a->requires_grad)
          for (int64_t i = 0; i < n; ++i) a->grad[i] += o->grad[i] / b->val[i];
        if (b->requires_grad)
          for (int64_t i = 0; i < n; ++i)
            b->grad[i] -= o->grad[i] * a->val[i] / (b->val[i] * b->val[i]);
      });
}

NodeP add_scalar(Graph& g, NodeP a, real s) {
  return unary_op(
      g, a, [s](real x) { return x + s; }, [](real, real) { return 1.0; });
}

NodeP mul_scalar(Graph& g, NodeP a, real s) {
  return unary_op(
      g, a, [s](real x) { return x * s; }, [s](real, real) { return s; });
}

NodeP silu(Graph& g, NodeP a) {
  return unary_op(
      g, a,
      [](real x) { return x / (1.0 + std::exp(-x)); },
      [](real x, real) {
        const real s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
      });
}

NodeP relu(Graph& g, NodeP a) {
  return unary_op(
      g, a, [](real x) { return x > 0 ? x : 0.0; },
      [](real x, real) { return x > 0 ? 1.0 : 0.0; });
}

NodeP tanh_op(Graph& g, NodeP a) {
  return unary_op(
      g, a, [](real x) { return std::tanh(x); },
      [](real, real y) { return 1.0 - y * y; });
}

NodeP sigmoid(Graph& g, NodeP a) {
  return unary_op(
      g, a, [](real x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](real, real y) { return y * (1.0 - y); });
}

NodeP softplus(Graph& g, NodeP a) {
  return unary_op(
      g, a,
      [](real x) { return x > 30.0 ? x : std::log1p(std::exp(x)); },
      [](real x, real) { return 1.0 / (1.0 + std::exp(-x)); });
}

NodeP exp_op(Graph& g, NodeP a) {
  return unary_op(
      g, a, [](real x) { return std::exp(x); },
      [](real, real y) { return y; });
}

NodeP log_op(Graph& g, NodeP a) {
  return unary_op(
      g, a, [](real x) { return std::log(x); },
      [](real x, real) { return 1.0 / x; });
}

NodeP sin_op(Graph& g, NodeP a) {
  return unary_op(
      g, a, [](real x) { return std::sin(x); },
      [](real x, real) { return std::cos(x); });
}

NodeP cos_op(Graph& g, NodeP a) {
  return unary_op(
      g, a, [](real x) { return std::cos(x); },
      [](real x, real) { return -std::sin(x); });
}

NodeP square(Graph& g, NodeP a) {
  return unary_op(
      g, a, [](real x) { return x * x; },
      [](real x, real) { return 2.0 * x; });
}

NodeP concat_c(Graph& g, const std::vector<NodeP>& xs) {
  GEOGAN_CHECK(!xs.empty(), "concat_c: empty input");
  const Shape& s0 = xs[0]->shape;
  int ctotal = 0;
  bool rg = false;
  for (const auto& x : xs) {
    GEOGAN_CHECK(x->shape.n == s0.n && x->shape.h == s0.h && x->shape.w == s0.w,
                 "concat_c: incompatible shapes");
    ctotal += x->shape.c;
    rg = rg || x->requires_grad;
  }
  auto out = g.make(Shape(s0.n, ctotal, s0.h, s0.w), rg);
  const int64_t hw = s0.hw();
  int coff = 0;
  for (const auto& x : xs) {
    for (int n = 0; n < s0.n; ++n) {
      const real* src = x->val.data() + n * x->shape.chw();
      real* dst = out->val.data() + n * out->shape.chw() + coff * hw;
      std::copy(src, src + x->shape.chw(), dst);
    }
    coff += x->shape.c;
  }
  if (out->requires_grad) {
    out->keep.assign(xs.begin(), xs.end());
    Node* op = out.get();
    std::vector<Node*> parents;
    for (const auto& x : xs) parents.push_back(x.get());
    out->backward = [op, parents, hw] {
      int coff = 0;
      for (Node* x : parents) {
        if (x->requires_grad) {
          for (int n = 0; n < op->shape.n; ++n) {
            const real* src = op->grad.data() + n * op->shape.chw() + coff * hw;
            real* dst = x->grad.data() + n * x->shape.chw();
            const int64_t m = x->shape.chw();
            for (int64_t i = 0; i < m; ++i) dst[i] += src[i];
          }
        }
        coff += x->shape.c;
      }
    };
  }
  return out;
}

NodeP slice_c(Graph& g, NodeP x, int c0, int count) {
  GEOGAN_CHECK(c0 >= 0 && c0 + count <= x->shape.c, "slice_c: out of range");
  auto out = g.make(Shape(x->shape.n, count, x->shape.h, x->shape.w),
                    x->requires_grad);
  const int64_t hw = x->shape.hw();
  for (int n = 0; n < x->shape.n; ++n) {
    const real* src = x->val.data() + n * x->shape.chw() + c0 * hw;
    real* dst = out->val.data() + n * out->shape.chw();
    std::copy(src, src + count * hw, dst);
  }
  if (out->requires_grad) {
    out->keep = {x};
    Node* xp = x.get();
    Node* op = out.get();
    out->backward = [xp, op, c0, hw] {
      for (int n = 0; n < op->shape.n; ++n) {
        const real* src = op->grad.data() + n * op->shape.chw();
        real* dst = xp->grad.data() + n * xp->shape.chw() + c0 * hw;
        const int64_t m = op->shape.chw();
        for (int64_t i = 0; i < m; ++i) dst[i] += src[i];
      }
    };
  }
  return out;
}

NodeP broadcast_hw(Graph& g, NodeP x, int h, int w) {
  GEOGAN_CHECK(x->shape.h == 1 && x->shape.w == 1, "broadcast_hw: expects [N,C]");
  auto out = g.make(Shape(x->shape.n, x->shape.c, h, w), x->requires_grad);
  const int64_t hw = static_cast<int64_t>(h) * w;
  for (int n = 0; n < x->shape.n; ++n)
    for (int c = 0; c < x->shape.c; ++c) {
      const real v = x->val[n * x->shape.c + c];
      real* dst = out->val.data() + (n * x->shape.c + c) * hw;
      std::fill(dst, dst + hw, v);
    }
  if (out->requires_grad) {
    out->keep = {x};
    Node* xp = x.get();
    Node* op = out.get();
    out->backward = [xp, op, hw] {
      for (int64_t i = 0; i < xp->count(); ++i) {
        const real* src = op->grad.data() + i * hw;
        real acc = 0;
        for (int64_t k = 0; k < hw; ++k) acc += src[k];
        xp->grad[i] += acc;
      }
    };
  }
  return out;
}

NodeP flatten(Graph& g, NodeP x) {
  auto out = g.make(Shape(x->shape.n, static_cast<int>(x->shape.chw())),
                    x->requires_grad);
  out->val = x->val;
  if (out->requires_grad) {
    out->keep = {x};
    Node* xp = x.get();
    Node* op = out.get();
    out->backward = [xp, op] {
      for (int64_t i = 0; i < xp->count(); ++i) xp->grad[i] += op->grad[i];
    };
  }
  return out;
}

NodeP sum_all(Graph& g, NodeP x) {
  auto out = g.make(Shape(1, 1), x->requires_grad);
  real acc = 0;
  for (real v : x->val) acc += v;
  out->val[0] = acc;
  if (out->requires_grad) {
    out->keep = {x};
    Node* xp = x.get();
    Node* op = out.get();
    out->backward = [xp, op] {
      const real gv = op->grad[0];
      for (int64_t i = 0; i < xp->count(); ++i) xp->grad[i] += gv;
    };
  }
  return out;
}

NodeP mean_all(Graph& g, NodeP x) {
  return mul_scalar(g, sum_all(g, x), 1.0 / static_cast<real>(x->count()));
}

NodeP softmax_c(Graph& g, NodeP x) {
  auto out = g.make(x->shape, x->requires_grad);
  const int N = x->shape.n, C = x->shape.c;
  const int64_t hw = x->shape.hw();
  for (int n = 0; n < N; ++n) {
    const real* xv = x->val.data() + n * x->shape.chw();
    real* ov = out->val.data() + n * x->shape.chw();
    for (int64_t p = 0; p < hw; ++p) {
      real mx = xv[p];
      for (int c = 1; c < C; ++c) mx = std::max(mx, xv[c * hw + p]);
      real z = 0;
      for (int c = 0; c < C; ++c) {
        const real e = std::exp(xv[c * hw + p] - mx);
        ov[c * hw + p] = e;
        z += e;
      }
      const real inv = 1.0 / z;
      for (int c = 0; c < C; ++c) ov[c * hw + p] *= inv;
    }
  }
  if (out->requires_grad) {
    out->keep = {x};
    Node* xp = x.get();
    Node* op = out.get();
    out->backward = [xp, op] {
      const int N = xp->shape.n, C = xp->shape.c;
      const int64_t hw = xp->shape.hw();
      for (int n = 0; n < N; ++n) {
        const real* p = op->val.data() + n * xp->shape.chw();
        const real* go = op->grad.data() + n * xp->shape.chw();
        real* gx = xp->grad.data() + n * xp->shape.chw();
        for (int64_t q = 0; q < hw; ++q) {
          real dot = 0;
          for (int c = 0; c < C; ++c) dot += p[c * hw + q] * go[c * hw + q];
          for (int c = 0; c < C; ++c)
            gx[c * hw + q] += p[c * hw + q] * (go[c * hw + q] - dot);
        }
      }
    };
  }
  return out;
}

NodeP ce_softmax(Graph& g, NodeP logits, const std::vector<int>& labels,
                 CeReduction reduction) {
  const int N = logits->shape.n, C = logits->shape.c;
  const int64_t hw = logits->shape.hw();
  GEOGAN_CHECK(static_cast<int64_t>(labels.size()) == N * hw,
               "ce_softmax: label count mismatch");
  auto out = g.make(Shape(1, 1), logits->requires_grad);

  // Per-position probabilities are kept for the backward pass.
  auto probs = std::make_shared<std::vector<real>>(logits->val.size());
  real total = 0;
  for (int n = 0; n < N; ++n) {
    const real* xv = logits->val.data() + n * logits->shape.chw();
    real* pv = probs->data() + n * logits->shape.chw();
    for (int64_t q = 0; q < hw; ++q) {
      real mx = xv[q];
      for (int c = 1; c < C; ++c) mx = std::max(mx, xv[c * hw + q]);
      real z = 0;
      for (int c = 0; c < C; ++c) {
        const real e = std::exp(xv[c * hw + q] - mx);
        pv[c * hw + q] = e;
        z += e;
      }
      const real inv = 1.0 / z;
      for (int c = 0; c < C; ++c) pv[c * hw + q] *= inv;
      const int lab = labels[n * hw + q];
      total -= std::log(std::max(pv[lab * hw + q], 1e-300));
    }
  }
  const real scale = reduction == CeReduction::MeanPixels
                         ? 1.0 / static_cast<real>(N * hw)
                         : 1.0 / static_cast<real>(N);
  out->val[0] = total * scale;
  if (out->requires_grad) {
    out->keep = {logits};
    Node* xp = logits.get();
    Node* op = out.get();
    auto labs = std::make_shared<std::vector<int>>(labels);
    out->backward = [xp, op, probs, labs, scale] {
      const int N = xp->shape.n, C = xp->shape.c;
      const int64_t hw = xp->shape.hw();
      const real gv = op->grad[0] * scale;
      for (int n = 0; n < N; ++n) {
        const real* pv = probs->data() + n * xp->shape.chw();
        real* gx = xp->grad.data() + n * xp->shape.chw();
        for (int64_t q = 0; q < hw; ++q) {
          const int lab = (*labs)[n * hw + q];
          for (int c = 0; c < C; ++c) {
            const real delta = (c == lab) ? 1.0 : 0.0;
            gx[c * hw + q] += gv * (pv[c * hw + q] - delta);
          }
        }
      }
    };
  }
  return out;
}

NodeP ce_rows(Graph& g, NodeP logits, const std::vector<int>& labels) {
  GEOGAN_CHECK(logits->shape.h == 1 && logits->shape.w == 1,
               "ce_rows: expects [N,K]");
  GEOGAN_CHECK(static_cast<int>(labels.size()) == logits->shape.n,
               "ce_rows: label count mismatch");
  return ce_softmax(g, logits, labels, CeReduction::MeanPixels);
}

NodeP ce_rows_weighted(Graph& g, NodeP logits, const std::vector<int>& labels,
                       const std::vector<real>& weights) {
  GEOGAN_CHECK(logits->shape.h == 1 && logits->shape.w == 1,
               "ce_rows_weighted: expects [N,K]");
  const int N = logits->shape.n, K = logits->shape.c;
  GEOGAN_CHECK(static_cast<int>(labels.size()) == N &&
                   static_cast<int>(weights.size()) == N,
               "ce_rows_weighted: labels/weights size mismatch");
  auto out = g.make(Shape(1, 1), logits->requires_grad);
  auto probs = std::make_shared<std::vector<real>>(logits->val.size());
  real total = 0;
  for (int n = 0; n < N; ++n) {
    const real* xv = logits->val.data() + n * K;
    real* pv = probs->data() + n * K;
    real mx = xv[0];
    for (int k = 1; k < K; ++k) mx = std::max(mx, xv[k]);
    real z = 0;
    for (int k = 0; k < K; ++k) {
      pv[k] = std::exp(xv[k] - mx);
      z += pv[k];
    }
    for (int k = 0; k < K; ++k) pv[k] /= z;
    total -= weights[n] * std::log(std::max(pv[labels[n]], 1e-300));
  }
  out->val[0] = total;
  if (out->requires_grad) {
    out->keep = {logits};
    Node* xp = logits.get();
    Node* op = out.get();
    auto labs = std::make_shared<std::vector<int>>(labels);
    auto wts = std::make_shared<std::vector<real>>(weights);
    out->backward = [xp, op, probs, labs, wts, N, K] {
      const real gv = op->grad[0];
      for (int n = 0; n < N; ++n) {
        const real w = (*wts)[n];
        const int lab = (*labs)[n];
        const real* pv = probs->data() + n * K;
        real* gx = xp->grad.data() + n * K;
        for (int k = 0; k < K; ++k)
          gx[k] += gv * w * (pv[k] - (k == lab ? 1.0 : 0.0));
      }
    };
  }
  return out;
}

NodeP gather_channel_pairs(Graph& g, NodeP x,
                           const std::vector<std::array<int, 3>>& picks) {
  const int P = static_cast<int>(picks.size());
  GEOGAN_CHECK(P > 0, "gather_channel_pairs: empty pick list");
  const int64_t hw = x->shape.hw();
  auto out = g.make(Shape(P, 2, x->shape.h, x->shape.w), x->requires_grad);
  for (int p = 0; p < P; ++p) {
    const auto& [n, ca, cb] = picks[p];
    GEOGAN_CHECK(n < x->shape.n && ca < x->shape.c && cb < x->shape.c,
                 "gather_channel_pairs: pick out of range");
    const real* a = x->val.data() + n * x->shape.chw() + ca * hw;
    const real* b = x->val.data() + n * x->shape.chw() + cb * hw;
    real* dst = out->val.data() + p * 2 * hw;
    std::copy(a, a + hw, dst);
    std::copy(b, b + hw, dst + hw);
  }
  if (out->requires_grad) {
    out->keep = {x};
    Node* xp = x.get();
    Node* op = out.get();
    auto pk = std::make_shared<std::vector<std::array<int, 3>>>(picks);
    out->backward = [xp, op, pk, hw] {
      for (size_t p = 0; p < pk->size(); ++p) {
        const auto& [n, ca, cb] = (*pk)[p];
        real* ga = xp->grad.data() + n * xp->shape.chw() + ca * hw;
        real* gb = xp->grad.data() + n * xp->shape.chw() + cb * hw;
        const real* src = op->grad.data() + p * 2 * hw;
        for (int64_t i = 0; i < hw; ++i) ga[i] += src[i];
        for (int64_t i = 0; i < hw; ++i) gb[i] += src[hw + i];
      }
    };
  }
  return out;
}

NodeP bce_logits_const(Graph& g, NodeP logits, real target) {
  auto out = g.make(Shape(1, 1), logits->requires_grad);
  const int64_t n = logits->count();
  real total = 0;
  for (int64_t i = 0; i < n; ++i) {
    const real x = logits->val[i];
    // max(x,0) - x*t + log(1+exp(-|x|))
    total += std::max(x, 0.0) - x * target + std::log1p(std::exp(-std::abs(x)));
  }
  out->val[0] = total / static_cast<real>(n);
  if (out->requires_grad) {
    out->keep = {logits};
    Node* xp = logits.get();
    Node* op = out.get();
    out->backward = [xp, op, target, n] {
      const real gv = op->grad[0] / static_cast<real>(n);
      for (int64_t i = 0; i < n; ++i) {
        const real s = 1.0 / (1.0 + std::exp(-xp->val[i]));
        xp->grad[i] += gv * (s - target);
      }
    };
  }
  return out;
}

}  // namespace geogan
