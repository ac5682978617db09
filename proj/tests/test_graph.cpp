#include "doctest.h"
#include "geogan/nn.hpp"
#include "oracles.hpp"

using namespace geogan;

namespace {

// FD check of a scalar graph built by `build` against its own backward pass.
void check_op_gradients(const std::function<NodeP(Graph&, const std::vector<NodeP>&)>& build,
                        const std::vector<Shape>& param_shapes, uint64_t seed,
                        int n_checks = 30, real tol = 1e-6) {
  Rng rng(seed);
  std::vector<NodeP> params;
  for (const Shape& s : param_shapes) {
    auto p = make_leaf(s, true);
    for (auto& v : p->val) v = rng.normal();
    params.push_back(p);
  }
  auto loss_value = [&]() {
    Graph g(false);
    return build(g, params)->val[0];
  };
  auto compute = [&]() {
    for (auto& p : params) std::fill(p->grad.begin(), p->grad.end(), 0.0);
    Graph g;
    NodeP loss = build(g, params);
    g.backward(loss);
  };
  auto res = oracle::grad_check(loss_value, compute, params, n_checks, seed, tol);
  CHECK_MESSAGE(res.failed == 0, "worst rel err ", res.worst_rel);
}

}  // namespace

TEST_CASE("elementwise and reduction gradients") {
  check_op_gradients(
      [](Graph& g, const std::vector<NodeP>& p) {
        NodeP a = silu(g, p[0]);
        NodeP b = tanh_op(g, p[1]);
        NodeP c = mul(g, a, b);
        c = add(g, c, sigmoid(g, p[0]));
        c = sub(g, c, mul_scalar(g, softplus(g, p[1]), 0.3));
        c = div_ew(g, c, add_scalar(g, square(g, p[0]), 2.0));
        return mean_all(g, c);
      },
      {Shape(2, 3, 4, 4), Shape(2, 3, 4, 4)}, 101);
}

TEST_CASE("trig and exp/log gradients") {
  check_op_gradients(
      [](Graph& g, const std::vector<NodeP>& p) {
        NodeP a = sin_op(g, p[0]);
        NodeP b = cos_op(g, p[0]);
        NodeP c = exp_op(g, mul_scalar(g, p[0], 0.1));
        NodeP d = log_op(g, add_scalar(g, square(g, p[0]), 1.5));
        return sum_all(g, add(g, add(g, a, b), mul(g, c, d)));
      },
      {Shape(3, 5)}, 102);
}

TEST_CASE("concat/slice/broadcast/flatten/upsample gradients") {
  check_op_gradients(
      [](Graph& g, const std::vector<NodeP>& p) {
        NodeP cat = concat_c(g, {p[0], p[1]});
        NodeP s = slice_c(g, cat, 1, 3);
        NodeP up = upsample2(g, s);
        NodeP cond = broadcast_hw(g, p[2], up->shape.h, up->shape.w);
        NodeP all = concat_c(g, {up, cond});
        return mean_all(g, mul(g, all, all));
      },
      {Shape(2, 2, 3, 3), Shape(2, 2, 3, 3), Shape(2, 4)}, 103);
}

TEST_CASE("conv2d matches finite differences") {
  for (int stride : {1, 2}) {
    check_op_gradients(
        [stride](Graph& g, const std::vector<NodeP>& p) {
          NodeP y = conv2d(g, p[0], p[1], p[2], stride, 1);
          return mean_all(g, square(g, y));
        },
        {Shape(2, 3, 8, 8), Shape(4, 3, 3, 3), Shape(4, 1)}, 200 + stride);
  }
}

TEST_CASE("dense matches finite differences") {
  check_op_gradients(
      [](Graph& g, const std::vector<NodeP>& p) {
        NodeP y = dense(g, flatten(g, p[0]), p[1], p[2]);
        return mean_all(g, silu(g, y));
      },
      {Shape(3, 2, 4, 4), Shape(32, 6), Shape(6, 1)}, 300);
}

TEST_CASE("softmax and cross-entropy gradients") {
  std::vector<int> labels;
  Rng lr(7);
  for (int i = 0; i < 2 * 5 * 5; ++i) labels.push_back(lr.uniform_int(0, 3));
  check_op_gradients(
      [&labels](Graph& g, const std::vector<NodeP>& p) {
        NodeP ce = ce_softmax(g, p[0], labels, CeReduction::SumPixelsMeanBatch);
        NodeP sm = softmax_c(g, p[0]);
        return add(g, ce, sum_all(g, square(g, sm)));
      },
      {Shape(2, 4, 5, 5)}, 400);
}

TEST_CASE("bce and weighted row ce gradients") {
  std::vector<int> labels{1, 0, 3, 2};
  std::vector<real> weights{0.4, 0.1, 0.3, 0.2};
  check_op_gradients(
      [&](Graph& g, const std::vector<NodeP>& p) {
        NodeP b1 = bce_logits_const(g, p[0], 1.0);
        NodeP b0 = bce_logits_const(g, p[0], 0.0);
        NodeP ce = ce_rows_weighted(g, p[1], labels, weights);
        return add(g, add(g, b1, b0), ce);
      },
      {Shape(4, 1), Shape(4, 4)}, 500);
}

TEST_CASE("gather_channel_pairs gradients") {
  std::vector<std::array<int, 3>> picks{{0, 0, 2}, {1, 1, 0}, {0, 2, 1}};
  check_op_gradients(
      [&picks](Graph& g, const std::vector<NodeP>& p) {
        NodeP soft = softmax_c(g, p[0]);
        NodeP maps = gather_channel_pairs(g, soft, picks);
        return mean_all(g, square(g, maps));
      },
      {Shape(2, 3, 4, 4)}, 600);
}

TEST_CASE("grid_sample_affine gradients wrt input and theta") {
  check_op_gradients(
      [](Graph& g, const std::vector<NodeP>& p) {
        // Mild transform around identity keeps sampling off exact lattice
        // points where bilinear weights kink.
        NodeP t = mul_scalar(g, tanh_op(g, p[1]), 0.1);
        NodeP theta = add(g, t, g.constant(Shape(2, 6), {1, 0, 0, 0, 1, 0,
                                                         1, 0, 0, 0, 1, 0}));
        NodeP y = grid_sample_affine(g, p[0], theta);
        return mean_all(g, square(g, y));
      },
      {Shape(2, 2, 6, 6), Shape(2, 6)}, 700, 40, 1e-4);
}

TEST_CASE("batchnorm gradients, train and eval modes") {
  std::vector<real> rmean(3, 0.0), rvar(3, 1.0);
  for (bool training : {true, false}) {
    std::vector<real> rm = rmean, rv = rvar;
    check_op_gradients(
        [&rm, &rv, training](Graph& g, const std::vector<NodeP>& p) {
          // Fresh copies per evaluation keep the loss a pure function.
          std::vector<real> m = rm, v = rv;
          NodeP y = batchnorm(g, p[0], p[1], p[2], m, v, training);
          return mean_all(g, square(g, silu(g, y)));
        },
        {Shape(4, 3, 5, 5), Shape(3, 1), Shape(3, 1)}, 800 + training, 30, 1e-5);
  }
}

TEST_CASE("batchnorm normalizes per channel in training mode") {
  Rng rng(42);
  auto x = make_leaf(Shape(8, 2, 4, 4), false);
  for (auto& v : x->val) v = 3.0 + 2.0 * rng.normal();
  auto gamma = make_leaf(Shape(2, 1), false);
  auto beta = make_leaf(Shape(2, 1), false);
  gamma->val = {1.0, 1.0};
  std::vector<real> rm(2, 0), rv(2, 1);
  Graph g(false);
  NodeP xin = g.constant(x->shape, x->val);
  NodeP y = batchnorm(g, xin, gamma, beta, rm, rv, true);
  for (int c = 0; c < 2; ++c) {
    real mean = 0;
    int cnt = 0;
    for (int n = 0; n < 8; ++n)
      for (int i = 0; i < 16; ++i) {
        mean += y->val[(n * 2 + c) * 16 + i];
        ++cnt;
      }
    mean /= cnt;
    CHECK(std::abs(mean) < 1e-10);
  }
  CHECK(rm[0] != 0.0);  // running stats updated
}

TEST_CASE("conv2d is bitwise deterministic across repeated runs") {
  Rng rng(5);
  auto x = make_leaf(Shape(6, 4, 16, 16), true);
  auto w = make_leaf(Shape(8, 4, 3, 3), true);
  auto b = make_leaf(Shape(8, 1), true);
  for (auto& v : x->val) v = rng.normal();
  for (auto& v : w->val) v = rng.normal();
  std::vector<real> ref_y, ref_gw;
  for (int rep = 0; rep < 3; ++rep) {
    std::fill(x->grad.begin(), x->grad.end(), 0.0);
    std::fill(w->grad.begin(), w->grad.end(), 0.0);
    std::fill(b->grad.begin(), b->grad.end(), 0.0);
    Graph g;
    NodeP y = conv2d(g, x, w, b, 2, 1);
    NodeP loss = sum_all(g, square(g, y));
    g.backward(loss);
    if (rep == 0) {
      ref_y = y->val;
      ref_gw = w->grad;
    } else {
      CHECK(ref_y == y->val);
      CHECK(ref_gw == w->grad);
    }
  }
}
