#ifndef GEOGAN_GRAPH_HPP
#define GEOGAN_GRAPH_HPP

#include <array>
#include <memory>
#include <vector>

#include "geogan/core.hpp"

namespace geogan {

// Reverse-mode autodiff over NCHW double tensors. A Graph is a tape of nodes
// in creation order; backward() replays it in reverse. Parameters are leaf
// nodes owned outside any graph (see nn.hpp); their gradients accumulate
// across the closures that touch them.

struct Node {
  Shape shape;
  std::vector<real> val;
  std::vector<real> grad;  // allocated only when requires_grad
  bool requires_grad = false;
  std::function<void()> backward;
  std::vector<std::shared_ptr<Node>> keep;  // parents kept alive

  int64_t count() const { return shape.count(); }
};

using NodeP = std::shared_ptr<Node>;

// Creates a free-standing leaf (not attached to a graph). Used for weights.
NodeP make_leaf(const Shape& s, bool requires_grad);

class Graph {
 public:
  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  NodeP make(const Shape& s, bool requires_grad);
  NodeP constant(const Shape& s, const std::vector<real>& vals);
  NodeP constant(const Shape& s, const real* vals);
  NodeP zeros(const Shape& s);

  bool grad_enabled() const { return grad_enabled_; }

  // root must be scalar; seeds d(root)/d(root)=1 and replays the tape.
  void backward(const NodeP& root);

  size_t size() const { return tape_.size(); }

 private:
  std::vector<NodeP> tape_;
  bool grad_enabled_ = true;
};

// --- elementwise -----------------------------------------------------------
NodeP add(Graph& g, NodeP a, NodeP b);
NodeP sub(Graph& g, NodeP a, NodeP b);
NodeP mul(Graph& g, NodeP a, NodeP b);
NodeP div_ew(Graph& g, NodeP a, NodeP b);
NodeP add_scalar(Graph& g, NodeP a, real s);
NodeP mul_scalar(Graph& g, NodeP a, real s);
NodeP silu(Graph& g, NodeP a);
NodeP relu(Graph& g, NodeP a);
NodeP tanh_op(Graph& g, NodeP a);
NodeP sigmoid(Graph& g, NodeP a);
NodeP softplus(Graph& g, NodeP a);
NodeP exp_op(Graph& g, NodeP a);
NodeP log_op(Graph& g, NodeP a);
NodeP sin_op(Graph& g, NodeP a);
NodeP cos_op(Graph& g, NodeP a);
NodeP square(Graph& g, NodeP a);

// --- structure -------------------------------------------------------------
NodeP concat_c(Graph& g, const std::vector<NodeP>& xs);
NodeP slice_c(Graph& g, NodeP x, int c0, int count);
NodeP broadcast_hw(Graph& g, NodeP x, int h, int w);  // [N,C] -> [N,C,h,w]
NodeP flatten(Graph& g, NodeP x);                     // [N, C*H*W]

// --- reductions & losses ---------------------------------------------------
NodeP sum_all(Graph& g, NodeP x);
NodeP mean_all(Graph& g, NodeP x);
NodeP softmax_c(Graph& g, NodeP x);

enum class CeReduction { MeanPixels, SumPixelsMeanBatch };

// Per-pixel cross entropy of channelwise softmax(logits) against integer
// labels laid out [N,H,W].
NodeP ce_softmax(Graph& g, NodeP logits, const std::vector<int>& labels,
                 CeReduction reduction);

// Row-wise cross entropy for [N,K] logits, mean over rows.
NodeP ce_rows(Graph& g, NodeP logits, const std::vector<int>& labels);

// Mean over elements of the stable binary cross entropy between
// sigmoid(logit) and a constant target in {0,1}.
NodeP bce_logits_const(Graph& g, NodeP logits, real target);

// Weighted row-wise cross entropy: sum_r w_r * (-log softmax(logits_r)[lab_r]).
NodeP ce_rows_weighted(Graph& g, NodeP logits, const std::vector<int>& labels,
                       const std::vector<real>& weights);

// Gathers (sample, channel_a, channel_b) picks from x [N,C,H,W] into a new
// batch [P,2,H,W]; gradients scatter back additively.
NodeP gather_channel_pairs(Graph& g, NodeP x,
                           const std::vector<std::array<int, 3>>& picks);

// --- dense / conv / spatial -------------------------------------------------
NodeP dense(Graph& g, NodeP x, NodeP w, NodeP b);  // [N,F]x[F,O]+[O]
NodeP conv2d(Graph& g, NodeP x, NodeP w, NodeP b, int stride, int pad);
NodeP upsample2(Graph& g, NodeP x);  // nearest-neighbor x2

// Bilinear resampling of `input` on the grid produced by per-sample affine
// parameters theta[N,6] = [a,b,tx,c,d,ty]. The matrix maps *output* pixel
// coordinates, normalized to [-1,1] with align-corners semantics, to source
// coordinates: sx = a*xn + b*yn + tx, sy = c*xn + d*yn + ty. Samples outside
// the source are zero. Differentiable in both input and theta.
NodeP grid_sample_affine(Graph& g, NodeP input, NodeP theta);

// Batch normalization over (N,H,W) per channel. Running statistics live in
// the caller; updated only when training=true.
NodeP batchnorm(Graph& g, NodeP x, NodeP gamma, NodeP beta,
                std::vector<real>& running_mean, std::vector<real>& running_var,
                bool training, real momentum = 0.1, real eps = 1e-5);

}  // namespace geogan

#endif  // GEOGAN_GRAPH_HPP
