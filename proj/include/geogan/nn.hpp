#ifndef GEOGAN_NN_HPP
#define GEOGAN_NN_HPP

#include <string>
#include <vector>

#include "geogan/graph.hpp"

namespace geogan {

// Named parameter/buffer registry for one network. Buffers (batch-norm
// running statistics) are serialized with the weights but never optimized.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    NodeP p;
    bool trainable = true;
  };

  NodeP add(const std::string& name, const Shape& s, bool trainable = true);

  void zero_grad();
  void set_requires_grad(bool on);  // trainable entries only
  std::vector<NodeP> trainable() const;
  const std::vector<Entry>& entries() const { return entries_; }
  Entry* find(const std::string& name);

  int64_t parameter_count() const;

  // Flat value snapshot, used by freeze-invariance checks.
  std::vector<real> snapshot() const;

 private:
  std::vector<Entry> entries_;
};

void init_he_normal(const NodeP& w, int fan_in, Rng& rng);

// --- layers ------------------------------------------------------------

struct Conv {
  NodeP w, b;
  int stride = 1, pad = 1;

  Conv() = default;
  Conv(ParamStore& ps, const std::string& name, int ci, int co, int k,
       int stride, int pad, Rng& rng);

  NodeP operator()(Graph& g, NodeP x) const { return conv2d(g, x, w, b, stride, pad); }
};

struct Dense {
  NodeP w, b;

  Dense() = default;
  Dense(ParamStore& ps, const std::string& name, int in, int out, Rng& rng,
        bool zero_init = false);

  NodeP operator()(Graph& g, NodeP x) const { return dense(g, x, w, b); }
};

struct BatchNorm {
  NodeP gamma, beta;
  NodeP running_mean, running_var;  // buffers

  BatchNorm() = default;
  BatchNorm(ParamStore& ps, const std::string& name, int channels);

  NodeP operator()(Graph& g, NodeP x, bool training) const;
};

// --- optimizer ----------------------------------------------------------

class Adam {
 public:
  Adam(std::vector<NodeP> params, real lr, real beta1 = 0.9,
       real beta2 = 0.999, real eps = 1e-8);

  void step();
  void zero_grad();

  real lr;

 private:
  std::vector<NodeP> ps_;
  std::vector<std::vector<real>> m_, v_;
  real beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

// --- checkpoint io --------------------------------------------------------

struct NamedStore {
  std::string name;
  ParamStore* store;
};

// Binary container: magic, format version, JSON metadata, then the tensors
// of every store with store-prefixed names.
void save_checkpoint(const std::string& path, const std::string& meta_json,
                     const std::vector<NamedStore>& stores);

// Returns the metadata JSON text; loads tensors into the given stores by
// name (shape-checked). Throws on magic/version/shape mismatch.
std::string load_checkpoint(const std::string& path,
                            const std::vector<NamedStore>& stores);

bool file_exists(const std::string& path);

}  // namespace geogan

#endif  // GEOGAN_NN_HPP
