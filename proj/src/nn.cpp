#include "geogan/nn.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>

namespace geogan {

NodeP ParamStore::add(const std::string& name, const Shape& s, bool trainable) {
  for (const auto& e : entries_)
    GEOGAN_CHECK(e.name != name, "ParamStore: duplicate name " + name);
  Entry e;
  e.name = name;
  e.p = make_leaf(s, trainable);
  e.trainable = trainable;
  entries_.push_back(e);
  return entries_.back().p;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_)
    if (e.trainable) std::fill(e.p->grad.begin(), e.p->grad.end(), 0.0);
}

void ParamStore::set_requires_grad(bool on) {
  for (auto& e : entries_)
    if (e.trainable) {
      e.p->requires_grad = on;
      if (on && e.p->grad.empty()) e.p->grad.assign(e.p->count(), 0.0);
    }
}

std::vector<NodeP> ParamStore::trainable() const {
  std::vector<NodeP> out;
  for (const auto& e : entries_)
    if (e.trainable) out.push_back(e.p);
  return out;
}

ParamStore::Entry* ParamStore::find(const std::string& name) {
  for (auto& e : entries_)
    if (e.name == name) return &e;
  return nullptr;
}

int64_t ParamStore::parameter_count() const {
  int64_t n = 0;
  for (const auto& e : entries_)
    if (e.trainable) n += e.p->count();
  return n;
}

std::vector<real> ParamStore::snapshot() const {
  std::vector<real> out;
  for (const auto& e : entries_)
    out.insert(out.end(), e.p->val.begin(), e.p->val.end());
  return out;
}

void init_he_normal(const NodeP& w, int fan_in, Rng& rng) {
  const real std = std::sqrt(2.0 / static_cast<real>(fan_in));
  for (auto& v : w->val) v = std * rng.normal();
}

Conv::Conv(ParamStore& ps, const std::string& name, int ci, int co, int k,
           int stride_, int pad_, Rng& rng)
    : stride(stride_), pad(pad_) {
  w = ps.add(name + ".w", Shape(co, ci, k, k));
  b = ps.add(name + ".b", Shape(co, 1));
  init_he_normal(w, ci * k * k, rng);
}

Dense::Dense(ParamStore& ps, const std::string& name, int in, int out,
             Rng& rng, bool zero_init) {
  w = ps.add(name + ".w", Shape(in, out));
  b = ps.add(name + ".b", Shape(out, 1));
  if (!zero_init) init_he_normal(w, in, rng);
}

BatchNorm::BatchNorm(ParamStore& ps, const std::string& name, int channels) {
  gamma = ps.add(name + ".gamma", Shape(channels, 1));
  beta = ps.add(name + ".beta", Shape(channels, 1));
  running_mean = ps.add(name + ".running_mean", Shape(channels, 1), false);
  running_var = ps.add(name + ".running_var", Shape(channels, 1), false);
  std::fill(gamma->val.begin(), gamma->val.end(), 1.0);
  std::fill(running_var->val.begin(), running_var->val.end(), 1.0);
}

NodeP BatchNorm::operator()(Graph& g, NodeP x, bool training) const {
  return batchnorm(g, x, gamma, beta, running_mean->val, running_var->val,
                   training);
}

Adam::Adam(std::vector<NodeP> params, real lr_, real beta1, real beta2,
           real eps)
    : lr(lr_), ps_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : ps_) {
    m_.emplace_back(p->count(), 0.0);
    v_.emplace_back(p->count(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const real bc1 = 1.0 - std::pow(beta1_, static_cast<real>(t_));
  const real bc2 = 1.0 - std::pow(beta2_, static_cast<real>(t_));
  for (size_t k = 0; k < ps_.size(); ++k) {
    Node* p = ps_[k].get();
    real* m = m_[k].data();
    real* v = v_[k].data();
    const int64_t n = p->count();
    for (int64_t i = 0; i < n; ++i) {
      const real gr = p->grad[i];
      m[i] = beta1_ * m[i] + (1 - beta1_) * gr;
      v[i] = beta2_ * v[i] + (1 - beta2_) * gr * gr;
      p->val[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
    }
  }
}

void Adam::zero_grad() {
  for (const auto& p : ps_) std::fill(p->grad.begin(), p->grad.end(), 0.0);
}

// --- checkpoint io ----------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'G', 'G', 'C', 'P'};
constexpr uint32_t kFormatVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  GEOGAN_CHECK(static_cast<bool>(is), "checkpoint: truncated file");
  return v;
}

void write_str(std::ostream& os, const std::string& s) {
  write_pod<uint32_t>(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_str(std::istream& is) {
  const auto n = read_pod<uint32_t>(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  GEOGAN_CHECK(static_cast<bool>(is), "checkpoint: truncated string");
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::string& meta_json,
                     const std::vector<NamedStore>& stores) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  GEOGAN_CHECK(os.good(), "checkpoint: cannot open " + path + " for writing");
  os.write(kMagic, 4);
  write_pod<uint32_t>(os, kFormatVersion);
  write_str(os, meta_json);
  uint64_t n_tensors = 0;
  for (const auto& s : stores) n_tensors += s.store->entries().size();
  write_pod<uint64_t>(os, n_tensors);
  for (const auto& s : stores) {
    for (const auto& e : s.store->entries()) {
      write_str(os, s.name + "/" + e.name);
      write_pod<int32_t>(os, e.p->shape.n);
      write_pod<int32_t>(os, e.p->shape.c);
      write_pod<int32_t>(os, e.p->shape.h);
      write_pod<int32_t>(os, e.p->shape.w);
      os.write(reinterpret_cast<const char*>(e.p->val.data()),
               static_cast<std::streamsize>(e.p->val.size() * sizeof(real)));
    }
  }
  GEOGAN_CHECK(os.good(), "checkpoint: write failure on " + path);
}

std::string load_checkpoint(const std::string& path,
                            const std::vector<NamedStore>& stores) {
  std::ifstream is(path, std::ios::binary);
  GEOGAN_CHECK(is.good(), "checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  GEOGAN_CHECK(is.good() && std::memcmp(magic, kMagic, 4) == 0,
               "checkpoint: bad magic in " + path);
  const auto version = read_pod<uint32_t>(is);
  GEOGAN_CHECK(version == kFormatVersion,
               "checkpoint: unsupported format version " + std::to_string(version));
  const std::string meta = read_str(is);
  const auto n_tensors = read_pod<uint64_t>(is);
  for (uint64_t i = 0; i < n_tensors; ++i) {
    const std::string full = read_str(is);
    Shape sh;
    sh.n = read_pod<int32_t>(is);
    sh.c = read_pod<int32_t>(is);
    sh.h = read_pod<int32_t>(is);
    sh.w = read_pod<int32_t>(is);
    const auto slash = full.find('/');
    GEOGAN_CHECK(slash != std::string::npos, "checkpoint: malformed name " + full);
    const std::string store_name = full.substr(0, slash);
    const std::string entry_name = full.substr(slash + 1);
    ParamStore::Entry* entry = nullptr;
    for (const auto& s : stores) {
      if (s.name == store_name) {
        entry = s.store->find(entry_name);
        break;
      }
    }
    GEOGAN_CHECK(entry != nullptr, "checkpoint: unknown tensor " + full);
    GEOGAN_CHECK(entry->p->shape == sh,
                 "checkpoint: shape mismatch for " + full + ": file " + sh.str() +
                     " vs model " + entry->p->shape.str());
    is.read(reinterpret_cast<char*>(entry->p->val.data()),
            static_cast<std::streamsize>(entry->p->val.size() * sizeof(real)));
    GEOGAN_CHECK(static_cast<bool>(is), "checkpoint: truncated tensor " + full);
  }
  return meta;
}

bool file_exists(const std::string& path) {
  std::error_code ec;
  return std::filesystem::exists(path, ec);
}

}  // namespace geogan
