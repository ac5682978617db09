#ifndef GEOGAN_CORE_HPP
#define GEOGAN_CORE_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace geogan {

using real = double;

// ---------------------------------------------------------------------------
// Deterministic RNG. xoshiro256++ seeded through splitmix64, normals via
// Box-Muller without caching so the state is exactly four u64 words and can
// be serialized into checkpoints.
// ---------------------------------------------------------------------------

inline uint64_t splitmix64(uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Derives a child stream seed from a parent seed and tags. Used everywhere a
// documented seed->stream scheme is required (per-sample seeds, loss noise,
// data shuffling) so parallel work stays reproducible.
inline uint64_t mix_seed(uint64_t seed, uint64_t tag0, uint64_t tag1 = 0,
                         uint64_t tag2 = 0) {
  uint64_t x = seed;
  uint64_t h = splitmix64(x);
  x ^= tag0 + 0x632be59bd9b4e019ULL;
  h ^= splitmix64(x);
  x ^= tag1 + 0x9e6c63d0876a68e5ULL;
  h ^= splitmix64(x);
  x ^= tag2 + 0xc2b2ae3d27d4eb4fULL;
  h ^= splitmix64(x);
  return h;
}

// FNV-1a over a string, for turning stream names into tags.
inline uint64_t tag(const char* s) {
  uint64_t h = 1469598103934665603ULL;
  for (; *s; ++s) h = (h ^ static_cast<uint64_t>(*s)) * 1099511628211ULL;
  return h;
}

class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t x = seed;
    for (auto& w : s_) w = splitmix64(x);
    // Warm-up: the first outputs right after seeding from low-entropy seeds
    // carry a measurable uniformity bias.
    for (int i = 0; i < 8; ++i) next_u64();
  }

  uint64_t next_u64() {
    auto rotl = [](uint64_t v, int k) { return (v << k) | (v >> (64 - k)); };
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0,1).
  real uniform() { return static_cast<real>(next_u64() >> 11) * 0x1.0p-53; }

  real uniform(real lo, real hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive range.
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(next_u64() % static_cast<uint64_t>(hi - lo + 1));
  }

  // Box-Muller; draws a fresh pair each call (second value discarded) so the
  // serializable state stays minimal.
  real normal() {
    real u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const real u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = next_u64() % i;
      std::swap(v[i - 1], v[j]);
    }
  }

  std::array<uint64_t, 4> state() const { return s_; }
  void set_state(const std::array<uint64_t, 4>& s) { s_ = s; }

 private:
  std::array<uint64_t, 4> s_{};
};

// ---------------------------------------------------------------------------
// Tensor shape, NCHW. Vectors use (n, c, 1, 1) and scalars (1,1,1,1).
// ---------------------------------------------------------------------------

struct Shape {
  int n = 1, c = 1, h = 1, w = 1;

  Shape() = default;
  Shape(int n_, int c_, int h_ = 1, int w_ = 1) : n(n_), c(c_), h(h_), w(w_) {}

  int64_t count() const {
    return static_cast<int64_t>(n) * c * h * w;
  }
  int64_t chw() const { return static_cast<int64_t>(c) * h * w; }
  int64_t hw() const { return static_cast<int64_t>(h) * w; }

  bool operator==(const Shape& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    return "[" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + "]";
  }
};

// ---------------------------------------------------------------------------
// Small persistent thread pool used for block-parallel GEMM/im2col work.
// Work is always split into a fixed number of blocks independent of the
// worker count, and every output element is written by exactly one block, so
// results are bitwise identical no matter how many threads execute.
// ---------------------------------------------------------------------------

class ThreadPool {
 public:
  static ThreadPool& instance();

  // Runs fn(block) for block in [0, nblocks); blocks may run concurrently.
  void run_blocks(int nblocks, const std::function<void(int)>& fn);

  int workers() const { return static_cast<int>(threads_.size()); }

  ~ThreadPool();

 private:
  explicit ThreadPool(int nworkers);

  void worker_loop();

  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable cv_work_, cv_done_;
  const std::function<void(int)>* job_ = nullptr;
  int next_block_ = 0;
  int total_blocks_ = 0;
  int in_flight_ = 0;
  bool stop_ = false;
};

// Convenience wrapper: serial when the pool has no workers or one block.
void parallel_blocks(int nblocks, const std::function<void(int)>& fn);

// Splits [0, n) into nblocks contiguous ranges; returns {begin, end} of b-th.
inline std::pair<int64_t, int64_t> block_range(int64_t n, int nblocks, int b) {
  const int64_t per = (n + nblocks - 1) / nblocks;
  const int64_t lo = std::min<int64_t>(n, per * b);
  const int64_t hi = std::min<int64_t>(n, per * (b + 1));
  return {lo, hi};
}

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define GEOGAN_CHECK(cond, msg)                          \
  do {                                                   \
    if (!(cond)) throw ::geogan::Error(std::string(msg)); \
  } while (0)

}  // namespace geogan

#endif  // GEOGAN_CORE_HPP
