#ifndef GEOGAN_TESTS_ORACLES_HPP
#define GEOGAN_TESTS_ORACLES_HPP

// Independent reference implementations used as oracles by the unit and
// acceptance suites. Everything here is deliberately brute force and kept
// separate from the library code paths it checks.

#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "geogan/graph.hpp"

namespace geogan::oracle {

// Dice by explicit set counting.
inline real dice_brute(const std::vector<uint8_t>& a,
                       const std::vector<uint8_t>& b, uint8_t label) {
  long na = 0, nb = 0, ni = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const bool ia = a[i] == label, ib = b[i] == label;
    na += ia;
    nb += ib;
    ni += ia && ib;
  }
  if (na == 0 && nb == 0) return 1.0;
  if (na == 0 || nb == 0) return 0.0;
  return 2.0 * ni / static_cast<real>(na + nb);
}

// Exhaustive double loop over boundary pixel pairs. Boundary definition must
// match the implementation contract: set pixels with an 8-neighbor outside
// the set, frame border counting as outside.
inline std::vector<std::pair<int, int>> boundary_brute(
    const std::vector<uint8_t>& m, int h, int w, uint8_t label) {
  std::vector<std::pair<int, int>> out;
  auto in_set = [&](int y, int x) {
    return y >= 0 && y < h && x >= 0 && x < w && m[y * w + x] == label;
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!in_set(y, x)) continue;
      bool edge = false;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          if ((dy || dx) && !in_set(y + dy, x + dx)) edge = true;
      if (edge) out.emplace_back(y, x);
    }
  return out;
}

inline std::optional<real> hausdorff_brute(const std::vector<uint8_t>& a,
                                           const std::vector<uint8_t>& b, int h,
                                           int w, uint8_t label, real sy = 1.0,
                                           real sx = 1.0) {
  const auto ba = boundary_brute(a, h, w, label);
  const auto bb = boundary_brute(b, h, w, label);
  if (ba.empty() || bb.empty()) return std::nullopt;
  auto directed = [&](const auto& from, const auto& to) {
    real worst = 0;
    for (const auto& p : from) {
      real best = 1e300;
      for (const auto& q : to) {
        const real dy = sy * (p.first - q.first);
        const real dx = sx * (p.second - q.second);
        best = std::min(best, dy * dy + dx * dx);
      }
      worst = std::max(worst, best);
    }
    return std::sqrt(worst);
  };
  return std::max(directed(ba, bb), directed(bb, ba));
}

// KL(N(mq,sq) || N(mp,sp)) by Simpson integration of q(z) log(q(z)/p(z)).
inline real kl_normal_numeric(real mq, real sq, real mp, real sp) {
  const real lo = mq - 12 * sq, hi = mq + 12 * sq;
  const int n = 20000;  // even
  const real dz = (hi - lo) / n;
  auto f = [&](real z) {
    const real lq = -0.5 * std::pow((z - mq) / sq, 2) - std::log(sq);
    const real lp = -0.5 * std::pow((z - mp) / sp, 2) - std::log(sp);
    const real q = std::exp(lq) / std::sqrt(2 * 3.14159265358979323846);
    return q * (lq - lp);
  };
  real acc = f(lo) + f(hi);
  for (int i = 1; i < n; ++i) acc += f(lo + i * dz) * (i % 2 ? 4.0 : 2.0);
  return acc * dz / 3.0;
}

// One-sided exact-distribution-free KS test of uniformity on [lo, hi];
// returns the asymptotic p-value.
inline real ks_uniform_pvalue(std::vector<real> xs, real lo, real hi) {
  std::sort(xs.begin(), xs.end());
  const real n = static_cast<real>(xs.size());
  real d = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    const real cdf = (xs[i] - lo) / (hi - lo);
    d = std::max(d, std::abs(cdf - (i + 1) / n));
    d = std::max(d, std::abs(cdf - i / n));
  }
  const real lambda = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d;
  real p = 0;
  for (int k = 1; k <= 100; ++k)
    p += 2 * std::pow(-1.0, k - 1) * std::exp(-2.0 * k * k * lambda * lambda);
  return std::clamp(p, 0.0, 1.0);
}

// Central finite-difference gradient check. `loss` must be a pure function
// of the parameter values (all noise pre-drawn and fixed). For each checked
// index the step shrinks on failure: bilinear warps have isolated kink
// crossings and the one-sided derivative is recovered as h -> 0.
struct GradCheckResult {
  int checked = 0;
  int failed = 0;
  real worst_rel = 0;
};

inline GradCheckResult grad_check(
    const std::function<real()>& loss_value,
    const std::function<void()>& compute_grads, std::vector<NodeP> params,
    int n_checks, uint64_t seed, real tol = 1e-3, real atol = 1e-7) {
  compute_grads();
  std::vector<std::vector<real>> analytic;
  for (const auto& p : params) analytic.push_back(p->grad);

  Rng rng(mix_seed(seed, tag("gradcheck")));
  GradCheckResult res;
  for (int c = 0; c < n_checks; ++c) {
    const size_t pi = rng.next_u64() % params.size();
    Node* p = params[pi].get();
    const size_t ei = rng.next_u64() % p->val.size();
    const real w0 = p->val[ei];
    const real a = analytic[pi][ei];
    bool ok = false;
    real rel = 0;
    for (const real h : {1e-5, 2.5e-6, 6e-7}) {
      const real hh = h * std::max(1.0, std::abs(w0));
      p->val[ei] = w0 + hh;
      const real lp = loss_value();
      p->val[ei] = w0 - hh;
      const real lm = loss_value();
      p->val[ei] = w0;
      const real fd = (lp - lm) / (2 * hh);
      // Below atol both sides are at the finite-difference noise floor.
      if (std::abs(a - fd) < atol) {
        ok = true;
        rel = 0;
        break;
      }
      rel = std::abs(a - fd) / std::max(std::abs(a), std::abs(fd));
      if (rel < tol) {
        ok = true;
        break;
      }
    }
    ++res.checked;
    if (!ok) ++res.failed;
    res.worst_rel = std::max(res.worst_rel, rel);
  }
  return res;
}

}  // namespace geogan::oracle

#endif  // GEOGAN_TESTS_ORACLES_HPP
