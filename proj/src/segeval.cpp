#include "geogan/segeval.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "geogan/graph.hpp"
#include "json.hpp"

namespace geogan {

using nlohmann::json;

real dice(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& truth,
          uint8_t label) {
  GEOGAN_CHECK(pred.size() == truth.size(), "dice: shape mismatch");
  int64_t a = 0, b = 0, inter = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const bool pa = pred[i] == label, pb = truth[i] == label;
    a += pa;
    b += pb;
    inter += pa && pb;
  }
  if (a == 0 && b == 0) return 1.0;
  if (a == 0 || b == 0) return 0.0;
  return 2.0 * static_cast<real>(inter) / static_cast<real>(a + b);
}

std::vector<std::pair<int, int>> boundary_pixels(const std::vector<uint8_t>& mask,
                                                 int h, int w, uint8_t label) {
  std::vector<std::pair<int, int>> out;
  auto in_set = [&](int y, int x) {
    return y >= 0 && y < h && x >= 0 && x < w &&
           mask[static_cast<size_t>(y) * w + x] == label;
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!in_set(y, x)) continue;
      bool edge = false;
      for (int dy = -1; dy <= 1 && !edge; ++dy)
        for (int dx = -1; dx <= 1 && !edge; ++dx) {
          if (dy == 0 && dx == 0) continue;
          if (!in_set(y + dy, x + dx)) edge = true;
        }
      if (edge) out.emplace_back(y, x);
    }
  return out;
}

namespace {

constexpr real kInf = std::numeric_limits<real>::infinity();

// 1D lower envelope of parabolas: d(p) = min_q w*(p-q)^2 + f(q).
void dt_1d(const real* f, int n, real w2, real* d, int* v, real* z) {
  int k = 0;
  v[0] = 0;
  z[0] = -kInf;
  z[1] = kInf;
  for (int q = 1; q < n; ++q) {
    if (f[q] == kInf) continue;
    while (true) {
      if (f[v[k]] == kInf) {
        v[k] = q;
        break;
      }
      const real s = ((f[q] + w2 * q * q) - (f[v[k]] + w2 * v[k] * v[k])) /
                     (2 * w2 * (q - v[k]));
      if (s <= z[k]) {
        --k;
        if (k < 0) {
          k = 0;
          v[0] = q;
          z[0] = -kInf;
          z[1] = kInf;
          break;
        }
        continue;
      }
      ++k;
      v[k] = q;
      z[k] = s;
      z[k + 1] = kInf;
      break;
    }
  }
  int kk = 0;
  for (int p = 0; p < n; ++p) {
    while (z[kk + 1] < p) ++kk;
    d[p] = f[v[kk]] == kInf ? kInf
                            : w2 * (p - v[kk]) * (p - v[kk]) + f[v[kk]];
  }
}

// Exact anisotropic squared Euclidean distance transform to the given points.
std::vector<real> sq_edt(const std::vector<std::pair<int, int>>& points, int h,
                         int w, Spacing sp) {
  std::vector<real> d(static_cast<size_t>(h) * w, kInf);
  for (const auto& [y, x] : points) d[static_cast<size_t>(y) * w + x] = 0.0;
  std::vector<real> row(std::max(h, w)), drow(std::max(h, w)),
      z(std::max(h, w) + 1);
  std::vector<int> v(std::max(h, w));
  // Along x.
  for (int y = 0; y < h; ++y) {
    real* base = d.data() + static_cast<size_t>(y) * w;
    dt_1d(base, w, sp.sx * sp.sx, drow.data(), v.data(), z.data());
    std::copy(drow.begin(), drow.begin() + w, base);
  }
  // Along y.
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) row[y] = d[static_cast<size_t>(y) * w + x];
    dt_1d(row.data(), h, sp.sy * sp.sy, drow.data(), v.data(), z.data());
    for (int y = 0; y < h; ++y) d[static_cast<size_t>(y) * w + x] = drow[y];
  }
  return d;
}

real directed_hd(const std::vector<std::pair<int, int>>& from,
                 const std::vector<real>& sq_dist_to_other, int w) {
  real worst = 0;
  for (const auto& [y, x] : from)
    worst = std::max(worst, sq_dist_to_other[static_cast<size_t>(y) * w + x]);
  return std::sqrt(worst);
}

}  // namespace

std::optional<real> hausdorff(const std::vector<uint8_t>& pred,
                              const std::vector<uint8_t>& truth, int h, int w,
                              uint8_t label, Spacing spacing) {
  GEOGAN_CHECK(pred.size() == truth.size() &&
                   pred.size() == static_cast<size_t>(h) * w,
               "hausdorff: shape mismatch");
  const auto pa = boundary_pixels(pred, h, w, label);
  const auto pb = boundary_pixels(truth, h, w, label);
  if (pa.empty() || pb.empty()) return std::nullopt;
  const auto db = sq_edt(pb, h, w, spacing);
  const auto da = sq_edt(pa, h, w, spacing);
  return std::max(directed_hd(pa, db, w), directed_hd(pb, da, w));
}

// --- SegUNet -----------------------------------------------------------------

SegUNet::SegUNet(const SegConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
  GEOGAN_CHECK(cfg.height % 16 == 0 && cfg.width % 16 == 0,
               "segunet: image sides must be divisible by 16");
  Rng rng(mix_seed(init_seed, tag("seg_init")));
  const int c0 = cfg.base_channels;
  const int ec[5] = {c0, 2 * c0, 3 * c0, 4 * c0, 4 * c0};
  enc_.emplace_back(params_, "enc0", 1, ec[0], 3, 1, 1, rng);
  enc_bn_.emplace_back(params_, "enc0.bn", ec[0]);
  for (int i = 1; i < 5; ++i) {
    enc_.emplace_back(params_, "enc" + std::to_string(i), ec[i - 1], ec[i], 3, 2,
                      1, rng);
    enc_bn_.emplace_back(params_, "enc" + std::to_string(i) + ".bn", ec[i]);
  }
  const int dc[4] = {3 * c0, 2 * c0, c0 + c0 / 2, c0};
  int prev = ec[4];
  for (int i = 0; i < 4; ++i) {
    const int skip = ec[3 - i];
    dec_.emplace_back(params_, "dec" + std::to_string(i), prev + skip, dc[i], 3,
                      1, 1, rng);
    dec_bn_.emplace_back(params_, "dec" + std::to_string(i) + ".bn", dc[i]);
    prev = dc[i];
  }
  head_ = Conv(params_, "head", prev, cfg.n_labels, 1, 1, 0, rng);
}

NodeP SegUNet::logits(Graph& g, NodeP images, bool training) const {
  std::vector<NodeP> skips;
  NodeP h = images;
  for (size_t i = 0; i < enc_.size(); ++i) {
    h = silu(g, enc_bn_[i](g, enc_[i](g, h), training));
    if (i + 1 < enc_.size()) skips.push_back(h);
  }
  for (size_t i = 0; i < dec_.size(); ++i) {
    h = upsample2(g, h);
    h = concat_c(g, {h, skips[skips.size() - 1 - i]});
    h = silu(g, dec_bn_[i](g, dec_[i](g, h), training));
  }
  return head_(g, h);
}

std::vector<uint8_t> SegUNet::predict(const ImageSample& s) const {
  return predict_batch({&s})[0];
}

std::vector<std::vector<uint8_t>> SegUNet::predict_batch(
    const std::vector<const ImageSample*>& xs) const {
  std::vector<std::vector<uint8_t>> out;
  const size_t chunk = 16;
  for (size_t start = 0; start < xs.size(); start += chunk) {
    const size_t end = std::min(xs.size(), start + chunk);
    Graph g(false);
    auto imgs = g.zeros(Shape(static_cast<int>(end - start), 1, cfg_.height,
                              cfg_.width));
    const size_t hw = static_cast<size_t>(cfg_.height) * cfg_.width;
    for (size_t i = start; i < end; ++i)
      std::copy(xs[i]->image.begin(), xs[i]->image.end(),
                imgs->val.begin() + (i - start) * hw);
    NodeP lg = logits(g, imgs, /*training=*/false);
    for (size_t i = start; i < end; ++i) {
      std::vector<real> soft(lg->val.begin() + (i - start) * lg->shape.chw(),
                             lg->val.begin() + (i - start + 1) * lg->shape.chw());
      std::vector<uint8_t> hard(hw, 0);
      for (size_t p = 0; p < hw; ++p) {
        int best = 0;
        for (int c = 1; c < cfg_.n_labels; ++c)
          if (soft[c * hw + p] > soft[best * hw + p]) best = c;
        hard[p] = static_cast<uint8_t>(best);
      }
      out.push_back(std::move(hard));
    }
  }
  return out;
}

void SegUNet::save(const std::string& path, const std::string& meta_extra) const {
  json meta{{"kind", "segmenter"},
            {"format_version", 1},
            {"config",
             {{"n_labels", cfg_.n_labels},
              {"height", cfg_.height},
              {"width", cfg_.width},
              {"base_channels", cfg_.base_channels},
              {"steps", cfg_.steps},
              {"batch", cfg_.batch},
              {"lr", cfg_.lr},
              {"eval_every", cfg_.eval_every}}},
            {"extra", meta_extra}};
  save_checkpoint(path, meta.dump(), {{"seg", const_cast<ParamStore*>(&params_)}});
}

SegUNet SegUNet::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  GEOGAN_CHECK(is.good(), "segmenter: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  uint32_t version = 0;
  is.read(reinterpret_cast<char*>(&version), sizeof(version));
  uint32_t len = 0;
  is.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string meta_text(len, '\0');
  is.read(meta_text.data(), len);
  GEOGAN_CHECK(static_cast<bool>(is), "segmenter: truncated header");
  is.close();
  const json meta = json::parse(meta_text);
  GEOGAN_CHECK(meta.value("kind", "") == "segmenter", "segmenter: wrong kind");
  SegConfig cfg;
  const json& jc = meta["config"];
  cfg.n_labels = jc["n_labels"].get<int>();
  cfg.height = jc["height"].get<int>();
  cfg.width = jc["width"].get<int>();
  cfg.base_channels = jc["base_channels"].get<int>();
  cfg.steps = jc.value("steps", cfg.steps);
  cfg.batch = jc.value("batch", cfg.batch);
  cfg.lr = jc.value("lr", cfg.lr);
  cfg.eval_every = jc.value("eval_every", cfg.eval_every);
  SegUNet net(cfg, 0);
  load_checkpoint(path, {{"seg", &net.params_}});
  return net;
}

// --- training -------------------------------------------------------------------

real mean_foreground_dice(const SegUNet& net,
                          const std::vector<const ImageSample*>& xs) {
  if (xs.empty()) return 0;
  const auto preds = net.predict_batch(xs);
  const int n_labels = net.config().n_labels;
  real acc = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    real s = 0;
    for (int lab = 1; lab < n_labels; ++lab)
      s += dice(preds[i], xs[i]->mask, static_cast<uint8_t>(lab));
    acc += s / (n_labels - 1);
  }
  return acc / static_cast<real>(xs.size());
}

SegTrainReport train_segmenter(SegUNet& net,
                               const std::vector<const ImageSample*>& train_set,
                               const std::vector<const ImageSample*>& val_set,
                               uint64_t seed) {
  GEOGAN_CHECK(!train_set.empty(), "train_segmenter: empty training set");
  const SegConfig& cfg = net.config();
  Adam opt(net.params().trainable(), cfg.lr);
  Rng shuffler(mix_seed(seed, tag("seg_shuffle")));

  std::vector<size_t> order(train_set.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffler.shuffle(order);
  size_t cursor = 0;

  SegTrainReport report;
  std::vector<real> best;
  const size_t hw = static_cast<size_t>(cfg.height) * cfg.width;

  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<const ImageSample*> batch;
    for (int b = 0; b < cfg.batch; ++b) {
      if (cursor >= order.size()) {
        cursor = 0;
        shuffler.shuffle(order);
      }
      batch.push_back(train_set[order[cursor++]]);
    }
    Graph g;
    auto imgs = g.zeros(Shape(cfg.batch, 1, cfg.height, cfg.width));
    std::vector<int> labels;
    labels.reserve(cfg.batch * hw);
    for (int b = 0; b < cfg.batch; ++b) {
      std::copy(batch[b]->image.begin(), batch[b]->image.end(),
                imgs->val.begin() + b * hw);
      for (uint8_t m : batch[b]->mask) labels.push_back(m);
    }
    NodeP lg = net.logits(g, imgs, /*training=*/true);
    NodeP loss = ce_softmax(g, lg, labels, CeReduction::MeanPixels);
    opt.zero_grad();
    g.backward(loss);
    opt.step();
    report.final_train_ce = loss->val[0];

    const bool last = step + 1 == cfg.steps;
    if (!val_set.empty() && (last || (step + 1) % cfg.eval_every == 0)) {
      const real vd = mean_foreground_dice(net, val_set);
      if (vd > report.best_val_dice) {
        report.best_val_dice = vd;
        best = net.params().snapshot();
      }
    }
  }
  if (!best.empty()) {
    size_t off = 0;
    for (auto& e : net.params().entries()) {
      std::copy(best.begin() + off, best.begin() + off + e.p->count(),
                e.p->val.begin());
      off += e.p->count();
    }
  }
  report.steps = cfg.steps;
  return report;
}

// --- evaluation -------------------------------------------------------------------

MetricsReport aggregate_metrics(std::vector<SampleMetrics> rows, int n_labels) {
  MetricsReport r;
  r.rows = std::move(rows);
  r.n_labels = n_labels;
  r.dice_mean_per_label.assign(n_labels, 0);
  r.dice_std_per_label.assign(n_labels, 0);
  if (r.rows.empty()) return r;

  for (int lab = 0; lab < n_labels; ++lab) {
    real mean = 0;
    for (const auto& row : r.rows) mean += row.dice_per_label[lab];
    mean /= r.rows.size();
    real var = 0;
    for (const auto& row : r.rows) {
      const real d = row.dice_per_label[lab] - mean;
      var += d * d;
    }
    r.dice_mean_per_label[lab] = mean;
    r.dice_std_per_label[lab] = std::sqrt(var / r.rows.size());
  }

  std::vector<real> fd, fhd;
  for (const auto& row : r.rows) {
    if (!row.truth_has_fluid) continue;
    fd.push_back(row.fluid_dice);
    if (row.fluid_hd.has_value())
      fhd.push_back(*row.fluid_hd);
    else
      ++r.fluid_hd_missing;
  }
  r.fluid_samples = static_cast<int>(fd.size());
  r.fluid_hd_defined = static_cast<int>(fhd.size());
  auto mean_std = [](const std::vector<real>& v, real& m, real& s) {
    if (v.empty()) {
      m = 0;
      s = 0;
      return;
    }
    m = 0;
    for (real x : v) m += x;
    m /= v.size();
    s = 0;
    for (real x : v) s += (x - m) * (x - m);
    s = std::sqrt(s / v.size());
  };
  mean_std(fd, r.fluid_dice_mean, r.fluid_dice_std);
  mean_std(fhd, r.fluid_hd_mean, r.fluid_hd_std);
  return r;
}

MetricsReport evaluate(const SegUNet& net,
                       const std::vector<const ImageSample*>& test_set,
                       Spacing spacing) {
  const int n_labels = net.config().n_labels;
  const uint8_t fl = static_cast<uint8_t>(n_labels - 1);
  const auto preds = net.predict_batch(test_set);
  std::vector<SampleMetrics> rows;
  for (size_t i = 0; i < test_set.size(); ++i) {
    const ImageSample& s = *test_set[i];
    SampleMetrics m;
    m.sample_id = s.sample_id;
    m.class_label = s.class_label;
    for (int lab = 0; lab < n_labels; ++lab)
      m.dice_per_label.push_back(dice(preds[i], s.mask, static_cast<uint8_t>(lab)));
    m.truth_has_fluid =
        std::find(s.mask.begin(), s.mask.end(), fl) != s.mask.end();
    m.fluid_dice = m.dice_per_label[fl];
    if (m.truth_has_fluid)
      m.fluid_hd = hausdorff(preds[i], s.mask, s.height, s.width, fl, spacing);
    rows.push_back(std::move(m));
  }
  return aggregate_metrics(std::move(rows), n_labels);
}

std::string MetricsReport::to_json() const {
  json rows_j = json::array();
  for (const auto& r : rows) {
    json row{{"sample_id", r.sample_id},
             {"class", class_name(r.class_label)},
             {"dice_per_label", r.dice_per_label},
             {"fluid_dice", r.fluid_dice},
             {"truth_has_fluid", r.truth_has_fluid}};
    if (r.fluid_hd.has_value())
      row["fluid_hd"] = *r.fluid_hd;
    else
      row["fluid_hd"] = nullptr;
    rows_j.push_back(row);
  }
  json j{{"rows", rows_j},
         {"n_labels", n_labels},
         {"dice_mean_per_label", dice_mean_per_label},
         {"dice_std_per_label", dice_std_per_label},
         {"fluid_dice_mean", fluid_dice_mean},
         {"fluid_dice_std", fluid_dice_std},
         {"fluid_samples", fluid_samples},
         {"fluid_hd_mean", fluid_hd_mean},
         {"fluid_hd_std", fluid_hd_std},
         {"fluid_hd_defined", fluid_hd_defined},
         {"fluid_hd_missing", fluid_hd_missing}};
  return j.dump(2);
}

MetricsReport MetricsReport::from_json(const std::string& text) {
  const json j = json::parse(text);
  MetricsReport r;
  r.n_labels = j["n_labels"].get<int>();
  for (const auto& row : j["rows"]) {
    SampleMetrics m;
    m.sample_id = row["sample_id"].get<std::string>();
    m.class_label = class_from_name(row["class"].get<std::string>());
    m.dice_per_label = row["dice_per_label"].get<std::vector<real>>();
    m.fluid_dice = row["fluid_dice"].get<real>();
    m.truth_has_fluid = row["truth_has_fluid"].get<bool>();
    if (!row["fluid_hd"].is_null()) m.fluid_hd = row["fluid_hd"].get<real>();
    r.rows.push_back(std::move(m));
  }
  return aggregate_metrics(std::move(r.rows), r.n_labels);
}

}  // namespace geogan
