#include "geogan/adversary.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

namespace geogan {

using nlohmann::json;

void validate_weights(const LossWeights& w) {
  GEOGAN_CHECK(w.lambda1 >= 0 && w.lambda1 <= 1, "lambda1 must be in [0,1]");
  GEOGAN_CHECK(w.lambda2 >= 0 && w.lambda2 <= 1, "lambda2 must be in [0,1]");
}

LossBundle total_generator_loss(real adv, real cls, real shape, real elbo_value,
                                const std::vector<real>& kl_per_level,
                                const LossWeights& w, bool shape_all_skipped) {
  validate_weights(w);
  GEOGAN_CHECK(cls >= 0, "class loss must be non-negative");
  GEOGAN_CHECK(shape >= 0, "shape loss must be non-negative");
  LossBundle b;
  b.adv = adv;
  b.cls = cls;
  b.shape = shape;
  b.total = adv + w.lambda1 * cls + w.lambda2 * shape;
  b.elbo = elbo_value;
  b.kl_per_level = kl_per_level;
  b.shape_all_skipped = shape_all_skipped;
  return b;
}

// --- Discriminator -----------------------------------------------------------

Discriminator::Discriminator(int n_labels, int height, int width,
                             int base_channels, uint64_t init_seed)
    : n_labels_(n_labels), height_(height), width_(width) {
  Rng rng(mix_seed(init_seed, tag("disc_init")));
  const int c0 = base_channels;
  const int chans[5] = {2 * n_labels, c0, 2 * c0, 2 * c0, 2 * c0};
  for (int i = 0; i < 4; ++i)
    convs_.emplace_back(params_, "conv" + std::to_string(i), chans[i],
                        chans[i + 1], 3, 2, 1, rng);
  const int fh = height / 16, fw = width / 16;
  GEOGAN_CHECK(fh > 0 && fw > 0, "discriminator: input too small");
  fc_ = Dense(params_, "fc", 2 * c0 * fh * fw, 1, rng);
}

NodeP Discriminator::logits(Graph& g, NodeP pair) const {
  GEOGAN_CHECK(pair->shape.c == 2 * n_labels_ && pair->shape.h == height_ &&
                   pair->shape.w == width_,
               "discriminator: pair shape mismatch");
  NodeP h = pair;
  for (const auto& cv : convs_) h = silu(g, cv(g, h));
  return fc_(g, flatten(g, h));
}

// --- ClassNet ----------------------------------------------------------------

ClassNet::ClassNet(int height, int width, int base_channels, uint64_t init_seed) {
  Rng rng(mix_seed(init_seed, tag("clsnet_init")));
  const int c0 = base_channels;
  const int chans[5] = {1, c0, 2 * c0, 2 * c0, 2 * c0};
  for (int i = 0; i < 4; ++i)
    convs_.emplace_back(params_, "conv" + std::to_string(i), chans[i],
                        chans[i + 1], 3, 2, 1, rng);
  const int fh = height / 16, fw = width / 16;
  GEOGAN_CHECK(fh > 0 && fw > 0, "classnet: input too small");
  fc1_ = Dense(params_, "fc1", 2 * c0 * fh * fw, 32, rng);
  fc2_ = Dense(params_, "fc2", 32, 2, rng);
}

NodeP ClassNet::logits(Graph& g, NodeP images) const {
  NodeP h = images;
  for (const auto& cv : convs_) h = silu(g, cv(g, h));
  h = silu(g, fc1_(g, flatten(g, h)));
  return fc2_(g, h);
}

// --- RelationNet --------------------------------------------------------------

RelationNet::RelationNet(int n_labels, int height, int width, uint64_t init_seed)
    : n_labels_(n_labels), height_(height), width_(width) {
  Rng rng(mix_seed(init_seed, tag("relation_init")));
  const int chans[5] = {2, 8, 16, 16, 16};
  for (int i = 0; i < 4; ++i)
    convs_.emplace_back(params_, "conv" + std::to_string(i), chans[i],
                        chans[i + 1], 3, 2, 1, rng);
  const int fh = height / 16, fw = width / 16;
  GEOGAN_CHECK(fh > 0 && fw > 0, "relation net: input too small");
  fc1_ = Dense(params_, "fc1", 16 * fh * fw, 32, rng);
  fc2_ = Dense(params_, "fc2", 32, n_labels, rng);
}

NodeP RelationNet::logits(Graph& g, NodeP pair_maps) const {
  GEOGAN_CHECK(pair_maps->shape.c == 2, "relation net: input must have 2 channels");
  GEOGAN_CHECK(pair_maps->shape.h == height_ && pair_maps->shape.w == width_,
               "relation net: input size mismatch");
  NodeP h = pair_maps;
  for (const auto& cv : convs_) h = silu(g, cv(g, h));
  h = silu(g, fc1_(g, flatten(g, h)));
  return fc2_(g, h);
}

void RelationNet::save(const std::string& path, const std::string& report_json) const {
  json meta{{"kind", "relation_net"},
            {"format_version", 1},
            {"n_labels", n_labels_},
            {"height", height_},
            {"width", width_},
            {"ready", ready_},
            {"report", report_json}};
  save_checkpoint(path, meta.dump(), {{"relation", const_cast<ParamStore*>(&params_)}});
}

RelationNet RelationNet::load(const std::string& path, std::string* report_json) {
  std::ifstream is(path, std::ios::binary);
  GEOGAN_CHECK(is.good(), "relation net: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  uint32_t version = 0;
  is.read(reinterpret_cast<char*>(&version), sizeof(version));
  uint32_t len = 0;
  is.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string meta_text(len, '\0');
  is.read(meta_text.data(), len);
  GEOGAN_CHECK(static_cast<bool>(is), "relation net: truncated header");
  is.close();
  const json meta = json::parse(meta_text);
  GEOGAN_CHECK(meta.value("kind", "") == "relation_net",
               "relation net: wrong checkpoint kind in " + path);
  RelationNet net(meta["n_labels"].get<int>(), meta["height"].get<int>(),
                  meta["width"].get<int>(), 0);
  load_checkpoint(path, {{"relation", &net.params_}});
  net.ready_ = meta.value("ready", false);
  if (report_json) *report_json = meta.value("report", std::string{});
  return net;
}

// --- loss builders --------------------------------------------------------------

NodeP adv_loss_d(Graph& g, const Discriminator& d, NodeP real_pair,
                 NodeP fake_pair) {
  NodeP lr = bce_logits_const(g, d.logits(g, real_pair), 1.0);
  NodeP lf = bce_logits_const(g, d.logits(g, fake_pair), 0.0);
  return add(g, lr, lf);
}

NodeP adv_loss_g(Graph& g, const Discriminator& d, NodeP fake_pair) {
  return bce_logits_const(g, d.logits(g, fake_pair), 1.0);
}

NodeP class_loss(Graph& g, const ClassNet& c, NodeP images,
                 const std::vector<int>& class_targets) {
  return ce_rows(g, c.logits(g, images), class_targets);
}

ShapeLossOut shape_loss(Graph& g, const RelationNet& r, NodeP soft_mask,
                        real mass_threshold) {
  GEOGAN_CHECK(r.ready(), "shape_loss: relation net has not been pretrained");
  const int N = soft_mask->shape.n, C = soft_mask->shape.c;
  GEOGAN_CHECK(C == r.n_labels(), "shape_loss: label count mismatch");
  const int64_t hw = soft_mask->shape.hw();

  // Select ordered label pairs with enough foreground mass on both sides.
  std::vector<std::array<int, 3>> picks;
  std::vector<int> targets;
  std::vector<int> retained_per_sample(N, 0);
  std::vector<real> mass(static_cast<size_t>(N) * C, 0.0);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const real* m = soft_mask->val.data() + n * soft_mask->shape.chw() + c * hw;
      real acc = 0;
      for (int64_t i = 0; i < hw; ++i) acc += m[i];
      mass[n * C + c] = acc;
    }
  for (int n = 0; n < N; ++n)
    for (int i = 0; i < C; ++i)
      for (int j = 0; j < C; ++j) {
        if (i == j) continue;
        if (mass[n * C + i] < mass_threshold || mass[n * C + j] < mass_threshold)
          continue;
        picks.push_back({n, i, j});
        targets.push_back(i);
        ++retained_per_sample[n];
      }

  ShapeLossOut out;
  if (picks.empty()) {
    out.loss = g.zeros(Shape(1, 1));
    out.all_skipped = true;
    return out;
  }
  std::vector<real> weights(picks.size());
  for (size_t p = 0; p < picks.size(); ++p)
    weights[p] = 1.0 / (static_cast<real>(N) * retained_per_sample[picks[p][0]]);

  NodeP maps = gather_channel_pairs(g, soft_mask, picks);
  NodeP logits = r.logits(g, maps);
  out.loss = ce_rows_weighted(g, logits, targets, weights);
  out.pairs_used = static_cast<int>(picks.size());
  return out;
}

real shape_pair_prob(const RelationNet& r, const std::vector<real>& map_i,
                     const std::vector<real>& map_j, int h, int w, int label_i) {
  GEOGAN_CHECK(r.ready(), "shape_pair_prob: relation net has not been pretrained");
  GEOGAN_CHECK(label_i >= 0 && label_i < r.n_labels(), "shape_pair_prob: bad label");
  GEOGAN_CHECK(map_i.size() == static_cast<size_t>(h) * w &&
                   map_j.size() == map_i.size(),
               "shape_pair_prob: map size mismatch");
  Graph g(false);
  auto in = g.zeros(Shape(1, 2, h, w));
  std::copy(map_i.begin(), map_i.end(), in->val.begin());
  std::copy(map_j.begin(), map_j.end(), in->val.begin() + map_i.size());
  NodeP logit = r.logits(g, in);
  NodeP p = softmax_c(g, logit);
  return p->val[label_i];
}

// --- pretraining -----------------------------------------------------------------

std::string RelationPretrainReport::to_json() const {
  return json{{"holdout_accuracy", holdout_accuracy},
              {"train_pairs", train_pairs},
              {"holdout_pairs", holdout_pairs},
              {"excluded_labels", excluded_labels},
              {"steps", steps}}
      .dump();
}

RelationPretrainReport pretrain_relation_net(
    RelationNet& net, const std::vector<const ImageSample*>& masks,
    const RelationPretrainConfig& cfg, uint64_t seed) {
  GEOGAN_CHECK(masks.size() >= 100,
               "pretrain_relation_net: needs at least 100 real masks, got " +
                   std::to_string(masks.size()));
  const int C = net.n_labels();
  const int h = masks[0]->height, w = masks[0]->width;

  // Labels absent from the entire dataset are excluded and reported.
  std::vector<int64_t> global_count(C, 0);
  for (const auto* s : masks)
    for (uint8_t m : s->mask) ++global_count[m];

  RelationPretrainReport report;
  for (int c = 0; c < C; ++c)
    if (global_count[c] == 0) report.excluded_labels.push_back(c);

  struct Pair {
    const ImageSample* s;
    int i, j;
  };
  std::vector<Pair> train_pairs, holdout_pairs;
  Rng rng(mix_seed(seed, tag("relation_pretrain")));
  for (const auto* s : masks) {
    std::vector<int> count(C, 0);
    for (uint8_t m : s->mask) ++count[m];
    const bool holdout = rng.uniform() < cfg.holdout_fraction;
    for (int i = 0; i < C; ++i)
      for (int j = 0; j < C; ++j) {
        if (i == j || count[i] == 0 || count[j] == 0) continue;
        (holdout ? holdout_pairs : train_pairs).push_back({s, i, j});
      }
  }
  GEOGAN_CHECK(!train_pairs.empty() && !holdout_pairs.empty(),
               "pretrain_relation_net: degenerate pair split");
  report.train_pairs = static_cast<int>(train_pairs.size());
  report.holdout_pairs = static_cast<int>(holdout_pairs.size());

  auto fill_batch = [&](Graph& g, const std::vector<Pair>& src,
                        const std::vector<size_t>& ids, std::vector<int>& labels) {
    auto in = g.zeros(Shape(static_cast<int>(ids.size()), 2, h, w));
    const size_t hw = static_cast<size_t>(h) * w;
    labels.clear();
    for (size_t b = 0; b < ids.size(); ++b) {
      const Pair& p = src[ids[b]];
      real* a = in->val.data() + b * 2 * hw;
      for (size_t q = 0; q < hw; ++q) {
        a[q] = p.s->mask[q] == p.i ? 1.0 : 0.0;
        a[hw + q] = p.s->mask[q] == p.j ? 1.0 : 0.0;
      }
      labels.push_back(p.i);
    }
    return in;
  };

  Adam opt(net.params().trainable(), cfg.lr);
  std::vector<size_t> order(train_pairs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  size_t cursor = 0;
  Rng shuffler(mix_seed(seed, tag("relation_shuffle")));
  shuffler.shuffle(order);
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<size_t> ids;
    for (int b = 0; b < cfg.batch; ++b) {
      if (cursor >= order.size()) {
        cursor = 0;
        shuffler.shuffle(order);
      }
      ids.push_back(order[cursor++]);
    }
    Graph g;
    std::vector<int> labels;
    NodeP in = fill_batch(g, train_pairs, ids, labels);
    NodeP loss = ce_rows(g, net.logits(g, in), labels);
    opt.zero_grad();
    g.backward(loss);
    opt.step();
  }
  report.steps = cfg.steps;

  // Held-out accuracy, evaluated in manageable chunks.
  int correct = 0;
  const int chunk = 64;
  for (size_t start = 0; start < holdout_pairs.size(); start += chunk) {
    std::vector<size_t> ids;
    for (size_t k = start; k < std::min(holdout_pairs.size(), start + chunk); ++k)
      ids.push_back(k);
    Graph g(false);
    std::vector<int> labels;
    NodeP in = fill_batch(g, holdout_pairs, ids, labels);
    NodeP logit = net.logits(g, in);
    for (size_t b = 0; b < ids.size(); ++b) {
      int best = 0;
      for (int c = 1; c < C; ++c)
        if (logit->val[b * C + c] > logit->val[b * C + best]) best = c;
      if (best == labels[b]) ++correct;
    }
  }
  report.holdout_accuracy =
      static_cast<real>(correct) / static_cast<real>(holdout_pairs.size());

  net.freeze();
  return report;
}

}  // namespace geogan
