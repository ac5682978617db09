#include <cmath>
#include <filesystem>
#include <map>

#include "geogan/io.hpp"
#include "geogan/pipeline.hpp"
#include "geogan/plot.hpp"
#include "json.hpp"

namespace geogan {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct RunRecord {
  RunManifest manifest;
  MetricsReport metrics;
  bool has_metrics = false;
  std::string dir;
};

std::string group_label(const RunManifest& m) {
  std::string name = m.arm;
  if (m.arm == "geogan") {
    if (m.ablation != "full") name += "/" + m.ablation;
    if (m.train_source != "mixed") name += "/" + m.train_source;
  }
  return name;
}

std::vector<RunRecord> collect_runs(const std::string& out_dir) {
  std::vector<RunRecord> out;
  const fs::path runs = fs::path(out_dir) / "runs";
  if (!fs::exists(runs)) return out;
  std::vector<fs::path> manifest_paths;
  for (const auto& cfg_dir : fs::directory_iterator(runs)) {
    if (!cfg_dir.is_directory()) continue;
    for (const auto& seed_dir : fs::directory_iterator(cfg_dir.path())) {
      const fs::path mp = seed_dir.path() / "manifest.json";
      if (fs::exists(mp)) manifest_paths.push_back(mp);
    }
  }
  std::sort(manifest_paths.begin(), manifest_paths.end());
  for (const auto& mp : manifest_paths) {
    RunRecord r;
    r.manifest = RunManifest::from_json(read_text_file(mp.string()));
    r.dir = mp.parent_path().string();
    const auto it = r.manifest.paths.find("metrics");
    if (it != r.manifest.paths.end() && file_exists(it->second)) {
      r.metrics = MetricsReport::from_json(read_text_file(it->second));
      r.has_metrics = true;
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

void emit_report(const std::string& out_dir, int n_panels) {
  const auto runs = collect_runs(out_dir);
  GEOGAN_CHECK(!runs.empty(), "report: no completed run manifests under " + out_dir);
  const std::string rep_dir = out_dir + "/report";
  fs::create_directories(rep_dir);

  // Group metrics by configuration label.
  std::map<std::string, std::vector<const RunRecord*>> groups;
  for (const auto& r : runs) groups[group_label(r.manifest)].push_back(&r);

  char buf[160];
  std::string md = "# experiment summary\n\n";
  md += "fluid-region Dice / Hausdorff on the diseased test split, mean "
        "(std) over seeds.\n\n| configuration | DM | HD | runs |\n|---|---|---|---|\n";
  std::vector<std::string> bar_labels;
  std::vector<real> bar_values, bar_stds;
  for (const auto& [name, rs] : groups) {
    std::vector<real> dm, hd;
    int incomplete = 0;
    for (const auto* r : rs) {
      if (!r->has_metrics || !r->manifest.failed_stage.empty()) {
        ++incomplete;
        continue;
      }
      dm.push_back(r->metrics.fluid_dice_mean);
      if (r->metrics.fluid_hd_defined > 0) hd.push_back(r->metrics.fluid_hd_mean);
    }
    auto mean_std = [](const std::vector<real>& v, real& m, real& s) {
      m = s = 0;
      if (v.empty()) return;
      for (real x : v) m += x;
      m /= v.size();
      for (real x : v) s += (x - m) * (x - m);
      s = std::sqrt(s / v.size());
    };
    real dmm, dms, hdm, hds;
    mean_std(dm, dmm, dms);
    mean_std(hd, hdm, hds);
    if (dm.empty()) {
      md += "| " + name + " | incomplete | incomplete | 0 |\n";
      continue;
    }
    std::snprintf(buf, sizeof(buf), "| %s | %.3f (%.3f) | %.2f (%.2f) | %zu |\n",
                  name.c_str(), dmm, dms, hdm, hds, dm.size());
    md += buf;
    if (incomplete > 0)
      md += "| " + name + " (failed runs) |  |  | " + std::to_string(incomplete) + " |\n";
    bar_labels.push_back(name);
    bar_values.push_back(dmm);
    bar_stds.push_back(dms);
  }

  for (const std::string table : {"ablation_table.md", "source_table.md"}) {
    const std::string p = out_dir + "/" + table;
    if (file_exists(p)) md += "\n" + read_text_file(p);
  }

  json report_meta{{"groups", static_cast<int>(groups.size())},
                   {"runs", static_cast<int>(runs.size())}};

  if (!bar_labels.empty()) {
    draw_bar_chart(rep_dir + "/metric_bars.png", "FLUID DICE BY CONFIGURATION",
                   bar_labels, bar_values, bar_stds);
    report_meta["plots"].push_back("metric_bars.png");
  }

  // Loss curves from the first generator run that logged them.
  for (const auto& r : runs) {
    const auto it = r.manifest.paths.find("train_log");
    if (it == r.manifest.paths.end() || !file_exists(it->second)) continue;
    Series lg{"L_G", {}, {}}, ladv{"L_ADV", {}, {}}, lcls{"L_CLASS", {}, {}},
        lshape{"L_SHAPE", {}, {}};
    for (const std::string& line : read_lines(it->second)) {
      const json rec = json::parse(line);
      const real step = rec["step"].get<real>();
      lg.x.push_back(step);
      lg.y.push_back(rec["L_g"].get<real>());
      ladv.x.push_back(step);
      ladv.y.push_back(rec["L_adv"].get<real>());
      lcls.x.push_back(step);
      lcls.y.push_back(rec["L_class"].get<real>());
      lshape.x.push_back(step);
      lshape.y.push_back(rec["L_shape"].get<real>());
    }
    if (lg.x.empty()) continue;
    draw_curves(rep_dir + "/loss_curves.png", "GENERATOR LOSS COMPONENTS",
                {lg, ladv, lcls, lshape});
    report_meta["plots"].push_back("loss_curves.png");
    break;
  }

  // Sample mosaic from the first run with generated data.
  int mosaic_panels = 0;
  for (const auto& r : runs) {
    const auto it = r.manifest.paths.find("generated");
    if (it == r.manifest.paths.end() || !file_exists(it->second + "/generated.jsonl"))
      continue;
    std::vector<RgbImage8> panels;
    for (const std::string& line : read_lines(it->second + "/generated.jsonl")) {
      if (static_cast<int>(panels.size()) >= n_panels) break;
      const json rec = json::parse(line);
      const std::string id = rec["sample_id"].get<std::string>();
      GrayImage8 img = read_png_gray8(it->second + "/" + id + ".img.png");
      GrayImage8 msk = read_png_gray8(it->second + "/" + id + ".mask.png");
      std::vector<real> fimg(img.px.size());
      for (size_t i = 0; i < img.px.size(); ++i) fimg[i] = img.px[i] / 255.0;
      std::vector<uint8_t> mask(msk.px.begin(), msk.px.end());
      int n_labels = 1;
      for (uint8_t m : mask) n_labels = std::max(n_labels, m + 1);
      panels.push_back(overlay_mask(fimg, mask, img.h, img.w,
                                    std::max(n_labels, 5)));
    }
    if (panels.empty()) continue;
    mosaic_panels = static_cast<int>(panels.size());
    draw_mosaic(rep_dir + "/mosaic.png", "GENERATED SAMPLES (MASK OVERLAY)",
                panels, 3);
    report_meta["plots"].push_back("mosaic.png");
    break;
  }
  report_meta["mosaic_panels"] = mosaic_panels;

  write_text_file(rep_dir + "/summary.md", md);
  write_text_file(rep_dir + "/report.json", report_meta.dump(2) + "\n");
}

}  // namespace geogan
