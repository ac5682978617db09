#include "geogan/plot.hpp"

#include <cmath>
#include <cstring>
#include <map>

namespace geogan {

namespace {

// 5x7 glyphs as row strings; '#' marks a lit pixel. Uppercase-only; lowercase
// input is uppercased before lookup.
struct Glyph {
  char ch;
  const char* rows[7];
};

const Glyph kGlyphs[] = {
    {'A', {" ### ", "#   #", "#   #", "#####", "#   #", "#   #", "#   #"}},
    {'B', {"#### ", "#   #", "#   #", "#### ", "#   #", "#   #", "#### "}},
    {'C', {" ### ", "#   #", "#    ", "#    ", "#    ", "#   #", " ### "}},
    {'D', {"#### ", "#   #", "#   #", "#   #", "#   #", "#   #", "#### "}},
    {'E', {"#####", "#    ", "#    ", "#### ", "#    ", "#    ", "#####"}},
    {'F', {"#####", "#    ", "#    ", "#### ", "#    ", "#    ", "#    "}},
    {'G', {" ### ", "#   #", "#    ", "# ###", "#   #", "#   #", " ### "}},
    {'H', {"#   #", "#   #", "#   #", "#####", "#   #", "#   #", "#   #"}},
    {'I', {" ### ", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "}},
    {'J', {"  ###", "   # ", "   # ", "   # ", "   # ", "#  # ", " ##  "}},
    {'K', {"#   #", "#  # ", "# #  ", "##   ", "# #  ", "#  # ", "#   #"}},
    {'L', {"#    ", "#    ", "#    ", "#    ", "#    ", "#    ", "#####"}},
    {'M', {"#   #", "## ##", "# # #", "# # #", "#   #", "#   #", "#   #"}},
    {'N', {"#   #", "##  #", "# # #", "#  ##", "#   #", "#   #", "#   #"}},
    {'O', {" ### ", "#   #", "#   #", "#   #", "#   #", "#   #", " ### "}},
    {'P', {"#### ", "#   #", "#   #", "#### ", "#    ", "#    ", "#    "}},
    {'Q', {" ### ", "#   #", "#   #", "#   #", "# # #", "#  # ", " ## #"}},
    {'R', {"#### ", "#   #", "#   #", "#### ", "# #  ", "#  # ", "#   #"}},
    {'S', {" ####", "#    ", "#    ", " ### ", "    #", "    #", "#### "}},
    {'T', {"#####", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", "  #  "}},
    {'U', {"#   #", "#   #", "#   #", "#   #", "#   #", "#   #", " ### "}},
    {'V', {"#   #", "#   #", "#   #", "#   #", "#   #", " # # ", "  #  "}},
    {'W', {"#   #", "#   #", "#   #", "# # #", "# # #", "## ##", "#   #"}},
    {'X', {"#   #", "#   #", " # # ", "  #  ", " # # ", "#   #", "#   #"}},
    {'Y', {"#   #", "#   #", " # # ", "  #  ", "  #  ", "  #  ", "  #  "}},
    {'Z', {"#####", "    #", "   # ", "  #  ", " #   ", "#    ", "#####"}},
    {'0', {" ### ", "#   #", "#  ##", "# # #", "##  #", "#   #", " ### "}},
    {'1', {"  #  ", " ##  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "}},
    {'2', {" ### ", "#   #", "    #", "   # ", "  #  ", " #   ", "#####"}},
    {'3', {" ### ", "#   #", "    #", "  ## ", "    #", "#   #", " ### "}},
    {'4', {"   # ", "  ## ", " # # ", "#  # ", "#####", "   # ", "   # "}},
    {'5', {"#####", "#    ", "#### ", "    #", "    #", "#   #", " ### "}},
    {'6', {" ### ", "#    ", "#    ", "#### ", "#   #", "#   #", " ### "}},
    {'7', {"#####", "    #", "   # ", "  #  ", " #   ", " #   ", " #   "}},
    {'8', {" ### ", "#   #", "#   #", " ### ", "#   #", "#   #", " ### "}},
    {'9', {" ### ", "#   #", "#   #", " ####", "    #", "    #", " ### "}},
    {' ', {"     ", "     ", "     ", "     ", "     ", "     ", "     "}},
    {'.', {"     ", "     ", "     ", "     ", "     ", " ##  ", " ##  "}},
    {',', {"     ", "     ", "     ", "     ", " ##  ", " ##  ", "  #  "}},
    {'-', {"     ", "     ", "     ", " ### ", "     ", "     ", "     "}},
    {'_', {"     ", "     ", "     ", "     ", "     ", "     ", "#####"}},
    {'(', {"   # ", "  #  ", " #   ", " #   ", " #   ", "  #  ", "   # "}},
    {')', {" #   ", "  #  ", "   # ", "   # ", "   # ", "  #  ", " #   "}},
    {':', {"     ", " ##  ", " ##  ", "     ", " ##  ", " ##  ", "     "}},
    {'/', {"    #", "    #", "   # ", "  #  ", " #   ", "#    ", "#    "}},
    {'=', {"     ", "     ", "#####", "     ", "#####", "     ", "     "}},
    {'%', {"##  #", "##  #", "   # ", "  #  ", " #   ", "#  ##", "#  ##"}},
};

const Glyph* find_glyph(char c) {
  if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
  for (const auto& g : kGlyphs)
    if (g.ch == c) return &g;
  return nullptr;
}

}  // namespace

Canvas::Canvas(int h, int w, Rgb bg) {
  img_.h = h;
  img_.w = w;
  img_.px.resize(static_cast<size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) img_.set(y, x, bg.r, bg.g, bg.b);
}

void Canvas::set(int y, int x, Rgb c) {
  if (y < 0 || y >= img_.h || x < 0 || x >= img_.w) return;
  img_.set(y, x, c.r, c.g, c.b);
}

void Canvas::fill_rect(int y0, int x0, int y1, int x1, Rgb c) {
  for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y)
    for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) set(y, x, c);
}

void Canvas::line(int y0, int x0, int y1, int x1, Rgb c) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  int x = x0, y = y0;
  for (;;) {
    set(y, x, c);
    if (x == x1 && y == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y += sy;
    }
  }
}

void Canvas::text(int y, int x, const std::string& s, Rgb c, int scale) {
  int cx = x;
  for (char ch : s) {
    const Glyph* g = find_glyph(ch);
    if (g) {
      for (int ry = 0; ry < 7; ++ry)
        for (int rx = 0; rx < 5; ++rx)
          if (g->rows[ry][rx] == '#')
            for (int sy = 0; sy < scale; ++sy)
              for (int sx = 0; sx < scale; ++sx)
                set(y + ry * scale + sy, cx + rx * scale + sx, c);
    }
    cx += 6 * scale;
  }
}

int Canvas::text_width(const std::string& s, int scale) {
  return static_cast<int>(s.size()) * 6 * scale;
}

void Canvas::blit_gray(int y, int x, const GrayImage8& src) {
  for (int sy = 0; sy < src.h; ++sy)
    for (int sx = 0; sx < src.w; ++sx) {
      const uint8_t v = src.at(sy, sx);
      set(y + sy, x + sx, {v, v, v});
    }
}

void Canvas::blit_rgb(int y, int x, const RgbImage8& src) {
  for (int sy = 0; sy < src.h; ++sy)
    for (int sx = 0; sx < src.w; ++sx) {
      const uint8_t* p = &src.px[(static_cast<size_t>(sy) * src.w + sx) * 3];
      set(y + sy, x + sx, {p[0], p[1], p[2]});
    }
}

void Canvas::save(const std::string& path) const { write_png_rgb8(path, img_); }

void draw_bar_chart(const std::string& path, const std::string& title,
                    const std::vector<std::string>& labels,
                    const std::vector<real>& values,
                    const std::vector<real>& stds, real y_min, real y_max) {
  GEOGAN_CHECK(labels.size() == values.size() && values.size() == stds.size(),
               "bar chart: size mismatch");
  const int n = static_cast<int>(values.size());
  const int plot_w = std::max(360, n * 90);
  const int W = plot_w + 80, H = 320;
  Canvas cv(H, W);
  const int x0 = 60, y0 = 40, y1 = H - 60;
  cv.text(12, 10, title, {0, 0, 0});
  cv.line(y1, x0, y1, x0 + plot_w, {0, 0, 0});
  cv.line(y0, x0, y1, x0, {0, 0, 0});
  auto ypix = [&](real v) {
    const real t = (v - y_min) / (y_max - y_min);
    return y1 - static_cast<int>(t * (y1 - y0));
  };
  for (int tick = 0; tick <= 5; ++tick) {
    const real v = y_min + (y_max - y_min) * tick / 5.0;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    cv.text(ypix(v) - 3, 8, buf, {90, 90, 90});
    cv.line(ypix(v), x0 - 3, ypix(v), x0, {0, 0, 0});
  }
  const Rgb bar{70, 110, 190};
  for (int i = 0; i < n; ++i) {
    const int bw = plot_w / std::max(1, n);
    const int bx0 = x0 + i * bw + bw / 5;
    const int bx1 = x0 + (i + 1) * bw - bw / 5;
    cv.fill_rect(ypix(values[i]), bx0, y1 - 1, bx1, bar);
    const int cx = (bx0 + bx1) / 2;
    cv.line(ypix(values[i] - stds[i]), cx, ypix(values[i] + stds[i]), cx, {20, 20, 20});
    cv.line(ypix(values[i] + stds[i]), cx - 4, ypix(values[i] + stds[i]), cx + 4, {20, 20, 20});
    cv.line(ypix(values[i] - stds[i]), cx - 4, ypix(values[i] - stds[i]), cx + 4, {20, 20, 20});
    const int tw = Canvas::text_width(labels[i]);
    cv.text(y1 + 8, cx - tw / 2, labels[i], {0, 0, 0});
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.3f", values[i]);
    cv.text(ypix(values[i]) - 12, cx - Canvas::text_width(buf) / 2, buf, {0, 0, 0});
  }
  cv.save(path);
}

void draw_curves(const std::string& path, const std::string& title,
                 const std::vector<Series>& series) {
  const int W = 640, H = 360;
  Canvas cv(H, W);
  const int x0 = 60, x1 = W - 20, y0 = 40, y1 = H - 40;
  cv.text(12, 10, title, {0, 0, 0});
  cv.line(y1, x0, y1, x1, {0, 0, 0});
  cv.line(y0, x0, y1, x0, {0, 0, 0});
  real xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series)
    for (size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (xmin > xmax) {
    xmin = 0;
    xmax = 1;
    ymin = 0;
    ymax = 1;
  }
  if (ymax - ymin < 1e-12) ymax = ymin + 1;
  if (xmax - xmin < 1e-12) xmax = xmin + 1;
  const Rgb palette[] = {{200, 60, 60}, {60, 120, 200}, {60, 160, 80},
                         {170, 120, 40}, {130, 70, 170}, {60, 60, 60}};
  auto px = [&](real x) {
    return x0 + static_cast<int>((x - xmin) / (xmax - xmin) * (x1 - x0));
  };
  auto py = [&](real y) {
    return y1 - static_cast<int>((y - ymin) / (ymax - ymin) * (y1 - y0));
  };
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", ymax);
  cv.text(y0 - 4, 8, buf, {90, 90, 90});
  std::snprintf(buf, sizeof(buf), "%.3g", ymin);
  cv.text(y1 - 4, 8, buf, {90, 90, 90});
  int legend_y = y0;
  for (size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const Rgb c = palette[k % 6];
    for (size_t i = 1; i < s.x.size(); ++i)
      cv.line(py(s.y[i - 1]), px(s.x[i - 1]), py(s.y[i]), px(s.x[i]), c);
    cv.fill_rect(legend_y, x1 - 150, legend_y + 6, x1 - 140, c);
    cv.text(legend_y, x1 - 134, s.name, {0, 0, 0});
    legend_y += 12;
  }
  cv.save(path);
}

RgbImage8 overlay_mask(const std::vector<real>& image,
                       const std::vector<uint8_t>& mask, int h, int w,
                       int n_labels, real alpha) {
  static const Rgb palette[] = {{0, 0, 0},      {220, 70, 70},  {70, 180, 90},
                                {80, 110, 220}, {240, 200, 60}, {180, 80, 200},
                                {60, 200, 200}, {230, 130, 40}};
  RgbImage8 out;
  out.h = h;
  out.w = w;
  out.px.resize(static_cast<size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const size_t i = static_cast<size_t>(y) * w + x;
      const real g = std::clamp(image[i], 0.0, 1.0) * 255.0;
      real r = g, gg = g, b = g;
      const uint8_t m = mask[i];
      if (m > 0 && m < n_labels) {
        const Rgb c = palette[m % 8];
        r = (1 - alpha) * g + alpha * c.r;
        gg = (1 - alpha) * g + alpha * c.g;
        b = (1 - alpha) * g + alpha * c.b;
      }
      out.set(y, x, static_cast<uint8_t>(r), static_cast<uint8_t>(gg),
              static_cast<uint8_t>(b));
    }
  return out;
}

void draw_heatmap(const std::string& path, const std::string& title,
                  const std::vector<real>& surface, int n1, int n2) {
  GEOGAN_CHECK(static_cast<int>(surface.size()) == n1 * n2, "heatmap: size mismatch");
  real lo = surface[0], hi = surface[0];
  for (real v : surface) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi - lo < 1e-12) hi = lo + 1;
  const int cell = std::max(8, 320 / std::max(n1, n2));
  Canvas cv(40 + n1 * cell, std::max(320, 20 + n2 * cell));
  cv.text(8, 8, title, {0, 0, 0});
  for (int i = 0; i < n1; ++i)
    for (int j = 0; j < n2; ++j) {
      const real t = (surface[static_cast<size_t>(i) * n2 + j] - lo) / (hi - lo);
      const Rgb c{static_cast<uint8_t>(30 + 200 * t),
                  static_cast<uint8_t>(40 + 60 * t),
                  static_cast<uint8_t>(220 - 190 * t)};
      cv.fill_rect(30 + i * cell, 10 + j * cell, 30 + (i + 1) * cell - 2,
                   10 + (j + 1) * cell - 2, c);
    }
  cv.save(path);
}

void draw_mosaic(const std::string& path, const std::string& title,
                 const std::vector<RgbImage8>& panels, int columns) {
  GEOGAN_CHECK(!panels.empty(), "mosaic: no panels");
  const int ph = panels[0].h, pw = panels[0].w;
  const int pad = 6;
  const int cols = std::min<int>(columns, static_cast<int>(panels.size()));
  const int rows = (static_cast<int>(panels.size()) + cols - 1) / cols;
  Canvas cv(24 + rows * (ph + pad) + pad, std::max(300, pad + cols * (pw + pad)));
  cv.text(8, 8, title, {0, 0, 0});
  for (size_t i = 0; i < panels.size(); ++i) {
    const int r = static_cast<int>(i) / cols, c = static_cast<int>(i) % cols;
    cv.blit_rgb(24 + pad + r * (ph + pad), pad + c * (pw + pad), panels[i]);
  }
  cv.save(path);
}

}  // namespace geogan
