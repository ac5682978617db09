#ifndef GEOGAN_PLOT_HPP
#define GEOGAN_PLOT_HPP

#include "geogan/io.hpp"
#include "geogan/core.hpp"

namespace geogan {

struct Rgb {
  uint8_t r = 0, g = 0, b = 0;
};

// Minimal software canvas for the report plots; text uses an embedded 5x7
// uppercase font.
class Canvas {
 public:
  Canvas(int h, int w, Rgb bg = {255, 255, 255});

  int height() const { return img_.h; }
  int width() const { return img_.w; }

  void set(int y, int x, Rgb c);
  void fill_rect(int y0, int x0, int y1, int x1, Rgb c);
  void line(int y0, int x0, int y1, int x1, Rgb c);
  void text(int y, int x, const std::string& s, Rgb c, int scale = 1);
  static int text_width(const std::string& s, int scale = 1);

  void blit_gray(int y, int x, const GrayImage8& src);
  void blit_rgb(int y, int x, const RgbImage8& src);

  void save(const std::string& path) const;

 private:
  RgbImage8 img_;
};

// Bar chart with one bar per label and std-dev whiskers.
void draw_bar_chart(const std::string& path, const std::string& title,
                    const std::vector<std::string>& labels,
                    const std::vector<real>& values,
                    const std::vector<real>& stds, real y_min = 0,
                    real y_max = 1);

struct Series {
  std::string name;
  std::vector<real> x, y;
};

void draw_curves(const std::string& path, const std::string& title,
                 const std::vector<Series>& series);

// Grayscale image with the mask painted over it in per-label colors.
RgbImage8 overlay_mask(const std::vector<real>& image,
                       const std::vector<uint8_t>& mask, int h, int w,
                       int n_labels, real alpha = 0.45);

// Tiles panels (left-to-right, top-to-bottom) with a title row.
void draw_mosaic(const std::string& path, const std::string& title,
                 const std::vector<RgbImage8>& panels, int columns);

// Row-major [n1][n2] score surface as a colored grid.
void draw_heatmap(const std::string& path, const std::string& title,
                  const std::vector<real>& surface, int n1, int n2);

}  // namespace geogan

#endif  // GEOGAN_PLOT_HPP
