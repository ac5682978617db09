#ifndef GEOGAN_IO_HPP
#define GEOGAN_IO_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace geogan {

struct GrayImage8 {
  int h = 0, w = 0;
  std::vector<uint8_t> px;  // row-major

  uint8_t at(int y, int x) const { return px[static_cast<size_t>(y) * w + x]; }
  uint8_t& at(int y, int x) { return px[static_cast<size_t>(y) * w + x]; }
};

struct RgbImage8 {
  int h = 0, w = 0;
  std::vector<uint8_t> px;  // row-major, 3 bytes per pixel

  void set(int y, int x, uint8_t r, uint8_t g, uint8_t b) {
    uint8_t* p = &px[(static_cast<size_t>(y) * w + x) * 3];
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }
};

void write_png_gray8(const std::string& path, const GrayImage8& img);
GrayImage8 read_png_gray8(const std::string& path);
void write_png_rgb8(const std::string& path, const RgbImage8& img);

// Whole-file text helpers.
void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);
void append_text_file(const std::string& path, const std::string& content);

std::vector<std::string> read_lines(const std::string& path);

}  // namespace geogan

#endif  // GEOGAN_IO_HPP
