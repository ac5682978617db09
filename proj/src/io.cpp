#include "geogan/io.hpp"

#include <png.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "geogan/core.hpp"

namespace geogan {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

void write_png_impl(const std::string& path, int h, int w, int color_type,
                    const uint8_t* data, int bytes_per_px) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  GEOGAN_CHECK(fp != nullptr, "png: cannot open " + path + " for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                            nullptr, nullptr);
  GEOGAN_CHECK(png, "png: create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("png: create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("png: write failure on " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, w, h, 8, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y)
    rows[y] = const_cast<png_bytep>(data + static_cast<size_t>(y) * w * bytes_per_px);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png_gray8(const std::string& path, const GrayImage8& img) {
  GEOGAN_CHECK(static_cast<size_t>(img.h) * img.w == img.px.size(),
               "png: image buffer size mismatch");
  write_png_impl(path, img.h, img.w, PNG_COLOR_TYPE_GRAY, img.px.data(), 1);
}

void write_png_rgb8(const std::string& path, const RgbImage8& img) {
  GEOGAN_CHECK(static_cast<size_t>(img.h) * img.w * 3 == img.px.size(),
               "png: image buffer size mismatch");
  write_png_impl(path, img.h, img.w, PNG_COLOR_TYPE_RGB, img.px.data(), 3);
}

GrayImage8 read_png_gray8(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  GEOGAN_CHECK(fp != nullptr, "png: cannot open " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                           nullptr, nullptr);
  GEOGAN_CHECK(png, "png: create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error("png: create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("png: read failure on " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_COLOR) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  GrayImage8 img;
  img.h = static_cast<int>(h);
  img.w = static_cast<int>(w);
  img.px.resize(static_cast<size_t>(h) * w);
  std::vector<png_bytep> rows(h);
  for (png_uint_32 y = 0; y < h; ++y)
    rows[y] = img.px.data() + static_cast<size_t>(y) * w;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream os(path, std::ios::trunc);
  GEOGAN_CHECK(os.good(), "io: cannot open " + path + " for writing");
  os << content;
  GEOGAN_CHECK(os.good(), "io: write failure on " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream is(path);
  GEOGAN_CHECK(is.good(), "io: cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void append_text_file(const std::string& path, const std::string& content) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream os(path, std::ios::app);
  GEOGAN_CHECK(os.good(), "io: cannot open " + path + " for append");
  os << content;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream is(path);
  GEOGAN_CHECK(is.good(), "io: cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line))
    if (!line.empty()) lines.push_back(line);
  return lines;
}

}  // namespace geogan
