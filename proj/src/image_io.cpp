#include "mkd/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

namespace mkd {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void write_png(const std::string& path, int width, int height, png_uint_32 format,
               const std::vector<std::uint8_t>& pixels) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = format;
  if (!png_image_write_to_file(&img, path.c_str(), 0, pixels.data(), 0, nullptr)) {
    throw IoError("cannot write PNG '" + path + "': " + img.message);
  }
}

}  // namespace

ImageBatch read_png_rgb(const std::string& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw IoError("cannot read PNG '" + path + "': " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError("cannot decode PNG '" + path + "': " + img.message);
  }
  const int h = static_cast<int>(img.height), w = static_cast<int>(img.width);
  ImageBatch out(1, h, w, 3);
  for (std::size_t i = 0; i < buf.size(); ++i) out.tensor().values()[i] = buf[i] / 255.0;
  return out;
}

void write_png_rgb(const std::string& path, const ImageBatch& x, int b) {
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(x.height()) * x.width() * 3);
  std::size_t i = 0;
  for (int y = 0; y < x.height(); ++y)
    for (int xx = 0; xx < x.width(); ++xx)
      for (int k = 0; k < 3; ++k) buf[i++] = to_byte(x(b, y, xx, k));
  write_png(path, x.width(), x.height(), PNG_FORMAT_RGB, buf);
}

LabelMap read_png_labels(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open label PNG '" + path + "'");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialisation failed");
  }
  // libpng reports errors via longjmp; everything that owns memory is declared before it.
  LabelMap out;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("corrupt label PNG '" + path + "'");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth != 8 || (color != PNG_COLOR_TYPE_GRAY && color != PNG_COLOR_TYPE_PALETTE)) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("label PNG '" + path + "' must be 8-bit single channel");
  }
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  out = LabelMap(1, h, w);
  rows.resize(h);
  for (int y = 0; y < h; ++y) rows[y] = out.values().data() + static_cast<std::size_t>(y) * w;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_png_labels(const std::string& path, const LabelMap& y, int b) {
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(y.height()) * y.width());
  std::copy_n(y.values().begin() + y.index(b, 0, 0), buf.size(), buf.begin());
  write_png(path, y.width(), y.height(), PNG_FORMAT_GRAY, buf);
}

}  // namespace mkd
