#include "mpnerf/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>

#include "mpnerf/errors.hpp"

namespace mpnerf::io {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

}  // namespace

void write_png(const std::string& path, const Image8& img) {
  if (img.width <= 0 || img.height <= 0 ||
      img.rgb.size() != static_cast<size_t>(img.width) * img.height * 3)
    throw InvariantError("write_png: inconsistent image dimensions");
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("write_png: cannot open " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("write_png: png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("write_png: png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("write_png: libpng error writing " + path);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(img.rgb.data() + static_cast<size_t>(y) *
                                                                  img.width * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image8 read_png(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("read_png: cannot open " + path);
  uint8_t header[8];
  if (std::fread(header, 1, 8, f.get()) != 8 || png_sig_cmp(header, 0, 8))
    throw IoError("read_png: not a PNG file: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("read_png: png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("read_png: png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("read_png: corrupt PNG: " + path);
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  // Normalize everything to 8-bit RGB.
  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  Image8 img;
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.rgb.resize(static_cast<size_t>(img.width) * img.height * 3);
  for (int y = 0; y < img.height; ++y)
    png_read_row(png, img.rgb.data() + static_cast<size_t>(y) * img.width * 3, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_pfm(const std::string& path, const FloatMap& map) {
  static_assert(std::endian::native == std::endian::little,
                "PFM writer assumes a little-endian host");
  if (map.width <= 0 || map.height <= 0 ||
      map.data.size() != static_cast<size_t>(map.width) * map.height)
    throw InvariantError("write_pfm: inconsistent dimensions");
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("write_pfm: cannot open " + path);
  // Negative scale marks little-endian samples; rows are stored bottom-up.
  std::fprintf(f.get(), "Pf\n%d %d\n-1.0\n", map.width, map.height);
  for (int y = map.height - 1; y >= 0; --y)
    if (std::fwrite(map.data.data() + static_cast<size_t>(y) * map.width, sizeof(float),
                    map.width, f.get()) != static_cast<size_t>(map.width))
      throw IoError("write_pfm: short write to " + path);
}

FloatMap read_pfm(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("read_pfm: cannot open " + path);
  char tag[3] = {0, 0, 0};
  int w = 0, h = 0;
  double scale = 0;
  if (std::fscanf(f.get(), "%2s %d %d %lf", tag, &w, &h, &scale) != 4 ||
      std::strcmp(tag, "Pf") != 0 || w <= 0 || h <= 0)
    throw IoError("read_pfm: bad header in " + path);
  if (scale >= 0) throw IoError("read_pfm: big-endian PFM unsupported: " + path);
  if (std::fgetc(f.get()) == EOF) throw IoError("read_pfm: truncated header in " + path);

  FloatMap map;
  map.width = w;
  map.height = h;
  map.data.resize(static_cast<size_t>(w) * h);
  for (int y = h - 1; y >= 0; --y)
    if (std::fread(map.data.data() + static_cast<size_t>(y) * w, sizeof(float), w, f.get()) !=
        static_cast<size_t>(w))
      throw IoError("read_pfm: truncated payload in " + path);
  return map;
}

Image8 to_image8(const std::vector<float>& chw, int height, int width) {
  if (chw.size() != static_cast<size_t>(3) * height * width)
    throw InvariantError("to_image8: size mismatch");
  Image8 img;
  img.width = width;
  img.height = height;
  img.rgb.resize(chw.size());
  const long plane = static_cast<long>(height) * width;
  for (long p = 0; p < plane; ++p)
    for (int c = 0; c < 3; ++c) {
      float v = std::clamp(chw[c * plane + p], 0.0f, 1.0f);
      img.rgb[p * 3 + c] = static_cast<uint8_t>(std::lround(v * 255.0f));
    }
  return img;
}

std::vector<float> to_chw(const Image8& img) {
  const long plane = static_cast<long>(img.height) * img.width;
  std::vector<float> chw(plane * 3);
  for (long p = 0; p < plane; ++p)
    for (int c = 0; c < 3; ++c) chw[c * plane + p] = img.rgb[p * 3 + c] / 255.0f;
  return chw;
}

}  // namespace mpnerf::io
