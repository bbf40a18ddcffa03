#pragma once

// Minimal image I/O: 8-bit RGB PNG (via libpng) and float32 grayscale PFM
// (little-endian) for depth maps.

#include <cstdint>
#include <string>
#include <vector>

namespace mpnerf::io {

struct Image8 {
  int width = 0, height = 0;
  std::vector<uint8_t> rgb;  // interleaved, row-major, top-down
};

struct FloatMap {
  int width = 0, height = 0;
  std::vector<float> data;  // row-major, top-down
};

void write_png(const std::string& path, const Image8& img);
Image8 read_png(const std::string& path);

void write_pfm(const std::string& path, const FloatMap& map);
FloatMap read_pfm(const std::string& path);

// Planar [3,H,W] float in [0,1] <-> interleaved 8-bit, with clamping.
Image8 to_image8(const std::vector<float>& chw, int height, int width);
std::vector<float> to_chw(const Image8& img);

}  // namespace mpnerf::io
