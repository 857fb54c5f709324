#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace maskdiff {

/// 8-bit single-channel raster.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;  // row-major

  bool operator==(const GrayImage&) const = default;
};

// Binary PGM (P5, maxval 255). Reading a PPM (P6) reports a channel-count
// error; other formats are rejected.
GrayImage read_pgm(const std::string& path);
void write_pgm(const std::string& path, const GrayImage& image);

GrayImage resize_nearest(const GrayImage& image, int width, int height);
GrayImage resize_bilinear(const GrayImage& image, int width, int height);

}  // namespace maskdiff
