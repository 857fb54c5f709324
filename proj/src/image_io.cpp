#include "maskdiff/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace maskdiff {

namespace {

// Reads the next whitespace-delimited header token, skipping # comments.
std::string header_token(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string rest;
      std::getline(in, rest);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

}  // namespace

GrayImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image " + path);
  const std::string magic = header_token(in);
  if (magic == "P6" || magic == "P3") {
    throw std::runtime_error(path + ": expected a single-channel image, found 3 channels (" + magic + ")");
  }
  if (magic != "P5") throw std::runtime_error(path + ": not a binary PGM (magic '" + magic + "')");
  GrayImage img;
  try {
    img.width = std::stoi(header_token(in));
    img.height = std::stoi(header_token(in));
    const int maxval = std::stoi(header_token(in));
    if (maxval != 255) throw std::runtime_error(path + ": only 8-bit PGM supported (maxval " + std::to_string(maxval) + ")");
  } catch (const std::invalid_argument&) {
    throw std::runtime_error(path + ": malformed PGM header");
  }
  if (img.width <= 0 || img.height <= 0) throw std::runtime_error(path + ": invalid dimensions");
  img.pixels.resize(static_cast<size_t>(img.width) * static_cast<size_t>(img.height));
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) throw std::runtime_error(path + ": truncated pixel data");
  return img;
}

void write_pgm(const std::string& path, const GrayImage& image) {
  if (image.pixels.size() != static_cast<size_t>(image.width) * static_cast<size_t>(image.height)) {
    throw std::invalid_argument("write_pgm: pixel count does not match dimensions");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write image " + path);
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw std::runtime_error("write failed for " + path);
}

GrayImage resize_nearest(const GrayImage& image, int width, int height) {
  if (width == image.width && height == image.height) return image;
  GrayImage out{width, height, std::vector<uint8_t>(static_cast<size_t>(width) * static_cast<size_t>(height))};
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(image.height - 1, static_cast<int>((y + 0.5) * image.height / height));
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(image.width - 1, static_cast<int>((x + 0.5) * image.width / width));
      out.pixels[static_cast<size_t>(y) * width + x] = image.pixels[static_cast<size_t>(sy) * image.width + sx];
    }
  }
  return out;
}

GrayImage resize_bilinear(const GrayImage& image, int width, int height) {
  if (width == image.width && height == image.height) return image;
  GrayImage out{width, height, std::vector<uint8_t>(static_cast<size_t>(width) * static_cast<size_t>(height))};
  auto at = [&](int x, int y) {
    x = std::clamp(x, 0, image.width - 1);
    y = std::clamp(y, 0, image.height - 1);
    return static_cast<double>(image.pixels[static_cast<size_t>(y) * image.width + x]);
  };
  for (int y = 0; y < height; ++y) {
    const double fy = (y + 0.5) * image.height / height - 0.5;
    const int y0 = static_cast<int>(std::floor(fy));
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = (x + 0.5) * image.width / width - 0.5;
      const int x0 = static_cast<int>(std::floor(fx));
      const double wx = fx - x0;
      const double v = (1 - wy) * ((1 - wx) * at(x0, y0) + wx * at(x0 + 1, y0)) +
                       wy * ((1 - wx) * at(x0, y0 + 1) + wx * at(x0 + 1, y0 + 1));
      out.pixels[static_cast<size_t>(y) * width + x] = static_cast<uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  }
  return out;
}

}  // namespace maskdiff
