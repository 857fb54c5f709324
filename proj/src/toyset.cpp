#include "maskdiff/toyset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <stdexcept>

#include "maskdiff/rng.hpp"

namespace maskdiff {

namespace {

constexpr std::array<CellCategory, 4> kToyCategories = {CellCategory::MonoCSi, CellCategory::MultiCSi,
                                                        CellCategory::HalfCutMultiCSi, CellCategory::IbcDogbone};
constexpr std::array<int, 4> kLineSpacing = {5, 7, 9, 12};

constexpr double kBackgroundLevel = 130.0;
constexpr double kLineLevel = 210.0;
constexpr double kBusbarLevel = 232.0;
constexpr double kDefectLevel = 40.0;
constexpr double kPixelNoise = 5.0;

}  // namespace

ToySample generate_toy_sample(int index, uint64_t seed, const ClassCatalog& catalog, int size) {
  if (size < 16) throw std::invalid_argument("toy images must be at least 16 pixels");
  RngStream rng = RngStream(seed).substream(static_cast<uint64_t>(index));
  const size_t slot = static_cast<size_t>(index) % kToyCategories.size();
  ToySample s;
  char id[32];
  std::snprintf(id, sizeof id, "toy_%04d", index);
  s.id = id;
  s.category = kToyCategories[slot];

  const int spacing_label = catalog.index_of(spacing_class(s.category));
  const int busbar_label = catalog.index_of("busbars");
  const std::array<int, 2> defect_labels = {catalog.index_of("inactive"), catalog.index_of("corrosion")};
  const auto n = static_cast<size_t>(size) * static_cast<size_t>(size);
  std::vector<uint8_t> labels(n, static_cast<uint8_t>(catalog.background_index()));
  std::vector<double> level(n, kBackgroundLevel + (rng.uniform() - 0.5) * 30.0);

  const int spacing = kLineSpacing[slot] * size / kToyImageSize;
  const int phase = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(spacing)));
  for (int x = phase; x < size; x += spacing) {
    for (int y = 0; y < size; ++y) {
      labels[static_cast<size_t>(y) * size + x] = static_cast<uint8_t>(spacing_label);
      level[static_cast<size_t>(y) * size + x] = kLineLevel;
    }
  }
  const int bar_shift = static_cast<int>(rng.uniform_int(3));
  for (int bar_row : {size * 9 / 32 + bar_shift, size * 21 / 32 + bar_shift}) {
    for (int y = bar_row; y < bar_row + 2; ++y)
      for (int x = 0; x < size; ++x) {
        labels[static_cast<size_t>(y) * size + x] = static_cast<uint8_t>(busbar_label);
        level[static_cast<size_t>(y) * size + x] = kBusbarLevel;
      }
  }

  const int blobs = 1 + static_cast<int>(rng.uniform_int(2));
  for (int b = 0; b < blobs; ++b) {
    const size_t type = rng.uniform_int(2);
    const double scale = size / static_cast<double>(kToyImageSize);
    const double lo = type == 0 ? 3.5 : 2.0, hi = type == 0 ? 6.0 : 3.5;
    const double ax = (lo + (hi - lo) * rng.uniform()) * scale;
    const double ay = (lo + (hi - lo) * rng.uniform()) * scale;
    const double cx = size * (0.2 + 0.6 * rng.uniform());
    const double cy = size * (0.2 + 0.6 * rng.uniform());
    const double angle = std::numbers::pi * rng.uniform();
    const double ca = std::cos(angle), sa = std::sin(angle);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        const double u = (dx * ca + dy * sa) / ax, v = (-dx * sa + dy * ca) / ay;
        if (u * u + v * v <= 1.0) {
          labels[static_cast<size_t>(y) * size + x] = static_cast<uint8_t>(defect_labels[type]);
          level[static_cast<size_t>(y) * size + x] = kDefectLevel + 15.0 * static_cast<double>(type);
        }
      }
    }
  }

  s.image = GrayImage{size, size, std::vector<uint8_t>(n)};
  for (size_t i = 0; i < n; ++i) {
    const double v = level[i] + kPixelNoise * rng.normal();
    s.image.pixels[i] = static_cast<uint8_t>(std::clamp(std::lround(v), 0L, 255L));
  }
  s.annotation = AnnotationMap{size, size, std::move(labels)};
  return s;
}

std::vector<ToySample> generate_toyset(int count, uint64_t seed, const ClassCatalog& catalog, int size) {
  if (count < 1) throw std::invalid_argument("toy set size must be >= 1");
  std::vector<ToySample> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(generate_toy_sample(i, seed, catalog, size));
  return out;
}

void write_toyset(const std::string& out_dir, int count, uint64_t seed) {
  namespace fs = std::filesystem;
  const ClassCatalog catalog = ClassCatalog::standard();
  const auto samples = generate_toyset(count, seed, catalog);
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  fs::create_directories(fs::path(out_dir) / "annotations", ec);
  if (ec) throw std::runtime_error("cannot create toy set directory " + out_dir + ": " + ec.message());
  catalog.save((fs::path(out_dir) / "catalog.txt").string());
  for (const auto& s : samples) {
    write_pgm((fs::path(out_dir) / "images" / (s.id + ".pgm")).string(), s.image);
    save_annotation((fs::path(out_dir) / "annotations" / (s.id + ".pgm")).string(), s.annotation);
  }
}

}  // namespace maskdiff
