#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "maskdiff/dataset.hpp"
#include "maskdiff/image_io.hpp"

namespace maskdiff {

/// Procedural stand-in for annotated EL crops: bright vertical grid lines
/// (spacing class of the cell type) and horizontal busbars as features, dark
/// elliptical "inactive" / "corrosion" blobs as defects.
struct ToySample {
  std::string id;
  CellCategory category = CellCategory::MonoCSi;
  GrayImage image;
  AnnotationMap annotation;
};

inline constexpr int kToyImageSize = 32;

// Sample `index` of the set generated with `seed`; category is index mod 4.
ToySample generate_toy_sample(int index, uint64_t seed, const ClassCatalog& catalog, int size = kToyImageSize);

std::vector<ToySample> generate_toyset(int count, uint64_t seed, const ClassCatalog& catalog,
                                       int size = kToyImageSize);

// Writes images/<id>.pgm, annotations/<id>.pgm and catalog.txt under out_dir.
void write_toyset(const std::string& out_dir, int count, uint64_t seed);

}  // namespace maskdiff
