#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "maskdiff/dataset.hpp"

namespace maskdiff {

enum class Origin { Real, Synthetic };
enum class Split { Unassigned, Train, Val, Test };

std::string to_string(Origin origin);
std::string to_string(Split split);
Origin parse_origin(const std::string& text);
Split parse_split(const std::string& text);

struct ManifestRecord {
  std::string id;
  std::string image_path;
  std::string annotation_path;
  std::string category;
  Origin origin = Origin::Real;
  std::string paired_real_id;  // synthetic records only
  Split split = Split::Unassigned;

  bool operator==(const ManifestRecord&) const = default;
};

/// Line-delimited JSON: one header line, then one record per line with a
/// fixed field order.
struct DatasetManifest {
  int resolution = 32;
  std::string normalization = "per-image-minmax";
  std::vector<ManifestRecord> records;

  const ManifestRecord* find(const std::string& id) const;
  std::string to_jsonl() const;
  static DatasetManifest from_jsonl(const std::string& text);
  void save(const std::string& path) const;
  static DatasetManifest load(const std::string& path);

  bool operator==(const DatasetManifest&) const = default;
};

struct ImageEntry {
  std::string id;
  std::string image_path;
  std::string annotation_path;
  std::string paired_real_id;  // non-empty marks a synthetic image
};

// Categorizes each annotation and records pairings. Synthetic records take
// the category of their paired real image when it is present. Throws on
// duplicate ids.
DatasetManifest build_manifest(const std::vector<ImageEntry>& entries, const ClassCatalog& catalog, int resolution);

// Scans `image_dir` and `annotation_dir` for *.pgm files matched by stem.
// The optional pairing table lists "synthetic_id real_id" per line.
// Throws on an image without annotation or vice versa.
DatasetManifest build_manifest(const std::string& image_dir, const std::string& annotation_dir,
                               const std::string& pairing_table, const ClassCatalog& catalog, int resolution);

// Shuffles real records per category with `seed` and partitions them by
// (train, val, test) ratios; synthetic records inherit the split of their pair.
DatasetManifest split_manifest(const DatasetManifest& manifest, const std::array<double, 3>& ratios, uint64_t seed);

}  // namespace maskdiff
