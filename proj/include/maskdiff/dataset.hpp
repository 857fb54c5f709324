#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "maskdiff/image_io.hpp"

namespace maskdiff {

enum class ClassKind { Background, Feature, Defect };

std::string to_string(ClassKind kind);
ClassKind parse_class_kind(const std::string& text);

struct ClassEntry {
  int index = 0;
  std::string name;
  ClassKind kind = ClassKind::Background;
};

/// Ordered class catalog. Indices are dense from 0; exactly one background class.
class ClassCatalog {
 public:
  ClassCatalog() = default;
  explicit ClassCatalog(std::vector<ClassEntry> entries);

  // 31 entries: bckgrnd, 14 feature classes and 16 defect classes, including
  // the spacing classes used for cell categorization.
  static ClassCatalog standard();

  // Tab-separated "index<TAB>name<TAB>kind" lines; '#' starts a comment line.
  static ClassCatalog parse(const std::string& text);
  static ClassCatalog load(const std::string& path);
  std::string to_text() const;
  void save(const std::string& path) const;

  const std::vector<ClassEntry>& entries() const { return entries_; }
  size_t size() const { return entries_.size(); }
  bool valid_index(int index) const { return index >= 0 && index < static_cast<int>(entries_.size()); }
  ClassKind kind(int index) const;
  const std::string& name(int index) const;
  std::optional<int> find(const std::string& name) const;
  int index_of(const std::string& name) const;  // throws when absent
  int background_index() const { return background_; }
  int count(ClassKind kind) const;

 private:
  void validate() const;
  std::vector<ClassEntry> entries_;
  int background_ = 0;
};

/// Per-pixel class indices.
struct AnnotationMap {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> labels;

  uint8_t at(int x, int y) const { return labels[static_cast<size_t>(y) * width + x]; }
  bool operator==(const AnnotationMap&) const = default;
};

// Throws listing every offending label value.
void validate_annotation(const AnnotationMap& a, const ClassCatalog& catalog);
AnnotationMap load_annotation(const std::string& path, const ClassCatalog& catalog);
void save_annotation(const std::string& path, const AnnotationMap& a);
AnnotationMap resize_annotation(const AnnotationMap& a, int size);

enum class CellCategory { MonoCSi, MultiCSi, HalfCutMultiCSi, IbcDogbone, HalfCutMonoCSi };

// Short identifiers: mono, multi, multi_halfcut, dogbone, mono_halfcut.
std::string to_string(CellCategory category);
CellCategory parse_category(const std::string& text);
// Spacing class name that identifies a category, e.g. "sp mono".
std::string spacing_class(CellCategory category);

// Majority spacing class among sp mono / sp multi / sp multi halfcut /
// sp dogbone, ties to the lower catalog index. Maps with only
// "sp mono halfcut" spacing yield HalfCutMonoCSi and an underrepresentation
// warning. Throws when no spacing pixels exist.
CellCategory categorize(const AnnotationMap& a, const ClassCatalog& catalog,
                        std::vector<std::string>* warnings = nullptr);

enum class MaskKind { Background, FeatureDefect };

/// Binary conditioning mask, 1 = white.
struct ConditioningMask {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> bits;
  MaskKind kind = MaskKind::Background;
  int defect_class = -1;  // FeatureDefect only
  std::string source_id;
  std::string category;

  int64_t ones() const;
  GrayImage to_image() const;  // 0 / 255
  std::vector<float> to_floats() const;
};

// 1 exactly on background pixels.
ConditioningMask background_mask(const AnnotationMap& a, const ClassCatalog& catalog);

// One mask per distinct defect class present (ascending class index): all
// feature pixels plus that defect's pixels.
std::vector<ConditioningMask> feature_defect_masks(const AnnotationMap& a, const ClassCatalog& catalog);

// Reads a 0/255 (or 0/1) PGM back into a mask; other values are rejected.
ConditioningMask mask_from_image(const GrayImage& image);

}  // namespace maskdiff
