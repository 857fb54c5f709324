#include "maskdiff/dataset.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace maskdiff {

std::string to_string(ClassKind kind) {
  switch (kind) {
    case ClassKind::Background: return "background";
    case ClassKind::Feature: return "feature";
    case ClassKind::Defect: return "defect";
  }
  return "unknown";
}

ClassKind parse_class_kind(const std::string& text) {
  if (text == "background") return ClassKind::Background;
  if (text == "feature") return ClassKind::Feature;
  if (text == "defect") return ClassKind::Defect;
  throw std::invalid_argument("unknown class kind '" + text + "'");
}

ClassCatalog::ClassCatalog(std::vector<ClassEntry> entries) : entries_(std::move(entries)) {
  std::sort(entries_.begin(), entries_.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
  validate();
  for (const auto& e : entries_)
    if (e.kind == ClassKind::Background) background_ = e.index;
}

void ClassCatalog::validate() const {
  if (entries_.empty()) throw std::invalid_argument("catalog is empty");
  if (entries_.size() > 256) throw std::invalid_argument("catalog exceeds 256 classes");
  int backgrounds = 0;
  std::set<std::string> names;
  for (size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].index != static_cast<int>(i)) {
      throw std::invalid_argument("catalog indices must be unique and dense; expected " + std::to_string(i) + ", found " +
                                  std::to_string(entries_[i].index));
    }
    if (!names.insert(entries_[i].name).second) throw std::invalid_argument("duplicate class name '" + entries_[i].name + "'");
    if (entries_[i].kind == ClassKind::Background) ++backgrounds;
  }
  if (backgrounds != 1) throw std::invalid_argument("catalog needs exactly one background class, found " + std::to_string(backgrounds));
}

ClassCatalog ClassCatalog::standard() {
  static const std::array<const char*, 14> kFeatures = {
      "sp multi", "sp mono", "sp dogbone", "ribbons", "border", "text", "padding",
      "clamp", "busbars", "frame edge", "jbox", "sp mono halfcut", "sp multi halfcut", "cell edge"};
  static const std::array<const char*, 16> kDefects = {
      "crack rbn edge", "inactive", "rings", "material", "crack", "gridline", "splice", "dead cell",
      "corrosion", "belt mark", "edge dark", "meas artifact", "scuff", "corrosion cell", "brightening", "star"};
  std::vector<ClassEntry> entries{{0, "bckgrnd", ClassKind::Background}};
  for (const char* n : kFeatures) entries.push_back({static_cast<int>(entries.size()), n, ClassKind::Feature});
  for (const char* n : kDefects) entries.push_back({static_cast<int>(entries.size()), n, ClassKind::Defect});
  return ClassCatalog(std::move(entries));
}

ClassCatalog ClassCatalog::parse(const std::string& text) {
  std::vector<ClassEntry> entries;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::istringstream ls(line);
    std::string f;
    while (std::getline(ls, f, '\t')) fields.push_back(f);
    if (fields.size() != 3) throw std::invalid_argument("catalog line " + std::to_string(lineno) + ": expected index<TAB>name<TAB>kind");
    try {
      entries.push_back({std::stoi(fields[0]), fields[1], parse_class_kind(fields[2])});
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("catalog line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return ClassCatalog(std::move(entries));
}

ClassCatalog ClassCatalog::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open catalog " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string ClassCatalog::to_text() const {
  std::string out = "# index\tname\tkind\n";
  for (const auto& e : entries_) out += std::to_string(e.index) + '\t' + e.name + '\t' + to_string(e.kind) + '\n';
  return out;
}

void ClassCatalog::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write catalog " + path);
  out << to_text();
}

ClassKind ClassCatalog::kind(int index) const {
  if (!valid_index(index)) throw std::out_of_range("class index " + std::to_string(index) + " not in catalog");
  return entries_[static_cast<size_t>(index)].kind;
}

const std::string& ClassCatalog::name(int index) const {
  if (!valid_index(index)) throw std::out_of_range("class index " + std::to_string(index) + " not in catalog");
  return entries_[static_cast<size_t>(index)].name;
}

std::optional<int> ClassCatalog::find(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.index;
  return std::nullopt;
}

int ClassCatalog::index_of(const std::string& name) const {
  if (auto i = find(name)) return *i;
  throw std::out_of_range("class '" + name + "' not in catalog");
}

int ClassCatalog::count(ClassKind kind) const {
  return static_cast<int>(std::count_if(entries_.begin(), entries_.end(), [&](const auto& e) { return e.kind == kind; }));
}

void validate_annotation(const AnnotationMap& a, const ClassCatalog& catalog) {
  if (a.labels.size() != static_cast<size_t>(a.width) * static_cast<size_t>(a.height)) {
    throw std::invalid_argument("annotation label count does not match its dimensions");
  }
  std::set<int> bad;
  for (uint8_t v : a.labels)
    if (!catalog.valid_index(v)) bad.insert(v);
  if (!bad.empty()) {
    std::string list;
    for (int v : bad) list += (list.empty() ? "" : ", ") + std::to_string(v);
    throw std::invalid_argument("annotation contains class indices not in the " + std::to_string(catalog.size()) +
                                "-entry catalog: " + list);
  }
}

AnnotationMap load_annotation(const std::string& path, const ClassCatalog& catalog) {
  GrayImage img = read_pgm(path);
  AnnotationMap a{img.width, img.height, std::move(img.pixels)};
  try {
    validate_annotation(a, catalog);
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
  return a;
}

void save_annotation(const std::string& path, const AnnotationMap& a) { write_pgm(path, GrayImage{a.width, a.height, a.labels}); }

AnnotationMap resize_annotation(const AnnotationMap& a, int size) {
  GrayImage r = resize_nearest(GrayImage{a.width, a.height, a.labels}, size, size);
  return AnnotationMap{r.width, r.height, std::move(r.pixels)};
}

std::string to_string(CellCategory category) {
  switch (category) {
    case CellCategory::MonoCSi: return "mono";
    case CellCategory::MultiCSi: return "multi";
    case CellCategory::HalfCutMultiCSi: return "multi_halfcut";
    case CellCategory::IbcDogbone: return "dogbone";
    case CellCategory::HalfCutMonoCSi: return "mono_halfcut";
  }
  return "unknown";
}

CellCategory parse_category(const std::string& text) {
  for (auto c : {CellCategory::MonoCSi, CellCategory::MultiCSi, CellCategory::HalfCutMultiCSi, CellCategory::IbcDogbone,
                 CellCategory::HalfCutMonoCSi}) {
    if (to_string(c) == text) return c;
  }
  throw std::invalid_argument("unknown cell category '" + text + "'");
}

std::string spacing_class(CellCategory category) {
  switch (category) {
    case CellCategory::MonoCSi: return "sp mono";
    case CellCategory::MultiCSi: return "sp multi";
    case CellCategory::HalfCutMultiCSi: return "sp multi halfcut";
    case CellCategory::IbcDogbone: return "sp dogbone";
    case CellCategory::HalfCutMonoCSi: return "sp mono halfcut";
  }
  return "";
}

CellCategory categorize(const AnnotationMap& a, const ClassCatalog& catalog, std::vector<std::string>* warnings) {
  validate_annotation(a, catalog);
  std::vector<int64_t> histogram(catalog.size(), 0);
  for (uint8_t v : a.labels) ++histogram[v];

  struct Candidate {
    CellCategory category;
    int index;
  };
  std::vector<Candidate> candidates;
  for (auto c : {CellCategory::MonoCSi, CellCategory::MultiCSi, CellCategory::HalfCutMultiCSi, CellCategory::IbcDogbone}) {
    if (auto idx = catalog.find(spacing_class(c))) candidates.push_back({c, *idx});
  }
  std::sort(candidates.begin(), candidates.end(), [](const auto& x, const auto& y) { return x.index < y.index; });

  const std::optional<int> mono_halfcut = catalog.find(spacing_class(CellCategory::HalfCutMonoCSi));
  const int64_t mono_halfcut_pixels = mono_halfcut ? histogram[static_cast<size_t>(*mono_halfcut)] : 0;

  int64_t best_count = 0;
  std::optional<CellCategory> best;
  for (const auto& c : candidates) {
    const int64_t n = histogram[static_cast<size_t>(c.index)];
    if (n > best_count) {
      best_count = n;
      best = c.category;
    }
  }
  if (mono_halfcut_pixels > 0 && warnings) {
    warnings->push_back("annotation contains half-cut mono-c-Si spacing; this category is underrepresented");
  }
  if (best) return *best;
  if (mono_halfcut_pixels > 0) return CellCategory::HalfCutMonoCSi;
  throw std::invalid_argument("annotation has no spacing-class pixels; cannot categorize");
}

int64_t ConditioningMask::ones() const { return std::count(bits.begin(), bits.end(), uint8_t{1}); }

GrayImage ConditioningMask::to_image() const {
  GrayImage img{width, height, bits};
  for (auto& p : img.pixels) p = p ? 255 : 0;
  return img;
}

std::vector<float> ConditioningMask::to_floats() const { return {bits.begin(), bits.end()}; }

ConditioningMask background_mask(const AnnotationMap& a, const ClassCatalog& catalog) {
  validate_annotation(a, catalog);
  ConditioningMask m;
  m.width = a.width;
  m.height = a.height;
  m.kind = MaskKind::Background;
  m.bits.resize(a.labels.size());
  const int bg = catalog.background_index();
  for (size_t i = 0; i < a.labels.size(); ++i) m.bits[i] = a.labels[i] == bg ? 1 : 0;
  return m;
}

std::vector<ConditioningMask> feature_defect_masks(const AnnotationMap& a, const ClassCatalog& catalog) {
  validate_annotation(a, catalog);
  std::set<int> defects;
  for (uint8_t v : a.labels)
    if (catalog.kind(v) == ClassKind::Defect) defects.insert(v);
  std::vector<ConditioningMask> out;
  for (int d : defects) {
    ConditioningMask m;
    m.width = a.width;
    m.height = a.height;
    m.kind = MaskKind::FeatureDefect;
    m.defect_class = d;
    m.bits.resize(a.labels.size());
    for (size_t i = 0; i < a.labels.size(); ++i) {
      const int v = a.labels[i];
      m.bits[i] = (v == d || catalog.kind(v) == ClassKind::Feature) ? 1 : 0;
    }
    out.push_back(std::move(m));
  }
  return out;
}

ConditioningMask mask_from_image(const GrayImage& image) {
  ConditioningMask m;
  m.width = image.width;
  m.height = image.height;
  m.bits.resize(image.pixels.size());
  for (size_t i = 0; i < image.pixels.size(); ++i) {
    const uint8_t v = image.pixels[i];
    if (v == 0) {
      m.bits[i] = 0;
    } else if (v == 255 || v == 1) {
      m.bits[i] = 1;
    } else {
      throw std::invalid_argument("mask image is not binary (value " + std::to_string(v) + ")");
    }
  }
  return m;
}

}  // namespace maskdiff
