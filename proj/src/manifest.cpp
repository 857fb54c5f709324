#include "maskdiff/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "maskdiff/rng.hpp"

namespace maskdiff {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {
constexpr const char* kManifestFormat = "maskdiff-manifest-v1";
}

std::string to_string(Origin origin) { return origin == Origin::Real ? "real" : "synthetic"; }

std::string to_string(Split split) {
  switch (split) {
    case Split::Unassigned: return "unassigned";
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "unassigned";
}

Origin parse_origin(const std::string& text) {
  if (text == "real") return Origin::Real;
  if (text == "synthetic") return Origin::Synthetic;
  throw std::invalid_argument("unknown origin '" + text + "'");
}

Split parse_split(const std::string& text) {
  for (auto s : {Split::Unassigned, Split::Train, Split::Val, Split::Test})
    if (to_string(s) == text) return s;
  throw std::invalid_argument("unknown split '" + text + "'");
}

const ManifestRecord* DatasetManifest::find(const std::string& id) const {
  for (const auto& r : records)
    if (r.id == id) return &r;
  return nullptr;
}

std::string DatasetManifest::to_jsonl() const {
  std::string out;
  ordered_json header;
  header["type"] = "header";
  header["format"] = kManifestFormat;
  header["resolution"] = resolution;
  header["normalization"] = normalization;
  out += header.dump() + '\n';
  for (const auto& r : records) {
    ordered_json j;
    j["type"] = "record";
    j["id"] = r.id;
    j["image"] = r.image_path;
    j["annotation"] = r.annotation_path;
    j["category"] = r.category;
    j["origin"] = to_string(r.origin);
    j["paired_real_id"] = r.paired_real_id;
    j["split"] = to_string(r.split);
    out += j.dump() + '\n';
  }
  return out;
}

DatasetManifest DatasetManifest::from_jsonl(const std::string& text) {
  DatasetManifest m;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  bool saw_header = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::runtime_error("manifest line " + std::to_string(lineno) + ": " + e.what());
    }
    const std::string type = j.value("type", "");
    if (type == "header") {
      if (j.value("format", "") != kManifestFormat) throw std::runtime_error("manifest: unsupported format");
      m.resolution = j.at("resolution").get<int>();
      m.normalization = j.at("normalization").get<std::string>();
      saw_header = true;
    } else if (type == "record") {
      ManifestRecord r;
      r.id = j.at("id").get<std::string>();
      r.image_path = j.at("image").get<std::string>();
      r.annotation_path = j.at("annotation").get<std::string>();
      r.category = j.at("category").get<std::string>();
      r.origin = parse_origin(j.at("origin").get<std::string>());
      r.paired_real_id = j.at("paired_real_id").get<std::string>();
      r.split = parse_split(j.at("split").get<std::string>());
      m.records.push_back(std::move(r));
    } else {
      throw std::runtime_error("manifest line " + std::to_string(lineno) + ": unknown record type '" + type + "'");
    }
  }
  if (!saw_header) throw std::runtime_error("manifest: missing header line");
  return m;
}

void DatasetManifest::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest " + path);
  out << to_jsonl();
}

DatasetManifest DatasetManifest::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open manifest " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_jsonl(ss.str());
}

DatasetManifest build_manifest(const std::vector<ImageEntry>& entries, const ClassCatalog& catalog, int resolution) {
  if (resolution < 1) throw std::invalid_argument("build_manifest: resolution must be >= 1");
  DatasetManifest m;
  m.resolution = resolution;
  std::set<std::string> ids;
  for (const auto& e : entries) {
    if (!ids.insert(e.id).second) throw std::invalid_argument("build_manifest: duplicate image id '" + e.id + "'");
  }
  std::map<std::string, std::string> category_of;
  for (const auto& e : entries) {
    const AnnotationMap a = load_annotation(e.annotation_path, catalog);
    category_of[e.id] = to_string(categorize(a, catalog));
  }
  for (const auto& e : entries) {
    ManifestRecord r;
    r.id = e.id;
    r.image_path = e.image_path;
    r.annotation_path = e.annotation_path;
    r.origin = e.paired_real_id.empty() ? Origin::Real : Origin::Synthetic;
    r.paired_real_id = e.paired_real_id;
    r.category = category_of[e.id];
    if (r.origin == Origin::Synthetic) {
      auto it = category_of.find(e.paired_real_id);
      if (it != category_of.end()) r.category = it->second;
    }
    m.records.push_back(std::move(r));
  }
  return m;
}

DatasetManifest build_manifest(const std::string& image_dir, const std::string& annotation_dir,
                               const std::string& pairing_table, const ClassCatalog& catalog, int resolution) {
  auto scan = [](const std::string& dir) {
    std::map<std::string, std::string> files;
    if (!fs::exists(dir)) throw std::runtime_error("directory " + dir + " does not exist");
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (!entry.is_regular_file() || entry.path().extension() != ".pgm") continue;
      const std::string stem = entry.path().stem().string();
      if (!files.emplace(stem, entry.path().string()).second) throw std::invalid_argument("duplicate image id '" + stem + "'");
    }
    return files;
  };
  const auto images = scan(image_dir);
  const auto annotations = scan(annotation_dir);
  for (const auto& [id, _] : annotations) {
    if (!images.contains(id)) throw std::invalid_argument("orphan annotation '" + id + "' has no image");
  }
  std::map<std::string, std::string> pairs;
  if (!pairing_table.empty()) {
    std::ifstream in(pairing_table);
    if (!in) throw std::runtime_error("cannot open pairing table " + pairing_table);
    std::string line;
    while (std::getline(in, line)) {
      std::istringstream ls(line);
      std::string synth, real;
      if (!(ls >> synth) || synth[0] == '#') continue;
      if (!(ls >> real)) throw std::invalid_argument("pairing table line without real id: '" + line + "'");
      if (!pairs.emplace(synth, real).second) throw std::invalid_argument("duplicate image id '" + synth + "' in pairing table");
    }
  }
  std::vector<ImageEntry> entries;
  for (const auto& [id, path] : images) {
    auto ann = annotations.find(id);
    if (ann == annotations.end()) throw std::invalid_argument("orphan image '" + id + "' has no annotation");
    auto pair = pairs.find(id);
    entries.push_back({id, path, ann->second, pair == pairs.end() ? "" : pair->second});
  }
  return build_manifest(entries, catalog, resolution);
}

DatasetManifest split_manifest(const DatasetManifest& manifest, const std::array<double, 3>& ratios, uint64_t seed) {
  double total = 0.0;
  for (double r : ratios) {
    if (!(r > 0.0)) throw std::invalid_argument("split ratios must be positive");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("split ratios must sum to 1");

  DatasetManifest out = manifest;
  std::map<std::string, std::vector<size_t>> by_category;
  std::map<std::string, size_t> real_index;
  for (size_t i = 0; i < out.records.size(); ++i) {
    const auto& r = out.records[i];
    if (r.origin == Origin::Real) {
      by_category[r.category].push_back(i);
      real_index[r.id] = i;
    }
  }
  const RngStream root(seed);
  for (auto& [category, members] : by_category) {
    std::sort(members.begin(), members.end(), [&](size_t a, size_t b) { return out.records[a].id < out.records[b].id; });
    RngStream rng = root.substream(category);
    for (size_t i = members.size(); i > 1; --i) std::swap(members[i - 1], members[rng.uniform_int(i)]);
    const auto n = static_cast<double>(members.size());
    const auto n_train = static_cast<size_t>(std::llround(ratios[0] * n));
    const auto n_val = std::min(members.size() - std::min(members.size(), n_train),
                                static_cast<size_t>(std::llround(ratios[1] * n)));
    for (size_t k = 0; k < members.size(); ++k) {
      out.records[members[k]].split = k < n_train ? Split::Train : (k < n_train + n_val ? Split::Val : Split::Test);
    }
  }
  for (auto& r : out.records) {
    if (r.origin != Origin::Synthetic) continue;
    auto it = real_index.find(r.paired_real_id);
    if (r.paired_real_id.empty() || it == real_index.end()) {
      throw std::invalid_argument("synthetic record '" + r.id + "' has no resolvable real pair '" + r.paired_real_id + "'");
    }
    r.split = out.records[it->second].split;
  }
  return out;
}

}  // namespace maskdiff
