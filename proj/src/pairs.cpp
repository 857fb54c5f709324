#include "maskdiff/pairs.hpp"

#include <stdexcept>

#include "maskdiff/diffusion.hpp"

namespace maskdiff {

std::string to_string(MaskSelection selection) {
  switch (selection) {
    case MaskSelection::All: return "all";
    case MaskSelection::Background: return "background";
    case MaskSelection::FeatureDefect: return "feature-defect";
  }
  return "all";
}

MaskSelection parse_mask_selection(const std::string& text) {
  for (auto s : {MaskSelection::All, MaskSelection::Background, MaskSelection::FeatureDefect})
    if (to_string(s) == text) return s;
  throw std::invalid_argument("unknown mask selection '" + text + "' (expected all, background or feature-defect)");
}

std::vector<TrainingPair> make_pairs(const std::string& id, const std::string& category, const GrayImage& image,
                                     const AnnotationMap& annotation, const ClassCatalog& catalog, int resolution,
                                     MaskSelection selection) {
  if (image.width != annotation.width || image.height != annotation.height) {
    throw std::invalid_argument("image '" + id + "' is " + std::to_string(image.width) + "x" +
                                std::to_string(image.height) + " but its annotation is " +
                                std::to_string(annotation.width) + "x" + std::to_string(annotation.height));
  }
  const GrayImage img = resize_bilinear(image, resolution, resolution);
  const AnnotationMap ann = resize_annotation(annotation, resolution);
  const std::vector<float> pixels = normalize_minmax(img.pixels);
  std::vector<TrainingPair> out;
  if (selection != MaskSelection::FeatureDefect) {
    out.push_back({id + "#background", category, pixels, background_mask(ann, catalog).to_floats()});
  }
  if (selection != MaskSelection::Background) {
    for (const auto& m : feature_defect_masks(ann, catalog)) {
      out.push_back({id + "#defect-" + std::to_string(m.defect_class), category, pixels, m.to_floats()});
    }
  }
  return out;
}

std::vector<TrainingPair> load_pairs(const DatasetManifest& manifest, const ClassCatalog& catalog, Split split,
                                     MaskSelection selection) {
  std::vector<TrainingPair> out;
  for (const auto& r : manifest.records) {
    if (r.split != split) continue;
    const GrayImage image = read_pgm(r.image_path);
    const AnnotationMap ann = load_annotation(r.annotation_path, catalog);
    auto pairs = make_pairs(r.id, r.category, image, ann, catalog, manifest.resolution, selection);
    out.insert(out.end(), std::make_move_iterator(pairs.begin()), std::make_move_iterator(pairs.end()));
  }
  return out;
}

}  // namespace maskdiff
