#pragma once

#include <string>
#include <vector>

#include "maskdiff/dataset.hpp"
#include "maskdiff/image_io.hpp"
#include "maskdiff/manifest.hpp"
#include "maskdiff/trainer.hpp"

namespace maskdiff {

enum class MaskSelection { All, Background, FeatureDefect };

std::string to_string(MaskSelection selection);
MaskSelection parse_mask_selection(const std::string& text);

// Resizes image (bilinear) and annotation (nearest) to `resolution`, then
// pairs the normalized image with each selected conditioning mask. Pair ids
// are "<id>#background" and "<id>#defect-<class index>".
std::vector<TrainingPair> make_pairs(const std::string& id, const std::string& category, const GrayImage& image,
                                     const AnnotationMap& annotation, const ClassCatalog& catalog, int resolution,
                                     MaskSelection selection);

// All pairs from manifest records in `split`, in record order.
std::vector<TrainingPair> load_pairs(const DatasetManifest& manifest, const ClassCatalog& catalog, Split split,
                                     MaskSelection selection);

}  // namespace maskdiff
