#include <stdexcept>

#include "maskdiff/diffusion.hpp"
#include "maskdiff/metrics.hpp"

namespace maskdiff {

std::vector<Eigen::VectorXd> FeatureExtractor::extract_batch(std::span<const GrayImage> images) const {
  std::vector<Eigen::VectorXd> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(extract(img));
  return out;
}

Eigen::VectorXd FlattenExtractor::extract(const GrayImage& image) const {
  Eigen::VectorXd v(static_cast<Eigen::Index>(image.pixels.size()));
  for (size_t i = 0; i < image.pixels.size(); ++i) v[static_cast<Eigen::Index>(i)] = image.pixels[i];
  return v;
}

PooledDenoiserEncoder::PooledDenoiserEncoder(DenoiserParams params, UNetConfig config, std::string weights_id)
    : params_(std::move(params)), config_(std::move(config)), weights_id_(std::move(weights_id)) {
  config_.validate();
}

Eigen::VectorXd PooledDenoiserEncoder::extract(const GrayImage& image) const {
  return extract_batch(std::span<const GrayImage>(&image, 1)).front();
}

std::vector<Eigen::VectorXd> PooledDenoiserEncoder::extract_batch(std::span<const GrayImage> images) const {
  constexpr size_t kChunk = 32;
  const int s = config_.image_size;
  const auto plane = static_cast<size_t>(s) * static_cast<size_t>(s);
  const auto in_ch = static_cast<size_t>(config_.in_channels);
  std::vector<Eigen::VectorXd> out;
  out.reserve(images.size());
  for (size_t start = 0; start < images.size(); start += kChunk) {
    const size_t n = std::min(kChunk, images.size() - start);
    std::vector<float> data(n * in_ch * plane, 0.0f);
    for (size_t k = 0; k < n; ++k) {
      const GrayImage img = resize_bilinear(images[start + k], s, s);
      const auto norm = normalize_minmax(img.pixels);
      std::copy(norm.begin(), norm.end(), data.begin() + static_cast<std::ptrdiff_t>(k * in_ch * plane));
    }
    const Tensor x = Tensor::from_data({static_cast<int64_t>(n), config_.in_channels, s, s}, std::move(data));
    const std::vector<int> t(n, 0);
    const Tensor f = encode_bottleneck(params_, x, t, config_);
    const auto d = static_cast<size_t>(f.dim(1));
    for (size_t k = 0; k < n; ++k) {
      Eigen::VectorXd v(static_cast<Eigen::Index>(d));
      for (size_t j = 0; j < d; ++j) v[static_cast<Eigen::Index>(j)] = f.data()[k * d + j];
      out.push_back(std::move(v));
    }
  }
  return out;
}

FeatureSet extract_features(std::span<const GrayImage> images, const FeatureExtractor& extractor,
                            std::span<const std::string> ids) {
  if (images.empty()) throw std::invalid_argument("extract_features: no images");
  if (!ids.empty() && ids.size() != images.size()) throw std::invalid_argument("extract_features: ids/images size mismatch");
  auto label = [&](size_t i) { return ids.empty() ? "#" + std::to_string(i) : "'" + ids[i] + "'"; };
  std::vector<Eigen::VectorXd> vectors;
  try {
    vectors = extractor.extract_batch(images);
  } catch (const std::exception&) {
    // Re-run per image to name the one that fails.
    for (size_t i = 0; i < images.size(); ++i) {
      try {
        extractor.extract(images[i]);
      } catch (const std::exception& e) {
        throw std::runtime_error("feature extractor " + extractor.identity() + " failed on image " + label(i) + ": " + e.what());
      }
    }
    throw;
  }
  FeatureSet fs;
  const Eigen::Index d = vectors.front().size();
  fs.rows.resize(static_cast<Eigen::Index>(vectors.size()), d);
  for (size_t i = 0; i < vectors.size(); ++i) {
    if (vectors[i].size() != d) throw std::runtime_error("feature extractor returned inconsistent dimension for image " + label(i));
    if (!vectors[i].allFinite()) throw std::runtime_error("feature extractor produced non-finite features for image " + label(i));
    fs.rows.row(static_cast<Eigen::Index>(i)) = vectors[i].transpose();
  }
  return fs;
}

}  // namespace maskdiff
