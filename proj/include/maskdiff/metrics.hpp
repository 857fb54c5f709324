#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "maskdiff/image_io.hpp"
#include "maskdiff/rng.hpp"
#include "maskdiff/unet.hpp"

namespace maskdiff {

/// N feature vectors of dimension D, one per row.
struct FeatureSet {
  Eigen::MatrixXd rows;

  Eigen::Index count() const { return rows.rows(); }
  Eigen::Index dim() const { return rows.cols(); }
};

struct GaussianMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
};

/// Maps a grayscale image to a fixed-length feature vector.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::string name() const = 0;
  virtual std::string version() const = 0;
  virtual Eigen::VectorXd extract(const GrayImage& image) const = 0;
  // Batched form; the default calls extract() per image.
  virtual std::vector<Eigen::VectorXd> extract_batch(std::span<const GrayImage> images) const;

  std::string identity() const { return name() + "@" + version(); }
};

// Raw pixel values, row-major.
class FlattenExtractor final : public FeatureExtractor {
 public:
  std::string name() const override { return "flatten"; }
  std::string version() const override { return "1"; }
  Eigen::VectorXd extract(const GrayImage& image) const override;
};

/// Spatial mean of the denoiser's bottleneck activations for the clean image
/// (t = 0) with an all-zero mask channel. Images are resized to the model
/// resolution and min-max normalized first.
class PooledDenoiserEncoder final : public FeatureExtractor {
 public:
  PooledDenoiserEncoder(DenoiserParams params, UNetConfig config, std::string weights_id);

  std::string name() const override { return "pooled-denoiser-encoder"; }
  std::string version() const override { return "1:" + weights_id_; }
  Eigen::VectorXd extract(const GrayImage& image) const override;
  std::vector<Eigen::VectorXd> extract_batch(std::span<const GrayImage> images) const override;

 private:
  DenoiserParams params_;
  UNetConfig config_;
  std::string weights_id_;
};

// One row per image in input order. `ids` (optional, same length) names the
// failing image in error messages.
FeatureSet extract_features(std::span<const GrayImage> images, const FeatureExtractor& extractor,
                            std::span<const std::string> ids = {});

// Sample mean and unbiased (N-1) covariance, symmetrized.
GaussianMoments fit_moments(const FeatureSet& features);

// Principal square root of a symmetric PSD matrix via symmetric
// eigendecomposition. Eigenvalues at or below 1e-12 of the largest one are
// treated as zero.
Eigen::MatrixXd matrix_sqrt_psd(const Eigen::MatrixXd& m, double symmetry_tolerance = 1e-8);

double fid(const GaussianMoments& a, const GaussianMoments& b);
double fid(const FeatureSet& a, const FeatureSet& b);

struct KidResult {
  double mean = 0.0;
  double std = 0.0;
  int subset_size = 0;
  int n_subsets = 0;
};

// Polynomial kernel (x.y / D + 1)^3.
double kid_kernel(const Eigen::VectorXd& x, const Eigen::VectorXd& y);

// Unbiased MMD^2 between two equally sized sets (within-set diagonals excluded).
double mmd2_unbiased(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);

// Mean and population standard deviation of MMD^2 over `n_subsets` random
// subsets of `subset_size` rows drawn without replacement from each set.
KidResult kid(const FeatureSet& a, const FeatureSet& b, int subset_size, int n_subsets, RngStream& rng);

int default_kid_subset_size(const FeatureSet& a, const FeatureSet& b);

// Mann-Whitney AUROC; ties count one half.
double auroc(std::span<const double> scores, std::span<const int> labels);

// Step-sum average precision over descending score thresholds, equal scores
// forming a single step.
double average_precision(std::span<const double> scores, std::span<const int> labels);

}  // namespace maskdiff
