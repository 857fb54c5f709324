#include "maskdiff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace maskdiff {

namespace {

void check_finite(const FeatureSet& f, const char* what) {
  if (!f.rows.allFinite()) throw std::invalid_argument(std::string(what) + ": features contain non-finite values");
}

void check_binary_labels(std::span<const double> scores, std::span<const int> labels, const char* what) {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument(std::string(what) + ": " + std::to_string(scores.size()) + " scores but " +
                                std::to_string(labels.size()) + " labels");
  }
  for (int l : labels)
    if (l != 0 && l != 1) throw std::invalid_argument(std::string(what) + ": labels must be 0 or 1");
  for (double s : scores)
    if (!std::isfinite(s)) throw std::invalid_argument(std::string(what) + ": scores must be finite");
}

// Trace of the principal square root of a symmetric PSD matrix.
// Eigenvalues at or below this fraction of the largest are rounding noise of
// a zero eigenvalue; their square roots would otherwise add ~1e-8 each.
constexpr double kNullEigenvalue = 1e-12;

Eigen::VectorXd clipped_roots(const Eigen::VectorXd& eigenvalues) {
  const double floor = kNullEigenvalue * std::max(eigenvalues.cwiseAbs().maxCoeff(), 0.0);
  Eigen::VectorXd roots(eigenvalues.size());
  for (Eigen::Index i = 0; i < eigenvalues.size(); ++i)
    roots[i] = eigenvalues[i] > floor ? std::sqrt(eigenvalues[i]) : 0.0;
  return roots;
}

double trace_sqrt_psd(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
  return clipped_roots(es.eigenvalues()).sum();
}

// First k entries of a uniformly random permutation of [0, n).
std::vector<Eigen::Index> draw_subset(Eigen::Index n, int k, RngStream& rng) {
  std::vector<Eigen::Index> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  for (int i = 0; i < k; ++i) {
    const auto j = static_cast<size_t>(i) + rng.uniform_int(static_cast<uint64_t>(n - i));
    std::swap(idx[static_cast<size_t>(i)], idx[j]);
  }
  idx.resize(static_cast<size_t>(k));
  return idx;
}

}  // namespace

GaussianMoments fit_moments(const FeatureSet& features) {
  const Eigen::Index n = features.count();
  if (n < 2) throw std::invalid_argument("fit_moments: need at least 2 feature rows, got " + std::to_string(n));
  check_finite(features, "fit_moments");
  GaussianMoments m;
  m.mean = features.rows.colwise().mean().transpose();
  const Eigen::MatrixXd centered = features.rows.rowwise() - m.mean.transpose();
  m.covariance = (centered.transpose() * centered) / static_cast<double>(n - 1);
  m.covariance = 0.5 * (m.covariance + m.covariance.transpose()).eval();
  return m;
}

Eigen::MatrixXd matrix_sqrt_psd(const Eigen::MatrixXd& m, double symmetry_tolerance) {
  if (m.rows() != m.cols()) throw std::invalid_argument("matrix_sqrt_psd: matrix is not square");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
  if (asym > symmetry_tolerance * scale) {
    throw std::invalid_argument("matrix_sqrt_psd: matrix is not symmetric (max asymmetry " + std::to_string(asym) + ")");
  }
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  if (es.info() != Eigen::Success) throw std::runtime_error("matrix_sqrt_psd: eigendecomposition failed");
  const Eigen::VectorXd roots = clipped_roots(es.eigenvalues());
  Eigen::MatrixXd s = es.eigenvectors() * roots.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (s + s.transpose());
}

double fid(const GaussianMoments& a, const GaussianMoments& b) {
  if (a.mean.size() != b.mean.size()) {
    throw std::invalid_argument("fid: feature dimensions differ (" + std::to_string(a.mean.size()) + " vs " +
                                std::to_string(b.mean.size()) + ")");
  }
  const Eigen::MatrixXd sa = matrix_sqrt_psd(a.covariance);
  Eigen::MatrixXd cross = sa * b.covariance * sa;
  cross = 0.5 * (cross + cross.transpose()).eval();
  const double value = (a.mean - b.mean).squaredNorm() + a.covariance.trace() + b.covariance.trace() -
                       2.0 * trace_sqrt_psd(cross);
  if (value < -1e-8) throw std::runtime_error("fid: negative distance " + std::to_string(value));
  return std::max(0.0, value);
}

double fid(const FeatureSet& a, const FeatureSet& b) {
  if (a.dim() != b.dim()) {
    throw std::invalid_argument("fid: feature dimensions differ (" + std::to_string(a.dim()) + " vs " +
                                std::to_string(b.dim()) + ")");
  }
  return fid(fit_moments(a), fit_moments(b));
}

double kid_kernel(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  const double v = x.dot(y) / static_cast<double>(x.size()) + 1.0;
  return v * v * v;
}

double mmd2_unbiased(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  if (x.rows() != y.rows() || x.cols() != y.cols()) throw std::invalid_argument("mmd2_unbiased: shape mismatch");
  const Eigen::Index m = x.rows();
  if (m < 2) throw std::invalid_argument("mmd2_unbiased: need at least 2 rows per set");
  const double d = static_cast<double>(x.cols());
  auto kernel = [d](const Eigen::MatrixXd& p, const Eigen::MatrixXd& q) {
    return ((p * q.transpose()).array() / d + 1.0).cube().matrix().eval();
  };
  const Eigen::MatrixXd kxx = kernel(x, x), kyy = kernel(y, y), kxy = kernel(x, y);
  const double md = static_cast<double>(m);
  const double sxx = kxx.sum() - kxx.trace();
  const double syy = kyy.sum() - kyy.trace();
  return (sxx + syy) / (md * (md - 1.0)) - 2.0 * kxy.sum() / (md * md);
}

int default_kid_subset_size(const FeatureSet& a, const FeatureSet& b) {
  return static_cast<int>(std::min<Eigen::Index>({a.count(), b.count(), 100}));
}

KidResult kid(const FeatureSet& a, const FeatureSet& b, int subset_size, int n_subsets, RngStream& rng) {
  if (a.dim() != b.dim()) throw std::invalid_argument("kid: feature dimensions differ");
  if (n_subsets < 1) throw std::invalid_argument("kid: n_subsets must be >= 1");
  if (subset_size < 2) throw std::invalid_argument("kid: subset_size must be >= 2");
  if (subset_size > std::min(a.count(), b.count())) {
    throw std::invalid_argument("kid: subset_size " + std::to_string(subset_size) + " exceeds set sizes (" +
                                std::to_string(a.count()) + ", " + std::to_string(b.count()) + ")");
  }
  check_finite(a, "kid");
  check_finite(b, "kid");
  std::vector<double> values;
  values.reserve(static_cast<size_t>(n_subsets));
  for (int s = 0; s < n_subsets; ++s) {
    const auto ia = draw_subset(a.count(), subset_size, rng);
    const auto ib = draw_subset(b.count(), subset_size, rng);
    values.push_back(mmd2_unbiased(a.rows(ia, Eigen::all), b.rows(ib, Eigen::all)));
  }
  KidResult r;
  r.subset_size = subset_size;
  r.n_subsets = n_subsets;
  r.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - r.mean) * (v - r.mean);
  r.std = std::sqrt(var / static_cast<double>(values.size()));
  return r;
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
  check_binary_labels(scores, labels, "auroc");
  const size_t n = scores.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  // Average ranks (1-based) over tie groups.
  std::vector<double> rank(n);
  for (size_t i = 0; i < n;) {
    size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double pos = 0.0, rank_sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    if (labels[i] == 1) {
      pos += 1.0;
      rank_sum += rank[i];
    }
  }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0.0 || neg == 0.0) throw std::invalid_argument("auroc: labels must contain both classes");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

double average_precision(std::span<const double> scores, std::span<const int> labels) {
  check_binary_labels(scores, labels, "average_precision");
  const size_t n = scores.size();
  const double total_pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  if (total_pos == 0.0) throw std::invalid_argument("average_precision: no positive labels");
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] > scores[b]; });
  double ap = 0.0, tp = 0.0, prev_recall = 0.0;
  for (size_t i = 0; i < n;) {
    size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      tp += labels[order[j]];
      ++j;
    }
    const double recall = tp / total_pos;
    const double precision = tp / static_cast<double>(j);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

}  // namespace maskdiff
