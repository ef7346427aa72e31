#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "polypbench/grid.hpp"

namespace polypbench {

/// Probabilities at or above `threshold` become 1.
Mask binarize(const Plane<float>& probability, double threshold = 0.5);

/// 100·2|P∩G|/(|P|+|G|); 100 when both masks are empty.
double dice(const Mask& pred, const Mask& gt);
/// 100·|P∩¬G|/|¬G|. Throws when gt has no negative pixel.
double fpr(const Mask& pred, const Mask& gt);
/// real − variant, in Dice points.
inline double dice_drop(double real_mean, double variant_mean) { return real_mean - variant_mean; }

struct MsSsimResult {
  double value = 0.0;
  int scales = 0;  // 5 unless the image is too small
};

/// Multi-scale SSIM with an 11-tap Gaussian window (σ = 1.5), K1 = 0.01,
/// K2 = 0.03, data range 1 and the usual five scale weights. Images whose
/// shorter side is under 176 px use fewer scales with the leading weights
/// renormalized. Computed per channel, then averaged.
MsSsimResult ms_ssim_detailed(const Image& a, const Image& b);
inline double ms_ssim(const Image& a, const Image& b) { return ms_ssim_detailed(a, b).value; }

/// Fréchet distance between N(μ1, Σ1) and N(μ2, Σ2).
double fid_from_moments(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& sigma1, const Eigen::VectorXd& mu2,
                        const Eigen::MatrixXd& sigma2);

/// Symmetric PSD square root with eigenvalues below `tolerance` clamped to 0.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, double tolerance = 1e-10);

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual int dimension() const = 0;
  virtual Eigen::VectorXd extract(const Image& image) const = 0;
};

/// Area-downsampled image projected by a fixed Gaussian matrix to
/// `projections` values, followed by per-channel mean and standard deviation.
class RandomProjectionExtractor final : public FeatureExtractor {
 public:
  explicit RandomProjectionExtractor(std::uint64_t seed = 0, int projections = 64, int grid = 16, int channels = 3);
  int dimension() const override { return int(projection_.rows()) + 2 * channels_; }
  Eigen::VectorXd extract(const Image& image) const override;

 private:
  int grid_;
  int channels_;
  Eigen::MatrixXd projection_;
};

struct FeatureMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
  double ridge = 0.0;  // added to the diagonal when samples ≤ dimension
};

/// Rows are samples. Unbiased covariance.
FeatureMoments feature_moments(const Eigen::MatrixXd& features, double ridge = 1e-6);

struct FidResult {
  double value = 0.0;
  bool regularized = false;
};

FidResult fid(const std::vector<Image>& a, const std::vector<Image>& b, const FeatureExtractor& extractor);

enum class Vote { real, fake };
enum class SetTruth { real_set, synthetic_set };

std::string to_string(Vote vote);
Vote vote_from_string(const std::string& text);
std::string to_string(SetTruth truth);
SetTruth set_truth_from_string(const std::string& text);

struct VoteRecord {
  std::string sample_id;
  Vote verdict = Vote::real;
  std::string reviewer;
  SetTruth blinded_truth = SetTruth::synthetic_set;
  bool operator==(const VoteRecord&) const = default;
};

struct VoteStats {
  double real_pct = 0.0;  // one decimal
  double fake_pct = 0.0;
  long real_count = 0;
  long fake_count = 0;
  bool operator==(const VoteStats&) const = default;
};

/// Aggregates the votes whose truth matches `filter` (all votes when unset).
VoteStats vote_stats(const std::vector<VoteRecord>& records, std::optional<SetTruth> filter = std::nullopt);

/// round(100·part/whole, 1) computed in integers so ties do not depend on
/// floating-point representation.
double percent_one_decimal(long part, long whole);

}  // namespace polypbench
