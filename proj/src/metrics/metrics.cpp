#include "polypbench/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

namespace polypbench {

Mask binarize(const Plane<float>& probability, double threshold) {
  return (probability >= float(threshold)).cast<std::uint8_t>();
}

double dice(const Mask& pred, const Mask& gt) {
  require_same_extent(pred, gt, "dice");
  const auto p = pred != 0, g = gt != 0;
  const Eigen::Index both = (p && g).count();
  const Eigen::Index total = p.count() + g.count();
  if (total == 0) return 100.0;
  return 100.0 * 2.0 * double(both) / double(total);
}

double fpr(const Mask& pred, const Mask& gt) {
  require_same_extent(pred, gt, "fpr");
  const auto negative = gt == 0;
  const Eigen::Index negatives = negative.count();
  if (negatives == 0) throw Error("fpr: no negatives");
  return 100.0 * double((negative && pred != 0).count()) / double(negatives);
}

// ---------------------------------------------------------------- MS-SSIM

namespace {

using Map2 = Plane<double>;

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr std::array<double, 5> kScaleWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

std::array<double, kWindow> gaussian_window() {
  std::array<double, kWindow> w{};
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double x = i - kWindow / 2;
    sum += w[i] = std::exp(-x * x / (2.0 * kSigma * kSigma));
  }
  for (double& v : w) v /= sum;
  return w;
}

// Separable "valid" filtering: output shrinks by window − 1 on each axis.
Map2 filter_valid(const Map2& x) {
  static const auto w = gaussian_window();
  const Eigen::Index rows = x.rows(), cols = x.cols();
  Map2 horizontal(rows, cols - kWindow + 1);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < horizontal.cols(); ++c) {
      double s = 0.0;
      for (int k = 0; k < kWindow; ++k) s += w[k] * x(r, c + k);
      horizontal(r, c) = s;
    }
  Map2 out(rows - kWindow + 1, horizontal.cols());
  for (Eigen::Index r = 0; r < out.rows(); ++r)
    for (Eigen::Index c = 0; c < out.cols(); ++c) {
      double s = 0.0;
      for (int k = 0; k < kWindow; ++k) s += w[k] * horizontal(r + k, c);
      out(r, c) = s;
    }
  return out;
}

// 2×2 average pooling; odd sides get one zero pad on each end, and padded
// cells still count in the divisor.
Map2 pool2(const Map2& x) {
  const Eigen::Index pr = x.rows() % 2, pc = x.cols() % 2;
  const Eigen::Index rows = (x.rows() + 2 * pr - 2) / 2 + 1, cols = (x.cols() + 2 * pc - 2) / 2 + 1;
  Map2 out(rows, cols);
  auto at = [&](Eigen::Index r, Eigen::Index c) {
    return (r < 0 || c < 0 || r >= x.rows() || c >= x.cols()) ? 0.0 : x(r, c);
  };
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      const Eigen::Index r0 = 2 * r - pr, c0 = 2 * c - pc;
      out(r, c) = 0.25 * (at(r0, c0) + at(r0, c0 + 1) + at(r0 + 1, c0) + at(r0 + 1, c0 + 1));
    }
  return out;
}

struct SsimTerms {
  double ssim;
  double cs;
};

SsimTerms ssim_terms(const Map2& x, const Map2& y) {
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const Map2 mu1 = filter_valid(x), mu2 = filter_valid(y);
  const Map2 s11 = filter_valid(x * x) - mu1 * mu1;
  const Map2 s22 = filter_valid(y * y) - mu2 * mu2;
  const Map2 s12 = filter_valid(x * y) - mu1 * mu2;
  const Map2 cs = (2.0 * s12 + c2) / (s11 + s22 + c2);
  const Map2 ssim = ((2.0 * mu1 * mu2 + c1) / (mu1.square() + mu2.square() + c1)) * cs;
  return {ssim.mean(), cs.mean()};
}

}  // namespace

MsSsimResult ms_ssim_detailed(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw Error("ms_ssim: shape mismatch");
  const int side = std::min(a.rows(), a.cols());
  int scales = 5;
  while (scales > 1 && side < kWindow * (1 << (scales - 1))) --scales;
  if (side < kWindow) throw Error("ms_ssim: images smaller than the 11 px window");
  double weight_sum = 0.0;
  for (int i = 0; i < scales; ++i) weight_sum += kScaleWeights[std::size_t(i)];

  double total = 0.0;
  for (int ch = 0; ch < a.channels(); ++ch) {
    Map2 x = a.plane(ch).cast<double>(), y = b.plane(ch).cast<double>();
    double value = 1.0;
    for (int level = 0; level < scales; ++level) {
      const double w = kScaleWeights[std::size_t(level)] / weight_sum;
      const SsimTerms terms = ssim_terms(x, y);
      if (level + 1 < scales) {
        value *= std::pow(std::max(terms.cs, 0.0), w);
        x = pool2(x);
        y = pool2(y);
      } else {
        value *= std::pow(std::max(terms.ssim, 0.0), w);
      }
    }
    total += value;
  }
  return {total / a.channels(), scales};
}

// -------------------------------------------------------------------- FID

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, double tolerance) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  if (eig.info() != Eigen::Success) throw Error("psd_sqrt: eigendecomposition failed");
  const Eigen::VectorXd roots = eig.eigenvalues().unaryExpr([&](double v) { return v < tolerance ? 0.0 : std::sqrt(v); });
  return eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose();
}

double fid_from_moments(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& sigma1, const Eigen::VectorXd& mu2,
                        const Eigen::MatrixXd& sigma2) {
  const Eigen::Index d = mu1.size();
  if (mu2.size() != d || sigma1.rows() != d || sigma1.cols() != d || sigma2.rows() != d || sigma2.cols() != d)
    throw Error("fid_from_moments: dimension mismatch");
  // Tr((Σ1Σ2)^{1/2}) = Tr((√Σ1 Σ2 √Σ1)^{1/2}), whose argument is symmetric PSD.
  const Eigen::MatrixXd root1 = psd_sqrt(sigma1);
  const Eigen::MatrixXd inner = root1 * sigma2 * root1;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success) throw Error("fid_from_moments: eigendecomposition failed");
  double cross = 0.0;
  for (Eigen::Index i = 0; i < d; ++i) cross += eig.eigenvalues()(i) > 1e-10 ? std::sqrt(eig.eigenvalues()(i)) : 0.0;
  const double value = (mu1 - mu2).squaredNorm() + sigma1.trace() + sigma2.trace() - 2.0 * cross;
  return std::max(value, 0.0);
}

RandomProjectionExtractor::RandomProjectionExtractor(std::uint64_t seed, int projections, int grid, int channels)
    : grid_(grid), channels_(channels) {
  if (projections < 1 || grid < 1 || channels < 1) throw Error("RandomProjectionExtractor: invalid config");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int inputs = channels * grid * grid;
  projection_.resize(projections, inputs);
  for (Eigen::Index i = 0; i < projection_.size(); ++i) projection_.data()[i] = normal(rng) / std::sqrt(double(inputs));
}

Eigen::VectorXd RandomProjectionExtractor::extract(const Image& image) const {
  if (image.channels() != channels_) throw Error("RandomProjectionExtractor: channel mismatch");
  if (image.rows() < grid_ || image.cols() < grid_) throw Error("RandomProjectionExtractor: image smaller than grid");
  // Area average onto a grid_×grid_ lattice of (possibly uneven) cells.
  Eigen::VectorXd pooled(channels_ * grid_ * grid_);
  for (int ch = 0; ch < channels_; ++ch)
    for (int gy = 0; gy < grid_; ++gy)
      for (int gx = 0; gx < grid_; ++gx) {
        const int r0 = gy * image.rows() / grid_, r1 = (gy + 1) * image.rows() / grid_;
        const int c0 = gx * image.cols() / grid_, c1 = (gx + 1) * image.cols() / grid_;
        pooled((ch * grid_ + gy) * grid_ + gx) =
            image.plane(ch).block(r0, c0, r1 - r0, c1 - c0).cast<double>().mean();
      }
  Eigen::VectorXd out(dimension());
  out.head(projection_.rows()) = projection_ * pooled;
  for (int ch = 0; ch < channels_; ++ch) {
    const auto plane = image.plane(ch).cast<double>();
    const double mean = plane.mean();
    out(projection_.rows() + 2 * ch) = mean;
    out(projection_.rows() + 2 * ch + 1) = std::sqrt((plane - mean).square().mean());
  }
  return out;
}

FeatureMoments feature_moments(const Eigen::MatrixXd& features, double ridge) {
  const Eigen::Index n = features.rows(), d = features.cols();
  if (n < 2) throw Error("feature_moments: need at least two samples");
  FeatureMoments m;
  m.mean = features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = features.rowwise() - m.mean.transpose();
  m.covariance = centered.transpose() * centered / double(n - 1);
  if (n < d + 1) {
    m.ridge = ridge;
    m.covariance.diagonal().array() += ridge;
  }
  return m;
}

FidResult fid(const std::vector<Image>& a, const std::vector<Image>& b, const FeatureExtractor& extractor) {
  auto stack = [&](const std::vector<Image>& images) {
    Eigen::MatrixXd f(Eigen::Index(images.size()), extractor.dimension());
    for (std::size_t i = 0; i < images.size(); ++i) f.row(Eigen::Index(i)) = extractor.extract(images[i]).transpose();
    return f;
  };
  const FeatureMoments ma = feature_moments(stack(a)), mb = feature_moments(stack(b));
  return {fid_from_moments(ma.mean, ma.covariance, mb.mean, mb.covariance), ma.ridge > 0.0 || mb.ridge > 0.0};
}

// ------------------------------------------------------------------ votes

std::string to_string(Vote vote) { return vote == Vote::real ? "real" : "fake"; }

Vote vote_from_string(const std::string& text) {
  if (text == "real") return Vote::real;
  if (text == "fake") return Vote::fake;
  throw Error("unknown vote '" + text + "'");
}

std::string to_string(SetTruth truth) { return truth == SetTruth::real_set ? "real_set" : "synthetic_set"; }

SetTruth set_truth_from_string(const std::string& text) {
  if (text == "real_set") return SetTruth::real_set;
  if (text == "synthetic_set") return SetTruth::synthetic_set;
  throw Error("unknown set '" + text + "'");
}

double percent_one_decimal(long part, long whole) {
  if (whole <= 0) throw Error("percent_one_decimal: empty total");
  const long tenths = (2000 * part + whole) / (2 * whole);
  return double(tenths) / 10.0;
}

VoteStats vote_stats(const std::vector<VoteRecord>& records, std::optional<SetTruth> filter) {
  VoteStats s;
  for (const auto& r : records) {
    if (filter && r.blinded_truth != *filter) continue;
    (r.verdict == Vote::real ? s.real_count : s.fake_count) += 1;
  }
  const long n = s.real_count + s.fake_count;
  if (n == 0) throw Error("vote_stats: no votes match the filter");
  s.real_pct = percent_one_decimal(s.real_count, n);
  s.fake_pct = percent_one_decimal(s.fake_count, n);
  return s;
}

}  // namespace polypbench
