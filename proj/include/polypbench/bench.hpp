#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "polypbench/metrics.hpp"
#include "polypbench/nn/unet.hpp"
#include "polypbench/pipeline.hpp"
#include "polypbench/records.hpp"

namespace polypbench {

// ------------------------------------------------------------ segmenters

/// A segmentation model under test: image → per-pixel probability.
class SegmenterAdapter {
 public:
  virtual ~SegmenterAdapter() = default;
  virtual std::string name() const = 0;
  virtual Plane<float> predict(const Image& image) const = 0;
};

using SegmenterPtr = std::shared_ptr<const SegmenterAdapter>;

/// Stable content hash of an image's float values and shape.
std::uint64_t image_hash(const Image& image);

/// Returns the registered ground-truth mask of an image, looked up by
/// content. Unknown images raise an error.
class OracleAdapter final : public SegmenterAdapter {
 public:
  std::string name() const override { return "oracle"; }
  void add(const Image& image, const Mask& mask);
  Plane<float> predict(const Image& image) const override;

 private:
  std::unordered_map<std::uint64_t, Mask> truth_;
};

/// Predicts 0 everywhere (empty) or 1 everywhere (full).
class ConstantAdapter final : public SegmenterAdapter {
 public:
  explicit ConstantAdapter(bool full) : full_(full) {}
  std::string name() const override { return full_ ? "full" : "empty"; }
  Plane<float> predict(const Image& image) const override;

 private:
  bool full_;
};

/// Memoizes another adapter by image content.
class CachedAdapter final : public SegmenterAdapter {
 public:
  explicit CachedAdapter(SegmenterPtr inner) : inner_(std::move(inner)) {}
  std::string name() const override { return inner_->name(); }
  Plane<float> predict(const Image& image) const override;
  std::size_t cached() const { return cache_.size(); }

 private:
  SegmenterPtr inner_;
  mutable std::unordered_map<std::uint64_t, Plane<float>> cache_;
};

/// Small conv encoder-decoder trained with per-pixel binary cross-entropy.
class ConvSegmenter final : public SegmenterAdapter {
 public:
  ConvSegmenter(nn::UNet net, std::string name) : net_(std::move(net)), name_(std::move(name)) {}
  std::string name() const override { return name_; }
  Plane<float> predict(const Image& image) const override;
  const nn::UNet& network() const { return net_; }
  nn::UNet& network() { return net_; }
  /// Network input for an image in [0,1].
  static Image normalize(const Image& image);

 private:
  nn::UNet net_;
  std::string name_;
};

struct SegmenterTrainingConfig {
  int epochs = 8;
  int batch_size = 8;
  double learning_rate = 3e-3;
  int width = 8;
  int eval_samples = 32;
};

struct SegmenterReport {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  int steps = 0;
  double loss_ratio() const { return initial_loss > 0.0 ? final_loss / initial_loss : 0.0; }
};

std::shared_ptr<ConvSegmenter> train_segmenter(const std::vector<Sample>& data, const SegmenterTrainingConfig& config,
                                               RandomSource rng, const std::string& name = "toyseg",
                                               SegmenterReport* report = nullptr);

void save_segmenter(const std::filesystem::path& path, const ConvSegmenter& model);
std::shared_ptr<ConvSegmenter> load_segmenter(const std::filesystem::path& path, const std::string& name = "");

// ------------------------------------------------------------- benchmark

struct BuildOptions {
  PipelineOptions pipeline;
  int jobs = 1;
  std::ostream* log = nullptr;
};

/// One build_variant attempt per (sample, family); files go under
/// `out_dir/bench/<family>/`, the manifest to `out_dir/manifest.jsonl`.
/// All records are pending. Failures are recorded, never thrown.
BenchmarkManifest build_benchmark(const std::vector<Sample>& dataset, const std::vector<VariantFamily>& families,
                                  const PipelineModels& models, const StageBudgets& budgets, const RandomSource& rng,
                                  const std::filesystem::path& out_dir, const BuildOptions& options = {});

/// Image and mask of a manifest record, loaded from `base_dir`.
Sample load_variant(const VariantRecord& record, const std::filesystem::path& base_dir);

/// The five attribute conditions reported, in column order.
const std::vector<std::string>& attribute_conditions();

struct EvaluationRow {
  std::string model;
  double real_dice = 0.0;
  std::optional<double> healthy_fpr;
  std::optional<double> recon_drop;
  std::map<std::string, std::optional<double>> drops;  // keyed by attribute_conditions()
  std::optional<double> avg_drop;
  std::vector<std::string> warnings;

  /// Recomputes avg_drop from the present attribute drops.
  void update_average();
  bool operator==(const EvaluationRow& o) const;
};

struct EvaluateOptions {
  bool include_pending = false;
  /// Reconstructions of real samples, matched to real_test by id.
  const std::vector<Sample>* reconstructions = nullptr;
};

/// Report row for one adapter. Drops compare per-image Dice means over
/// exactly the source images that have an accepted variant in a condition.
EvaluationRow evaluate(const SegmenterAdapter& adapter, const std::vector<Sample>& real_test,
                       const BenchmarkManifest& manifest, const std::filesystem::path& base_dir,
                       const EvaluateOptions& options = {});

struct RenderedTable {
  std::string text;  // aligned columns, two decimals
  std::string csv;   // full precision, re-parsable
};

RenderedTable render_report(const std::vector<EvaluationRow>& rows);
/// Left-aligned first column, right-aligned others, two spaces apart.
std::string align_table(const std::vector<std::vector<std::string>>& table);
std::vector<EvaluationRow> parse_report_csv(const std::string& csv);

// --------------------------------------------------------------- quality

struct SyntheticImage {
  std::string id;
  std::string source_id;  // id of the real image it was generated from
  Image image;
};

struct QualityRow {
  std::string source;
  std::size_t images = 0;
  std::size_t excluded = 0;  // synthetic images without a matching real source
  double fid = 0.0;
  bool fid_regularized = false;
  double ms_ssim = 0.0;  // mean over (synthetic, source) pairs, in [0, 1]
  int ms_ssim_scales = 0;
  std::optional<VoteStats> votes;
};

struct QualityReport {
  std::vector<QualityRow> rows;
  std::optional<VoteStats> real_votes;  // votes cast on real images
  std::vector<std::string> warnings;
};

/// One row per synthetic source. Votes on synthetic images are attached to
/// every row; votes on real images are reported separately.
QualityReport quality_report(const std::vector<Sample>& real_set,
                             const std::map<std::string, std::vector<SyntheticImage>>& synthetic,
                             const FeatureExtractor& extractor, const std::vector<VoteRecord>& votes);

RenderedTable render_quality(const QualityReport& report);

// ---------------------------------------------------------- augmentation

struct TrainedSegmenter {
  SegmenterPtr model;
  double loss_ratio = 0.0;
};

/// Trains a fresh segmenter on `data` with `seed`.
using SegmenterFactory = std::function<TrainedSegmenter(const std::vector<Sample>& data, std::uint64_t seed)>;

struct AugmentationRow {
  std::string segmenter;
  std::string source;  // "baseline" or the augmentation source name
  double id_dice = 0.0;
  double ood_dice = 0.0;
  double id_delta = 0.0;  // vs baseline, over seeds where both converged
  double ood_delta = 0.0;
  int seeds_used = 0;
  std::vector<std::uint64_t> flagged_seeds;  // loss ratio above the threshold
};

struct AugmentationResult {
  std::vector<AugmentationRow> rows;
  std::vector<std::string> warnings;
};

struct AugmentationOptions {
  std::vector<std::uint64_t> seeds{1, 2, 3};
  double max_loss_ratio = 0.9;
};

/// Baseline trains on `train_set`; each source trains on `train_set` plus an
/// equal number of synthetic samples (all of them if fewer), drawn per seed.
AugmentationResult augmentation_experiment(const std::vector<Sample>& train_set,
                                           const std::map<std::string, std::vector<Sample>>& synthetic_sources,
                                           const std::map<std::string, SegmenterFactory>& segmenters,
                                           const std::vector<Sample>& id_test, const std::vector<Sample>& ood_test,
                                           const AugmentationOptions& options = {});

RenderedTable render_augmentation(const AugmentationResult& result);

/// Mean per-image Dice of an adapter on a labeled set.
double mean_dice(const SegmenterAdapter& adapter, const std::vector<Sample>& samples);

}  // namespace polypbench
