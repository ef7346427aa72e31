#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "polypbench/diffusion/conv_denoiser.hpp"
#include "polypbench/diffusion/ddim.hpp"
#include "polypbench/diffusion/denoiser.hpp"
#include "polypbench/diffusion/schedule.hpp"
#include "polypbench/maskops.hpp"
#include "polypbench/random.hpp"
#include "polypbench/records.hpp"

namespace polypbench {

/// The three denoisers of the editing pipeline. The inpainter sees
/// [masked image ; mask], the repainter [image outside the band ; band].
struct PipelineModels {
  DenoiserPtr<float> inpainter;
  DenoiserPtr<float> uncond;
  DenoiserPtr<float> repainter;
  std::shared_ptr<const LatentCodec> codec = std::make_shared<IdentityCodec>();
  NoiseSchedule schedule;

  /// Throws unless the models that are present have the expected
  /// condition layout for `latent_channels`.
  void validate(int latent_channels) const;
};

struct StageBudgets {
  int steps_bg = 50;
  int steps_edit = 20;
  int steps_refine = 20;
  double t0_fraction = 0.4;

  void validate() const;
  /// round(t0_fraction · T).
  int t0(const NoiseSchedule& schedule) const;
};

/// Pixel radii are given at `reference_size` and scaled by the image width.
struct PipelineOptions {
  int dilation_px = 20;
  int band_inner_px = 10;
  int band_outer_px = 10;
  int reference_size = 512;
  int max_attempts = 20;

  /// round(px · width / reference_size), at least 1 for positive px.
  int scaled(int px, int width) const;
};

/// Inpaints dilate(M) with the conditional model from pure noise and pastes
/// the known pixels back. Returns the input when the mask is empty.
Image recover_background(const Sample& sample, const PipelineModels& models, const StageBudgets& budgets,
                         RandomSource& rng, const PipelineOptions& options = {});

struct EditResult {
  Image image;        // I^e
  Mask mask;          // M^o
  Image transformed;  // I^o: source image with the polyp moved by the edit
};

/// Affine matrix of an edit for the given source mask.
AffineMatrix edit_matrix(const EditSpec& spec, const Mask& mask);

/// Moves the polyp with the edit's affine matrix, then runs the
/// unconditional model from the background noised to t0 while pinning the
/// transformed polyp (noised to the current level) inside M^o at every step.
EditResult edit_attributes(const Sample& sample, const Image& background, const EditSpec& spec,
                           const PipelineModels& models, const StageBudgets& budgets, RandomSource& rng);

/// Repaints boundary_band(M^o) with the repainter, starting from I^e noised
/// to t0; pixels outside the band are copied from I^e.
Image refine_boundary(const Image& edited, const Mask& mask, const PipelineModels& models, const StageBudgets& budgets,
                      RandomSource& rng, const PipelineOptions& options = {});

/// Noise to t0 and denoise with the unconditional model; no masks involved.
Image reconstruct(const Sample& sample, const PipelineModels& models, const StageBudgets& budgets, RandomSource& rng);

struct VariantOutput {
  VariantRecord record;
  Image image;  // 8-bit quantized; empty when the record failed
  Mask mask;
};

std::string variant_id(const std::string& sample_id, const VariantFamily& family);

/// One variant of `family` for `sample`. `background` is I^bg for the
/// sample (see recover_background). Image and mask paths in the record are
/// `bench/<family>/<variant_id>.{img,mask}.png`.
VariantOutput build_variant(const Sample& sample, const Image& background, const VariantFamily& family,
                            const PipelineModels& models, const StageBudgets& budgets, RandomSource rng,
                            const PipelineOptions& options = {});

// -------------------------------------------------------------- training

/// Encoded clean images, no condition.
std::vector<TrainingPair> uncond_pairs(const std::vector<Sample>& data, const LatentCodec& codec);

/// Per sample and copy: a region shaped like dilate(M) placed on background
/// only (see random_background_mask), hidden from the condition. Healthy
/// samples use the mask of the nearest earlier polyp sample. Draws with no
/// room for such a region are skipped.
std::vector<TrainingPair> inpainter_pairs(const std::vector<Sample>& data, const LatentCodec& codec, RandomSource rng,
                                          const PipelineOptions& options = {}, int copies = 2);

/// The boundary band of each polyp hidden from the condition.
std::vector<TrainingPair> repainter_pairs(const std::vector<Sample>& data, const LatentCodec& codec,
                                          const PipelineOptions& options = {});

enum class ModelRole { inpainter, uncond, repainter };
std::string to_string(ModelRole role);

struct TrainedModel {
  std::shared_ptr<ConvDenoiser> model;
  AffineCodec codec;
  TrainingReport report;
};

/// Fits an AffineCodec to `data` and trains one denoiser on its
/// unit-variance latents. The codec depends on the images only, so the
/// three roles trained on one dataset share it.
TrainedModel train_pipeline_model(ModelRole role, const std::vector<Sample>& data, const NoiseSchedule& schedule,
                                  DenoiserTrainingConfig config, const RandomSource& rng,
                                  const PipelineOptions& options = {});

struct ModelTrainingReport {
  TrainingReport inpainter, uncond, repainter;
};

/// All three roles, each with rng.fork(role).
PipelineModels train_pipeline_models(const std::vector<Sample>& data, const NoiseSchedule& schedule,
                                     const DenoiserTrainingConfig& config, const RandomSource& rng,
                                     const PipelineOptions& options = {}, ModelTrainingReport* report = nullptr);

/// Writes `<dir>/{inpainter,uncond,repainter}.pbck` with the codec embedded.
void save_pipeline_models(const std::filesystem::path& dir, const PipelineModels& models);

/// Loads whichever paths are non-empty. All loaded checkpoints must agree on
/// schedule and codec; models without an embedded codec use the identity.
PipelineModels load_pipeline_models(const std::filesystem::path& inpainter, const std::filesystem::path& uncond,
                                    const std::filesystem::path& repainter);

/// Largest per-pixel Laplacian magnitude (summed over channels) on the
/// one-pixel contour of `mask`.
double seam_laplacian(const Image& image, const Mask& mask);

}  // namespace polypbench
