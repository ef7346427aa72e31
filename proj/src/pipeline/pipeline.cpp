#include "polypbench/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "polypbench/io.hpp"

namespace polypbench {

void PipelineModels::validate(int latent_channels) const {
  if (!codec) throw Error("pipeline: codec missing");
  if (inpainter && inpainter->condition_channels() != latent_channels + 1)
    throw Error("pipeline: inpainter must take masked image + mask as condition");
  if (repainter && repainter->condition_channels() != latent_channels + 1)
    throw Error("pipeline: repainter must take image + band mask as condition");
  if (uncond && uncond->condition_channels() != 0) throw Error("pipeline: uncond model must be unconditional");
}

void StageBudgets::validate() const {
  if (steps_bg < 1 || steps_edit < 1 || steps_refine < 1) throw Error("budgets: step counts must be positive");
  if (!(t0_fraction >= 0.0 && t0_fraction <= 1.0)) throw Error("budgets: t0_fraction must lie in [0, 1]");
}

int StageBudgets::t0(const NoiseSchedule& schedule) const {
  return int(std::lround(t0_fraction * schedule.steps()));
}

int PipelineOptions::scaled(int px, int width) const {
  if (px < 0) throw Error("pipeline: negative radius");
  if (px == 0) return 0;
  if (reference_size <= 0) throw Error("pipeline: reference_size must be positive");
  return std::max(1, int(std::lround(double(px) * width / reference_size)));
}

namespace {

const Denoiser<float>& require(const DenoiserPtr<float>& model, const char* what) {
  if (!model) throw Error(std::string("pipeline: ") + what + " model missing");
  return *model;
}

Image clamp01(Image image) {
  image.array() = image.array().max(0.0f).min(1.0f);
  return image;
}

Mask latent_mask(const Mask& mask, const LatentCodec& codec) {
  return codec.spatial_factor() == 1 ? mask : downsample_mask(mask, codec.spatial_factor());
}

// [x ⊙ (1 − m) ; m]: the known content and the region to fill.
Image masked_condition(const Image& latent, const Mask& mask) {
  const Image holes = select(mask, Image::zeros_like(latent), latent);
  return concat_channels(holes, mask_to_grid<float>(mask));
}

}  // namespace

Image recover_background(const Sample& sample, const PipelineModels& models, const StageBudgets& budgets,
                         RandomSource& rng, const PipelineOptions& options) {
  budgets.validate();
  validate(sample);
  if (sample.healthy()) return sample.image;
  const Denoiser<float>& inpainter = require(models.inpainter, "inpainter");
  const Mask region = dilate(sample.mask, options.scaled(options.dilation_px, sample.cols()));
  if ((region != 0).all()) throw Error("recover_background: nothing to condition on");

  const Image latent = models.codec->encode(sample.image);
  const Mask region_latent = latent_mask(region, *models.codec);
  const Image condition = masked_condition(latent, region_latent);
  const Image generated = polypbench::sample(inpainter, condition, models.schedule, budgets.steps_bg, rng,
                                             latent.channels(), latent.rows(), latent.cols());
  return select(region, clamp01(models.codec->decode(generated)), sample.image);
}

AffineMatrix edit_matrix(const EditSpec& spec, const Mask& mask) {
  switch (spec.kind) {
    case EditKind::size:
      return size_matrix(spec.size_factor, enclosing_rect(mask));
    case EditKind::position:
      return position_matrix(spec.dx, spec.dy);
    case EditKind::healthy:
      break;
  }
  throw Error("edit_attributes: edit kind must be size or position");
}

EditResult edit_attributes(const Sample& sample, const Image& background, const EditSpec& spec,
                           const PipelineModels& models, const StageBudgets& budgets, RandomSource& rng) {
  budgets.validate();
  validate(sample);
  if (!background.same_shape(sample.image)) throw Error("edit_attributes: background shape mismatch");
  const Denoiser<float>& uncond = require(models.uncond, "uncond");
  const int t0 = budgets.t0(models.schedule);
  if (t0 < 1) throw Error("edit_attributes: t0_fraction must be positive");

  EditResult result;
  std::tie(result.transformed, result.mask) = apply_affine(sample.image, sample.mask, edit_matrix(spec, sample.mask));
  const Image x_object = models.codec->encode(result.transformed);
  const Image x_background = models.codec->encode(background);
  const Mask object = latent_mask(result.mask, *models.codec);

  auto noised_object = [&](int t) {
    return forward_noise(x_object, t, rng.normal_grid<float>(x_object.channels(), x_object.rows(), x_object.cols()),
                         models.schedule);
  };
  const Image start_noise = rng.normal_grid<float>(x_background.channels(), x_background.rows(), x_background.cols());
  Image x = select(object, forward_noise(x_object, t0, start_noise, models.schedule),
                   forward_noise(x_background, t0, start_noise, models.schedule));
  const StepHook<float> blend = [&](Image& current, int t_prev) {
    current = select(object, noised_object(t_prev), current);
  };
  x = ddim_reverse(std::move(x), t0, budgets.steps_edit, uncond, Image(), models.schedule, blend);
  result.image = clamp01(models.codec->decode(x));
  return result;
}

Image refine_boundary(const Image& edited, const Mask& mask, const PipelineModels& models, const StageBudgets& budgets,
                      RandomSource& rng, const PipelineOptions& options) {
  budgets.validate();
  if (mask_area(mask) == 0) throw Error("refine_boundary: empty mask");
  if (!edited.same_extent(int(mask.rows()), int(mask.cols()))) throw Error("refine_boundary: shape mismatch");
  const Denoiser<float>& repainter = require(models.repainter, "repainter");
  const Mask band = boundary_band(mask, options.scaled(options.band_inner_px, edited.cols()),
                                  options.scaled(options.band_outer_px, edited.cols()));
  const int t0 = budgets.t0(models.schedule);
  if (t0 < 1) return edited;

  const Image latent = models.codec->encode(edited);
  const Mask band_latent = latent_mask(band, *models.codec);
  const Image condition = masked_condition(latent, band_latent);
  const Image noise = rng.normal_grid<float>(latent.channels(), latent.rows(), latent.cols());
  const Image x = ddim_reverse(forward_noise(latent, t0, noise, models.schedule), t0, budgets.steps_refine, repainter,
                               condition, models.schedule);
  return select(band, clamp01(models.codec->decode(x)), edited);
}

Image reconstruct(const Sample& sample, const PipelineModels& models, const StageBudgets& budgets, RandomSource& rng) {
  budgets.validate();
  const int t0 = budgets.t0(models.schedule);
  if (t0 == 0) return sample.image;
  const Denoiser<float>& uncond = require(models.uncond, "uncond");
  const Image latent = models.codec->encode(sample.image);
  const Image noise = rng.normal_grid<float>(latent.channels(), latent.rows(), latent.cols());
  const Image x = ddim_reverse(forward_noise(latent, t0, noise, models.schedule), t0, budgets.steps_edit, uncond,
                               Image(), models.schedule);
  return clamp01(models.codec->decode(x));
}

std::string variant_id(const std::string& sample_id, const VariantFamily& family) {
  return sample_id + "__" + family.label();
}

VariantOutput build_variant(const Sample& sample, const Image& background, const VariantFamily& family,
                            const PipelineModels& models, const StageBudgets& budgets, RandomSource rng,
                            const PipelineOptions& options) {
  VariantOutput out;
  VariantRecord& rec = out.record;
  rec.variant_id = variant_id(sample.id, family);
  rec.source_sample_id = sample.id;
  rec.family = family;
  const std::string stem = "bench/" + family.label() + "/" + rec.variant_id;
  rec.image_path = stem + ".img.png";
  rec.mask_path = stem + ".mask.png";

  if (family.kind == EditKind::healthy) {
    out.image = quantize8(background);
    out.mask = Mask::Zero(sample.mask.rows(), sample.mask.cols());
    return out;
  }
  if (sample.healthy()) {
    rec.failure = "source sample has no polyp to edit";
    return out;
  }

  const Rect rect = enclosing_rect(sample.mask);
  RandomSource draw = rng.fork("magnitude");
  for (int attempt = 0; attempt < options.max_attempts; ++attempt) {
    const double u = draw.uniform(family.lo, family.hi);
    EditSpec spec;
    if (family.kind == EditKind::size) {
      spec = EditSpec::size(1.0 + u);
    } else {
      spec = EditSpec::position(int(std::lround(u * rect.w)), int(std::lround(u * rect.h)), u);
    }
    try {
      apply_affine(sample.image, sample.mask, edit_matrix(spec, sample.mask));
    } catch (const OutOfFrame&) {
      continue;
    }
    RandomSource edit_rng = rng.fork("edit");
    RandomSource refine_rng = rng.fork("refine");
    EditResult edited = edit_attributes(sample, background, spec, models, budgets, edit_rng);
    out.image = quantize8(refine_boundary(edited.image, edited.mask, models, budgets, refine_rng, options));
    out.mask = std::move(edited.mask);
    if (spec.kind == EditKind::size) {
      rec.size_factor = spec.size_factor;
    } else {
      rec.dx = spec.dx;
      rec.dy = spec.dy;
      rec.tau = spec.tau;
    }
    return out;
  }
  char reason[96];
  std::snprintf(reason, sizeof reason, "transform left the frame on %d consecutive draws", options.max_attempts);
  rec.failure = reason;
  return out;
}

double seam_laplacian(const Image& image, const Mask& mask) {
  if (!image.same_extent(int(mask.rows()), int(mask.cols()))) throw Error("seam_laplacian: shape mismatch");
  if (mask_area(mask) == 0) return 0.0;
  const Mask contour = (dilate(mask, 1) != 0 && erode(mask, 1) == 0).cast<std::uint8_t>();
  const int rows = image.rows(), cols = image.cols();
  double worst = 0.0;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      if (!contour(r, c)) continue;
      double magnitude = 0.0;
      for (int ch = 0; ch < image.channels(); ++ch) {
        auto at = [&](int rr, int cc) {
          return double(image(ch, std::clamp(rr, 0, rows - 1), std::clamp(cc, 0, cols - 1)));
        };
        magnitude += std::abs(at(r - 1, c) + at(r + 1, c) + at(r, c - 1) + at(r, c + 1) - 4.0 * at(r, c));
      }
      worst = std::max(worst, magnitude);
    }
  return worst;
}

}  // namespace polypbench
