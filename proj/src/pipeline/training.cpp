#include "polypbench/pipeline.hpp"

namespace polypbench {

namespace {

// [x ⊙ (1 − region) ; region] on the latent grid.
TrainingPair hidden_pair(const Image& image, const Mask& region, const LatentCodec& codec) {
  const Image latent = codec.encode(image);
  const Mask m = codec.spatial_factor() == 1 ? region : downsample_mask(region, codec.spatial_factor());
  return {latent, concat_channels(select(m, Image::zeros_like(latent), latent), mask_to_grid<float>(m))};
}

}  // namespace

std::vector<TrainingPair> uncond_pairs(const std::vector<Sample>& data, const LatentCodec& codec) {
  std::vector<TrainingPair> pairs;
  pairs.reserve(data.size());
  for (const auto& s : data) pairs.push_back({codec.encode(s.image), Image()});
  return pairs;
}

std::vector<TrainingPair> inpainter_pairs(const std::vector<Sample>& data, const LatentCodec& codec, RandomSource rng,
                                          const PipelineOptions& options, int copies) {
  // Healthy frames borrow the shape of the nearest earlier polyp sample, so
  // the model also sees contexts with no visible polyp, as at inference.
  const Sample* template_sample = nullptr;
  for (const auto& s : data)
    if (!s.healthy()) {
      template_sample = &s;
      break;
    }
  std::vector<TrainingPair> pairs;
  if (!template_sample) return pairs;
  for (const auto& s : data) {
    if (!s.healthy()) template_sample = &s;
    if (!s.image.same_shape(template_sample->image)) throw Error("inpainter_pairs: samples differ in shape");
    RandomSource sample_rng = rng.fork(s.id);
    const Mask region = dilate(template_sample->mask, options.scaled(options.dilation_px, s.cols()));
    for (int k = 0; k < copies; ++k) {
      Mask hidden;
      try {
        hidden = random_background_mask(region, sample_rng);
      } catch (const Error&) {
        continue;
      }
      if (!s.healthy() && (hidden.array() != 0 && dilate(s.mask, 1).array() != 0).any()) continue;
      pairs.push_back(hidden_pair(s.image, hidden, codec));
    }
  }
  return pairs;
}

std::vector<TrainingPair> repainter_pairs(const std::vector<Sample>& data, const LatentCodec& codec,
                                          const PipelineOptions& options) {
  std::vector<TrainingPair> pairs;
  for (const auto& s : data) {
    if (s.healthy()) continue;
    const Mask band = boundary_band(s.mask, options.scaled(options.band_inner_px, s.cols()),
                                    options.scaled(options.band_outer_px, s.cols()));
    pairs.push_back(hidden_pair(s.image, band, codec));
  }
  return pairs;
}

std::string to_string(ModelRole role) {
  switch (role) {
    case ModelRole::inpainter: return "inpainter";
    case ModelRole::uncond: return "uncond";
    case ModelRole::repainter: return "repainter";
  }
  return "?";
}

TrainedModel train_pipeline_model(ModelRole role, const std::vector<Sample>& data, const NoiseSchedule& schedule,
                                  DenoiserTrainingConfig config, const RandomSource& rng,
                                  const PipelineOptions& options) {
  if (data.empty()) throw Error("train_pipeline_model: empty dataset");
  std::vector<Image> images;
  images.reserve(data.size());
  for (const auto& s : data) images.push_back(s.image);
  TrainedModel out{nullptr, fit_affine_codec(images), {}};
  config.data_center = 0.0;
  config.data_scale = 1.0;

  std::vector<TrainingPair> pairs;
  switch (role) {
    case ModelRole::inpainter: pairs = inpainter_pairs(data, out.codec, rng.fork("masks"), options); break;
    case ModelRole::uncond: pairs = uncond_pairs(data, out.codec); break;
    case ModelRole::repainter: pairs = repainter_pairs(data, out.codec, options); break;
  }
  if (pairs.empty()) throw Error("train_pipeline_model: no " + to_string(role) + " training pairs (no polyp samples?)");
  out.model = train_denoiser(pairs, schedule, config, rng.fork("train"), &out.report);
  return out;
}

PipelineModels train_pipeline_models(const std::vector<Sample>& data, const NoiseSchedule& schedule,
                                     const DenoiserTrainingConfig& config, const RandomSource& rng,
                                     const PipelineOptions& options, ModelTrainingReport* report) {
  TrainedModel inpainter = train_pipeline_model(ModelRole::inpainter, data, schedule, config, rng.fork("inpainter"), options);
  TrainedModel uncond = train_pipeline_model(ModelRole::uncond, data, schedule, config, rng.fork("uncond"), options);
  TrainedModel repainter = train_pipeline_model(ModelRole::repainter, data, schedule, config, rng.fork("repainter"), options);
  if (report) *report = {inpainter.report, uncond.report, repainter.report};
  PipelineModels models;
  models.schedule = schedule;
  models.codec = std::make_shared<AffineCodec>(inpainter.codec);
  models.inpainter = inpainter.model;
  models.uncond = uncond.model;
  models.repainter = repainter.model;
  return models;
}

void save_pipeline_models(const std::filesystem::path& dir, const PipelineModels& models) {
  const auto* codec = dynamic_cast<const AffineCodec*>(models.codec.get());
  auto save = [&](const DenoiserPtr<float>& model, const std::string& name) {
    if (!model) return;
    const auto* conv = dynamic_cast<const ConvDenoiser*>(model.get());
    if (!conv) throw Error("save_pipeline_models: " + name + " is not a trained network");
    save_denoiser(dir / (name + ".pbck"), name, *conv, codec);
  };
  save(models.inpainter, "inpainter");
  save(models.uncond, "uncond");
  save(models.repainter, "repainter");
}

PipelineModels load_pipeline_models(const std::filesystem::path& inpainter, const std::filesystem::path& uncond,
                                    const std::filesystem::path& repainter) {
  PipelineModels models;
  std::optional<NoiseSchedule> schedule;
  std::optional<std::optional<AffineCodec>> codec;
  auto load = [&](const std::filesystem::path& path) -> DenoiserPtr<float> {
    if (path.empty()) return nullptr;
    Checkpoint ck = load_checkpoint(path);
    if (!ck.schedule) throw Error("checkpoint " + path.string() + " has no noise schedule");
    if (ck.kind == "segmenter") throw Error(path.string() + " is a segmenter, not a denoiser");
    if (schedule && !(*schedule == *ck.schedule))
      throw Error("checkpoint " + path.string() + " uses a different noise schedule");
    schedule = ck.schedule;
    if (codec) {
      const bool same = codec->has_value() == ck.codec.has_value() &&
                        (!ck.codec || ((*codec)->offset() == ck.codec->offset() && (*codec)->scale() == ck.codec->scale()));
      if (!same) throw Error("checkpoint " + path.string() + " was trained with a different codec");
    } else {
      codec = ck.codec;
    }
    return std::make_shared<ConvDenoiser>(std::move(ck.net), ck.latent_channels, ck.condition_channels, *ck.schedule,
                                          ck.data_center, ck.data_scale);
  };
  models.inpainter = load(inpainter);
  models.uncond = load(uncond);
  models.repainter = load(repainter);
  if (schedule) models.schedule = *schedule;
  if (codec && codec->has_value()) models.codec = std::make_shared<AffineCodec>(**codec);
  return models;
}

}  // namespace polypbench
