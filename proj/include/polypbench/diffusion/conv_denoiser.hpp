#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "polypbench/diffusion/denoiser.hpp"
#include "polypbench/diffusion/schedule.hpp"
#include "polypbench/nn/unet.hpp"
#include "polypbench/random.hpp"

namespace polypbench {

/// Scalings that keep the network input and output near unit variance at
/// every noise level. With σ = sqrt((1-ᾱ)/ᾱ) and y = x_t/sqrt(ᾱ) - center,
/// the network sees in_scale·y and ε̂ = skip·y - out_scale·F.
struct Preconditioning {
  double in_scale = 1.0;
  double skip = 0.0;
  double out_scale = 1.0;
  double inv_sqrt_alpha_bar = 1.0;
};

/// Learned ε-predictor: the U-Net sees [x_t ; condition] stacked on channels.
class ConvDenoiser final : public Denoiser<float> {
 public:
  /// `data_center` and `data_scale` are the assumed mean and spread of clean
  /// latents.
  ConvDenoiser(nn::UNet net, int latent_channels, int condition_channels, NoiseSchedule schedule,
               double data_center = 0.5, double data_scale = 0.25);

  Image predict_noise(const Image& x_t, int t, const Image& condition) const override;
  int condition_channels() const override { return condition_channels_; }
  int latent_channels() const { return latent_channels_; }

  const nn::UNet& network() const { return net_; }
  nn::UNet& network() { return net_; }
  const NoiseSchedule& schedule() const { return schedule_; }

  double data_center() const { return data_center_; }
  double data_scale() const { return data_scale_; }
  Preconditioning preconditioning(int t) const;

  /// Scaled x_t stacked with the condition: what the network sees.
  Image network_input(const Image& x_t, int t, const Image& condition) const;

 private:
  nn::UNet net_;
  int latent_channels_;
  int condition_channels_;
  NoiseSchedule schedule_;
  double data_center_;
  double data_scale_;
};

struct TrainingPair {
  Image target;     // clean x0
  Image condition;  // empty for unconditional models
};

struct DenoiserTrainingConfig {
  int epochs = 20;
  int batch_size = 8;
  double learning_rate = 5e-3;
  int width = 16;
  int eval_pairs = 32;  // fixed (t, ε) probes used to report the loss ratio
  double data_center = 0.5;  // see ConvDenoiser
  double data_scale = 0.25;
};

struct TrainingReport {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  int steps = 0;
  double loss_ratio() const { return initial_loss > 0.0 ? final_loss / initial_loss : 0.0; }
};

/// Minimizes the ε-prediction objective with t uniform in {1, …, T}
/// (importance-sampled, unbiased).
std::shared_ptr<ConvDenoiser> train_denoiser(const std::vector<TrainingPair>& data, const NoiseSchedule& schedule,
                                             const DenoiserTrainingConfig& config, RandomSource rng,
                                             TrainingReport* report = nullptr);

/// Mean ε-prediction loss over deterministic (t, ε) probes drawn from `rng`.
double probe_loss(const Denoiser<float>& denoiser, const std::vector<TrainingPair>& data,
                  const NoiseSchedule& schedule, int max_pairs, RandomSource rng);

/// Binary checkpoint: magic, version, JSON header (kind, architecture,
/// schedule), raw little-endian float32 parameters. A human-readable
/// `<path>.schedule.json` sidecar is written alongside.
void save_checkpoint(const std::filesystem::path& path, const std::string& kind, const nn::UNet& net,
                     const NoiseSchedule* schedule, int latent_channels, int condition_channels,
                     double data_center = 0.5, double data_scale = 0.25, const AffineCodec* codec = nullptr);

struct Checkpoint {
  std::string kind;
  nn::UNet net;
  std::optional<NoiseSchedule> schedule;
  int latent_channels = 0;
  int condition_channels = 0;
  double data_center = 0.5;
  double data_scale = 0.25;
  std::optional<AffineCodec> codec;  // pixel ↔ latent mapping the model was trained with
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

void save_denoiser(const std::filesystem::path& path, const std::string& kind, const ConvDenoiser& denoiser,
                   const AffineCodec* codec = nullptr);
std::shared_ptr<ConvDenoiser> load_denoiser(const std::filesystem::path& path);

}  // namespace polypbench
