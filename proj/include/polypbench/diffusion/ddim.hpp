#pragma once

#include <cmath>
#include <functional>

#include "polypbench/diffusion/denoiser.hpp"
#include "polypbench/diffusion/schedule.hpp"
#include "polypbench/random.hpp"

namespace polypbench {

/// Deterministic (η = 0) DDIM update from t to t_prev:
/// x̂0 = (x_t − √(1−ᾱ_t)·ε̂)/√ᾱ_t, x_prev = √ᾱ_prev·x̂0 + √(1−ᾱ_prev)·ε̂.
template <typename Scalar>
Grid<Scalar> ddim_step(const Grid<Scalar>& x_t, int t, int t_prev, const Denoiser<Scalar>& denoiser,
                       const Grid<Scalar>& condition, const NoiseSchedule& schedule) {
  if (t_prev > t) throw Error("ddim_step: t_prev must not exceed t");
  if (t_prev == t) return x_t;
  const Grid<Scalar> eps = denoiser.predict_noise(x_t, t, condition);
  if (!eps.same_shape(x_t)) throw Error("ddim_step: denoiser output shape mismatch");
  const double ab = schedule.alpha_bar(t), ab_prev = schedule.alpha_bar(t_prev);
  Grid<Scalar> x0_hat = Grid<Scalar>::zeros_like(x_t);
  x0_hat.array() = (x_t.array() - Scalar(std::sqrt(1.0 - ab)) * eps.array()) / Scalar(std::sqrt(ab));
  Grid<Scalar> out = Grid<Scalar>::zeros_like(x_t);
  out.array() = Scalar(std::sqrt(ab_prev)) * x0_hat.array() + Scalar(std::sqrt(1.0 - ab_prev)) * eps.array();
  return out;
}

/// Called after every reverse step with the new latent and its timestep.
template <typename Scalar>
using StepHook = std::function<void(Grid<Scalar>& x, int t_prev)>;

/// Runs DDIM from x at t_start down to 0 along timestep_sequence(t_start, steps).
template <typename Scalar>
Grid<Scalar> ddim_reverse(Grid<Scalar> x, int t_start, int steps, const Denoiser<Scalar>& denoiser,
                          const Grid<Scalar>& condition, const NoiseSchedule& schedule,
                          const StepHook<Scalar>& hook = {}) {
  if (t_start == 0) return x;
  const std::vector<int> seq = timestep_sequence(t_start, steps);
  for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
    x = ddim_step(x, seq[i], seq[i + 1], denoiser, condition, schedule);
    if (hook) hook(x, seq[i + 1]);
  }
  return x;
}

/// Draws x_T ~ N(0, I) and integrates to an x_0 estimate.
template <typename Scalar>
Grid<Scalar> sample(const Denoiser<Scalar>& denoiser, const Grid<Scalar>& condition, const NoiseSchedule& schedule,
                    int steps, RandomSource& rng, int channels, int rows, int cols) {
  if (steps < 1) throw Error("sample: steps must be >= 1");
  Grid<Scalar> x = rng.normal_grid<Scalar>(channels, rows, cols);
  return ddim_reverse(std::move(x), schedule.steps(), steps, denoiser, condition, schedule);
}

/// Mean over all elements of (ε − ε̂(forward_noise(x0, t, ε), t))².
template <typename Scalar>
double training_loss(const Denoiser<Scalar>& denoiser, const Grid<Scalar>& x0, int t, const Grid<Scalar>& noise,
                     const Grid<Scalar>& condition, const NoiseSchedule& schedule) {
  const Grid<Scalar> x_t = forward_noise(x0, t, noise, schedule);
  const Grid<Scalar> eps = denoiser.predict_noise(x_t, t, condition);
  if (!eps.same_shape(noise)) throw Error("training_loss: denoiser output shape mismatch");
  return (noise.array() - eps.array()).template cast<double>().square().mean();
}

/// Exact denoiser for data x0 ~ N(μ, σ²I). Its implied x̂0 is the posterior
/// mean μ + √ᾱσ²/(ᾱσ² + 1 − ᾱ)·(x_t − √ᾱμ), so
/// ε̂ = (x_t − √ᾱμ)·√(1−ᾱ)/(ᾱσ² + 1 − ᾱ).
template <typename Scalar>
class AnalyticGaussianDenoiser final : public Denoiser<Scalar> {
 public:
  AnalyticGaussianDenoiser(Grid<Scalar> mean, double sigma, NoiseSchedule schedule)
      : mean_(std::move(mean)), sigma_(sigma), schedule_(std::move(schedule)) {
    if (sigma < 0.0) throw Error("analytic denoiser: sigma must be >= 0");
  }

  Grid<Scalar> predict_noise(const Grid<Scalar>& x_t, int t, const Grid<Scalar>&) const override {
    if (!x_t.same_shape(mean_)) throw Error("analytic denoiser: shape mismatch");
    const double ab = schedule_.alpha_bar(t);
    Grid<Scalar> eps = Grid<Scalar>::zeros_like(x_t);
    const double denom = ab * sigma_ * sigma_ + (1.0 - ab);
    if (1.0 - ab <= 0.0) return eps;  // t = 0: no noise to predict
    eps.array() = (x_t.array() - Scalar(std::sqrt(ab)) * mean_.array()) * Scalar(std::sqrt(1.0 - ab) / denom);
    return eps;
  }

  /// E[x0 | x_t] computed directly; independent of predict_noise.
  Grid<Scalar> posterior_mean(const Grid<Scalar>& x_t, int t) const {
    const double ab = schedule_.alpha_bar(t);
    const double gain = std::sqrt(ab) * sigma_ * sigma_ / (ab * sigma_ * sigma_ + 1.0 - ab);
    Grid<Scalar> out = Grid<Scalar>::zeros_like(x_t);
    out.array() = mean_.array() + Scalar(gain) * (x_t.array() - Scalar(std::sqrt(ab)) * mean_.array());
    return out;
  }

  const Grid<Scalar>& mean() const { return mean_; }
  double sigma() const { return sigma_; }

 private:
  Grid<Scalar> mean_;
  double sigma_;
  NoiseSchedule schedule_;
};

template <typename Scalar>
std::shared_ptr<const AnalyticGaussianDenoiser<Scalar>> analytic_gaussian_denoiser(Grid<Scalar> mean, double sigma,
                                                                                    const NoiseSchedule& schedule) {
  return std::make_shared<const AnalyticGaussianDenoiser<Scalar>>(std::move(mean), sigma, schedule);
}

}  // namespace polypbench
