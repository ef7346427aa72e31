#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "polypbench/grid.hpp"

namespace polypbench {

/// Linear-β forward process of length T. Index 0 is the clean signal
/// (ᾱ_0 = 1); index t ∈ [1, T] uses β_t.
class NoiseSchedule {
 public:
  static constexpr int kDefaultSteps = 1000;
  static constexpr double kDefaultBetaStart = 1e-4;
  static constexpr double kDefaultBetaEnd = 2e-2;

  NoiseSchedule() : NoiseSchedule(kDefaultSteps, kDefaultBetaStart, kDefaultBetaEnd) {}
  NoiseSchedule(int steps, double beta_start, double beta_end);

  int steps() const { return steps_; }
  double beta_start() const { return beta_start_; }
  double beta_end() const { return beta_end_; }

  double beta(int t) const { return beta_(t); }
  double alpha(int t) const { return 1.0 - beta_(t); }
  double alpha_bar(int t) const { return alpha_bar_(t); }

  bool operator==(const NoiseSchedule& o) const {
    return steps_ == o.steps_ && beta_start_ == o.beta_start_ && beta_end_ == o.beta_end_;
  }

 private:
  int steps_;
  double beta_start_;
  double beta_end_;
  Eigen::ArrayXd beta_;       // beta_(0) = 0
  Eigen::ArrayXd alpha_bar_;  // alpha_bar_(0) = 1
};

/// Evenly spaced decreasing timesteps t_start = τ_S > … > τ_0 = 0, with
/// duplicates removed when steps exceed t_start.
std::vector<int> timestep_sequence(int t_start, int steps);

/// √ᾱ_t·x0 + √(1−ᾱ_t)·ε.
template <typename Scalar>
Grid<Scalar> forward_noise(const Grid<Scalar>& x0, int t, const Grid<Scalar>& noise, const NoiseSchedule& schedule) {
  if (!x0.same_shape(noise)) throw Error("forward_noise: shape mismatch");
  if (t < 0 || t > schedule.steps()) throw Error("forward_noise: timestep out of range");
  const double ab = schedule.alpha_bar(t);
  Grid<Scalar> out = Grid<Scalar>::zeros_like(x0);
  out.array() = Scalar(std::sqrt(ab)) * x0.array() + Scalar(std::sqrt(1.0 - ab)) * noise.array();
  return out;
}

}  // namespace polypbench
