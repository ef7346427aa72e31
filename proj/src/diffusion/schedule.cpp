#include "polypbench/diffusion/schedule.hpp"

#include <cmath>

namespace polypbench {

NoiseSchedule::NoiseSchedule(int steps, double beta_start, double beta_end)
    : steps_(steps), beta_start_(beta_start), beta_end_(beta_end) {
  if (steps < 1) throw Error("noise schedule needs at least one step");
  if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end))
    throw Error("noise schedule betas must satisfy 0 < start <= end < 1");
  beta_ = Eigen::ArrayXd::Zero(steps + 1);
  alpha_bar_ = Eigen::ArrayXd::Ones(steps + 1);
  for (int t = 1; t <= steps; ++t) {
    beta_(t) = steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * double(t - 1) / double(steps - 1);
    alpha_bar_(t) = alpha_bar_(t - 1) * (1.0 - beta_(t));
  }
}

std::vector<int> timestep_sequence(int t_start, int steps) {
  if (steps < 1) throw Error("timestep_sequence: steps must be >= 1");
  if (t_start < 0) throw Error("timestep_sequence: negative start");
  std::vector<int> seq;
  seq.reserve(steps + 1);
  for (int i = steps; i >= 0; --i) {
    const int t = int(std::lround(double(t_start) * i / steps));
    if (seq.empty() || seq.back() != t) seq.push_back(t);
  }
  return seq;
}

}  // namespace polypbench
