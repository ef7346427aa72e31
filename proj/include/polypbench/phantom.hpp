#pragma once

#include <array>
#include <string>
#include <vector>

#include "polypbench/random.hpp"
#include "polypbench/records.hpp"

namespace polypbench {

/// Procedural stand-in for endoscopy frames: a smooth tinted background with
/// correlated-noise texture and one lobed elliptical "polyp" whose mask is
/// the exact support used to paint it.
struct PhantomParams {
  std::string preset = "id";
  int rows = 64;
  int cols = 64;

  std::array<double, 3> base_color{0.78, 0.42, 0.36};
  double color_jitter = 0.05;
  double illumination = 0.10;  // amplitude of a random linear shading ramp
  double texture_length = 4.0;  // Gaussian correlation length of the background texture, px
  double texture_amplitude = 0.035;

  double min_axis = 9.0;  // polyp semi-axes, px
  double max_axis = 16.0;
  double perturbation = 0.15;  // relative radial boundary wobble
  std::array<double, 3> polyp_offset{0.26, 0.12, 0.05};
  double polyp_texture_length = 1.2;
  double polyp_texture_amplitude = 0.04;
  int margin = 8;

  double healthy_fraction = 0.0;

  /// In-distribution defaults.
  static PhantomParams in_distribution() { return {}; }
  /// Same geometry, different texture statistics and tissue/polyp tint.
  static PhantomParams out_of_distribution();
};

/// `n` samples named `<prefix>_<index>` with 8-bit quantized images.
/// Sample i depends only on (rng seed, rng stream, i).
std::vector<Sample> generate_phantom_dataset(int n, const PhantomParams& params, const RandomSource& rng,
                                             const std::string& prefix = "phantom");

/// Separable Gaussian blur of white noise rescaled to unit standard deviation.
Plane<double> correlated_noise(int rows, int cols, double length, RandomSource& rng);

}  // namespace polypbench
