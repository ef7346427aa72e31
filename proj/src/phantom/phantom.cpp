#include "polypbench/phantom.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include "polypbench/io.hpp"

namespace polypbench {

PhantomParams PhantomParams::out_of_distribution() {
  PhantomParams p;
  p.preset = "ood";
  p.base_color = {0.70, 0.47, 0.40};
  p.texture_length = 7.0;
  p.texture_amplitude = 0.05;
  p.polyp_offset = {0.20, 0.16, 0.10};
  p.polyp_texture_length = 2.0;
  p.polyp_texture_amplitude = 0.03;
  return p;
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, int(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= sum;
  return k;
}

int reflect(int i, int n) {
  while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
  return i;
}

}  // namespace

Plane<double> correlated_noise(int rows, int cols, double length, RandomSource& rng) {
  Plane<double> white(rows, cols);
  for (Eigen::Index i = 0; i < white.size(); ++i) white.data()[i] = rng.normal();
  if (length <= 0.0) return white;
  const auto k = gaussian_kernel(length);
  const int radius = int(k.size() / 2);
  Plane<double> tmp(rows, cols), out(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double s = 0.0;
      for (int i = -radius; i <= radius; ++i) s += k[i + radius] * white(r, reflect(c + i, cols));
      tmp(r, c) = s;
    }
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double s = 0.0;
      for (int i = -radius; i <= radius; ++i) s += k[i + radius] * tmp(reflect(r + i, rows), c);
      out(r, c) = s;
    }
  const double mean = out.mean();
  const double sd = std::sqrt((out - mean).square().mean());
  return sd > 0.0 ? Plane<double>((out - mean) / sd) : Plane<double>(out - mean);
}

namespace {

Sample make_phantom(const std::string& id, const PhantomParams& p, RandomSource rng) {
  const int rows = p.rows, cols = p.cols;
  Image image(3, rows, cols);
  Mask mask = Mask::Zero(rows, cols);

  // Background: jittered tint, linear shading ramp and correlated texture.
  std::array<double, 3> tint{};
  for (int ch = 0; ch < 3; ++ch) tint[ch] = p.base_color[ch] + rng.uniform(-p.color_jitter, p.color_jitter);
  const double ramp_angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double ramp = rng.uniform(0.0, p.illumination);
  const Plane<double> texture = correlated_noise(rows, cols, p.texture_length, rng);
  const Plane<double> polyp_texture = correlated_noise(rows, cols, p.polyp_texture_length, rng);

  const bool healthy = rng.uniform() < p.healthy_fraction;
  const double a = rng.uniform(p.min_axis, p.max_axis);
  const double b = rng.uniform(p.min_axis, p.max_axis);
  const double theta = rng.uniform(0.0, std::numbers::pi);
  std::array<double, 3> coef{}, phase{};
  double coef_sum = 0.0;
  for (int k = 0; k < 3; ++k) {
    coef[k] = rng.uniform();
    phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    coef_sum += coef[k];
  }
  for (double& c : coef) c /= coef_sum;
  const double reach = std::max(a, b) * (1.0 + p.perturbation);
  const double lo_x = p.margin + reach, hi_x = cols - 1 - p.margin - reach;
  const double lo_y = p.margin + reach, hi_y = rows - 1 - p.margin - reach;
  const double cx = rng.uniform(lo_x, hi_x);
  const double cy = rng.uniform(lo_y, hi_y);
  const double cs = std::cos(theta), sn = std::sin(theta);

  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const double nx = (c - cols / 2.0) / cols, ny = (r - rows / 2.0) / rows;
      const double shade = ramp * (nx * std::cos(ramp_angle) + ny * std::sin(ramp_angle));
      double lift = 0.0;
      std::array<double, 3> offset{};
      if (!healthy) {
        const double dx = c - cx, dy = r - cy;
        const double u = (cs * dx + sn * dy) / a, v = (-sn * dx + cs * dy) / b;
        const double rho = std::hypot(u, v);
        const double phi = std::atan2(v, u);
        double wobble = 0.0;
        for (int k = 0; k < 3; ++k) wobble += coef[k] * std::cos((k + 2) * phi + phase[k]);
        const double edge = 1.0 + p.perturbation * wobble;
        if (rho <= edge) {
          mask(r, c) = 1;
          const double q = rho / edge;
          const double dome = std::sqrt(std::max(0.0, 1.0 - q * q));
          lift = 0.55 + 0.45 * dome;
          for (int ch = 0; ch < 3; ++ch) offset[ch] = p.polyp_offset[ch] * lift;
        }
      }
      for (int ch = 0; ch < 3; ++ch) {
        double v = tint[ch] + shade + p.texture_amplitude * texture(r, c);
        if (lift > 0.0) v += offset[ch] + p.polyp_texture_amplitude * polyp_texture(r, c);
        image(ch, r, c) = float(std::clamp(v, 0.0, 1.0));
      }
    }
  return {id, quantize8(image), mask};
}

}  // namespace

std::vector<Sample> generate_phantom_dataset(int n, const PhantomParams& params, const RandomSource& rng,
                                             const std::string& prefix) {
  if (n < 1) throw Error("generate_phantom_dataset: n must be >= 1");
  if (params.min_axis <= 0.0 || params.max_axis < params.min_axis) throw Error("phantom: invalid axis range");
  const double reach = params.max_axis * (1.0 + params.perturbation);
  if (2.0 * (params.margin + reach) > std::min(params.rows, params.cols) - 1)
    throw Error("phantom: polyp axes do not fit in the frame with the required margin");
  std::vector<Sample> out;
  out.reserve(std::size_t(n));
  for (int i = 0; i < n; ++i) {
    char id[64];
    std::snprintf(id, sizeof id, "%s_%05d", prefix.c_str(), i);
    out.push_back(make_phantom(id, params, rng.fork(id)));
  }
  return out;
}

}  // namespace polypbench
