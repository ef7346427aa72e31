#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <unistd.h>

#include "polypbench/grid.hpp"
#include "polypbench/random.hpp"
#include "polypbench/records.hpp"

namespace polypbench::test {

/// Removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag = "pb") {
    std::string pattern = (std::filesystem::temp_directory_path() / (tag + "-XXXXXX")).string();
    path = ::mkdtemp(pattern.data());
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

inline Mask disk(int rows, int cols, double cy, double cx, double radius) {
  Mask m = Mask::Zero(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      if ((r - cy) * (r - cy) + (c - cx) * (c - cx) <= radius * radius) m(r, c) = 1;
  return m;
}

inline Mask box(int rows, int cols, int y, int x, int h, int w) {
  Mask m = Mask::Zero(rows, cols);
  m.block(y, x, h, w).setOnes();
  return m;
}

/// Smooth image in [0,1] with a brighter blob where `mask` is set.
inline Image blob_image(const Mask& mask, double phase = 0.0) {
  Image img(3, int(mask.rows()), int(mask.cols()));
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < img.rows(); ++r)
      for (int x = 0; x < img.cols(); ++x)
        img(c, r, x) = float(0.4 + 0.1 * std::sin(0.2 * x + 0.3 * r + c + phase) + (mask(r, x) ? 0.3 : 0.0));
  return img;
}

inline Sample blob_sample(const std::string& id, const Mask& mask, double phase = 0.0) {
  return {id, blob_image(mask, phase), mask};
}

/// The analytic pair the MS-SSIM reference values were computed on.
inline std::pair<Image, Image> msssim_pair(int n) {
  Image a(3, n, n), b(3, n, n);
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < n; ++r)
      for (int x = 0; x < n; ++x) {
        const double va = 0.5 + 0.3 * std::sin(0.11 * x + 0.07 * r + c) * std::cos(0.05 * r - 0.3 * c);
        const double vb = va + 0.08 * std::sin(0.9 * x - 0.4 * r + 2.0 * c) + 0.05 * std::cos(0.013 * x * r);
        a(c, r, x) = float(va);
        b(c, r, x) = float(std::clamp(vb, 0.0, 1.0));
      }
  return {a, b};
}

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace polypbench::test
