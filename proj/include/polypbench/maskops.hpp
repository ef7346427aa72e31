#pragma once

#include <utility>

#include <Eigen/Dense>

#include "polypbench/grid.hpp"
#include "polypbench/random.hpp"

namespace polypbench {

/// Homogeneous 3×3 pixel transform acting on [x, y, 1]ᵀ (x = column, y = row).
using AffineMatrix = Eigen::Matrix3d;

/// Tight axis-aligned box: x = min col, y = min row, w/h inclusive extents.
struct Rect {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;
  bool operator==(const Rect&) const = default;
};

/// Raised when a transformed polyp would leave the image frame.
class OutOfFrame : public Error {
 public:
  OutOfFrame() : Error("transform leaves frame") {}
};

/// Raised when no disjoint placement of a background mask was found.
class NoPlacement : public Error {
 public:
  NoPlacement() : Error("no placement found") {}
};

Rect enclosing_rect(const Mask& mask);

/// Scaling by `s` about the rectangle center (x + w/2, y + h/2).
AffineMatrix size_matrix(double s, const Rect& rect);
AffineMatrix position_matrix(int dx, int dy);

/// Moves the polyp to E·P. Inside the transformed support, pixels are pulled
/// from the source through E⁻¹ with nearest-neighbor rounding; everywhere
/// else the image is unchanged and the mask is zero.
std::pair<Image, Mask> apply_affine(const Image& image, const Mask& mask, const AffineMatrix& transform);

/// Euclidean-disk morphology; radius 0 is the identity.
Mask dilate(const Mask& mask, int radius);
Mask erode(const Mask& mask, int radius);

/// dilate(mask, outer) ∧ ¬erode(mask, inner), clipped to the frame.
Mask boundary_band(const Mask& mask, int inner, int outer);

struct BackgroundMaskOptions {
  double min_scale = 0.75;
  double max_scale = 1.25;
  double min_area_ratio = 0.5;
  double max_area_ratio = 1.5;
  int max_attempts = 100;
};

/// A rotated, scaled and translated copy of the polyp mask that shares no
/// pixel with it. Used to build inpainting training pairs.
Mask random_background_mask(const Mask& polyp_mask, RandomSource& rng, const BackgroundMaskOptions& options = {});

/// Cell is 1 iff the mean of its factor×factor block is at least 0.5.
Mask downsample_mask(const Mask& mask, int factor);

/// Centroid (x, y) of the positive pixels.
Eigen::Vector2d mask_centroid(const Mask& mask);

/// Pixel positions (x = col, y = row) of a boolean-style predicate.
inline Eigen::Vector3d homogeneous(double x, double y) { return {x, y, 1.0}; }

}  // namespace polypbench
