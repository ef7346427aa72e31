#include "polypbench/maskops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

namespace polypbench {

Rect enclosing_rect(const Mask& mask) {
  int min_r = std::numeric_limits<int>::max(), min_c = min_r, max_r = -1, max_c = -1;
  for (int r = 0; r < mask.rows(); ++r)
    for (int c = 0; c < mask.cols(); ++c)
      if (mask(r, c)) {
        min_r = std::min(min_r, r);
        max_r = std::max(max_r, r);
        min_c = std::min(min_c, c);
        max_c = std::max(max_c, c);
      }
  if (max_r < 0) throw Error("empty mask");
  return {min_c, min_r, max_c - min_c + 1, max_r - min_r + 1};
}

AffineMatrix size_matrix(double s, const Rect& rect) {
  if (!(s > 0.0)) throw Error("size factor must be positive");
  AffineMatrix e = AffineMatrix::Identity();
  e(0, 0) = s;
  e(1, 1) = s;
  e(0, 2) = (1.0 - s) * (rect.x + rect.w / 2.0);
  e(1, 2) = (1.0 - s) * (rect.y + rect.h / 2.0);
  return e;
}

AffineMatrix position_matrix(int dx, int dy) {
  AffineMatrix e = AffineMatrix::Identity();
  e(0, 2) = dx;
  e(1, 2) = dy;
  return e;
}

namespace {

int round_half_up(double v) { return static_cast<int>(std::floor(v + 0.5)); }

}  // namespace

std::pair<Image, Mask> apply_affine(const Image& image, const Mask& mask, const AffineMatrix& transform) {
  if (!image.same_extent(int(mask.rows()), int(mask.cols()))) throw Error("apply_affine: shape mismatch");
  if (transform.row(2) != Eigen::RowVector3d(0, 0, 1)) throw Error("apply_affine: bottom row must be [0 0 1]");
  if (std::abs(transform.topLeftCorner<2, 2>().determinant()) < 1e-12) throw Error("apply_affine: singular transform");

  const int rows = image.rows(), cols = image.cols();
  Image out_image = image;
  Mask out_mask = Mask::Zero(rows, cols);
  if (mask_area(mask) == 0) return {out_image, out_mask};

  const AffineMatrix inverse = transform.inverse();
  const Rect rect = enclosing_rect(mask);

  // Destination window: the forward image of the source box, padded by a pixel.
  double lo_x = std::numeric_limits<double>::max(), lo_y = lo_x, hi_x = -lo_x, hi_y = -lo_x;
  for (double x : {rect.x - 0.5, rect.x + rect.w - 0.5})
    for (double y : {rect.y - 0.5, rect.y + rect.h - 0.5}) {
      const Eigen::Vector3d q = transform * homogeneous(x, y);
      lo_x = std::min(lo_x, q.x());
      hi_x = std::max(hi_x, q.x());
      lo_y = std::min(lo_y, q.y());
      hi_y = std::max(hi_y, q.y());
    }
  const int qx0 = int(std::floor(lo_x)) - 1, qx1 = int(std::ceil(hi_x)) + 1;
  const int qy0 = int(std::floor(lo_y)) - 1, qy1 = int(std::ceil(hi_y)) + 1;

  for (int qy = qy0; qy <= qy1; ++qy)
    for (int qx = qx0; qx <= qx1; ++qx) {
      const Eigen::Vector3d p = inverse * homogeneous(qx, qy);
      const int px = round_half_up(p.x()), py = round_half_up(p.y());
      if (px < 0 || py < 0 || px >= cols || py >= rows || !mask(py, px)) continue;
      if (qx < 0 || qy < 0 || qx >= cols || qy >= rows) throw OutOfFrame();
      out_mask(qy, qx) = 1;
      for (int ch = 0; ch < image.channels(); ++ch) out_image(ch, qy, qx) = image(ch, py, px);
    }
  return {out_image, out_mask};
}

namespace {

// Exact squared Euclidean distance to the nearest set pixel (Felzenszwalb &
// Huttenlocher lower-envelope transform, applied per column then per row).
constexpr double kFar = 1e20;

void distance_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v, std::vector<double>& z) {
  const int n = int(f.size());
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < n; ++q) {
    double s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) / (2.0 * q - 2.0 * v[k]);
    while (s <= z[k]) {
      --k;
      s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) / (2.0 * q - 2.0 * v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double diff = q - v[k];
    d[q] = diff * diff + f[v[k]];
  }
}

Plane<double> squared_distance_to_set(const Mask& mask) {
  const int rows = int(mask.rows()), cols = int(mask.cols());
  Plane<double> dist(rows, cols);
  const int n = std::max(rows, cols);
  std::vector<double> f(n), d(n), z(n + 1);
  std::vector<int> v(n);
  for (int c = 0; c < cols; ++c) {
    f.resize(rows);
    d.resize(rows);
    for (int r = 0; r < rows; ++r) f[r] = mask(r, c) ? 0.0 : kFar;
    distance_1d(f, d, v, z);
    for (int r = 0; r < rows; ++r) dist(r, c) = d[r];
  }
  for (int r = 0; r < rows; ++r) {
    f.resize(cols);
    d.resize(cols);
    for (int c = 0; c < cols; ++c) f[c] = dist(r, c);
    distance_1d(f, d, v, z);
    for (int c = 0; c < cols; ++c) dist(r, c) = d[c];
  }
  return dist;
}

}  // namespace

Mask dilate(const Mask& mask, int radius) {
  if (radius < 0) throw Error("dilate: negative radius");
  if (radius == 0 || mask_area(mask) == 0) return mask;
  const Plane<double> dist = squared_distance_to_set(mask);
  return (dist <= double(radius) * radius).cast<std::uint8_t>();
}

Mask erode(const Mask& mask, int radius) {
  if (radius < 0) throw Error("erode: negative radius");
  if (radius == 0) return mask;
  const Mask complement = (mask == 0).cast<std::uint8_t>();
  return (dilate(complement, radius) == 0).cast<std::uint8_t>();
}

Mask boundary_band(const Mask& mask, int inner, int outer) {
  if (inner < 0 || outer < 0) throw Error("boundary_band: negative radius");
  if (inner == 0 && outer == 0) throw Error("boundary_band: radii must not both be zero");
  if (mask_area(mask) == 0) throw Error("empty mask");
  const Mask grown = dilate(mask, outer);
  const Mask shrunk = erode(mask, inner);
  return (grown.cast<bool>() && !shrunk.cast<bool>()).cast<std::uint8_t>();
}

Mask random_background_mask(const Mask& polyp_mask, RandomSource& rng, const BackgroundMaskOptions& options) {
  const int rows = int(polyp_mask.rows()), cols = int(polyp_mask.cols());
  const Eigen::Index area = mask_area(polyp_mask);
  if (area == 0) throw Error("empty mask");
  const Eigen::Vector2d center = mask_centroid(polyp_mask);

  double reach = 0.0;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      if (polyp_mask(r, c)) reach = std::max(reach, std::hypot(c - center.x(), r - center.y()));

  std::vector<Eigen::Vector2i> offsets;
  for (int attempt = 0; attempt < options.max_attempts; ++attempt) {
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double scale = rng.uniform(options.min_scale, options.max_scale);
    const double cs = std::cos(angle), sn = std::sin(angle);

    // Shape offsets around the origin, pulled back into the source mask.
    offsets.clear();
    const int span = int(std::ceil(reach * scale)) + 2;
    int min_ox = span, max_ox = -span, min_oy = span, max_oy = -span;
    for (int oy = -span; oy <= span; ++oy)
      for (int ox = -span; ox <= span; ++ox) {
        const double sx = (cs * ox + sn * oy) / scale + center.x();
        const double sy = (-sn * ox + cs * oy) / scale + center.y();
        const int px = int(std::floor(sx + 0.5)), py = int(std::floor(sy + 0.5));
        if (px < 0 || py < 0 || px >= cols || py >= rows || !polyp_mask(py, px)) continue;
        offsets.emplace_back(ox, oy);
        min_ox = std::min(min_ox, ox);
        max_ox = std::max(max_ox, ox);
        min_oy = std::min(min_oy, oy);
        max_oy = std::max(max_oy, oy);
      }
    const double ratio = double(offsets.size()) / double(area);
    const int tx_lo = -min_ox, tx_hi = cols - 1 - max_ox;
    const int ty_lo = -min_oy, ty_hi = rows - 1 - max_oy;
    // Draw the translation unconditionally so the stream layout does not
    // depend on which checks fail.
    const double ux = rng.uniform(), uy = rng.uniform();
    if (offsets.empty() || ratio < options.min_area_ratio || ratio > options.max_area_ratio) continue;
    if (tx_lo > tx_hi || ty_lo > ty_hi) continue;
    const int tx = tx_lo + std::min(int(ux * (tx_hi - tx_lo + 1)), tx_hi - tx_lo);
    const int ty = ty_lo + std::min(int(uy * (ty_hi - ty_lo + 1)), ty_hi - ty_lo);

    bool overlap = false;
    for (const auto& o : offsets)
      if (polyp_mask(ty + o.y(), tx + o.x())) {
        overlap = true;
        break;
      }
    if (overlap) continue;

    Mask out = Mask::Zero(rows, cols);
    for (const auto& o : offsets) out(ty + o.y(), tx + o.x()) = 1;
    return out;
  }
  throw NoPlacement();
}

Mask downsample_mask(const Mask& mask, int factor) {
  if (factor < 1) throw Error("downsample_mask: factor must be >= 1");
  if (mask.rows() % factor != 0 || mask.cols() % factor != 0)
    throw Error("downsample_mask: dimensions not divisible by factor");
  if (factor == 1) return mask;
  const Eigen::Index rows = mask.rows() / factor, cols = mask.cols() / factor;
  Mask out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      const auto count = (mask.block(r * factor, c * factor, factor, factor) != 0).count();
      out(r, c) = 2 * count >= Eigen::Index(factor) * factor ? 1 : 0;
    }
  return out;
}

Eigen::Vector2d mask_centroid(const Mask& mask) {
  Eigen::Vector2d sum = Eigen::Vector2d::Zero();
  Eigen::Index n = 0;
  for (int r = 0; r < mask.rows(); ++r)
    for (int c = 0; c < mask.cols(); ++c)
      if (mask(r, c)) {
        sum += Eigen::Vector2d(c, r);
        ++n;
      }
  if (n == 0) throw Error("empty mask");
  return sum / double(n);
}

}  // namespace polypbench
