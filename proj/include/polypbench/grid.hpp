#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace polypbench {

/// Base class of every domain failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename Scalar>
using Plane = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Binary H×W grid, values in {0,1}. Row index is y, column index is x.
using Mask = Plane<std::uint8_t>;

/// Dense C×H×W grid stored as one row per channel, so a channel is a
/// contiguous H×W plane and the whole grid is a single Eigen array that
/// composes with expression templates.
template <typename Scalar>
class Grid {
 public:
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using PlaneMap = Eigen::Map<Plane<Scalar>>;
  using ConstPlaneMap = Eigen::Map<const Plane<Scalar>>;

  Grid() = default;
  Grid(int channels, int rows, int cols, Scalar fill = Scalar(0))
      : rows_(rows), cols_(cols), data_(Storage::Constant(channels, Eigen::Index(rows) * cols, fill)) {}

  static Grid zeros_like(const Grid& other) { return Grid(other.channels(), other.rows(), other.cols()); }

  int channels() const { return static_cast<int>(data_.rows()); }
  int rows() const { return rows_; }
  int cols() const { return cols_; }
  Eigen::Index pixels() const { return Eigen::Index(rows_) * cols_; }
  bool empty() const { return data_.size() == 0; }

  bool same_shape(const Grid& other) const {
    return channels() == other.channels() && rows_ == other.rows_ && cols_ == other.cols_;
  }
  bool same_extent(int rows, int cols) const { return rows_ == rows && cols_ == cols; }

  Storage& array() { return data_; }
  const Storage& array() const { return data_; }

  PlaneMap plane(int c) { return PlaneMap(data_.row(c).data(), rows_, cols_); }
  ConstPlaneMap plane(int c) const { return ConstPlaneMap(data_.row(c).data(), rows_, cols_); }

  Scalar& operator()(int c, int r, int col) { return data_(c, Eigen::Index(r) * cols_ + col); }
  Scalar operator()(int c, int r, int col) const { return data_(c, Eigen::Index(r) * cols_ + col); }

  template <typename Other>
  Grid<Other> cast() const {
    Grid<Other> out(channels(), rows_, cols_);
    out.array() = data_.template cast<Other>();
    return out;
  }

  bool operator==(const Grid& other) const {
    return same_shape(other) && (data_ == other.data_).all();
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  Storage data_;
};

using Image = Grid<float>;

/// Stacks the channels of `a` on top of the channels of `b`.
template <typename Scalar>
Grid<Scalar> concat_channels(const Grid<Scalar>& a, const Grid<Scalar>& b) {
  if (!a.same_extent(b.rows(), b.cols())) throw Error("concat_channels: extent mismatch");
  Grid<Scalar> out(a.channels() + b.channels(), a.rows(), a.cols());
  out.array().topRows(a.channels()) = a.array();
  out.array().bottomRows(b.channels()) = b.array();
  return out;
}

/// One-channel grid holding the mask as 0/1 values.
template <typename Scalar>
Grid<Scalar> mask_to_grid(const Mask& mask) {
  Grid<Scalar> out(1, static_cast<int>(mask.rows()), static_cast<int>(mask.cols()));
  out.plane(0) = mask.template cast<Scalar>();
  return out;
}

/// Per-pixel blend out = m ⊙ inside + (1 − m) ⊙ outside with the mask
/// broadcast over channels. Selection, not arithmetic, so the inside and
/// outside values are copied bit-for-bit.
template <typename Scalar>
Grid<Scalar> select(const Mask& mask, const Grid<Scalar>& inside, const Grid<Scalar>& outside) {
  if (!inside.same_shape(outside) || !inside.same_extent(int(mask.rows()), int(mask.cols())))
    throw Error("select: shape mismatch");
  Grid<Scalar> out = outside;
  const Eigen::Index n = inside.pixels();
  const std::uint8_t* m = mask.data();
  for (int c = 0; c < inside.channels(); ++c)
    for (Eigen::Index i = 0; i < n; ++i)
      if (m[i]) out.array()(c, i) = inside.array()(c, i);
  return out;
}

inline Eigen::Index mask_area(const Mask& mask) { return (mask != 0).count(); }

inline void require_same_extent(const Mask& a, const Mask& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw Error(std::string(what) + ": shape mismatch");
}

}  // namespace polypbench
