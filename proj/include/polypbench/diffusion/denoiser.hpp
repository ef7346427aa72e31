#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "polypbench/grid.hpp"

namespace polypbench {

/// Noise predictor ε̂(x_t, t, condition). `condition` is an empty grid for
/// unconditional models. Implementations are const and reentrant.
template <typename Scalar>
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual Grid<Scalar> predict_noise(const Grid<Scalar>& x_t, int t, const Grid<Scalar>& condition) const = 0;
  /// Number of condition channels the model expects (0 = unconditional).
  virtual int condition_channels() const { return 0; }
};

template <typename Scalar>
using DenoiserPtr = std::shared_ptr<const Denoiser<Scalar>>;

/// Adapts a callable into a Denoiser.
template <typename Scalar>
class FunctionDenoiser final : public Denoiser<Scalar> {
 public:
  using Fn = std::function<Grid<Scalar>(const Grid<Scalar>&, int, const Grid<Scalar>&)>;
  explicit FunctionDenoiser(Fn fn, int condition_channels = 0) : fn_(std::move(fn)), cond_(condition_channels) {}
  Grid<Scalar> predict_noise(const Grid<Scalar>& x_t, int t, const Grid<Scalar>& condition) const override {
    return fn_(x_t, t, condition);
  }
  int condition_channels() const override { return cond_; }

 private:
  Fn fn_;
  int cond_;
};

/// Maps pixels to the latent grid the diffusion process runs on.
class LatentCodec {
 public:
  virtual ~LatentCodec() = default;
  virtual Image encode(const Image& image) const = 0;
  virtual Image decode(const Image& latent) const = 0;
  /// Spatial reduction between pixel and latent grids.
  virtual int spatial_factor() const = 0;
};

/// Pixel space is the latent space; decode(encode(x)) == x bit-for-bit.
class IdentityCodec final : public LatentCodec {
 public:
  Image encode(const Image& image) const override { return image; }
  Image decode(const Image& latent) const override { return latent; }
  int spatial_factor() const override { return 1; }
};

/// Per-channel standardization: latent = (x − offset) / scale. Gives the
/// diffusion process unit-variance data, as a learned autoencoder's scaled
/// latents would.
class AffineCodec final : public LatentCodec {
 public:
  AffineCodec(std::vector<float> offset, std::vector<float> scale);
  Image encode(const Image& image) const override;
  Image decode(const Image& latent) const override;
  int spatial_factor() const override { return 1; }
  const std::vector<float>& offset() const { return offset_; }
  const std::vector<float>& scale() const { return scale_; }

 private:
  std::vector<float> offset_;
  std::vector<float> scale_;
};

/// Channel means and standard deviations over all pixels of `images`.
AffineCodec fit_affine_codec(const std::vector<Image>& images);

}  // namespace polypbench
