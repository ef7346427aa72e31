#include <cmath>

#include "polypbench/diffusion/denoiser.hpp"

namespace polypbench {

AffineCodec::AffineCodec(std::vector<float> offset, std::vector<float> scale)
    : offset_(std::move(offset)), scale_(std::move(scale)) {
  if (offset_.size() != scale_.size() || offset_.empty()) throw Error("AffineCodec: offset/scale size mismatch");
  for (float s : scale_)
    if (!(s > 0.0f) || !std::isfinite(s)) throw Error("AffineCodec: scales must be positive");
}

Image AffineCodec::encode(const Image& image) const {
  if (image.channels() != int(offset_.size())) throw Error("AffineCodec: channel count mismatch");
  Image out = Image::zeros_like(image);
  for (int c = 0; c < image.channels(); ++c)
    out.plane(c).array() = (image.plane(c).array() - offset_[std::size_t(c)]) / scale_[std::size_t(c)];
  return out;
}

Image AffineCodec::decode(const Image& latent) const {
  if (latent.channels() != int(offset_.size())) throw Error("AffineCodec: channel count mismatch");
  Image out = Image::zeros_like(latent);
  for (int c = 0; c < latent.channels(); ++c)
    out.plane(c).array() = latent.plane(c).array() * scale_[std::size_t(c)] + offset_[std::size_t(c)];
  return out;
}

AffineCodec fit_affine_codec(const std::vector<Image>& images) {
  if (images.empty()) throw Error("fit_affine_codec: no images");
  const int channels = images.front().channels();
  std::vector<double> sum(std::size_t(channels), 0.0), sq(std::size_t(channels), 0.0);
  double count = 0.0;
  for (const auto& img : images) {
    if (img.channels() != channels) throw Error("fit_affine_codec: channel count differs");
    for (int c = 0; c < channels; ++c) {
      const auto p = img.plane(c).array().cast<double>();
      sum[std::size_t(c)] += p.sum();
      sq[std::size_t(c)] += p.square().sum();
    }
    count += double(img.pixels());
  }
  std::vector<float> offset, scale;
  for (int c = 0; c < channels; ++c) {
    const double mean = sum[std::size_t(c)] / count;
    const double var = std::max(sq[std::size_t(c)] / count - mean * mean, 1e-12);
    offset.push_back(float(mean));
    scale.push_back(float(std::sqrt(var)));
  }
  return AffineCodec(std::move(offset), std::move(scale));
}

}  // namespace polypbench
