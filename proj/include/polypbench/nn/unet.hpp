#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "polypbench/grid.hpp"

namespace polypbench::nn {

using Matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXf;

struct UNetConfig {
  int in_channels = 3;
  int out_channels = 3;
  int width = 16;  // channels at full resolution; 2× at the two coarser levels
  bool time_conditioned = true;
  int time_features = 32;
  int time_scale = 1000;  // timestep range the sinusoidal features are laid out for
  bool group_norm = true;  // GroupNorm after every hidden conv

  bool operator==(const UNetConfig&) const = default;
};

nlohmann::json to_json(const UNetConfig& config);
UNetConfig unet_config_from_json(const nlohmann::json& j);

/// Activations kept from a forward pass for the matching backward pass.
struct Tape {
  struct ConvCache {
    Matrix cols;     // im2col of the layer input
    Matrix pre;      // pre-activation output
    Matrix normed;   // group-normalized conv output
    Vector inv_std;  // per group
    Matrix linear;   // input of the timestep modulation
    Vector gain;     // 1 + per-channel timestep scale
  };
  std::vector<ConvCache> conv;
  Vector time_embedding;
  int rows = 0;
  int cols = 0;
};

/// Two-level encoder-decoder with skip connections, 3×3 convolutions,
/// GroupNorm and SiLU activations. Input and output spatial sizes must be divisible by 4.
/// Optional timestep conditioning applies a per-channel scale and shift,
/// linear in sinusoidal timestep features, to the first conv of each block.
class UNet {
 public:
  UNet() = default;
  UNet(const UNetConfig& config, std::uint64_t seed);

  const UNetConfig& config() const { return config_; }

  /// Inference; `input` is in_channels×H×W.
  Image forward(const Image& input, int t = 0) const;
  /// Training forward: records what backward needs into `tape`.
  Matrix forward(const Matrix& input, int rows, int cols, int t, Tape* tape) const;
  /// Accumulates parameter gradients into `grads` (same layout as parameters()).
  void backward(const Tape& tape, const Matrix& grad_output, std::vector<Matrix>& grads) const;

  std::vector<Matrix>& parameters() { return params_; }
  const std::vector<Matrix>& parameters() const { return params_; }
  std::vector<Matrix> zero_gradients() const;
  std::size_t parameter_count() const;

 private:
  struct ConvLayer {
    int in = 0;
    int out = 0;
    int weight = -1;  // index into params_
    int bias = -1;
    int norm_scale = -1;  // -1 when the layer is not group-normalized
    int norm_shift = -1;
    int groups = 1;
    int time_weight = -1;  // -1 when the layer takes no timestep modulation
    int time_bias = -1;
    int scale_weight = -1;
    int scale_bias = -1;
  };

  Vector time_features(int t) const;
  Matrix conv_forward(const ConvLayer& layer, const Matrix& x, int rows, int cols, const Vector* temb,
                      Tape::ConvCache* cache) const;
  Matrix conv_backward(const ConvLayer& layer, const Tape::ConvCache& cache, const Matrix& grad_pre, int rows,
                       int cols, const Vector* temb, std::vector<Matrix>& grads) const;

  UNetConfig config_;
  std::vector<Matrix> params_;
  std::vector<ConvLayer> layers_;
};

/// Adam with global-norm gradient clipping.
class Adam {
 public:
  Adam(const std::vector<Matrix>& params, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
       double epsilon = 1e-8, double clip_norm = 1.0);
  void step(std::vector<Matrix>& params, const std::vector<Matrix>& grads);
  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  double lr_, beta1_, beta2_, eps_, clip_;
  long steps_ = 0;
  std::vector<Matrix> m_, v_;
};

/// im2col for 3×3 kernels with zero padding 1; exposed for testing.
Matrix im2col3x3(const Matrix& x, int rows, int cols);
Matrix col2im3x3(const Matrix& columns, int channels, int rows, int cols);

Matrix avg_pool2(const Matrix& x, int rows, int cols);
Matrix avg_pool2_backward(const Matrix& grad, int rows, int cols);  // rows/cols of the pooled input
Matrix upsample2(const Matrix& x, int rows, int cols);                // rows/cols of the coarse input
Matrix upsample2_backward(const Matrix& grad, int rows, int cols);

}  // namespace polypbench::nn
