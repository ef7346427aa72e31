#include "polypbench/nn/unet.hpp"

#include <cmath>
#include <cstring>
#include <random>

#include <json.hpp>

namespace polypbench::nn {

nlohmann::json to_json(const UNetConfig& c) {
  return {{"in_channels", c.in_channels},         {"out_channels", c.out_channels},
          {"width", c.width},                     {"time_conditioned", c.time_conditioned},
          {"time_features", c.time_features},     {"time_scale", c.time_scale},
          {"group_norm", c.group_norm}};
}

UNetConfig unet_config_from_json(const nlohmann::json& j) {
  UNetConfig c;
  c.in_channels = j.at("in_channels").get<int>();
  c.out_channels = j.at("out_channels").get<int>();
  c.width = j.at("width").get<int>();
  c.time_conditioned = j.at("time_conditioned").get<bool>();
  c.time_features = j.at("time_features").get<int>();
  c.time_scale = j.at("time_scale").get<int>();
  c.group_norm = j.value("group_norm", false);
  return c;
}

Matrix im2col3x3(const Matrix& x, int rows, int cols) {
  const int channels = int(x.rows());
  const Eigen::Index n = Eigen::Index(rows) * cols;
  Matrix out = Matrix::Zero(Eigen::Index(channels) * 9, n);
  for (int c = 0; c < channels; ++c) {
    const float* src = x.row(c).data();
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        float* dst = out.row(Eigen::Index(c) * 9 + ky * 3 + kx).data();
        const int dy = ky - 1, dx = kx - 1;
        const int x0 = std::max(0, -dx), x1 = std::min(cols, cols - dx);
        for (int y = 0; y < rows; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= rows) continue;
          std::memcpy(dst + Eigen::Index(y) * cols + x0, src + Eigen::Index(sy) * cols + x0 + dx,
                      sizeof(float) * std::size_t(x1 - x0));
        }
      }
  }
  return out;
}

Matrix col2im3x3(const Matrix& columns, int channels, int rows, int cols) {
  Matrix out = Matrix::Zero(channels, Eigen::Index(rows) * cols);
  for (int c = 0; c < channels; ++c) {
    float* dst = out.row(c).data();
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const float* src = columns.row(Eigen::Index(c) * 9 + ky * 3 + kx).data();
        const int dy = ky - 1, dx = kx - 1;
        const int x0 = std::max(0, -dx), x1 = std::min(cols, cols - dx);
        for (int y = 0; y < rows; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= rows) continue;
          const Eigen::Index drow = Eigen::Index(sy) * cols + dx, srow = Eigen::Index(y) * cols;
          for (int xx = x0; xx < x1; ++xx) dst[drow + xx] += src[srow + xx];
        }
      }
  }
  return out;
}

Matrix avg_pool2(const Matrix& x, int rows, int cols) {
  const int r2 = rows / 2, c2 = cols / 2;
  Matrix out(x.rows(), Eigen::Index(r2) * c2);
  for (Eigen::Index ch = 0; ch < x.rows(); ++ch) {
    const float* s = x.row(ch).data();
    float* d = out.row(ch).data();
    for (int y = 0; y < r2; ++y)
      for (int xx = 0; xx < c2; ++xx) {
        const Eigen::Index i = Eigen::Index(2 * y) * cols + 2 * xx;
        d[Eigen::Index(y) * c2 + xx] = 0.25f * (s[i] + s[i + 1] + s[i + cols] + s[i + cols + 1]);
      }
  }
  return out;
}

Matrix avg_pool2_backward(const Matrix& grad, int rows, int cols) {
  const int r2 = rows / 2, c2 = cols / 2;
  Matrix out(grad.rows(), Eigen::Index(rows) * cols);
  for (Eigen::Index ch = 0; ch < grad.rows(); ++ch) {
    const float* s = grad.row(ch).data();
    float* d = out.row(ch).data();
    for (int y = 0; y < r2; ++y)
      for (int xx = 0; xx < c2; ++xx) {
        const float g = 0.25f * s[Eigen::Index(y) * c2 + xx];
        const Eigen::Index i = Eigen::Index(2 * y) * cols + 2 * xx;
        d[i] = d[i + 1] = d[i + cols] = d[i + cols + 1] = g;
      }
  }
  return out;
}

Matrix upsample2(const Matrix& x, int rows, int cols) {
  const int r2 = rows * 2, c2 = cols * 2;
  Matrix out(x.rows(), Eigen::Index(r2) * c2);
  for (Eigen::Index ch = 0; ch < x.rows(); ++ch) {
    const float* s = x.row(ch).data();
    float* d = out.row(ch).data();
    for (int y = 0; y < r2; ++y)
      for (int xx = 0; xx < c2; ++xx) d[Eigen::Index(y) * c2 + xx] = s[Eigen::Index(y / 2) * cols + xx / 2];
  }
  return out;
}

Matrix upsample2_backward(const Matrix& grad, int rows, int cols) {
  const int c2 = cols * 2;
  Matrix out = Matrix::Zero(grad.rows(), Eigen::Index(rows) * cols);
  for (Eigen::Index ch = 0; ch < grad.rows(); ++ch) {
    const float* s = grad.row(ch).data();
    float* d = out.row(ch).data();
    for (int y = 0; y < rows * 2; ++y)
      for (int xx = 0; xx < c2; ++xx) d[Eigen::Index(y / 2) * cols + xx / 2] += s[Eigen::Index(y) * c2 + xx];
  }
  return out;
}

namespace {

Matrix silu(const Matrix& pre) {
  return pre.array() / (1.0f + (-pre.array()).exp());
}

Matrix silu_backward(const Matrix& pre, const Matrix& grad) {
  const auto sig = 1.0f / (1.0f + (-pre.array()).exp());
  return grad.array() * sig * (1.0f + pre.array() * (1.0f - sig));
}

int group_count(int channels) {
  for (int g : {8, 4, 2})
    if (channels % g == 0) return g;
  return 1;
}

constexpr float kNormEps = 1e-5f;

Matrix stack_rows(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() + b.rows(), a.cols());
  out.topRows(a.rows()) = a;
  out.bottomRows(b.rows()) = b;
  return out;
}

}  // namespace

UNet::UNet(const UNetConfig& config, std::uint64_t seed) : config_(config) {
  if (config.in_channels < 1 || config.out_channels < 1 || config.width < 1) throw Error("UNet: invalid config");
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  const int c = config.width;
  const int tf = config.time_features;

  auto add_param = [&](int rows, int cols, float stddev) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev == 0.0f ? 0.0f : stddev * normal(rng);
    params_.push_back(std::move(m));
    return int(params_.size()) - 1;
  };
  auto add_conv = [&](int in, int out, bool timed, float gain, bool hidden = true) {
    ConvLayer l;
    l.in = in;
    l.out = out;
    l.weight = add_param(out, in * 9, gain * std::sqrt(2.0f / float(in * 9)));
    l.bias = add_param(out, 1, 0.0f);
    if (hidden && config_.group_norm) {
      l.groups = group_count(out);
      l.norm_scale = add_param(out, 1, 0.0f);
      params_[l.norm_scale].setOnes();
      l.norm_shift = add_param(out, 1, 0.0f);
    }
    if (timed && config_.time_conditioned) {
      l.time_weight = add_param(out, tf, std::sqrt(1.0f / float(tf)));
      l.time_bias = add_param(out, 1, 0.0f);
      l.scale_weight = add_param(out, tf, 0.1f * std::sqrt(1.0f / float(tf)));
      l.scale_bias = add_param(out, 1, 0.0f);
    }
    layers_.push_back(l);
  };
  add_conv(config.in_channels, c, true, 1.0f);  // 0: encoder 1
  add_conv(c, c, false, 1.0f);                   // 1
  add_conv(c, 2 * c, true, 1.0f);                // 2: encoder 2
  add_conv(2 * c, 2 * c, false, 1.0f);           // 3
  add_conv(2 * c, 2 * c, true, 1.0f);            // 4: bottleneck
  add_conv(2 * c, 2 * c, false, 1.0f);           // 5
  add_conv(4 * c, 2 * c, true, 1.0f);            // 6: decoder 2
  add_conv(3 * c, c, true, 1.0f);                // 7: decoder 1
  add_conv(c, config.out_channels, false, 0.1f, false);  // 8: head
}

std::vector<Matrix> UNet::zero_gradients() const {
  std::vector<Matrix> g;
  g.reserve(params_.size());
  for (const auto& p : params_) g.push_back(Matrix::Zero(p.rows(), p.cols()));
  return g;
}

std::size_t UNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += std::size_t(p.size());
  return n;
}

Vector UNet::time_features(int t) const {
  const int half = config_.time_features / 2;
  Vector f(config_.time_features);
  const double pos = double(t) * 1000.0 / double(config_.time_scale);
  for (int k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * double(k) / double(half));
    f(k) = float(std::sin(pos * freq));
    f(half + k) = float(std::cos(pos * freq));
  }
  return f;
}

Matrix UNet::conv_forward(const ConvLayer& layer, const Matrix& x, int rows, int cols, const Vector* temb,
                          Tape::ConvCache* cache) const {
  Matrix columns = im2col3x3(x, rows, cols);
  Matrix y(layer.out, columns.cols());
  y.noalias() = params_[layer.weight] * columns;
  y.colwise() += params_[layer.bias].col(0);
  if (layer.norm_scale >= 0) {
    const int per = layer.out / layer.groups;
    const Eigen::Index n = Eigen::Index(per) * y.cols();
    Vector inv_std(layer.groups);
    for (int g = 0; g < layer.groups; ++g) {
      auto block = y.middleRows(Eigen::Index(g) * per, per).array();
      const float mean = block.sum() / float(n);
      block -= mean;
      inv_std(g) = 1.0f / std::sqrt(block.square().sum() / float(n) + kNormEps);
      block *= inv_std(g);
    }
    if (cache) {
      cache->normed = y;
      cache->inv_std = std::move(inv_std);
    }
    y = (y.array().colwise() * params_[layer.norm_scale].col(0).array()).matrix();
    y.colwise() += params_[layer.norm_shift].col(0);
  }
  const bool modulated = layer.time_weight >= 0 && temb;
  Vector gain;
  if (modulated) {
    gain = Vector::Ones(layer.out) + params_[layer.scale_weight] * *temb + params_[layer.scale_bias].col(0);
    const Vector shift = params_[layer.time_weight] * *temb + params_[layer.time_bias].col(0);
    if (cache) cache->linear = y;
    y = (y.array().colwise() * gain.array()).matrix();
    y.colwise() += shift;
  }
  if (cache) {
    cache->cols = std::move(columns);
    cache->pre = y;
    cache->gain = std::move(gain);
  }
  return y;
}

Matrix UNet::conv_backward(const ConvLayer& layer, const Tape::ConvCache& cache, const Matrix& grad_pre, int rows,
                           int cols, const Vector* temb, std::vector<Matrix>& grads) const {
  Matrix modulated_grad;
  const Matrix* grad_linear = &grad_pre;
  if (layer.time_weight >= 0 && temb) {
    const Vector g_shift = grad_pre.rowwise().sum();
    grads[layer.time_weight].noalias() += g_shift * temb->transpose();
    grads[layer.time_bias].col(0) += g_shift;
    const Vector g_scale = (grad_pre.array() * cache.linear.array()).rowwise().sum().matrix();
    grads[layer.scale_weight].noalias() += g_scale * temb->transpose();
    grads[layer.scale_bias].col(0) += g_scale;
    modulated_grad = (grad_pre.array().colwise() * cache.gain.array()).matrix();
    grad_linear = &modulated_grad;
  }
  Matrix normed_grad;
  if (layer.norm_scale >= 0) {
    grads[layer.norm_scale].col(0) += (grad_linear->array() * cache.normed.array()).rowwise().sum().matrix();
    grads[layer.norm_shift].col(0) += grad_linear->rowwise().sum();
    normed_grad = (grad_linear->array().colwise() * params_[layer.norm_scale].col(0).array()).matrix();
    const int per = layer.out / layer.groups;
    const float n = float(per) * float(normed_grad.cols());
    for (int g = 0; g < layer.groups; ++g) {
      auto d = normed_grad.middleRows(Eigen::Index(g) * per, per).array();
      const auto xh = cache.normed.middleRows(Eigen::Index(g) * per, per).array();
      const float mean_d = d.sum() / n;
      const float mean_dx = (d * xh).sum() / n;
      d = (d - mean_d - xh * mean_dx) * cache.inv_std(g);
    }
    grad_linear = &normed_grad;
  }
  grads[layer.weight].noalias() += *grad_linear * cache.cols.transpose();
  grads[layer.bias].col(0) += grad_linear->rowwise().sum();
  Matrix dcols(cache.cols.rows(), cache.cols.cols());
  dcols.noalias() = params_[layer.weight].transpose() * *grad_linear;
  return col2im3x3(dcols, layer.in, rows, cols);
}

Matrix UNet::forward(const Matrix& input, int rows, int cols, int t, Tape* tape) const {
  if (input.rows() != config_.in_channels) throw Error("UNet: expected " + std::to_string(config_.in_channels) +
                                                       " input channels, got " + std::to_string(input.rows()));
  if (rows % 4 != 0 || cols % 4 != 0) throw Error("UNet: spatial size must be divisible by 4");
  const Vector temb = config_.time_conditioned ? time_features(t) : Vector();
  const Vector* te = config_.time_conditioned ? &temb : nullptr;
  if (tape) {
    tape->conv.assign(layers_.size(), {});
    tape->time_embedding = temb;
    tape->rows = rows;
    tape->cols = cols;
  }
  auto cache = [&](int i) { return tape ? &tape->conv[i] : nullptr; };
  const int r2 = rows / 2, c2 = cols / 2, r4 = rows / 4, c4 = cols / 4;

  const Matrix a0 = silu(conv_forward(layers_[0], input, rows, cols, te, cache(0)));
  const Matrix s1 = silu(conv_forward(layers_[1], a0, rows, cols, te, cache(1)));
  const Matrix a2 = silu(conv_forward(layers_[2], avg_pool2(s1, rows, cols), r2, c2, te, cache(2)));
  const Matrix s2 = silu(conv_forward(layers_[3], a2, r2, c2, te, cache(3)));
  const Matrix a4 = silu(conv_forward(layers_[4], avg_pool2(s2, r2, c2), r4, c4, te, cache(4)));
  const Matrix a5 = silu(conv_forward(layers_[5], a4, r4, c4, te, cache(5)));
  const Matrix a6 = silu(conv_forward(layers_[6], stack_rows(upsample2(a5, r4, c4), s2), r2, c2, te, cache(6)));
  const Matrix a7 = silu(conv_forward(layers_[7], stack_rows(upsample2(a6, r2, c2), s1), rows, cols, te, cache(7)));
  return conv_forward(layers_[8], a7, rows, cols, te, cache(8));
}

void UNet::backward(const Tape& tape, const Matrix& grad_output, std::vector<Matrix>& grads) const {
  const int rows = tape.rows, cols = tape.cols;
  const int r2 = rows / 2, c2 = cols / 2, r4 = rows / 4, c4 = cols / 4;
  const int w = config_.width;
  const Vector* te = config_.time_conditioned ? &tape.time_embedding : nullptr;
  auto back = [&](int i, const Matrix& grad_pre, int r, int c) {
    return conv_backward(layers_[i], tape.conv[i], grad_pre, r, c, te, grads);
  };
  auto through_silu = [&](int i, const Matrix& grad) { return silu_backward(tape.conv[i].pre, grad); };

  const Matrix d_a7 = back(8, grad_output, rows, cols);
  const Matrix d_c7 = back(7, through_silu(7, d_a7), rows, cols);
  const Matrix d_a6 = upsample2_backward(d_c7.topRows(2 * w), r2, c2);
  Matrix d_s1 = d_c7.bottomRows(w);

  const Matrix d_c6 = back(6, through_silu(6, d_a6), r2, c2);
  const Matrix d_a5 = upsample2_backward(d_c6.topRows(2 * w), r4, c4);
  Matrix d_s2 = d_c6.bottomRows(2 * w);

  const Matrix d_a4 = back(5, through_silu(5, d_a5), r4, c4);
  const Matrix d_p2 = back(4, through_silu(4, d_a4), r4, c4);
  d_s2 += avg_pool2_backward(d_p2, r2, c2);

  const Matrix d_a2 = back(3, through_silu(3, d_s2), r2, c2);
  const Matrix d_p1 = back(2, through_silu(2, d_a2), r2, c2);
  d_s1 += avg_pool2_backward(d_p1, rows, cols);

  const Matrix d_a0 = back(1, through_silu(1, d_s1), rows, cols);
  back(0, through_silu(0, d_a0), rows, cols);
}

Image UNet::forward(const Image& input, int t) const {
  const Matrix in = Eigen::Map<const Matrix>(input.array().data(), input.channels(), input.pixels());
  const Matrix out = forward(in, input.rows(), input.cols(), t, nullptr);
  Image result(config_.out_channels, input.rows(), input.cols());
  Eigen::Map<Matrix>(result.array().data(), result.channels(), result.pixels()) = out;
  return result;
}

Adam::Adam(const std::vector<Matrix>& params, double learning_rate, double beta1, double beta2, double epsilon,
           double clip_norm)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon), clip_(clip_norm) {
  for (const auto& p : params) {
    m_.push_back(Matrix::Zero(p.rows(), p.cols()));
    v_.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
}

void Adam::step(std::vector<Matrix>& params, const std::vector<Matrix>& grads) {
  double norm2 = 0.0;
  for (const auto& g : grads) norm2 += double(g.squaredNorm());
  const double norm = std::sqrt(norm2);
  const float scale = (clip_ > 0.0 && norm > clip_) ? float(clip_ / norm) : 1.0f;
  ++steps_;
  const float b1 = float(beta1_), b2 = float(beta2_);
  const float c1 = float(1.0 - std::pow(beta1_, double(steps_)));
  const float c2 = float(1.0 - std::pow(beta2_, double(steps_)));
  const float lr = float(lr_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto g = (grads[i] * scale).array();
    m_[i].array() = b1 * m_[i].array() + (1.0f - b1) * g;
    v_[i].array() = b2 * v_[i].array() + (1.0f - b2) * g.square();
    params[i].array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + float(eps_));
  }
}

}  // namespace polypbench::nn
