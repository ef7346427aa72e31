#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <numeric>

#include "polypbench/bench.hpp"
#include "polypbench/diffusion/conv_denoiser.hpp"

namespace polypbench {

std::uint64_t image_hash(const Image& image) {
  const int shape[3] = {image.channels(), image.rows(), image.cols()};
  std::uint64_t h = stable_hash(std::string_view(reinterpret_cast<const char*>(shape), sizeof shape));
  const auto* bytes = reinterpret_cast<const char*>(image.array().data());
  return stable_hash(std::string_view(bytes, sizeof(float) * std::size_t(image.array().size())), h);
}

void OracleAdapter::add(const Image& image, const Mask& mask) {
  if (!image.same_extent(int(mask.rows()), int(mask.cols()))) throw Error("OracleAdapter: shape mismatch");
  truth_[image_hash(image)] = mask;
}

Plane<float> OracleAdapter::predict(const Image& image) const {
  const auto it = truth_.find(image_hash(image));
  if (it == truth_.end()) throw Error("OracleAdapter: image has no registered ground truth");
  return it->second.cast<float>();
}

Plane<float> ConstantAdapter::predict(const Image& image) const {
  return Plane<float>::Constant(image.rows(), image.cols(), full_ ? 1.0f : 0.0f);
}

Plane<float> CachedAdapter::predict(const Image& image) const {
  const std::uint64_t key = image_hash(image);
  const auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;
  return cache_.emplace(key, inner_->predict(image)).first->second;
}

Image ConvSegmenter::normalize(const Image& image) {
  Image out = Image::zeros_like(image);
  out.array() = (image.array() - 0.5f) * 4.0f;
  return out;
}

Plane<float> ConvSegmenter::predict(const Image& image) const {
  const Image logits = net_.forward(normalize(image), 0);
  return 1.0f / (1.0f + (-logits.plane(0).array()).exp());
}

namespace {

using nn::Matrix;

Matrix as_matrix(const Image& image) {
  return Eigen::Map<const Matrix>(image.array().data(), image.channels(), image.pixels());
}

Matrix mask_row(const Mask& mask) {
  return Eigen::Map<const Eigen::Matrix<std::uint8_t, 1, Eigen::Dynamic>>(mask.data(), mask.size()).cast<float>();
}

// Mean binary cross-entropy of logits z against targets y.
double bce(const Matrix& z, const Matrix& y) {
  const auto a = z.array();
  return double((a.max(0.0f) - a * y.array() + (1.0f + (-a.abs()).exp()).log()).mean());
}

double probe(const nn::UNet& net, const std::vector<Matrix>& inputs, const std::vector<Matrix>& targets, int rows,
             int cols) {
  double total = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) total += bce(net.forward(inputs[i], rows, cols, 0, nullptr), targets[i]);
  return total / double(inputs.size());
}

}  // namespace

std::shared_ptr<ConvSegmenter> train_segmenter(const std::vector<Sample>& data, const SegmenterTrainingConfig& config,
                                               RandomSource rng, const std::string& name, SegmenterReport* report) {
  if (data.empty()) throw Error("train_segmenter: empty dataset");
  const int rows = data.front().rows(), cols = data.front().cols();
  std::vector<Matrix> inputs, targets;
  inputs.reserve(data.size());
  targets.reserve(data.size());
  for (const auto& s : data) {
    validate(s);
    if (s.rows() != rows || s.cols() != cols || s.image.channels() != data.front().image.channels())
      throw Error("train_segmenter: samples differ in shape");
    inputs.push_back(as_matrix(ConvSegmenter::normalize(s.image)));
    targets.push_back(mask_row(s.mask));
  }

  nn::UNetConfig net_config;
  net_config.in_channels = data.front().image.channels();
  net_config.out_channels = 1;
  net_config.width = config.width;
  net_config.time_conditioned = false;
  auto model = std::make_shared<ConvSegmenter>(nn::UNet(net_config, rng.fork("init").bits()), name);
  nn::UNet& net = model->network();

  const std::size_t probes = std::min<std::size_t>(data.size(), std::size_t(std::max(config.eval_samples, 1)));
  const std::vector<Matrix> probe_in(inputs.begin(), inputs.begin() + std::ptrdiff_t(probes));
  const std::vector<Matrix> probe_y(targets.begin(), targets.begin() + std::ptrdiff_t(probes));
  SegmenterReport local;
  local.initial_loss = probe(net, probe_in, probe_y, rows, cols);

  nn::Adam adam(net.parameters(), config.learning_rate);
  RandomSource order_rng = rng.fork("order");
  const std::size_t batch = std::size_t(std::max(1, config.batch_size));
  const int per_epoch = int((data.size() + batch - 1) / batch);
  const int total_steps = std::max(0, config.epochs) * per_epoch;
  std::vector<std::size_t> order(data.size());
  nn::Tape tape;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t(0));
    std::shuffle(order.begin(), order.end(), order_rng.engine());
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      auto grads = net.zero_gradients();
      for (std::size_t k = start; k < end; ++k) {
        const Matrix z = net.forward(inputs[order[k]], rows, cols, 0, &tape);
        const Matrix p = (1.0f / (1.0f + (-z.array()).exp())).matrix();
        const Matrix grad = (p - targets[order[k]]) / float(z.size() * Eigen::Index(end - start));
        net.backward(tape, grad, grads);
      }
      const double progress = total_steps > 1 ? double(local.steps) / double(total_steps - 1) : 0.0;
      adam.set_learning_rate(config.learning_rate * (0.1 + 0.45 * (1.0 + std::cos(std::numbers::pi * progress))));
      adam.step(net.parameters(), grads);
      ++local.steps;
    }
  }
  local.final_loss = local.steps == 0 ? local.initial_loss : probe(net, probe_in, probe_y, rows, cols);
  if (report) *report = local;
  return model;
}

void save_segmenter(const std::filesystem::path& path, const ConvSegmenter& model) {
  save_checkpoint(path, "segmenter", model.network(), nullptr, model.network().config().in_channels, 0);
}

std::shared_ptr<ConvSegmenter> load_segmenter(const std::filesystem::path& path, const std::string& name) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.kind != "segmenter") throw Error(path.string() + " holds a '" + ck.kind + "' checkpoint, not a segmenter");
  return std::make_shared<ConvSegmenter>(std::move(ck.net), name.empty() ? path.stem().string() : name);
}

double mean_dice(const SegmenterAdapter& adapter, const std::vector<Sample>& samples) {
  if (samples.empty()) throw Error("mean_dice: empty set");
  double total = 0.0;
  for (const auto& s : samples) total += dice(binarize(adapter.predict(s.image)), s.mask);
  return total / double(samples.size());
}

}  // namespace polypbench
