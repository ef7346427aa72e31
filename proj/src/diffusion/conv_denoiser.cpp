#include "polypbench/diffusion/conv_denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <fstream>
#include <numbers>
#include <numeric>

#include <json.hpp>

#include "polypbench/diffusion/ddim.hpp"
#include "polypbench/io.hpp"

namespace polypbench {

using nn::Matrix;

ConvDenoiser::ConvDenoiser(nn::UNet net, int latent_channels, int condition_channels, NoiseSchedule schedule,
                           double data_center, double data_scale)
    : net_(std::move(net)),
      latent_channels_(latent_channels),
      condition_channels_(condition_channels),
      schedule_(std::move(schedule)),
      data_center_(data_center),
      data_scale_(data_scale) {
  if (net_.config().in_channels != latent_channels + condition_channels || net_.config().out_channels != latent_channels)
    throw Error("ConvDenoiser: network channels do not match latent/condition layout");
  if (!(data_scale > 0.0)) throw Error("ConvDenoiser: data_scale must be positive");
}

Preconditioning ConvDenoiser::preconditioning(int t) const {
  if (t < 1 || t > schedule_.steps()) throw Error("ConvDenoiser: timestep out of range");
  const double ab = schedule_.alpha_bar(t);
  const double var = (1.0 - ab) / ab;
  const double s2 = data_scale_ * data_scale_;
  Preconditioning p;
  p.in_scale = 1.0 / std::sqrt(var + s2);
  p.skip = std::sqrt(var) / (var + s2);
  p.out_scale = data_scale_ / std::sqrt(var + s2);
  p.inv_sqrt_alpha_bar = 1.0 / std::sqrt(ab);
  return p;
}

Image ConvDenoiser::network_input(const Image& x_t, int t, const Image& condition) const {
  if (x_t.channels() != latent_channels_) throw Error("ConvDenoiser: latent channel mismatch");
  const Preconditioning p = preconditioning(t);
  Image scaled(x_t.channels(), x_t.rows(), x_t.cols());
  scaled.array() = (x_t.array() * float(p.inv_sqrt_alpha_bar) - float(data_center_)) * float(p.in_scale);
  if (condition_channels_ == 0) {
    if (!condition.empty()) throw Error("ConvDenoiser: unconditional model got a condition");
    return scaled;
  }
  if (condition.channels() != condition_channels_)
    throw Error("ConvDenoiser: expected " + std::to_string(condition_channels_) + " condition channels, got " +
                std::to_string(condition.channels()));
  return concat_channels(scaled, condition);
}

Image ConvDenoiser::predict_noise(const Image& x_t, int t, const Image& condition) const {
  const Preconditioning p = preconditioning(t);
  const Image f = net_.forward(network_input(x_t, t, condition), t);
  Image eps(x_t.channels(), x_t.rows(), x_t.cols());
  eps.array() = (x_t.array() * float(p.inv_sqrt_alpha_bar) - float(data_center_)) * float(p.skip) -
                f.array() * float(p.out_scale);
  return eps;
}

namespace {

struct Probe {
  std::size_t index;
  int t;
  Image noise;
};

std::vector<Probe> make_probes(const std::vector<TrainingPair>& data, const NoiseSchedule& schedule, int max_pairs,
                               RandomSource rng) {
  std::vector<Probe> probes;
  const std::size_t n = std::min<std::size_t>(data.size(), std::size_t(std::max(max_pairs, 1)));
  for (std::size_t i = 0; i < n; ++i) {
    // Stratified timesteps so small probe sets still cover the schedule.
    const double u = (double(i) + rng.uniform()) / double(n);
    const int t = std::clamp(1 + int(u * schedule.steps()), 1, schedule.steps());
    const Image& x = data[i].target;
    probes.push_back({i, t, rng.normal_grid<float>(x.channels(), x.rows(), x.cols())});
  }
  return probes;
}

void check_dataset(const std::vector<TrainingPair>& data) {
  if (data.empty()) throw Error("train_denoiser: empty dataset");
  const Image& first = data.front().target;
  const int cond = data.front().condition.channels();
  for (const auto& p : data) {
    if (!p.target.same_shape(first)) throw Error("train_denoiser: targets differ in shape");
    if (p.condition.channels() != cond) throw Error("train_denoiser: condition channel count mismatch");
    if (cond > 0 && !p.condition.same_extent(first.rows(), first.cols()))
      throw Error("train_denoiser: condition extent mismatch");
  }
}

// Training reallocates the same large activation buffers every sample; keep
// them on the heap instead of round-tripping through mmap.
void keep_heap_resident() {
#if defined(__GLIBC__)
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
    return true;
  }();
  (void)once;
#endif
}

}  // namespace

double probe_loss(const Denoiser<float>& denoiser, const std::vector<TrainingPair>& data,
                  const NoiseSchedule& schedule, int max_pairs, RandomSource rng) {
  const auto probes = make_probes(data, schedule, max_pairs, std::move(rng));
  double total = 0.0;
  for (const auto& p : probes)
    total += training_loss(denoiser, data[p.index].target, p.t, p.noise, data[p.index].condition, schedule);
  return total / double(probes.size());
}

std::shared_ptr<ConvDenoiser> train_denoiser(const std::vector<TrainingPair>& data, const NoiseSchedule& schedule,
                                             const DenoiserTrainingConfig& config, RandomSource rng,
                                             TrainingReport* report) {
  check_dataset(data);
  keep_heap_resident();
  const Image& first = data.front().target;
  const int latent_ch = first.channels();
  const int cond_ch = data.front().condition.channels();

  nn::UNetConfig net_config;
  net_config.in_channels = latent_ch + cond_ch;
  net_config.out_channels = latent_ch;
  net_config.width = config.width;
  net_config.time_conditioned = true;
  net_config.time_scale = schedule.steps();
  auto model = std::make_shared<ConvDenoiser>(nn::UNet(net_config, rng.fork("init").bits()), latent_ch, cond_ch,
                                              schedule, config.data_center, config.data_scale);

  const RandomSource probe_rng = rng.fork("probe");
  TrainingReport local;
  local.initial_loss = probe_loss(*model, data, schedule, config.eval_pairs, probe_rng);

  nn::UNet& net = model->network();
  nn::Adam adam(net.parameters(), config.learning_rate);
  RandomSource order_rng = rng.fork("order");
  RandomSource noise_rng = rng.fork("noise");
  const int batch = std::max(1, config.batch_size);
  const int batches_per_epoch = int((data.size() + std::size_t(batch) - 1) / std::size_t(batch));
  const int total_steps = std::max(0, config.epochs) * batches_per_epoch;
  std::vector<std::size_t> order(data.size());
  nn::Tape tape;

  // Timesteps are drawn with probability proportional to the square root of
  // the loss weight the preconditioning assigns them, then reweighted so the
  // expected gradient is still that of uniform t.
  std::vector<double> cdf(std::size_t(schedule.steps()));
  std::vector<double> importance(cdf.size());
  {
    double total = 0.0;
    for (int t = 1; t <= schedule.steps(); ++t) {
      const Preconditioning p = model->preconditioning(t);
      importance[std::size_t(t - 1)] = p.out_scale;
      total += p.out_scale;
      cdf[std::size_t(t - 1)] = total;
    }
    for (std::size_t i = 0; i < cdf.size(); ++i) {
      cdf[i] /= total;
      importance[i] = (total / double(cdf.size())) / importance[i];
    }
  }

  int step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t(0));
    std::shuffle(order.begin(), order.end(), order_rng.engine());
    for (std::size_t start = 0; start < order.size(); start += std::size_t(batch)) {
      const std::size_t end = std::min(order.size(), start + std::size_t(batch));
      auto grads = net.zero_gradients();
      for (std::size_t k = start; k < end; ++k) {
        const TrainingPair& pair = data[order[k]];
        const auto pick = std::upper_bound(cdf.begin(), cdf.end() - 1, noise_rng.uniform());
        const int t = int(pick - cdf.begin()) + 1;
        const float weight = float(importance[std::size_t(t - 1)]);
        const Image noise = noise_rng.normal_grid<float>(latent_ch, first.rows(), first.cols());
        const Image x_t = forward_noise(pair.target, t, noise, schedule);
        const Image input = model->network_input(x_t, t, pair.condition);
        const Matrix in = Eigen::Map<const Matrix>(input.array().data(), input.channels(), input.pixels());
        const Matrix out = net.forward(in, first.rows(), first.cols(), t, &tape);
        const Preconditioning p = model->preconditioning(t);
        const Matrix y = (Eigen::Map<const Matrix>(x_t.array().data(), x_t.channels(), x_t.pixels()).array() *
                              float(p.inv_sqrt_alpha_bar) -
                          float(model->data_center()))
                             .matrix();
        const Matrix eps_hat = y * float(p.skip) - out * float(p.out_scale);
        const Matrix target = Eigen::Map<const Matrix>(noise.array().data(), noise.channels(), noise.pixels());
        // d/dF of the mean squared ε error, averaged over the batch.
        const Matrix grad =
            (eps_hat - target) *
            (-weight * float(p.out_scale) * 2.0f / float(out.size() * Eigen::Index(end - start)));
        net.backward(tape, grad, grads);
      }
      // Cosine decay to 10% of the base rate.
      const double progress = total_steps > 1 ? double(step) / double(total_steps - 1) : 0.0;
      adam.set_learning_rate(config.learning_rate * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress))));
      adam.step(net.parameters(), grads);
      ++step;
    }
  }
  local.steps = step;
  local.final_loss = step == 0 ? local.initial_loss : probe_loss(*model, data, schedule, config.eval_pairs, probe_rng);
  if (report) *report = local;
  return model;
}

namespace {

constexpr char kMagic[4] = {'P', 'B', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

nlohmann::json schedule_json(const NoiseSchedule& s) {
  return {{"type", "linear"}, {"steps", s.steps()}, {"beta_start", s.beta_start()}, {"beta_end", s.beta_end()}};
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::string& kind, const nn::UNet& net,
                     const NoiseSchedule* schedule, int latent_channels, int condition_channels, double data_center,
                     double data_scale, const AffineCodec* codec) {
  nlohmann::json header;
  header["kind"] = kind;
  header["architecture"] = nn::to_json(net.config());
  header["latent_channels"] = latent_channels;
  header["condition_channels"] = condition_channels;
  header["data_center"] = data_center;
  header["data_scale"] = data_scale;
  if (schedule) header["schedule"] = schedule_json(*schedule);
  if (codec) header["codec"] = {{"type", "affine"}, {"offset", codec->offset()}, {"scale", codec->scale()}};
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& p : net.parameters()) shapes.push_back({p.rows(), p.cols()});
  header["tensors"] = shapes;
  const std::string head = header.dump();

  std::string blob(kMagic, 4);
  auto put_u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) blob.push_back(char((v >> (8 * i)) & 0xff));
  };
  put_u32(kVersion);
  put_u32(std::uint32_t(head.size()));
  blob += head;
  for (const auto& p : net.parameters()) {
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, p.data() + i, 4);
      put_u32(bits);
    }
  }
  write_file_atomic(path, blob);
  if (schedule) write_file_atomic(path.string() + ".schedule.json", schedule_json(*schedule).dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string blob = read_text_file(path);
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (pos + n > blob.size()) throw Error("truncated checkpoint " + path.string());
  };
  auto get_u32 = [&]() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(blob[pos + i])) << (8 * i);
    pos += 4;
    return v;
  };
  need(4);
  if (blob.compare(0, 4, kMagic, 4) != 0) throw Error("not a checkpoint: " + path.string());
  pos = 4;
  if (get_u32() != kVersion) throw Error("unsupported checkpoint version in " + path.string());
  const std::uint32_t head_len = get_u32();
  need(head_len);
  const auto header = nlohmann::json::parse(blob.substr(pos, head_len));
  pos += head_len;

  Checkpoint ck;
  ck.kind = header.at("kind").get<std::string>();
  ck.latent_channels = header.at("latent_channels").get<int>();
  ck.condition_channels = header.at("condition_channels").get<int>();
  ck.data_center = header.value("data_center", 0.5);
  ck.data_scale = header.value("data_scale", 0.25);
  if (header.contains("schedule")) {
    const auto& s = header["schedule"];
    ck.schedule = NoiseSchedule(s.at("steps").get<int>(), s.at("beta_start").get<double>(),
                                s.at("beta_end").get<double>());
  }
  if (header.contains("codec")) {
    const auto& c = header["codec"];
    ck.codec = AffineCodec(c.at("offset").get<std::vector<float>>(), c.at("scale").get<std::vector<float>>());
  }
  ck.net = nn::UNet(nn::unet_config_from_json(header.at("architecture")), 0);
  auto& params = ck.net.parameters();
  const auto& shapes = header.at("tensors");
  if (shapes.size() != params.size()) throw Error("checkpoint tensor count mismatch in " + path.string());
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (shapes[k][0].get<Eigen::Index>() != params[k].rows() || shapes[k][1].get<Eigen::Index>() != params[k].cols())
      throw Error("checkpoint tensor shape mismatch in " + path.string());
    for (Eigen::Index i = 0; i < params[k].size(); ++i) {
      const std::uint32_t bits = get_u32();
      std::memcpy(params[k].data() + i, &bits, 4);
    }
  }
  if (pos != blob.size()) throw Error("trailing bytes in checkpoint " + path.string());
  return ck;
}

void save_denoiser(const std::filesystem::path& path, const std::string& kind, const ConvDenoiser& denoiser,
                   const AffineCodec* codec) {
  save_checkpoint(path, kind, denoiser.network(), &denoiser.schedule(), denoiser.latent_channels(),
                  denoiser.condition_channels(), denoiser.data_center(), denoiser.data_scale(), codec);
}

std::shared_ptr<ConvDenoiser> load_denoiser(const std::filesystem::path& path) {
  Checkpoint ck = load_checkpoint(path);
  if (!ck.schedule) throw Error("checkpoint " + path.string() + " has no noise schedule");
  return std::make_shared<ConvDenoiser>(std::move(ck.net), ck.latent_channels, ck.condition_channels, *ck.schedule,
                                        ck.data_center, ck.data_scale);
}

}  // namespace polypbench
