#include <doctest.h>

#include "polypbench/diffusion/conv_denoiser.hpp"
#include "polypbench/diffusion/ddim.hpp"
#include "polypbench/io.hpp"
#include "support.hpp"

using namespace polypbench;

namespace {
using Grid64 = Grid<double>;

Grid64 constant_grid(int c, int r, int w, double v) { return Grid64(c, r, w, v); }
}  // namespace

TEST_CASE("linear schedule matches reference values") {
  // numpy: cumprod(1 − linspace(1e-4, 2e-2, 1000))
  const NoiseSchedule s;
  CHECK(s.steps() == 1000);
  CHECK(s.alpha_bar(0) == 1.0);
  CHECK(s.alpha_bar(1) == doctest::Approx(0.9999).epsilon(1e-14));
  CHECK(std::abs(s.alpha_bar(200) - 0.6590385082317941) <= 1e-12);
  CHECK(std::abs(s.alpha_bar(400) - 0.19514644493343236) <= 1e-12);
  CHECK(s.alpha_bar(1000) == doctest::Approx(4.035829765375676e-05).epsilon(1e-9));
  CHECK(s.beta(1000) == doctest::Approx(2e-2));
}

TEST_CASE("schedule properties and errors") {
  const NoiseSchedule s(50, 1e-3, 5e-2);
  for (int t = 1; t <= 50; ++t) {
    CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
    CHECK(s.alpha_bar(t) == doctest::Approx(s.alpha_bar(t - 1) * s.alpha(t)));
  }
  CHECK(NoiseSchedule(1, 0.1, 0.1).alpha_bar(1) == doctest::Approx(0.9));
  CHECK_THROWS_AS(NoiseSchedule(0, 1e-4, 2e-2), Error);
  CHECK_THROWS_AS(NoiseSchedule(10, 0.0, 2e-2), Error);
  CHECK_THROWS_AS(NoiseSchedule(10, 0.3, 0.2), Error);
  CHECK_THROWS_AS(NoiseSchedule(10, 0.1, 1.0), Error);
}

TEST_CASE("timestep sequences") {
  CHECK(timestep_sequence(1000, 4) == std::vector<int>{1000, 750, 500, 250, 0});
  const auto seq = timestep_sequence(400, 20);
  CHECK(seq.size() == 21);
  CHECK(seq.front() == 400);
  CHECK(seq[1] == 380);
  CHECK(seq.back() == 0);
  CHECK(timestep_sequence(5, 20) == std::vector<int>{5, 4, 3, 2, 1, 0});
  CHECK(timestep_sequence(0, 3) == std::vector<int>{0});
  CHECK_THROWS_AS(timestep_sequence(10, 0), Error);
  CHECK_THROWS_AS(timestep_sequence(-1, 2), Error);
}

TEST_CASE("forward noise") {
  const NoiseSchedule s;
  RandomSource rng(1, "fwd");
  const Grid64 x0 = rng.normal_grid<double>(2, 4, 4), eps = rng.normal_grid<double>(2, 4, 4);
  CHECK(forward_noise(x0, 0, eps, s) == x0);
  const Grid64 xt = forward_noise(x0, 400, eps, s);
  const double ab = s.alpha_bar(400);
  CHECK(xt(1, 2, 3) == doctest::Approx(std::sqrt(ab) * x0(1, 2, 3) + std::sqrt(1 - ab) * eps(1, 2, 3)));
  CHECK_THROWS_AS(forward_noise(x0, 1001, eps, s), Error);
  CHECK_THROWS_AS(forward_noise(x0, 10, Grid64(1, 4, 4), s), Error);
}

TEST_CASE("point mass is recovered in one step") {
  const NoiseSchedule s;
  RandomSource rng(2, "point");
  const Grid64 c = rng.normal_grid<double>(3, 8, 8);
  const auto denoiser = analytic_gaussian_denoiser(c, 0.0, s);
  for (int t : {1, 200, 400, 1000}) {
    const Grid64 xt = forward_noise(c, t, rng.normal_grid<double>(3, 8, 8), s);
    const Grid64 x0 = ddim_step(xt, t, 0, *denoiser, Grid64{}, s);
    CHECK((x0.array() - c.array()).abs().maxCoeff() <= 1e-9);
  }
  RandomSource srng(3, "point-sample");
  const Grid64 sampled = sample(*denoiser, Grid64{}, s, 1, srng, 3, 8, 8);
  CHECK((sampled.array() - c.array()).abs().maxCoeff() <= 1e-9);
}

TEST_CASE("gaussian sampling mean and spread") {
  const NoiseSchedule s;
  const double sigma = 0.5;
  Grid64 mu(1, 2, 2);
  mu.array() << 0.3, -1.0, 2.0, 0.0;
  const auto denoiser = analytic_gaussian_denoiser(mu, sigma, s);
  RandomSource rng(4, "gauss");
  Eigen::ArrayXd sum = Eigen::ArrayXd::Zero(4), sq = Eigen::ArrayXd::Zero(4);
  const int n = 4096;
  for (int i = 0; i < n; ++i) {
    const Grid64 x = sample(*denoiser, Grid64{}, s, 100, rng, 1, 2, 2);
    const Eigen::ArrayXd v = x.array().row(0).transpose();
    sum += v;
    sq += v.square();
  }
  const Eigen::ArrayXd mean = sum / n, sd = (sq / n - mean.square()).sqrt();
  for (int k = 0; k < 4; ++k) {
    CHECK(std::abs(mean(k) - mu.array()(0, k)) <= 0.1 * sigma);
    CHECK(std::abs(sd(k) - sigma) <= 0.1 * sigma);
  }
}

TEST_CASE("analytic denoiser agrees with its posterior mean") {
  const NoiseSchedule s;
  RandomSource rng(5, "post");
  const Grid64 mu = rng.normal_grid<double>(1, 3, 3);
  const AnalyticGaussianDenoiser<double> d(mu, 0.7, s);
  for (int t : {10, 300, 900}) {
    const Grid64 xt = rng.normal_grid<double>(1, 3, 3);
    const Grid64 eps = d.predict_noise(xt, t, {});
    const double ab = s.alpha_bar(t);
    Grid64 x0 = xt;
    x0.array() = (xt.array() - std::sqrt(1 - ab) * eps.array()) / std::sqrt(ab);
    CHECK((x0.array() - d.posterior_mean(xt, t).array()).abs().maxCoeff() <= 1e-12);
  }
  CHECK_THROWS_AS(AnalyticGaussianDenoiser<double>(mu, -1.0, s), Error);
}

TEST_CASE("training loss of the exact point-mass denoiser is zero") {
  const NoiseSchedule s;
  RandomSource rng(6, "loss");
  const Grid64 c = rng.normal_grid<double>(2, 4, 4);
  const auto d = analytic_gaussian_denoiser(c, 0.0, s);
  for (int t : {1, 500, 1000}) CHECK(training_loss(*d, c, t, rng.normal_grid<double>(2, 4, 4), Grid64{}, s) <= 1e-20);
}

TEST_CASE("ddim step errors") {
  const NoiseSchedule s;
  const auto d = analytic_gaussian_denoiser(constant_grid(1, 2, 2, 0.0), 1.0, s);
  const Grid64 x(1, 2, 2);
  CHECK_THROWS_AS(ddim_step(x, 10, 20, *d, Grid64{}, s), Error);
  CHECK(ddim_step(x, 10, 10, *d, Grid64{}, s) == x);
  const FunctionDenoiser<double> bad([](const Grid64&, int, const Grid64&) { return Grid64(2, 2, 2); });
  CHECK_THROWS_AS(ddim_step(x, 10, 0, bad, Grid64{}, s), Error);
  RandomSource rng(7, "x");
  CHECK_THROWS_AS(sample(*d, Grid64{}, s, 0, rng, 1, 2, 2), Error);
}

TEST_CASE("reverse hook sees every step") {
  const NoiseSchedule s;
  const auto d = analytic_gaussian_denoiser(constant_grid(1, 2, 2, 0.0), 1.0, s);
  std::vector<int> seen;
  ddim_reverse<double>(Grid64(1, 2, 2, 1.0), 100, 4, *d, Grid64{}, s, [&](Grid64&, int t) { seen.push_back(t); });
  CHECK(seen == std::vector<int>{75, 50, 25, 0});
  CHECK(ddim_reverse<double>(Grid64(1, 2, 2, 3.0), 0, 4, *d, Grid64{}, s) == Grid64(1, 2, 2, 3.0));
}

TEST_CASE("affine codec") {
  const AffineCodec codec({0.5f, 0.4f, 0.3f}, {0.1f, 0.2f, 0.25f});
  const Image img = test::blob_image(test::disk(8, 8, 4, 4, 2));
  const Image z = codec.encode(img);
  CHECK(z(1, 3, 3) == doctest::Approx((img(1, 3, 3) - 0.4) / 0.2).epsilon(1e-6));
  CHECK((codec.decode(z).array() - img.array()).abs().maxCoeff() <= 1e-6f);
  CHECK_THROWS_AS(AffineCodec({0.f}, {0.f}), Error);
  CHECK_THROWS_AS(AffineCodec({0.f, 1.f}, {1.f}), Error);
  CHECK_THROWS_AS(codec.encode(Image(1, 4, 4)), Error);

  std::vector<Image> images;
  for (int i = 0; i < 4; ++i) images.push_back(test::blob_image(test::disk(16, 16, 8, 8, 2 + i), i));
  const AffineCodec fitted = fit_affine_codec(images);
  double sum = 0, sq = 0, n = 0;
  for (const auto& im : images) {
    const auto p = fitted.encode(im).plane(2).array().cast<double>();
    sum += p.sum();
    sq += p.square().sum();
    n += double(p.size());
  }
  CHECK(sum / n == doctest::Approx(0.0).epsilon(1e-4));
  CHECK(sq / n == doctest::Approx(1.0).epsilon(1e-4));
  CHECK_THROWS_AS(fit_affine_codec({}), Error);
  IdentityCodec id;
  CHECK(id.decode(id.encode(img)) == img);
}

TEST_CASE("zero network makes the conv denoiser the gaussian optimum") {
  // With F ≡ 0 the preconditioned prediction is skip·y, the exact denoiser
  // for N(center, scale²).
  const NoiseSchedule s;
  nn::UNet net(nn::UNetConfig{3, 3, 8}, 1);
  for (auto& p : net.parameters()) p.setZero();
  const ConvDenoiser d(net, 3, 0, s, 0.4, 0.3);
  const AnalyticGaussianDenoiser<float> ref(Image(3, 8, 8, 0.4f), 0.3, s);
  RandomSource rng(8, "zero");
  for (int t : {5, 400, 999}) {
    const Image xt = rng.normal_grid<float>(3, 8, 8);
    CHECK((d.predict_noise(xt, t, {}).array() - ref.predict_noise(xt, t, {}).array()).abs().maxCoeff() <= 1e-5f);
  }
}

TEST_CASE("conv denoiser validation") {
  const NoiseSchedule s;
  CHECK_THROWS_AS(ConvDenoiser(nn::UNet(nn::UNetConfig{3, 3, 8}, 1), 3, 1, s), Error);
  CHECK_THROWS_AS(ConvDenoiser(nn::UNet(nn::UNetConfig{3, 3, 8}, 1), 3, 0, s, 0.5, 0.0), Error);
  const ConvDenoiser uncond(nn::UNet(nn::UNetConfig{3, 3, 8}, 1), 3, 0, s);
  CHECK_THROWS_AS(uncond.predict_noise(Image(3, 8, 8), 0, {}), Error);
  CHECK_THROWS_AS(uncond.predict_noise(Image(3, 8, 8), 10, Image(1, 8, 8)), Error);
  CHECK_THROWS_AS(uncond.predict_noise(Image(2, 8, 8), 10, {}), Error);
  const ConvDenoiser cond(nn::UNet(nn::UNetConfig{7, 3, 8}, 1), 3, 4, s);
  CHECK(cond.condition_channels() == 4);
  CHECK(cond.predict_noise(Image(3, 8, 8), 10, Image(4, 8, 8)).channels() == 3);
  CHECK_THROWS_AS(cond.predict_noise(Image(3, 8, 8), 10, {}), Error);
}

TEST_CASE("unet gradients match finite differences") {
  nn::UNetConfig config{4, 3, 8};
  nn::UNet net(config, 3);
  RandomSource rng(9, "grad");
  const int rows = 8, cols = 8, t = 321;
  nn::Matrix input(4, rows * cols), weight(3, rows * cols);
  for (Eigen::Index i = 0; i < input.size(); ++i) input.data()[i] = float(rng.normal());
  for (Eigen::Index i = 0; i < weight.size(); ++i) weight.data()[i] = float(rng.normal());
  auto loss = [&](const nn::UNet& n) {
    return double((n.forward(input, rows, cols, t, nullptr).cast<double>().array() * weight.cast<double>().array()).sum());
  };
  nn::Tape tape;
  net.forward(input, rows, cols, t, &tape);
  auto grads = net.zero_gradients();
  net.backward(tape, weight, grads);
  double worst = 0.0;
  for (std::size_t p = 0; p < net.parameters().size(); ++p)
    for (int k = 0; k < 3; ++k) {
      const Eigen::Index idx = Eigen::Index(rng.uniform_int(0, int(net.parameters()[p].size()) - 1));
      const float h = 1e-2f;
      nn::UNet plus = net, minus = net;
      plus.parameters()[p].data()[idx] += h;
      minus.parameters()[p].data()[idx] -= h;
      const double numeric = (loss(plus) - loss(minus)) / (2.0 * h);
      const double analytic = grads[p].data()[idx];
      worst = std::max(worst, std::abs(numeric - analytic) / std::max(1.0, std::abs(numeric)));
    }
  CHECK(worst < 2e-2);
}

TEST_CASE("training lowers the probe loss") {
  const NoiseSchedule s;
  std::vector<TrainingPair> data;
  for (int i = 0; i < 8; ++i) data.push_back({test::blob_image(test::disk(16, 16, 8, 8, 3 + i % 3), i), {}});
  DenoiserTrainingConfig config;
  config.epochs = 80;
  config.width = 8;
  TrainingReport report;
  const auto model = train_denoiser(data, s, config, RandomSource(10, "train"), &report);
  CHECK(report.steps == 80);
  CHECK(report.loss_ratio() < 0.9);
  CHECK(probe_loss(*model, data, s, 16, RandomSource(11, "probe")) > 0.0);
  // Same seed, same model.
  const auto again = train_denoiser(data, s, config, RandomSource(10, "train"));
  CHECK(again->network().parameters()[0] == model->network().parameters()[0]);
  CHECK_THROWS_AS(train_denoiser({}, s, config, RandomSource(1, "x")), Error);
}

TEST_CASE("checkpoint round trip") {
  test::TempDir dir;
  const NoiseSchedule s(100, 1e-3, 3e-2);
  const ConvDenoiser d(nn::UNet(nn::UNetConfig{5, 3, 8}, 4), 3, 2, s, 0.1, 0.9);
  const AffineCodec codec({0.1f, 0.2f, 0.3f}, {1.f, 2.f, 3.f});
  save_denoiser(dir / "m.pbck", "inpainter", d, &codec);
  CHECK(std::filesystem::exists(dir / "m.pbck.schedule.json"));
  const auto loaded = load_denoiser(dir / "m.pbck");
  CHECK(loaded->schedule() == s);
  CHECK(loaded->data_center() == doctest::Approx(0.1));
  RandomSource rng(12, "ck");
  const Image x = rng.normal_grid<float>(3, 8, 8), c = rng.normal_grid<float>(2, 8, 8);
  CHECK(loaded->predict_noise(x, 50, c) == d.predict_noise(x, 50, c));
  const Checkpoint ck = load_checkpoint(dir / "m.pbck");
  CHECK(ck.kind == "inpainter");
  REQUIRE(ck.codec.has_value());
  CHECK(ck.codec->scale() == codec.scale());

  save_denoiser(dir / "plain.pbck", "uncond", d);
  CHECK_FALSE(load_checkpoint(dir / "plain.pbck").codec.has_value());

  const std::string bytes = test::slurp(dir / "m.pbck");
  write_file_atomic(dir / "cut.pbck", bytes.substr(0, bytes.size() - 5));
  CHECK_THROWS_AS(load_denoiser(dir / "cut.pbck"), Error);
  write_file_atomic(dir / "junk.pbck", "hello world, not a model");
  CHECK_THROWS_AS(load_denoiser(dir / "junk.pbck"), Error);
}
