#include <doctest.h>

#include "polypbench/io.hpp"
#include "polypbench/phantom.hpp"
#include "polypbench/pipeline.hpp"
#include "support.hpp"

using namespace polypbench;
using test::disk;

namespace {

// Inpainter that ignores x_t and predicts noise pulling x̂0 toward a constant.
DenoiserPtr<float> constant_model(float value, int condition_channels) {
  const NoiseSchedule s;
  return std::make_shared<FunctionDenoiser<float>>(
      [s, value](const Image& x, int t, const Image&) {
        const double ab = s.alpha_bar(t);
        Image eps = Image::zeros_like(x);
        eps.array() = (x.array() - float(std::sqrt(ab)) * value) / float(std::sqrt(1.0 - ab));
        return eps;
      },
      condition_channels);
}

PipelineModels analytic_models(const Image& uncond_mean, double sigma) {
  PipelineModels m;
  m.inpainter = constant_model(0.25f, 4);
  m.repainter = constant_model(0.75f, 4);
  m.uncond = analytic_gaussian_denoiser(uncond_mean, sigma, m.schedule);
  return m;
}

Sample phantom(int index = 0) {
  return generate_phantom_dataset(index + 1, PhantomParams{}, RandomSource(1, "pipeline-test"))[std::size_t(index)];
}

}  // namespace

TEST_CASE("budgets") {
  StageBudgets b;
  CHECK(b.steps_bg == 50);
  CHECK(b.steps_edit == 20);
  CHECK(b.steps_refine == 20);
  CHECK(b.t0(NoiseSchedule{}) == 400);
  CHECK_NOTHROW(b.validate());
  b.steps_edit = 0;
  CHECK_THROWS_AS(b.validate(), Error);
  b = {};
  b.t0_fraction = 1.5;
  CHECK_THROWS_AS(b.validate(), Error);
}

TEST_CASE("radii scale with width") {
  const PipelineOptions o;
  CHECK(o.scaled(20, 512) == 20);
  CHECK(o.scaled(20, 64) == 3);
  CHECK(o.scaled(10, 64) == 1);
  CHECK(o.scaled(1, 64) == 1);
  CHECK(o.scaled(0, 64) == 0);
  CHECK(o.scaled(20, 1024) == 40);
  CHECK_THROWS_AS(o.scaled(-1, 64), Error);
}

TEST_CASE("model layout validation") {
  PipelineModels m = analytic_models(Image(3, 8, 8), 0.1);
  CHECK_NOTHROW(m.validate(3));
  m.inpainter = constant_model(0.f, 3);
  CHECK_THROWS_AS(m.validate(3), Error);
  m = analytic_models(Image(3, 8, 8), 0.1);
  m.uncond = constant_model(0.f, 4);
  CHECK_THROWS_AS(m.validate(3), Error);
}

TEST_CASE("background recovery keeps known pixels") {
  const Sample s = phantom();
  const PipelineModels m = analytic_models(s.image, 0.1);
  RandomSource rng(2, "bg");
  const Image bg = recover_background(s, m, StageBudgets{}, rng);
  const Mask region = dilate(s.mask, 3);
  for (int r = 0; r < s.rows(); ++r)
    for (int c = 0; c < s.cols(); ++c) {
      if (region(r, c))
        REQUIRE(bg(0, r, c) == doctest::Approx(0.25).epsilon(1e-4));
      else
        REQUIRE(bg(0, r, c) == s.image(0, r, c));
    }
  Sample healthy = s;
  healthy.mask.setZero();
  RandomSource rng2(2, "bg");
  CHECK(recover_background(healthy, m, StageBudgets{}, rng2) == s.image);
  PipelineModels missing = m;
  missing.inpainter = nullptr;
  CHECK_THROWS_AS(recover_background(s, missing, StageBudgets{}, rng), Error);
  Sample full = s;
  full.mask.setOnes();
  CHECK_THROWS_AS(recover_background(full, m, StageBudgets{}, rng), Error);
}

TEST_CASE("blend with an empty object mask is plain reverse diffusion") {
  const Sample src = phantom();
  Sample s = src;
  s.mask.setZero();
  Image background = src.image;
  background.array() *= 0.9f;
  const PipelineModels m = analytic_models(background, 0.1);
  const StageBudgets budgets;
  RandomSource rng(3, "edit");
  RandomSource manual = rng;
  const EditResult r = edit_attributes(s, background, EditSpec::position(0, 0, 0.0), m, budgets, rng);
  CHECK(mask_area(r.mask) == 0);

  const int t0 = budgets.t0(m.schedule);
  const Image start = manual.normal_grid<float>(3, s.rows(), s.cols());
  Image x = ddim_reverse(forward_noise(background, t0, start, m.schedule), t0, budgets.steps_edit, *m.uncond, Image(),
                         m.schedule);
  x.array() = x.array().max(0.0f).min(1.0f);
  CHECK(r.image == x);
}

TEST_CASE("blend with a full object mask returns the transformed source") {
  Sample s = phantom();
  s.mask.setOnes();
  const PipelineModels m = analytic_models(s.image, 0.1);
  RandomSource rng(4, "edit");
  const EditResult r = edit_attributes(s, Image(3, s.rows(), s.cols(), 0.5f), EditSpec::size(1.0), m, StageBudgets{}, rng);
  CHECK((r.mask != 0).all());
  CHECK(r.image == r.transformed);
  CHECK(r.image == s.image);
}

TEST_CASE("edited polyp is bit-equal inside the mask under the identity codec") {
  for (int i = 0; i < 4; ++i) {
    const Sample s = phantom(i);
    const PipelineModels m = analytic_models(s.image, 0.1);
    RandomSource rng(5, "edit/" + std::to_string(i));
    const EditSpec spec = i % 2 ? EditSpec::size(1.15) : EditSpec::position(3, -2, 0.1);
    const EditResult r = edit_attributes(s, s.image, spec, m, StageBudgets{}, rng);
    const auto [moved_image, moved_mask] = apply_affine(s.image, s.mask, edit_matrix(spec, s.mask));
    CHECK((r.mask == moved_mask).all());
    CHECK(r.transformed == moved_image);
    CHECK(select(r.mask, r.image, Image::zeros_like(r.image)) == select(r.mask, moved_image, Image::zeros_like(r.image)));
  }
}

TEST_CASE("edit errors") {
  const Sample s = phantom();
  const PipelineModels m = analytic_models(s.image, 0.1);
  RandomSource rng(6, "edit");
  StageBudgets zero;
  zero.t0_fraction = 0.0;
  CHECK_THROWS_AS(edit_attributes(s, s.image, EditSpec::size(1.1), m, zero, rng), Error);
  CHECK_THROWS_AS(edit_attributes(s, s.image, EditSpec::healthy(), m, StageBudgets{}, rng), Error);
  CHECK_THROWS_AS(edit_attributes(s, Image(3, 8, 8), EditSpec::size(1.1), m, StageBudgets{}, rng), Error);
  CHECK_THROWS_AS(edit_attributes(s, s.image, EditSpec::position(200, 0, 1.0), m, StageBudgets{}, rng), OutOfFrame);
}

TEST_CASE("boundary refinement only touches the band") {
  const Sample s = phantom();
  const PipelineModels m = analytic_models(s.image, 0.1);
  RandomSource rng(7, "refine");
  const Image out = refine_boundary(s.image, s.mask, m, StageBudgets{}, rng);
  const Mask band = boundary_band(s.mask, 1, 1);
  for (int r = 0; r < s.rows(); ++r)
    for (int c = 0; c < s.cols(); ++c) {
      if (band(r, c))
        REQUIRE(out(1, r, c) == doctest::Approx(0.75).epsilon(1e-4));
      else
        REQUIRE(out(1, r, c) == s.image(1, r, c));
    }
  StageBudgets zero;
  zero.t0_fraction = 0.0;
  CHECK(refine_boundary(s.image, s.mask, m, zero, rng) == s.image);
  CHECK_THROWS_AS(refine_boundary(s.image, Mask::Zero(s.rows(), s.cols()), m, StageBudgets{}, rng), Error);
}

TEST_CASE("reconstruction with a point mass is exact") {
  const Sample s = phantom();
  const PipelineModels m = analytic_models(s.image, 0.0);
  RandomSource rng(8, "recon");
  CHECK((reconstruct(s, m, StageBudgets{}, rng).array() - s.image.array()).abs().maxCoeff() <= 1e-5f);
  StageBudgets zero;
  zero.t0_fraction = 0.0;
  CHECK(reconstruct(s, m, zero, rng) == s.image);
}

TEST_CASE("reconstruction of matching gaussian data stays close") {
  // Inputs drawn from N(μ, σ²) around a phantom frame; the exact denoiser
  // for that distribution reconstructs them from t0 ≤ 0.2T.
  const double sigma = 0.03;
  for (double fraction : {0.1, 0.2}) {
    CAPTURE(fraction);
    StageBudgets b;
    b.t0_fraction = fraction;
    double mae = 0.0;
    const int n = 10;
    for (int i = 0; i < n; ++i) {
      const Sample base = phantom(i);
      const PipelineModels m = analytic_models(base.image, sigma);
      RandomSource draw(9, "gauss-data/" + std::to_string(i));
      Sample s = base;
      s.image.array() += float(sigma) * draw.normal_grid<float>(3, s.rows(), s.cols()).array();
      RandomSource rng(10, "recon/" + std::to_string(i));
      mae += (reconstruct(s, m, b, rng).array() - s.image.array()).abs().mean();
    }
    CHECK(mae / n <= 0.05);
  }
}

TEST_CASE("variant construction") {
  const Sample s = phantom();
  const PipelineModels m = analytic_models(s.image, 0.1);
  const Image bg = s.image;
  StageBudgets fast;
  fast.steps_edit = fast.steps_refine = 4;

  const VariantOutput healthy = build_variant(s, bg, VariantFamily::healthy(), m, fast, RandomSource(1, "v"));
  CHECK(healthy.record.variant_id == s.id + "__healthy");
  CHECK(healthy.record.image_path == "bench/healthy/" + s.id + "__healthy.img.png");
  CHECK(mask_area(healthy.mask) == 0);
  CHECK(healthy.image == quantize8(bg));

  const VariantOutput sized = build_variant(s, bg, VariantFamily::size(0.2), m, fast, RandomSource(1, "v"));
  REQUIRE_FALSE(sized.record.failed());
  REQUIRE(sized.record.size_factor.has_value());
  CHECK(VariantFamily::size(0.2).contains(*sized.record.magnitude()));
  CHECK(sized.image == quantize8(sized.image));

  const VariantOutput moved = build_variant(s, bg, VariantFamily::position(0.2), m, fast, RandomSource(1, "v"));
  REQUIRE_FALSE(moved.record.failed());
  const Rect rect = enclosing_rect(s.mask);
  CHECK(*moved.record.dx == std::lround(*moved.record.tau * rect.w));
  CHECK(*moved.record.dy == std::lround(*moved.record.tau * rect.h));

  // Same inputs, same variant.
  const VariantOutput again = build_variant(s, bg, VariantFamily::size(0.2), m, fast, RandomSource(1, "v"));
  CHECK(again.image == sized.image);
  CHECK(again.record == sized.record);
}

TEST_CASE("variant failures are recorded") {
  Sample s = test::blob_sample("edge", disk(32, 32, 16, 27, 4));
  const PipelineModels m = analytic_models(s.image, 0.1);
  const VariantOutput out =
      build_variant(s, s.image, VariantFamily{EditKind::position, 0.8, 1.0}, m, StageBudgets{}, RandomSource(1, "f"));
  CHECK(out.record.failed());
  CHECK(out.record.failure.find("20") != std::string::npos);
  CHECK(out.image.empty());
  Sample healthy = s;
  healthy.mask.setZero();
  CHECK(build_variant(healthy, s.image, VariantFamily::size(0.1), m, StageBudgets{}, RandomSource(1, "f")).record.failed());
}

TEST_CASE("seam laplacian") {
  const Mask m = disk(16, 16, 8, 8, 4);
  CHECK(seam_laplacian(Image(3, 16, 16, 0.5f), m) == 0.0);
  CHECK(seam_laplacian(test::blob_image(m), m) > 0.5);
  CHECK(seam_laplacian(test::blob_image(m), Mask::Zero(16, 16)) == 0.0);
  CHECK_THROWS_AS(seam_laplacian(Image(3, 8, 8), m), Error);
}

TEST_CASE("inpainter pairs hide background regions only") {
  PhantomParams p;
  p.healthy_fraction = 0.3;
  const auto data = generate_phantom_dataset(20, p, RandomSource(11, "pairs"));
  const IdentityCodec codec;
  const auto pairs = inpainter_pairs(data, codec, RandomSource(12, "pairs"));
  CHECK(pairs.size() > 20);
  CHECK(pairs.size() <= 40);
  for (const auto& pair : pairs) {
    REQUIRE(pair.condition.channels() == 4);
    const auto hidden = pair.condition.plane(3);
    CHECK((hidden > 0.5f).count() > 0);
    for (Eigen::Index i = 0; i < hidden.size(); ++i)
      if (hidden.data()[i] > 0.5f) REQUIRE(pair.condition.array()(0, i) == 0.0f);
  }
  // Deterministic in the stream.
  const auto again = inpainter_pairs(data, codec, RandomSource(12, "pairs"));
  REQUIRE(again.size() == pairs.size());
  CHECK(again.back().condition == pairs.back().condition);

  std::vector<Sample> all_healthy(3, data.front());
  for (auto& s : all_healthy) s.mask.setZero();
  CHECK(inpainter_pairs(all_healthy, codec, RandomSource(1, "x")).empty());
}

TEST_CASE("inpainter pairs never hide the polyp") {
  const auto data = generate_phantom_dataset(10, PhantomParams{}, RandomSource(13, "pairs"));
  const IdentityCodec codec;
  const auto pairs = inpainter_pairs(data, codec, RandomSource(14, "pairs"), PipelineOptions{}, 1);
  // One copy per polyp sample at most; each pair's target is its sample.
  std::size_t k = 0;
  for (const auto& s : data) {
    if (k < pairs.size() && pairs[k].target == s.image) {
      const Mask hidden = (pairs[k].condition.plane(3) > 0.5f).cast<std::uint8_t>();
      CHECK((hidden.cast<bool>() && dilate(s.mask, 1).cast<bool>()).count() == 0);
      ++k;
    }
  }
  CHECK(k == pairs.size());
}

TEST_CASE("repainter and uncond pairs") {
  PhantomParams p;
  p.healthy_fraction = 0.5;
  const auto data = generate_phantom_dataset(10, p, RandomSource(15, "pairs"));
  const IdentityCodec codec;
  std::size_t polyps = 0;
  for (const auto& s : data) polyps += !s.healthy();
  const auto rp = repainter_pairs(data, codec);
  CHECK(rp.size() == polyps);
  CHECK(uncond_pairs(data, codec).size() == data.size());
  CHECK(uncond_pairs(data, codec).front().condition.empty());
  std::size_t k = 0;
  for (const auto& s : data) {
    if (s.healthy()) continue;
    const Mask band = boundary_band(s.mask, 1, 1);
    CHECK((mask_to_grid<float>(band).plane(0) == rp[k].condition.plane(3)).all());
    ++k;
  }
}

TEST_CASE("pipeline model files round trip") {
  test::TempDir dir;
  const auto data = generate_phantom_dataset(6, PhantomParams{}, RandomSource(16, "models"));
  DenoiserTrainingConfig config;
  config.epochs = 1;
  config.width = 8;
  const PipelineModels models = train_pipeline_models(data, NoiseSchedule{}, config, RandomSource(17, "models"));
  CHECK_NOTHROW(models.validate(3));
  save_pipeline_models(dir.path, models);
  const PipelineModels loaded =
      load_pipeline_models(dir / "inpainter.pbck", dir / "uncond.pbck", dir / "repainter.pbck");
  const auto* codec = dynamic_cast<const AffineCodec*>(loaded.codec.get());
  REQUIRE(codec != nullptr);
  CHECK(codec->offset() == dynamic_cast<const AffineCodec&>(*models.codec).offset());
  RandomSource a(18, "r"), b(18, "r");
  StageBudgets fast;
  fast.steps_edit = 3;
  CHECK(reconstruct(data[0], models, fast, a) == reconstruct(data[0], loaded, fast, b));
  const PipelineModels only_uncond = load_pipeline_models({}, dir / "uncond.pbck", {});
  CHECK(only_uncond.inpainter == nullptr);
  CHECK(only_uncond.uncond != nullptr);

  // A checkpoint trained on other data carries another codec.
  const auto other = generate_phantom_dataset(6, PhantomParams::out_of_distribution(), RandomSource(19, "other"));
  const TrainedModel t = train_pipeline_model(ModelRole::uncond, other, NoiseSchedule{}, config, RandomSource(20, "o"));
  save_denoiser(dir / "other.pbck", "uncond", *t.model, &t.codec);
  CHECK_THROWS_AS(load_pipeline_models(dir / "inpainter.pbck", dir / "other.pbck", {}), Error);
}
