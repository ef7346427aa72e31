#include <doctest.h>

#include "polypbench/io.hpp"
#include "support.hpp"

using namespace polypbench;

TEST_CASE("random streams are reproducible and independent") {
  RandomSource a(7, "x"), b(7, "x"), c(7, "y"), d(8, "x");
  const double va = a.uniform();
  CHECK(va == b.uniform());
  CHECK(va != c.uniform());
  CHECK(va != d.uniform());
  RandomSource parent(7, "x");
  const RandomSource child = parent.fork("k");
  CHECK(child.stream() == "x/k");
  CHECK(parent.uniform() == va);  // forking does not advance the parent
  RandomSource c1 = parent.fork("k"), c2 = parent.fork("k");
  CHECK(c1.bits() == c2.bits());
}

TEST_CASE("stable hash constants") {
  // FNV-1a reference values
  CHECK(stable_hash("") == 0xcbf29ce484222325ULL);
  CHECK(stable_hash("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("select copies bits") {
  Image in(2, 2, 2, 1.0f), out(2, 2, 2, 0.25f);
  in(0, 0, 1) = 0.1f + 0.2f;
  Mask m = Mask::Zero(2, 2);
  m(0, 1) = 1;
  const Image r = select(m, in, out);
  CHECK(r(0, 0, 1) == in(0, 0, 1));
  CHECK(r(1, 0, 1) == 1.0f);
  CHECK(r(0, 0, 0) == 0.25f);
  CHECK_THROWS_AS(select(Mask::Zero(3, 2), in, out), Error);
}

TEST_CASE("sample validation") {
  const Mask m = test::disk(8, 8, 4, 4, 2);
  Sample s = test::blob_sample("a", m);
  CHECK_NOTHROW(validate(s));
  CHECK_FALSE(s.healthy());
  s.mask(0, 0) = 2;
  CHECK_THROWS_AS(validate(s), Error);
  s.mask = Mask::Zero(8, 7);
  CHECK_THROWS_AS(validate(s), Error);
  s.mask = Mask::Zero(8, 8);
  CHECK(s.healthy());
  s.image = Image(1, 8, 8);
  CHECK_THROWS_AS(validate(s), Error);
}

TEST_CASE("family labels") {
  CHECK(VariantFamily::healthy().label() == "healthy");
  CHECK(VariantFamily::size(0.1).label() == "size_0.1");
  CHECK(VariantFamily::position(0.2).label() == "position_0.2");
  CHECK((VariantFamily{EditKind::size, 0.05, 0.15}).label() == "size_0.05_0.15");
  for (const auto& f : default_families()) CHECK(family_from_label(f.label()) == f);
  CHECK(family_from_label("size_0.05_0.15") == VariantFamily{EditKind::size, 0.05, 0.15});
  CHECK_THROWS_AS(family_from_label("size"), Error);
  CHECK_THROWS_AS(family_from_label("rotation_0.1"), Error);
  CHECK_THROWS_AS(family_from_label("size_abc"), Error);
  CHECK_THROWS_AS(family_from_label("size_0.3_0.1"), Error);
}

TEST_CASE("default families") {
  std::vector<std::string> labels;
  for (const auto& f : default_families()) labels.push_back(f.label());
  CHECK(labels == std::vector<std::string>{"healthy", "size_0.1", "size_0.2", "size_0.3", "position_0.1",
                                           "position_0.2"});
  CHECK(VariantFamily::size(0.2).contains(-0.2));
  CHECK_FALSE(VariantFamily::size(0.2).contains(0.21));
}

TEST_CASE("edit specs") {
  CHECK(EditSpec::size(1.2).size_factor == 1.2);
  CHECK_THROWS_AS(EditSpec::size(0.0), Error);
  const EditSpec p = EditSpec::position(3, 4, 0.1);
  CHECK(p.kind == EditKind::position);
  CHECK(p.dx == 3);
  CHECK(edit_kind_from_string("position") == EditKind::position);
  CHECK_THROWS_AS(edit_kind_from_string("rotate"), Error);
  CHECK(verdict_from_string(to_string(Verdict::rejected)) == Verdict::rejected);
  CHECK_THROWS_AS(verdict_from_string("maybe"), Error);
}

namespace {
VariantRecord size_record(const std::string& id, double s) {
  VariantRecord r;
  r.variant_id = id;
  r.source_sample_id = "src";
  r.family = VariantFamily::size(0.2);
  r.size_factor = s;
  r.image_path = "bench/size_0.2/" + id + ".img.png";
  r.mask_path = "bench/size_0.2/" + id + ".mask.png";
  return r;
}
}  // namespace

TEST_CASE("manifest validation") {
  test::TempDir dir;
  BenchmarkManifest m;
  m.records = {size_record("a", 1.1), size_record("b", 0.85)};
  CHECK_NOTHROW(validate(m, dir.path));
  CHECK(m.records[0].magnitude().value() == doctest::Approx(0.1));
  m.records.push_back(size_record("a", 1.0));
  CHECK_THROWS_AS(validate(m, dir.path), Error);
  m.records.pop_back();
  m.records.push_back(size_record("c", 1.5));
  CHECK_THROWS_AS(validate(m, dir.path), Error);
  m.records.back().failure = "transform leaves frame";
  CHECK_NOTHROW(validate(m, dir.path));
  m.records[0].verdict = Verdict::accepted;
  CHECK_THROWS_AS(validate(m, dir.path), Error);  // files missing
  CHECK(m.find("b") == &m.records[1]);
  CHECK(m.find("zz") == nullptr);
}

TEST_CASE("png round trip is exact on the 8-bit grid") {
  test::TempDir dir;
  const Mask m = test::disk(20, 24, 10, 12, 5);
  const Image q = quantize8(test::blob_image(m));
  write_png_image(dir / "a.png", q);
  CHECK(read_png_image(dir / "a.png") == q);
  write_png_mask(dir / "m.png", m);
  CHECK((read_png_mask(dir / "m.png") == m).all());
  CHECK(quantize8(q) == q);
  CHECK_THROWS_AS(read_png_image(dir / "missing.png"), Error);
  std::ofstream(dir / "bad.png") << "not a png";
  CHECK_THROWS_AS(read_png_image(dir / "bad.png"), Error);
}

TEST_CASE("grayscale png loads as three channels") {
  test::TempDir dir;
  Image g(1, 4, 5, 0.0f);
  g(0, 1, 2) = 1.0f;
  write_png_image(dir / "g.png", g);
  const Image rgb = read_png_image(dir / "g.png");
  CHECK(rgb.channels() == 3);
  CHECK(rgb(2, 1, 2) == 1.0f);
}

TEST_CASE("dataset round trip") {
  test::TempDir dir;
  std::vector<Sample> samples;
  for (int i = 0; i < 3; ++i) {
    Sample s = test::blob_sample("s" + std::to_string(i), test::disk(16, 16, 8, 8, 2 + i), i);
    s.image = quantize8(s.image);
    samples.push_back(s);
  }
  save_dataset(dir.path, samples);
  const auto loaded = load_dataset(dir.path);
  REQUIRE(loaded.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(loaded[i].id == samples[i].id);
    CHECK(loaded[i].image == samples[i].image);
    CHECK((loaded[i].mask == samples[i].mask).all());
  }
  std::filesystem::remove(dir / "masks" / "s1.png");
  CHECK_THROWS_AS(load_dataset(dir.path), Error);
  CHECK_THROWS_AS(load_dataset(dir / "nowhere"), Error);
}

TEST_CASE("manifest round trip") {
  test::TempDir dir;
  BenchmarkManifest m;
  m.records = {size_record("a", 1.1), size_record("b", 0.9)};
  m.records[1].verdict = Verdict::rejected;
  m.records[1].reviewer = "r1";
  m.records[1].note = "seam visible";
  VariantRecord pos;
  pos.variant_id = "p";
  pos.source_sample_id = "src";
  pos.family = VariantFamily::position(0.1);
  pos.dx = -2;
  pos.dy = -3;
  pos.tau = -0.07;
  pos.failure = "transform leaves frame";
  m.records.push_back(pos);
  write_manifest(m, dir / "manifest.jsonl");
  CHECK(read_manifest(dir / "manifest.jsonl") == m);
  append_manifest_record(size_record("c", 1.0), dir / "manifest.jsonl");
  CHECK(read_manifest(dir / "manifest.jsonl").records.size() == 4);
}

TEST_CASE("manifest errors") {
  test::TempDir dir;
  CHECK_THROWS_AS(read_manifest(dir / "none.jsonl"), Error);
  write_file_atomic(dir / "empty.jsonl", "");
  CHECK_THROWS_AS(read_manifest(dir / "empty.jsonl"), Error);
  write_file_atomic(dir / "nohdr.jsonl", "{\"a\":1}\n");
  CHECK_THROWS_AS(read_manifest(dir / "nohdr.jsonl"), Error);
  write_manifest({}, dir / "bad.jsonl");
  append_line_durable(dir / "bad.jsonl", "{not json");
  CHECK_THROWS_AS(read_manifest(dir / "bad.jsonl"), Error);
}

TEST_CASE("atomic write replaces contents") {
  test::TempDir dir;
  write_file_atomic(dir / "f.txt", "one");
  write_file_atomic(dir / "f.txt", "two");
  CHECK(read_text_file(dir / "f.txt") == "two");
  append_line_durable(dir / "log", "a");
  append_line_durable(dir / "log", "b");
  CHECK(read_text_file(dir / "log") == "a\nb\n");
  int files = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir.path)) ++files;
  CHECK(files == 2);  // no temporaries left behind
}
