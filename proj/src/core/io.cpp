#include "polypbench/io.hpp"

#include <fcntl.h>
#include <png.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>

#include <json.hpp>

namespace polypbench {

using nlohmann::json;

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct RawPng {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 or 3 after normalization
  std::vector<std::uint8_t> pixels;
};

RawPng read_png(const fs::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw Error("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error("libpng init failed");
  }
  RawPng out;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("corrupt PNG " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = png_get_channels(png, info);
  out.pixels.resize(std::size_t(out.width) * out.height * out.channels);
  rows.resize(out.height);
  for (int r = 0; r < out.height; ++r) rows[r] = out.pixels.data() + std::size_t(r) * out.width * out.channels;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  if (out.channels != 1 && out.channels != 3) throw Error("unsupported PNG channel layout in " + path.string());
  return out;
}

void write_png(const fs::path& path, int width, int height, int channels, const std::vector<std::uint8_t>& pixels) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw Error("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("libpng init failed");
  }
  std::vector<png_bytep> rows(height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("failed writing PNG " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, width, height, 8, channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int r = 0; r < height; ++r)
    rows[r] = const_cast<png_bytep>(pixels.data() + std::size_t(r) * width * channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace

Image read_png_image(const fs::path& path) {
  const RawPng raw = read_png(path);
  Image img(3, raw.height, raw.width);
  for (int r = 0; r < raw.height; ++r)
    for (int c = 0; c < raw.width; ++c)
      for (int ch = 0; ch < 3; ++ch) {
        const int src = raw.channels == 1 ? 0 : ch;
        img(ch, r, c) = raw.pixels[(std::size_t(r) * raw.width + c) * raw.channels + src] / 255.0f;
      }
  return img;
}

Mask read_png_mask(const fs::path& path) {
  const RawPng raw = read_png(path);
  Mask m(raw.height, raw.width);
  for (int r = 0; r < raw.height; ++r)
    for (int c = 0; c < raw.width; ++c) {
      // First channel of color masks; threshold at half scale.
      const std::uint8_t v = raw.pixels[(std::size_t(r) * raw.width + c) * raw.channels];
      m(r, c) = v / 255.0 >= 0.5 ? 1 : 0;
    }
  return m;
}

void write_png_image(const fs::path& path, const Image& image) {
  if (image.channels() != 3 && image.channels() != 1) throw Error("write_png_image: need 1 or 3 channels");
  const int ch = image.channels();
  std::vector<std::uint8_t> pixels(std::size_t(image.rows()) * image.cols() * ch);
  for (int r = 0; r < image.rows(); ++r)
    for (int c = 0; c < image.cols(); ++c)
      for (int k = 0; k < ch; ++k) pixels[(std::size_t(r) * image.cols() + c) * ch + k] = to_byte(image(k, r, c));
  write_png(path, image.cols(), image.rows(), ch, pixels);
}

void write_png_mask(const fs::path& path, const Mask& mask) {
  std::vector<std::uint8_t> pixels(std::size_t(mask.size()));
  for (Eigen::Index i = 0; i < mask.size(); ++i) pixels[i] = mask.data()[i] ? 255 : 0;
  write_png(path, int(mask.cols()), int(mask.rows()), 1, pixels);
}

Image quantize8(const Image& image) {
  Image out = image;
  for (Eigen::Index i = 0; i < out.array().size(); ++i) {
    float& v = out.array().data()[i];
    v = to_byte(v) / 255.0f;
  }
  return out;
}

std::vector<Sample> load_dataset(const fs::path& root) {
  const fs::path image_dir = root / "images";
  const fs::path mask_dir = root / "masks";
  if (!fs::is_directory(image_dir) || !fs::is_directory(mask_dir))
    throw Error("dataset root " + root.string() + " must contain images/ and masks/");
  std::map<std::string, fs::path> images, masks;
  for (const auto& e : fs::directory_iterator(image_dir))
    if (e.is_regular_file()) images[e.path().stem().string()] = e.path();
  for (const auto& e : fs::directory_iterator(mask_dir))
    if (e.is_regular_file()) masks[e.path().stem().string()] = e.path();
  for (const auto& [stem, p] : images)
    if (!masks.count(stem)) throw Error("image '" + stem + "' has no mask in " + mask_dir.string());
  for (const auto& [stem, p] : masks)
    if (!images.count(stem)) throw Error("mask '" + stem + "' has no image in " + image_dir.string());

  std::vector<Sample> out;
  out.reserve(images.size());
  for (const auto& [stem, ipath] : images) {
    Sample s{stem, read_png_image(ipath), read_png_mask(masks.at(stem))};
    validate(s);
    out.push_back(std::move(s));
  }
  return out;  // std::map iteration already sorted by id
}

void save_dataset(const fs::path& root, const std::vector<Sample>& samples) {
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  for (const auto& s : samples) {
    validate(s);
    write_png_image(root / "images" / (s.id + ".png"), s.image);
    write_png_mask(root / "masks" / (s.id + ".png"), s.mask);
  }
}

json to_json(const VariantRecord& r) {
  json j;
  j["variant_id"] = r.variant_id;
  j["source_sample_id"] = r.source_sample_id;
  j["family"] = r.family.label();
  j["family_kind"] = to_string(r.family.kind);
  j["range"] = {r.family.lo, r.family.hi};
  json params = json::object();
  if (r.size_factor) params["s"] = *r.size_factor;
  if (r.dx) params["dx"] = *r.dx;
  if (r.dy) params["dy"] = *r.dy;
  if (r.tau) params["tau"] = *r.tau;
  j["params"] = params;
  j["image"] = r.image_path;
  j["mask"] = r.mask_path;
  j["verdict"] = to_string(r.verdict);
  j["reviewer"] = r.reviewer;
  j["timestamp"] = r.timestamp;
  if (!r.note.empty()) j["note"] = r.note;
  if (!r.failure.empty()) j["failure"] = r.failure;
  return j;
}

VariantRecord record_from_json(const json& j) {
  VariantRecord r;
  r.variant_id = j.at("variant_id").get<std::string>();
  r.source_sample_id = j.at("source_sample_id").get<std::string>();
  r.family.kind = edit_kind_from_string(j.at("family_kind").get<std::string>());
  const auto& range = j.at("range");
  if (!range.is_array() || range.size() != 2) throw Error("range must be [lo, hi]");
  r.family.lo = range[0].get<double>();
  r.family.hi = range[1].get<double>();
  const auto& params = j.at("params");
  if (params.contains("s")) r.size_factor = params["s"].get<double>();
  if (params.contains("dx")) r.dx = params["dx"].get<int>();
  if (params.contains("dy")) r.dy = params["dy"].get<int>();
  if (params.contains("tau")) r.tau = params["tau"].get<double>();
  r.image_path = j.at("image").get<std::string>();
  r.mask_path = j.at("mask").get<std::string>();
  r.verdict = verdict_from_string(j.at("verdict").get<std::string>());
  r.reviewer = j.at("reviewer").get<std::string>();
  r.timestamp = j.at("timestamp").get<std::string>();
  r.note = j.value("note", std::string());
  r.failure = j.value("failure", std::string());
  return r;
}

namespace {

const char* const kManifestFormat = "polypbench-manifest";

std::string header_line() { return json{{"format", kManifestFormat}, {"version", 1}}.dump(); }

}  // namespace

void write_manifest(const BenchmarkManifest& manifest, const fs::path& path) {
  std::string text = header_line() + "\n";
  for (const auto& r : manifest.records) text += to_json(r).dump() + "\n";
  write_file_atomic(path, text);
}

BenchmarkManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest " + path.string());
  BenchmarkManifest m;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": malformed record: " + e.what());
    }
    if (line_no == 1) {
      if (j.value("format", std::string()) != kManifestFormat)
        throw Error(path.string() + ":1: missing manifest header");
      continue;
    }
    try {
      m.records.push_back(record_from_json(j));
    } catch (const std::exception& e) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": malformed record: " + e.what());
    }
  }
  if (line_no == 0) throw Error(path.string() + ": empty manifest file");
  return m;
}

void append_manifest_record(const VariantRecord& record, const fs::path& path) {
  if (!fs::exists(path)) append_line_durable(path, header_line());
  append_line_durable(path, to_json(record).dump());
}

void write_file_atomic(const fs::path& path, const std::string& contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) throw Error("cannot write " + tmp.string());
  std::size_t done = 0;
  while (done < contents.size()) {
    const ssize_t n = ::write(fd, contents.data() + done, contents.size() - done);
    if (n <= 0) {
      ::close(fd);
      throw Error("write failed for " + tmp.string());
    }
    done += std::size_t(n);
  }
  ::fsync(fd);
  ::close(fd);
  fs::rename(tmp, path);
}

void append_line_durable(const fs::path& path, const std::string& line) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd < 0) throw Error("cannot append to " + path.string());
  const std::string text = line + "\n";
  std::size_t done = 0;
  while (done < text.size()) {
    const ssize_t n = ::write(fd, text.data() + done, text.size() - done);
    if (n <= 0) {
      ::close(fd);
      throw Error("append failed for " + path.string());
    }
    done += std::size_t(n);
  }
  ::fsync(fd);
  ::close(fd);
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace polypbench
