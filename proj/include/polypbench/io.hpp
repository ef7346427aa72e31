#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "polypbench/records.hpp"

namespace polypbench {

namespace fs = std::filesystem;

/// 8-bit PNG; grayscale files load as three identical channels.
Image read_png_image(const fs::path& path);
/// Single-channel PNG binarized at 0.5 of full scale.
Mask read_png_mask(const fs::path& path);

void write_png_image(const fs::path& path, const Image& image);
/// Single-channel PNG with values {0,255}.
void write_png_mask(const fs::path& path, const Mask& mask);

/// Quantizes to the 8-bit grid the PNG files store, so in-memory results
/// match what a later load returns.
Image quantize8(const Image& image);

/// Loads `root/images/<id>.png` with `root/masks/<id>.png`, sorted by id.
std::vector<Sample> load_dataset(const fs::path& root);
void save_dataset(const fs::path& root, const std::vector<Sample>& samples);

nlohmann::json to_json(const VariantRecord& record);
VariantRecord record_from_json(const nlohmann::json& j);

/// Header line followed by one JSON record per line.
void write_manifest(const BenchmarkManifest& manifest, const fs::path& path);
BenchmarkManifest read_manifest(const fs::path& path);
/// Appends one record line and flushes it to disk before returning.
void append_manifest_record(const VariantRecord& record, const fs::path& path);

/// Write to a temporary sibling, fsync and rename over `path`.
void write_file_atomic(const fs::path& path, const std::string& contents);
/// Append a line and fsync before returning.
void append_line_durable(const fs::path& path, const std::string& line);

std::string read_text_file(const fs::path& path);

}  // namespace polypbench
