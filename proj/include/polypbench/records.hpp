#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "polypbench/grid.hpp"

namespace polypbench {

/// An image with its binary lesion mask. Healthy samples carry an all-zero mask.
struct Sample {
  std::string id;
  Image image;  // 3×H×W, values in [0,1]
  Mask mask;    // H×W, values in {0,1}

  int rows() const { return image.rows(); }
  int cols() const { return image.cols(); }
  bool healthy() const { return mask_area(mask) == 0; }
};

/// Throws if the image/mask extents differ or the mask is not binary.
void validate(const Sample& sample);

enum class EditKind { healthy, size, position };

std::string to_string(EditKind kind);
EditKind edit_kind_from_string(const std::string& text);

/// A concrete attribute change. For `size` the scale factor is applied about
/// the enclosing-rectangle center; for `position` the polyp is shifted by
/// (dx, dy) pixels and `tau` records the relative amplitude dx/w = dy/h.
struct EditSpec {
  EditKind kind = EditKind::healthy;
  double size_factor = 1.0;
  int dx = 0;
  int dy = 0;
  double tau = 0.0;

  static EditSpec healthy() { return {}; }
  static EditSpec size(double s);
  static EditSpec position(int dx, int dy, double tau);
};

/// Sampling range for the magnitude u of a variant family:
/// size uses s = 1 + u, position uses τ = u. Healthy families have no range.
struct VariantFamily {
  EditKind kind = EditKind::healthy;
  double lo = 0.0;
  double hi = 0.0;

  static VariantFamily healthy() { return {}; }
  static VariantFamily size(double amplitude) { return {EditKind::size, -amplitude, amplitude}; }
  static VariantFamily position(double amplitude) { return {EditKind::position, -amplitude, amplitude}; }

  /// Directory/condition label, e.g. "healthy", "size_0.1", "position_0.2".
  std::string label() const;
  bool contains(double u, double slack = 1e-12) const { return u >= lo - slack && u <= hi + slack; }
  bool operator==(const VariantFamily&) const = default;
};

VariantFamily family_from_label(const std::string& label);

/// Healthy, size ±0.1/0.2/0.3 and position ±0.1/0.2.
std::vector<VariantFamily> default_families();

enum class Verdict { pending, accepted, rejected };

std::string to_string(Verdict verdict);
Verdict verdict_from_string(const std::string& text);

struct VariantRecord {
  std::string variant_id;
  std::string source_sample_id;
  VariantFamily family;
  std::optional<double> size_factor;
  std::optional<int> dx;
  std::optional<int> dy;
  std::optional<double> tau;
  std::string image_path;  // relative to the manifest directory
  std::string mask_path;
  Verdict verdict = Verdict::pending;
  std::string reviewer;
  std::string timestamp;
  std::string note;     // free-text reviewer comment
  std::string failure;  // non-empty when generation failed; no files then

  bool failed() const { return !failure.empty(); }
  /// Sampled magnitude u implied by the realized parameters.
  std::optional<double> magnitude() const;
  bool operator==(const VariantRecord&) const = default;
};

struct BenchmarkManifest {
  std::vector<VariantRecord> records;

  const VariantRecord* find(const std::string& variant_id) const;
  VariantRecord* find(const std::string& variant_id);
  bool operator==(const BenchmarkManifest&) const = default;
};

/// Checks id uniqueness, realized-parameter ranges and, for accepted
/// records, that the referenced files exist under `base_dir`.
void validate(const BenchmarkManifest& manifest, const std::filesystem::path& base_dir);

}  // namespace polypbench
