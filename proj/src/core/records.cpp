#include "polypbench/records.hpp"

#include <cmath>
#include <cstdio>
#include <set>

namespace polypbench {

void validate(const Sample& sample) {
  if (sample.image.channels() != 3) throw Error("sample " + sample.id + ": image must have 3 channels");
  if (!sample.image.same_extent(int(sample.mask.rows()), int(sample.mask.cols())))
    throw Error("sample " + sample.id + ": image and mask extents differ");
  if ((sample.mask > 1).any()) throw Error("sample " + sample.id + ": mask is not binary");
}

std::string to_string(EditKind kind) {
  switch (kind) {
    case EditKind::healthy: return "healthy";
    case EditKind::size: return "size";
    case EditKind::position: return "position";
  }
  return "?";
}

EditKind edit_kind_from_string(const std::string& text) {
  if (text == "healthy") return EditKind::healthy;
  if (text == "size") return EditKind::size;
  if (text == "position") return EditKind::position;
  throw Error("unknown edit kind '" + text + "'");
}

EditSpec EditSpec::size(double s) {
  if (!(s > 0.0)) throw Error("size factor must be positive");
  EditSpec e;
  e.kind = EditKind::size;
  e.size_factor = s;
  return e;
}

EditSpec EditSpec::position(int dx, int dy, double tau) {
  EditSpec e;
  e.kind = EditKind::position;
  e.dx = dx;
  e.dy = dy;
  e.tau = tau;
  return e;
}

namespace {

std::string format_amplitude(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

std::string VariantFamily::label() const {
  if (kind == EditKind::healthy) return "healthy";
  if (lo == -hi) return to_string(kind) + "_" + format_amplitude(hi);
  return to_string(kind) + "_" + format_amplitude(lo) + "_" + format_amplitude(hi);
}

VariantFamily family_from_label(const std::string& label) {
  if (label == "healthy") return VariantFamily::healthy();
  const auto us = label.find('_');
  if (us == std::string::npos) throw Error("bad family label '" + label + "'");
  VariantFamily f;
  f.kind = edit_kind_from_string(label.substr(0, us));
  const std::string rest = label.substr(us + 1);
  const auto us2 = rest.find('_', 1);
  try {
    if (us2 == std::string::npos) {
      f.hi = std::stod(rest);
      f.lo = -f.hi;
    } else {
      f.lo = std::stod(rest.substr(0, us2));
      f.hi = std::stod(rest.substr(us2 + 1));
    }
  } catch (const std::exception&) {
    throw Error("bad family label '" + label + "'");
  }
  if (!(f.lo <= f.hi)) throw Error("bad family range in '" + label + "'");
  return f;
}

std::vector<VariantFamily> default_families() {
  return {VariantFamily::healthy(),       VariantFamily::size(0.1),     VariantFamily::size(0.2),
          VariantFamily::size(0.3),       VariantFamily::position(0.1), VariantFamily::position(0.2)};
}

std::string to_string(Verdict verdict) {
  switch (verdict) {
    case Verdict::pending: return "pending";
    case Verdict::accepted: return "accepted";
    case Verdict::rejected: return "rejected";
  }
  return "?";
}

Verdict verdict_from_string(const std::string& text) {
  if (text == "pending") return Verdict::pending;
  if (text == "accepted") return Verdict::accepted;
  if (text == "rejected") return Verdict::rejected;
  throw Error("unknown verdict '" + text + "'");
}

std::optional<double> VariantRecord::magnitude() const {
  switch (family.kind) {
    case EditKind::healthy: return std::nullopt;
    case EditKind::size:
      if (size_factor) return *size_factor - 1.0;
      return std::nullopt;
    case EditKind::position: return tau;
  }
  return std::nullopt;
}

const VariantRecord* BenchmarkManifest::find(const std::string& variant_id) const {
  for (const auto& r : records)
    if (r.variant_id == variant_id) return &r;
  return nullptr;
}

VariantRecord* BenchmarkManifest::find(const std::string& variant_id) {
  for (auto& r : records)
    if (r.variant_id == variant_id) return &r;
  return nullptr;
}

void validate(const BenchmarkManifest& manifest, const std::filesystem::path& base_dir) {
  std::set<std::string> ids;
  for (const auto& r : manifest.records) {
    if (!ids.insert(r.variant_id).second) throw Error("duplicate variant id " + r.variant_id);
    if (r.failed()) continue;
    if (auto u = r.magnitude(); u && !r.family.contains(*u, 1e-9))
      throw Error("variant " + r.variant_id + ": realized magnitude outside family range");
    if (r.verdict == Verdict::accepted) {
      for (const auto& p : {r.image_path, r.mask_path})
        if (!std::filesystem::exists(base_dir / p))
          throw Error("variant " + r.variant_id + ": missing file " + p);
    }
  }
}

}  // namespace polypbench
