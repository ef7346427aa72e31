#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "polypbench/bench.hpp"
#include "polypbench/io.hpp"

namespace polypbench {

namespace {

struct SampleOutputs {
  std::vector<VariantOutput> variants;
};

SampleOutputs build_sample(const Sample& sample, const std::vector<VariantFamily>& families,
                           const PipelineModels& models, const StageBudgets& budgets, const RandomSource& rng,
                           const BuildOptions& options) {
  SampleOutputs out;
  const RandomSource sample_rng = rng.fork(sample.id);
  Image background;
  std::string background_failure;
  try {
    RandomSource bg_rng = sample_rng.fork("background");
    background = recover_background(sample, models, budgets, bg_rng, options.pipeline);
  } catch (const Error& e) {
    background_failure = std::string("background recovery failed: ") + e.what();
  }
  for (const auto& family : families) {
    VariantOutput v;
    if (!background_failure.empty()) {
      v.record.variant_id = variant_id(sample.id, family);
      v.record.source_sample_id = sample.id;
      v.record.family = family;
      v.record.failure = background_failure;
    } else {
      try {
        v = build_variant(sample, background, family, models, budgets, sample_rng.fork(family.label()),
                          options.pipeline);
      } catch (const Error& e) {
        v = VariantOutput{};
        v.record.variant_id = variant_id(sample.id, family);
        v.record.source_sample_id = sample.id;
        v.record.family = family;
        v.record.failure = e.what();
      }
    }
    out.variants.push_back(std::move(v));
  }
  return out;
}

}  // namespace

BenchmarkManifest build_benchmark(const std::vector<Sample>& dataset, const std::vector<VariantFamily>& families,
                                  const PipelineModels& models, const StageBudgets& budgets, const RandomSource& rng,
                                  const std::filesystem::path& out_dir, const BuildOptions& options) {
  budgets.validate();
  std::set<std::string> labels;
  for (const auto& f : families)
    if (!labels.insert(f.label()).second) throw Error("build_benchmark: duplicate family " + f.label());
  std::set<std::string> ids;
  for (const auto& s : dataset)
    if (!ids.insert(s.id).second) throw Error("build_benchmark: duplicate sample id " + s.id);
  if (!dataset.empty()) models.validate(models.codec->encode(dataset.front().image).channels());

  std::vector<SampleOutputs> results(dataset.size());
  const int jobs = std::max(1, std::min<int>(options.jobs, int(dataset.size())));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < dataset.size(); i = next++) {
      try {
        results[i] = build_sample(dataset[i], families, models, budgets, rng, options);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  BenchmarkManifest manifest;
  std::map<std::string, std::pair<int, int>> counts;  // label → (built, failed)
  for (const auto& f : families) counts[f.label()] = {0, 0};
  for (auto& r : results)
    for (auto& v : r.variants) {
      if (!v.record.failed()) {
        write_png_image(out_dir / v.record.image_path, v.image);
        write_png_mask(out_dir / v.record.mask_path, v.mask);
        ++counts[v.record.family.label()].first;
      } else {
        ++counts[v.record.family.label()].second;
      }
      manifest.records.push_back(std::move(v.record));
    }
  write_manifest(manifest, out_dir / "manifest.jsonl");
  if (options.log) {
    for (const auto& f : families) {
      const auto& [built, failed] = counts[f.label()];
      *options.log << "family " << f.label() << ": " << built << " built, " << failed << " failed\n";
    }
  }
  return manifest;
}

Sample load_variant(const VariantRecord& record, const std::filesystem::path& base_dir) {
  if (record.failed()) throw Error("load_variant: record " + record.variant_id + " has no files");
  Sample s{record.variant_id, read_png_image(base_dir / record.image_path), read_png_mask(base_dir / record.mask_path)};
  validate(s);
  return s;
}

const std::vector<std::string>& attribute_conditions() {
  static const std::vector<std::string> labels{"size_0.1", "size_0.2", "size_0.3", "position_0.1", "position_0.2"};
  return labels;
}

void EvaluationRow::update_average() {
  double total = 0.0;
  int n = 0;
  for (const auto& label : attribute_conditions()) {
    const auto it = drops.find(label);
    if (it != drops.end() && it->second) {
      total += *it->second;
      ++n;
    }
  }
  avg_drop = n > 0 ? std::optional<double>(total / n) : std::nullopt;
}

bool EvaluationRow::operator==(const EvaluationRow& o) const {
  return model == o.model && real_dice == o.real_dice && healthy_fpr == o.healthy_fpr && recon_drop == o.recon_drop &&
         drops == o.drops && avg_drop == o.avg_drop;
}

EvaluationRow evaluate(const SegmenterAdapter& adapter, const std::vector<Sample>& real_test,
                       const BenchmarkManifest& manifest, const std::filesystem::path& base_dir,
                       const EvaluateOptions& options) {
  if (real_test.empty()) throw Error("evaluate: empty real test set");
  EvaluationRow row;
  row.model = adapter.name();
  auto sample_dice = [&](const Sample& s) { return dice(binarize(adapter.predict(s.image)), s.mask); };

  std::map<std::string, double> real;
  double real_total = 0.0;
  for (const auto& s : real_test) {
    const double d = sample_dice(s);
    if (!real.emplace(s.id, d).second) throw Error("evaluate: duplicate real sample id " + s.id);
    real_total += d;
  }
  row.real_dice = real_total / double(real_test.size());

  auto usable = [&](const VariantRecord& r) {
    return !r.failed() && (r.verdict == Verdict::accepted || (options.include_pending && r.verdict == Verdict::pending));
  };

  double fpr_total = 0.0;
  int healthy = 0;
  std::map<std::string, std::vector<const VariantRecord*>> by_condition;
  for (const auto& r : manifest.records) {
    if (!usable(r)) continue;
    if (r.family.kind == EditKind::healthy) {
      const Sample v = load_variant(r, base_dir);
      fpr_total += fpr(binarize(adapter.predict(v.image)), v.mask);
      ++healthy;
    } else {
      by_condition[r.family.label()].push_back(&r);
    }
  }
  if (healthy > 0) {
    row.healthy_fpr = fpr_total / healthy;
  } else {
    row.warnings.push_back("no usable healthy variants: Health FPR absent");
  }

  for (const auto& [label, records] : by_condition)
    if (std::find(attribute_conditions().begin(), attribute_conditions().end(), label) == attribute_conditions().end())
      row.warnings.push_back("condition " + label + " is not a reported column; ignored");

  for (const auto& label : attribute_conditions()) {
    row.drops[label] = std::nullopt;
    const auto it = by_condition.find(label);
    if (it == by_condition.end()) {
      row.warnings.push_back("condition " + label + " has no usable variants");
      continue;
    }
    std::set<std::string> sources;
    double variant_total = 0.0;
    int variants = 0;
    for (const VariantRecord* r : it->second) {
      if (!real.count(r->source_sample_id)) {
        row.warnings.push_back("variant " + r->variant_id + " has no source in the real test set; skipped");
        continue;
      }
      sources.insert(r->source_sample_id);
      variant_total += sample_dice(load_variant(*r, base_dir));
      ++variants;
    }
    if (variants == 0) {
      row.warnings.push_back("condition " + label + " has no variants with a known source");
      continue;
    }
    double subset_total = 0.0;
    for (const auto& id : sources) subset_total += real.at(id);
    row.drops[label] = dice_drop(subset_total / double(sources.size()), variant_total / variants);
  }

  if (options.reconstructions) {
    double real_sub = 0.0, recon_total = 0.0;
    int n = 0;
    for (const auto& s : *options.reconstructions) {
      const auto it = real.find(s.id);
      if (it == real.end()) {
        row.warnings.push_back("reconstruction " + s.id + " has no source in the real test set; skipped");
        continue;
      }
      real_sub += it->second;
      recon_total += sample_dice(s);
      ++n;
    }
    if (n > 0) row.recon_drop = dice_drop(real_sub / n, recon_total / n);
  }

  row.update_average();
  const auto present = std::count_if(row.drops.begin(), row.drops.end(), [](const auto& kv) { return bool(kv.second); });
  if (present < 5 && present > 0)
    row.warnings.push_back("Avg. computed over " + std::to_string(present) + " of 5 conditions");
  return row;
}

// ----------------------------------------------------------------- tables

namespace {

const std::vector<std::string> kColumnTitles{"Real Dice",    "Health FPR",   "Recon.",       "Size 0.1", "Size 0.2",
                                             "Size 0.3",     "Position 0.1", "Position 0.2", "Avg."};
const std::vector<std::string> kCsvFields{"model",        "real_dice",    "healthy_fpr",  "recon_drop",
                                          "size_0.1",     "size_0.2",     "size_0.3",     "position_0.1",
                                          "position_0.2", "avg_drop"};

std::vector<std::optional<double>> row_cells(const EvaluationRow& r) {
  std::vector<std::optional<double>> cells{r.real_dice, r.healthy_fpr, r.recon_drop};
  for (const auto& label : attribute_conditions()) {
    const auto it = r.drops.find(label);
    cells.push_back(it == r.drops.end() ? std::nullopt : it->second);
  }
  cells.push_back(r.avg_drop);
  return cells;
}

std::string fixed2(const std::optional<double>& v) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", std::abs(*v) < 0.005 ? 0.0 : *v);
  return buf;
}

std::string exact(const std::optional<double>& v) {
  if (!v) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", *v);
  return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  for (char ch : line) {
    if (ch == sep) {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  parts.push_back(cur);
  return parts;
}

}  // namespace

std::string align_table(const std::vector<std::vector<std::string>>& table) {
  std::vector<std::size_t> width;
  for (const auto& row : table)
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (width.size() <= c) width.push_back(0);
      width[c] = std::max(width[c], row[c].size());
    }
  std::ostringstream out;
  for (const auto& row : table) {
    std::string line;
    for (std::size_t c = 0; c < row.size(); ++c) {
      const std::string pad(width[c] - row[c].size(), ' ');
      line += c == 0 ? row[c] + pad : "  " + pad + row[c];
    }
    out << line << "\n";
  }
  return out.str();
}

RenderedTable render_report(const std::vector<EvaluationRow>& rows) {
  if (rows.empty()) throw Error("render_report: no rows");
  std::vector<std::vector<std::string>> table;
  std::vector<std::string> header{"Model"};
  header.insert(header.end(), kColumnTitles.begin(), kColumnTitles.end());
  table.push_back(header);
  std::ostringstream csv;
  for (std::size_t i = 0; i < kCsvFields.size(); ++i) csv << (i ? "," : "") << kCsvFields[i];
  csv << "\n";
  for (const auto& r : rows) {
    if (r.model.find_first_of(",\"\n") != std::string::npos)
      throw Error("render_report: model name '" + r.model + "' contains a separator");
    std::vector<std::string> line{r.model};
    csv << r.model;
    for (const auto& cell : row_cells(r)) {
      line.push_back(fixed2(cell));
      csv << "," << exact(cell);
    }
    csv << "\n";
    table.push_back(line);
  }
  return {align_table(table), csv.str()};
}

std::vector<EvaluationRow> parse_report_csv(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line)) throw Error("report csv: empty");
  const auto header = split(line, ',');
  if (header != kCsvFields) throw Error("report csv: unexpected header");
  std::vector<EvaluationRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != kCsvFields.size()) throw Error("report csv: line " + std::to_string(line_no) + " has wrong arity");
    auto num = [&](const std::string& s) -> std::optional<double> {
      if (s.empty()) return std::nullopt;
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(s, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != s.size()) throw Error("report csv: bad number '" + s + "' on line " + std::to_string(line_no));
      return v;
    };
    EvaluationRow r;
    r.model = f[0];
    const auto real = num(f[1]);
    if (!real) throw Error("report csv: missing real Dice on line " + std::to_string(line_no));
    r.real_dice = *real;
    r.healthy_fpr = num(f[2]);
    r.recon_drop = num(f[3]);
    for (std::size_t k = 0; k < attribute_conditions().size(); ++k) r.drops[attribute_conditions()[k]] = num(f[4 + k]);
    r.avg_drop = num(f[9]);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace polypbench
