#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>

#include "polypbench/bench.hpp"

namespace polypbench {

QualityReport quality_report(const std::vector<Sample>& real_set,
                             const std::map<std::string, std::vector<SyntheticImage>>& synthetic,
                             const FeatureExtractor& extractor, const std::vector<VoteRecord>& votes) {
  if (real_set.empty()) throw Error("quality_report: empty real set");
  QualityReport report;
  std::map<std::string, const Image*> real_by_id;
  std::vector<Image> real_images;
  for (const auto& s : real_set) {
    real_by_id[s.id] = &s.image;
    real_images.push_back(s.image);
  }

  const bool any_synthetic_votes = std::any_of(votes.begin(), votes.end(), [](const VoteRecord& v) {
    return v.blinded_truth == SetTruth::synthetic_set;
  });
  const bool any_real_votes = std::any_of(votes.begin(), votes.end(), [](const VoteRecord& v) {
    return v.blinded_truth == SetTruth::real_set;
  });
  if (any_real_votes) report.real_votes = vote_stats(votes, SetTruth::real_set);

  for (const auto& [source, images] : synthetic) {
    QualityRow row;
    row.source = source;
    std::vector<Image> matched;
    double ssim_total = 0.0;
    for (const auto& img : images) {
      const auto it = real_by_id.find(img.source_id);
      if (it == real_by_id.end()) {
        ++row.excluded;
        report.warnings.push_back("synthetic image " + img.id + " has no real source '" + img.source_id + "'; excluded");
        continue;
      }
      const MsSsimResult m = ms_ssim_detailed(img.image, *it->second);
      ssim_total += m.value;
      row.ms_ssim_scales = m.scales;
      matched.push_back(img.image);
    }
    row.images = matched.size();
    if (matched.size() < 2) {
      report.warnings.push_back("source " + source + " has fewer than two matched images; skipped");
      continue;
    }
    const FidResult f = fid(real_images, matched, extractor);
    row.fid = f.value;
    row.fid_regularized = f.regularized;
    if (f.regularized)
      report.warnings.push_back("source " + source + ": fewer samples than feature dimensions, covariance ridge added");
    row.ms_ssim = ssim_total / double(matched.size());
    if (row.ms_ssim_scales < 5)
      report.warnings.push_back("source " + source + ": MS-SSIM used " + std::to_string(row.ms_ssim_scales) +
                                " scales (images below 176 px)");
    if (any_synthetic_votes) row.votes = vote_stats(votes, SetTruth::synthetic_set);
    report.rows.push_back(std::move(row));
  }
  return report;
}

namespace {

std::string format(const char* fmt, double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

std::string vote_cell(double pct, long count) { return format("%.1f%%", pct) + " (" + std::to_string(count) + ")"; }

std::string signed2(double v) { return format("%+.2f", std::abs(v) < 0.005 ? 0.0 : v); }

}  // namespace

RenderedTable render_quality(const QualityReport& report) {
  std::vector<std::vector<std::string>> table{{"Source", "Images", "FID", "MS-SSIM", "Real", "Fake"}};
  std::ostringstream csv;
  csv << "source,images,fid,ms_ssim,ms_ssim_scales,real_pct,real_count,fake_pct,fake_count\n";
  auto votes_csv = [](const std::optional<VoteStats>& v) {
    if (!v) return std::string(",,,");
    return format("%.1f", v->real_pct) + "," + std::to_string(v->real_count) + "," + format("%.1f", v->fake_pct) +
           "," + std::to_string(v->fake_count);
  };
  if (report.real_votes) {
    const auto& v = *report.real_votes;
    table.push_back({"real", "", "", "", vote_cell(v.real_pct, v.real_count), vote_cell(v.fake_pct, v.fake_count)});
    csv << "real,,,,," << votes_csv(report.real_votes) << "\n";
  }
  for (const auto& r : report.rows) {
    std::vector<std::string> line{r.source, std::to_string(r.images), format("%.2f", r.fid),
                                  format("%.1f", 100.0 * r.ms_ssim)};
    if (r.votes) {
      line.push_back(vote_cell(r.votes->real_pct, r.votes->real_count));
      line.push_back(vote_cell(r.votes->fake_pct, r.votes->fake_count));
    } else {
      line.insert(line.end(), {"n/a", "n/a"});
    }
    table.push_back(line);
    csv << r.source << "," << r.images << "," << format("%.17g", r.fid) << "," << format("%.17g", r.ms_ssim) << ","
        << r.ms_ssim_scales << "," << votes_csv(r.votes) << "\n";
  }
  return {align_table(table), csv.str()};
}

AugmentationResult augmentation_experiment(const std::vector<Sample>& train_set,
                                           const std::map<std::string, std::vector<Sample>>& synthetic_sources,
                                           const std::map<std::string, SegmenterFactory>& segmenters,
                                           const std::vector<Sample>& id_test, const std::vector<Sample>& ood_test,
                                           const AugmentationOptions& options) {
  if (train_set.empty()) throw Error("augmentation_experiment: empty training set");
  if (segmenters.empty()) throw Error("augmentation_experiment: no segmenters");
  if (options.seeds.empty()) throw Error("augmentation_experiment: no seeds");
  if (synthetic_sources.count("baseline")) throw Error("augmentation_experiment: 'baseline' is reserved");
  AugmentationResult result;
  if (options.seeds.size() < 3)
    result.warnings.push_back("fewer than 3 seeds; means are not comparable to the default protocol");

  struct Run {
    double id = 0.0, ood = 0.0;
    bool converged = false;
  };
  auto run = [&](const SegmenterFactory& factory, const std::vector<Sample>& data, std::uint64_t seed) {
    const TrainedSegmenter trained = factory(data, seed);
    Run r;
    r.converged = trained.loss_ratio <= options.max_loss_ratio;
    r.id = mean_dice(*trained.model, id_test);
    r.ood = mean_dice(*trained.model, ood_test);
    return r;
  };

  for (const auto& [name, factory] : segmenters) {
    std::vector<Run> baseline;
    for (const std::uint64_t seed : options.seeds) baseline.push_back(run(factory, train_set, seed));

    AugmentationRow base_row;
    base_row.segmenter = name;
    base_row.source = "baseline";
    for (std::size_t k = 0; k < baseline.size(); ++k) {
      if (!baseline[k].converged) {
        base_row.flagged_seeds.push_back(options.seeds[k]);
        continue;
      }
      base_row.id_dice += baseline[k].id;
      base_row.ood_dice += baseline[k].ood;
      ++base_row.seeds_used;
    }
    if (base_row.seeds_used > 0) {
      base_row.id_dice /= base_row.seeds_used;
      base_row.ood_dice /= base_row.seeds_used;
    } else {
      result.warnings.push_back(name + ": no converged baseline run");
    }
    result.rows.push_back(base_row);

    for (const auto& [source, synthetic] : synthetic_sources) {
      AugmentationRow row;
      row.segmenter = name;
      row.source = source;
      int mixed_used = 0;
      for (std::size_t k = 0; k < options.seeds.size(); ++k) {
        const std::uint64_t seed = options.seeds[k];
        std::vector<Sample> mixed = train_set;
        if (synthetic.size() <= train_set.size()) {
          mixed.insert(mixed.end(), synthetic.begin(), synthetic.end());
        } else {
          std::vector<std::size_t> pick(synthetic.size());
          for (std::size_t i = 0; i < pick.size(); ++i) pick[i] = i;
          RandomSource mix_rng(seed, "mix/" + source);
          std::shuffle(pick.begin(), pick.end(), mix_rng.engine());
          pick.resize(train_set.size());
          std::sort(pick.begin(), pick.end());
          for (std::size_t i : pick) mixed.push_back(synthetic[i]);
        }
        const Run r = run(factory, mixed, seed);
        if (!r.converged) {
          row.flagged_seeds.push_back(seed);
          continue;
        }
        row.id_dice += r.id;
        row.ood_dice += r.ood;
        ++mixed_used;
        if (!baseline[k].converged) continue;
        row.id_delta += r.id - baseline[k].id;
        row.ood_delta += r.ood - baseline[k].ood;
        ++row.seeds_used;
      }
      if (mixed_used > 0) {
        row.id_dice /= mixed_used;
        row.ood_dice /= mixed_used;
      }
      if (row.seeds_used > 0) {
        row.id_delta /= row.seeds_used;
        row.ood_delta /= row.seeds_used;
      } else {
        result.warnings.push_back(name + "/" + source + ": no seed where both runs converged");
      }
      result.rows.push_back(row);
    }
  }
  return result;
}

RenderedTable render_augmentation(const AugmentationResult& result) {
  std::vector<std::vector<std::string>> table{{"Segmenter", "Source", "ID Dice", "ID delta", "OOD Dice", "OOD delta",
                                               "Seeds", "Flagged"}};
  std::ostringstream csv;
  csv << "segmenter,source,id_dice,id_delta,ood_dice,ood_delta,seeds_used,flagged\n";
  for (const auto& r : result.rows) {
    std::string flagged;
    for (const auto s : r.flagged_seeds) flagged += (flagged.empty() ? "" : " ") + std::to_string(s);
    table.push_back({r.segmenter, r.source, format("%.2f", r.id_dice), signed2(r.id_delta), format("%.2f", r.ood_dice),
                     signed2(r.ood_delta), std::to_string(r.seeds_used), flagged.empty() ? "-" : flagged});
    csv << r.segmenter << "," << r.source << "," << format("%.17g", r.id_dice) << "," << format("%.17g", r.id_delta)
        << "," << format("%.17g", r.ood_dice) << "," << format("%.17g", r.ood_delta) << "," << r.seeds_used << ","
        << flagged << "\n";
  }
  return {align_table(table), csv.str()};
}

}  // namespace polypbench
