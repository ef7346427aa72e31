#include "cli.hpp"

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "polypbench/bench.hpp"
#include "polypbench/io.hpp"
#include "polypbench/phantom.hpp"
#include "polypbench/review.hpp"

namespace polypbench::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::string output_root() {
  const char* env = std::getenv("POLYPBENCH_OUT");
  return env && *env ? env : "polypbench-out";
}

namespace {

// ------------------------------------------------------------ run config

bool is_help(const CLI::Option* opt) { return opt->get_name() == "--help" || opt->get_name() == "-h"; }

std::vector<std::string> split_default(std::string text) {
  if (text.size() >= 2 && text.front() == '[' && text.back() == ']') text = text.substr(1, text.size() - 2);
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (start <= text.size() && !text.empty()) {
    const std::size_t comma = text.find(',', start);
    parts.push_back(text.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return parts;
}

// Every option of the subcommand with the value it resolved to, and the
// argument list that reproduces the run.
json resolved_config(const CLI::App& sub) {
  json options = json::object();
  json args = json::array({sub.get_name()});
  for (const CLI::Option* opt : sub.get_options()) {
    if (is_help(opt)) continue;
    const std::string name = opt->get_lnames().empty() ? opt->get_name() : opt->get_lnames().front();
    const bool flag = opt->get_expected_min() == 0;
    if (flag) {
      const bool set = opt->count() > 0;
      options[name] = set;
      if (set) args.push_back("--" + name);
      continue;
    }
    std::vector<std::string> values = opt->count() > 0 ? opt->results() : split_default(opt->get_default_str());
    if (values.empty()) {
      options[name] = nullptr;
      continue;
    }
    options[name] = opt->get_expected_max() > 1 ? json(values) : json(values.front());
    args.push_back("--" + name);
    for (const auto& v : values) args.push_back(v);
  }
  return {{"command", sub.get_name()}, {"options", options}, {"args", args}};
}

void write_run_config(const fs::path& path, const CLI::App& sub) {
  write_file_atomic(path, resolved_config(sub).dump(2) + "\n");
}

// ------------------------------------------------------------- helpers

std::vector<Sample> require_dataset(const fs::path& dir) {
  std::vector<Sample> data = load_dataset(dir);
  if (data.empty()) throw Error("dataset " + dir.string() + " is empty");
  return data;
}

std::vector<Sample> usable_variants(const BenchmarkManifest& manifest, const fs::path& dir, bool include_pending) {
  std::vector<Sample> out;
  for (const auto& r : manifest.records) {
    if (r.failed() || r.family.kind == EditKind::healthy) continue;
    if (r.verdict == Verdict::accepted || (include_pending && r.verdict == Verdict::pending))
      out.push_back(load_variant(r, dir));
  }
  return out;
}

std::pair<std::string, fs::path> named_path(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == text.size())
    throw Error("expected name=path, got '" + text + "'");
  return {text.substr(0, eq), text.substr(eq + 1)};
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_value(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

json row_to_json(const EvaluationRow& row) {
  json drops = json::object();
  for (const auto& [label, v] : row.drops) drops[label] = optional_json(v);
  return {{"model", row.model},         {"real_dice", row.real_dice},
          {"healthy_fpr", optional_json(row.healthy_fpr)}, {"recon_drop", optional_json(row.recon_drop)},
          {"drops", drops},             {"avg_drop", optional_json(row.avg_drop)},
          {"warnings", row.warnings}};
}

EvaluationRow row_from_json(const json& j) {
  EvaluationRow row;
  row.model = j.at("model").get<std::string>();
  row.real_dice = j.at("real_dice").get<double>();
  row.healthy_fpr = optional_value(j.at("healthy_fpr"));
  row.recon_drop = optional_value(j.at("recon_drop"));
  for (const auto& [label, v] : j.at("drops").items()) row.drops[label] = optional_value(v);
  row.avg_drop = optional_value(j.at("avg_drop"));
  row.warnings = j.value("warnings", std::vector<std::string>{});
  return row;
}

std::vector<VoteRecord> read_votes(const fs::path& path) {
  std::vector<VoteRecord> votes;
  std::ifstream in(path);
  if (!in) throw Error("cannot open vote log " + path.string());
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    votes.push_back({j.at("sample_id").get<std::string>(), vote_from_string(j.at("verdict").get<std::string>()),
                     j.at("reviewer").get<std::string>(), set_truth_from_string(j.at("blinded_truth").get<std::string>())});
  }
  return votes;
}

void print_warnings(std::ostream& err, const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) err << "warning: " << w << "\n";
}

struct ModelPaths {
  std::string dir;
  std::string inpainter, uncond, repainter;

  void add(CLI::App* sub) {
    sub->add_option("--models", dir, "Directory holding inpainter/uncond/repainter .pbck files");
    sub->add_option("--inpainter", inpainter, "Inpainter checkpoint (overrides --models)");
    sub->add_option("--uncond", uncond, "Unconditional checkpoint (overrides --models)");
    sub->add_option("--repainter", repainter, "Repainter checkpoint (overrides --models)");
  }
  fs::path resolve(const std::string& explicit_path, const std::string& role, bool needed) const {
    if (!explicit_path.empty()) return explicit_path;
    if (!needed) return {};
    const fs::path p = fs::path(dir) / (role + ".pbck");
    if (!fs::exists(p)) throw Error("missing " + role + " checkpoint " + p.string() + " (train-" + role + " first)");
    return p;
  }
  PipelineModels load(bool inpaint, bool uncond_needed, bool repaint) const {
    return load_pipeline_models(resolve(inpainter, "inpainter", inpaint), resolve(uncond, "uncond", uncond_needed),
                                resolve(repainter, "repainter", repaint));
  }
};

struct Budgets {
  StageBudgets budgets;
  void add(CLI::App* sub, bool all = true) {
    if (all) {
      sub->add_option("--steps-bg", budgets.steps_bg, "DDIM steps for background recovery");
      sub->add_option("--steps-refine", budgets.steps_refine, "DDIM steps for boundary refinement");
    }
    sub->add_option("--steps-edit", budgets.steps_edit, "DDIM steps for attribute editing");
    sub->add_option("--t0", budgets.t0_fraction, "Start noise level as a fraction of T");
  }
};

struct Radii {
  PipelineOptions options;
  void add(CLI::App* sub) {
    sub->add_option("--dilation", options.dilation_px, "Mask dilation radius at the reference size, px");
    sub->add_option("--band-inner", options.band_inner_px, "Boundary band inner radius at the reference size, px");
    sub->add_option("--band-outer", options.band_outer_px, "Boundary band outer radius at the reference size, px");
    sub->add_option("--reference-size", options.reference_size, "Image width the radii are given at");
  }
};

// A subcommand: registers its options and returns the action to run.
using Action = std::function<void(std::ostream& out, std::ostream& err)>;

// ------------------------------------------------------------- commands

Action phantom_gen(CLI::App* sub) {
  struct Opts {
    int n = 200;
    std::uint64_t seed = 0;
    std::string preset = "id";
    int size = 64;
    double healthy_fraction = 0.0;
    std::string prefix = "phantom";
    std::string out = output_root() + "/phantom";
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--n", o->n, "Number of samples")->check(CLI::PositiveNumber);
  sub->add_option("--seed", o->seed, "Random seed");
  sub->add_option("--preset", o->preset, "id (in-distribution) or ood")->check(CLI::IsMember({"id", "ood"}));
  sub->add_option("--size", o->size, "Image side, px")->check(CLI::Range(32, 4096));
  sub->add_option("--healthy-fraction", o->healthy_fraction, "Fraction of frames without a polyp")
      ->check(CLI::Range(0.0, 1.0));
  sub->add_option("--prefix", o->prefix, "Sample id prefix");
  sub->add_option("--out", o->out, "Output dataset directory");
  return [o, sub](std::ostream& out, std::ostream&) {
    PhantomParams params = o->preset == "ood" ? PhantomParams::out_of_distribution() : PhantomParams::in_distribution();
    params.rows = params.cols = o->size;
    params.healthy_fraction = o->healthy_fraction;
    const auto data = generate_phantom_dataset(o->n, params, RandomSource(o->seed, "phantom/" + o->preset), o->prefix);
    fs::create_directories(o->out);
    save_dataset(o->out, data);
    write_run_config(fs::path(o->out) / "run_config.json", *sub);
    out << "wrote " << data.size() << " samples to " << o->out << "\n";
  };
}

Action train_model(CLI::App* sub, ModelRole role) {
  struct Opts {
    std::string data;
    std::uint64_t seed = 0;
    DenoiserTrainingConfig config;
    Radii radii;
    std::string out = output_root() + "/models";
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--data", o->data, "Training dataset directory")->required();
  sub->add_option("--seed", o->seed, "Random seed");
  sub->add_option("--epochs", o->config.epochs, "Training epochs")->check(CLI::NonNegativeNumber);
  sub->add_option("--batch", o->config.batch_size, "Batch size")->check(CLI::PositiveNumber);
  sub->add_option("--lr", o->config.learning_rate, "Adam learning rate")->check(CLI::PositiveNumber);
  sub->add_option("--width", o->config.width, "U-Net base width")->check(CLI::PositiveNumber);
  o->radii.add(sub);
  sub->add_option("--out", o->out, "Output directory for <role>.pbck");
  return [o, sub, role](std::ostream& out, std::ostream&) {
    const auto data = require_dataset(o->data);
    const std::string name = to_string(role);
    const TrainedModel trained = train_pipeline_model(role, data, NoiseSchedule{}, o->config,
                                                      RandomSource(o->seed, "train/" + name), o->radii.options);
    fs::create_directories(o->out);
    const fs::path path = fs::path(o->out) / (name + ".pbck");
    save_denoiser(path, name, *trained.model, &trained.codec);
    write_run_config(fs::path(o->out) / (name + ".run_config.json"), *sub);
    out << name << ": " << trained.report.steps << " steps, probe loss " << trained.report.initial_loss << " -> "
        << trained.report.final_loss << " (ratio " << trained.report.loss_ratio() << "), saved " << path.string()
        << "\n";
  };
}

Action train_segmenter_cmd(CLI::App* sub) {
  struct Opts {
    std::string data;
    std::uint64_t seed = 0;
    SegmenterTrainingConfig config;
    std::string name = "toyseg";
    std::string out = output_root() + "/models";
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--data", o->data, "Training dataset directory")->required();
  sub->add_option("--seed", o->seed, "Random seed");
  sub->add_option("--epochs", o->config.epochs, "Training epochs")->check(CLI::NonNegativeNumber);
  sub->add_option("--batch", o->config.batch_size, "Batch size")->check(CLI::PositiveNumber);
  sub->add_option("--lr", o->config.learning_rate, "Adam learning rate")->check(CLI::PositiveNumber);
  sub->add_option("--width", o->config.width, "Network base width")->check(CLI::PositiveNumber);
  sub->add_option("--name", o->name, "Model name (file stem and report row)");
  sub->add_option("--out", o->out, "Output directory for <name>.pbck");
  return [o, sub](std::ostream& out, std::ostream&) {
    const auto data = require_dataset(o->data);
    SegmenterReport report;
    const auto model = train_segmenter(data, o->config, RandomSource(o->seed, "segmenter/" + o->name), o->name, &report);
    fs::create_directories(o->out);
    const fs::path path = fs::path(o->out) / (o->name + ".pbck");
    save_segmenter(path, *model);
    write_run_config(fs::path(o->out) / (o->name + ".run_config.json"), *sub);
    out << o->name << ": " << report.steps << " steps, loss ratio " << report.loss_ratio() << ", saved "
        << path.string() << "\n";
  };
}

Action build_bench(CLI::App* sub) {
  struct Opts {
    std::string data;
    ModelPaths models{output_root() + "/models", "", "", ""};
    std::uint64_t seed = 0;
    Budgets budgets;
    Radii radii;
    std::vector<std::string> families;
    int jobs = 1;
    std::string out = output_root() + "/bench";
  };
  auto o = std::make_shared<Opts>();
  for (const auto& f : default_families()) o->families.push_back(f.label());
  sub->add_option("--data", o->data, "Source dataset directory")->required();
  o->models.add(sub);
  sub->add_option("--seed", o->seed, "Random seed");
  o->budgets.add(sub);
  o->radii.add(sub);
  sub->add_option("--families", o->families, "Variant families, e.g. healthy size_0.1 position_0.2")->delimiter(',');
  sub->add_option("--jobs", o->jobs, "Worker threads (results do not depend on it)")->check(CLI::PositiveNumber);
  sub->add_option("--out", o->out, "Benchmark directory");
  return [o, sub](std::ostream& out, std::ostream&) {
    std::vector<VariantFamily> families;
    for (const auto& label : o->families) families.push_back(family_from_label(label));
    const bool edits = std::any_of(families.begin(), families.end(),
                                   [](const VariantFamily& f) { return f.kind != EditKind::healthy; });
    const PipelineModels models = o->models.load(true, edits, edits);
    const auto data = require_dataset(o->data);
    BuildOptions options;
    options.pipeline = o->radii.options;
    options.jobs = o->jobs;
    options.log = &out;
    fs::create_directories(o->out);
    const auto manifest = build_benchmark(data, families, models, o->budgets.budgets, RandomSource(o->seed, "bench"),
                                          o->out, options);
    write_run_config(fs::path(o->out) / "run_config.json", *sub);
    out << "wrote " << manifest.records.size() << " records to " << (fs::path(o->out) / "manifest.jsonl").string()
        << "\n";
  };
}

Action recon_check(CLI::App* sub) {
  struct Opts {
    std::string data;
    ModelPaths models{output_root() + "/models", "", "", ""};
    std::uint64_t seed = 0;
    Budgets budgets;
    std::string segmenter;
    std::string out = output_root() + "/recon";
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--data", o->data, "Dataset to reconstruct")->required();
  o->models.add(sub);
  sub->add_option("--seed", o->seed, "Random seed");
  o->budgets.add(sub, false);
  sub->add_option("--segmenter", o->segmenter, "Segmenter checkpoint; reports its Dice drop on the reconstructions");
  sub->add_option("--out", o->out, "Output dataset directory");
  return [o, sub](std::ostream& out, std::ostream&) {
    const PipelineModels models = o->models.load(false, true, false);
    const auto data = require_dataset(o->data);
    const RandomSource rng(o->seed, "recon");
    std::vector<Sample> recon;
    double mae = 0.0;
    for (const auto& s : data) {
      RandomSource sample_rng = rng.fork(s.id);
      Sample r{s.id, quantize8(reconstruct(s, models, o->budgets.budgets, sample_rng)), s.mask};
      mae += double((r.image.array() - s.image.array()).abs().mean());
      recon.push_back(std::move(r));
    }
    fs::create_directories(o->out);
    save_dataset(o->out, recon);
    write_run_config(fs::path(o->out) / "run_config.json", *sub);
    out << "reconstructed " << recon.size() << " images, mean absolute error " << mae / double(recon.size()) << "\n";
    if (!o->segmenter.empty()) {
      const auto seg = load_segmenter(o->segmenter);
      const double real = mean_dice(*seg, data), rec = mean_dice(*seg, recon);
      out << seg->name() << ": Dice " << real << " on originals, " << rec << " on reconstructions, drop "
          << dice_drop(real, rec) << "\n";
    }
  };
}

SegmenterPtr make_adapter(const std::string& spec, const std::vector<Sample>& real, const std::vector<Sample>* recon,
                          const BenchmarkManifest& manifest, const fs::path& bench_dir) {
  if (spec == "empty") return std::make_shared<ConstantAdapter>(false);
  if (spec == "full") return std::make_shared<ConstantAdapter>(true);
  if (spec == "oracle") {
    auto oracle = std::make_shared<OracleAdapter>();
    for (const auto& s : real) oracle->add(s.image, s.mask);
    if (recon)
      for (const auto& s : *recon) oracle->add(s.image, s.mask);
    for (const auto& r : manifest.records) {
      if (r.failed()) continue;
      const Sample v = load_variant(r, bench_dir);
      oracle->add(v.image, v.mask);
    }
    return oracle;
  }
  if (!fs::exists(spec)) throw Error("adapter '" + spec + "' is neither oracle/empty/full nor a checkpoint file");
  return load_segmenter(spec);
}

Action evaluate_cmd(CLI::App* sub) {
  struct Opts {
    std::string data;
    std::string bench = output_root() + "/bench";
    std::string adapter = "oracle";
    std::string recon;
    bool include_pending = false;
    std::string out = output_root() + "/eval";
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--data", o->data, "Real test dataset (sources of the benchmark)")->required();
  sub->add_option("--bench", o->bench, "Benchmark directory with manifest.jsonl");
  sub->add_option("--adapter", o->adapter, "oracle, empty, full, or a segmenter checkpoint");
  sub->add_option("--recon", o->recon, "Reconstructions of the test set (recon-check output)");
  sub->add_flag("--include-pending", o->include_pending, "Also use variants not yet curated");
  sub->add_option("--out", o->out, "Directory for <model>.eval.json");
  return [o, sub](std::ostream& out, std::ostream& err) {
    const auto real = require_dataset(o->data);
    const BenchmarkManifest manifest = read_manifest(fs::path(o->bench) / "manifest.jsonl");
    std::optional<std::vector<Sample>> recon;
    if (!o->recon.empty()) recon = require_dataset(o->recon);
    const SegmenterPtr adapter = make_adapter(o->adapter, real, recon ? &*recon : nullptr, manifest, o->bench);
    EvaluateOptions options;
    options.include_pending = o->include_pending;
    options.reconstructions = recon ? &*recon : nullptr;
    const EvaluationRow row = evaluate(*adapter, real, manifest, o->bench, options);
    print_warnings(err, row.warnings);
    fs::create_directories(o->out);
    write_file_atomic(fs::path(o->out) / (row.model + ".eval.json"), row_to_json(row).dump(2) + "\n");
    write_run_config(fs::path(o->out) / (row.model + ".run_config.json"), *sub);
    out << render_report({row}).text;
  };
}

Action report_cmd(CLI::App* sub) {
  struct Opts {
    std::vector<std::string> inputs{output_root() + "/eval"};
    std::string out = output_root() + "/report";
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--inputs", o->inputs, "Evaluation files or directories of *.eval.json");
  sub->add_option("--out", o->out, "Directory for report.txt and report.csv");
  return [o, sub](std::ostream& out, std::ostream&) {
    std::vector<fs::path> files;
    for (const auto& in : o->inputs) {
      if (fs::is_directory(in)) {
        std::vector<fs::path> found;
        for (const auto& e : fs::directory_iterator(in))
          if (e.path().filename().string().ends_with(".eval.json")) found.push_back(e.path());
        std::sort(found.begin(), found.end());
        files.insert(files.end(), found.begin(), found.end());
      } else {
        files.push_back(in);
      }
    }
    if (files.empty()) throw Error("no evaluation files found");
    std::vector<EvaluationRow> rows;
    for (const auto& f : files) rows.push_back(row_from_json(json::parse(read_text_file(f))));
    const RenderedTable table = render_report(rows);
    fs::create_directories(o->out);
    write_file_atomic(fs::path(o->out) / "report.txt", table.text);
    write_file_atomic(fs::path(o->out) / "report.csv", table.csv);
    write_run_config(fs::path(o->out) / "run_config.json", *sub);
    out << table.text;
  };
}

Action quality_cmd(CLI::App* sub) {
  struct Opts {
    std::string real;
    std::vector<std::string> synthetic;
    std::string votes;
    std::uint64_t extractor_seed = 0;
    std::string out = output_root() + "/quality";
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--real", o->real, "Real dataset the variants were generated from")->required();
  sub->add_option("--synthetic", o->synthetic, "name=benchmark-dir, repeatable")->required();
  sub->add_option("--votes", o->votes, "Blinded vote log from review-serve");
  sub->add_option("--extractor-seed", o->extractor_seed, "Seed of the random-projection feature extractor");
  sub->add_option("--out", o->out, "Directory for quality.txt and quality.csv");
  return [o, sub](std::ostream& out, std::ostream& err) {
    const auto real = require_dataset(o->real);
    std::map<std::string, std::vector<SyntheticImage>> synthetic;
    for (const auto& spec : o->synthetic) {
      const auto [name, dir] = named_path(spec);
      const BenchmarkManifest manifest = read_manifest(dir / "manifest.jsonl");
      auto& images = synthetic[name];
      // No curation filter: the quality study scores every generated image.
      for (const auto& r : manifest.records)
        if (!r.failed()) images.push_back({r.variant_id, r.source_sample_id, load_variant(r, dir).image});
    }
    const std::vector<VoteRecord> votes = o->votes.empty() ? std::vector<VoteRecord>{} : read_votes(o->votes);
    const QualityReport report = quality_report(real, synthetic, RandomProjectionExtractor(o->extractor_seed), votes);
    print_warnings(err, report.warnings);
    const RenderedTable table = render_quality(report);
    fs::create_directories(o->out);
    write_file_atomic(fs::path(o->out) / "quality.txt", table.text);
    write_file_atomic(fs::path(o->out) / "quality.csv", table.csv);
    write_run_config(fs::path(o->out) / "run_config.json", *sub);
    out << table.text;
  };
}

Action augment_cmd(CLI::App* sub) {
  struct Opts {
    std::string train, id_test, ood_test;
    std::vector<std::string> synthetic;
    bool include_pending = false;
    std::vector<std::uint64_t> seeds{1, 2, 3};
    SegmenterTrainingConfig config;
    std::vector<int> widths{8};
    double max_loss_ratio = 0.9;
    std::string out = output_root() + "/augment";
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--train", o->train, "Real training dataset")->required();
  sub->add_option("--id-test", o->id_test, "In-distribution test dataset")->required();
  sub->add_option("--ood-test", o->ood_test, "Out-of-distribution test dataset")->required();
  sub->add_option("--synthetic", o->synthetic, "name=benchmark-dir, repeatable")->required();
  sub->add_flag("--include-pending", o->include_pending, "Also use variants not yet curated");
  sub->add_option("--seeds", o->seeds, "Training seeds")->delimiter(',');
  sub->add_option("--epochs", o->config.epochs, "Segmenter training epochs")->check(CLI::NonNegativeNumber);
  sub->add_option("--batch", o->config.batch_size, "Batch size")->check(CLI::PositiveNumber);
  sub->add_option("--lr", o->config.learning_rate, "Adam learning rate")->check(CLI::PositiveNumber);
  sub->add_option("--widths", o->widths, "One toy segmenter per base width")->delimiter(',');
  sub->add_option("--max-loss-ratio", o->max_loss_ratio, "Runs whose probe loss fell less than this are flagged");
  sub->add_option("--out", o->out, "Directory for augmentation.txt and augmentation.csv");
  return [o, sub](std::ostream& out, std::ostream& err) {
    const auto train = require_dataset(o->train);
    const auto id_test = require_dataset(o->id_test);
    const auto ood_test = require_dataset(o->ood_test);
    std::map<std::string, std::vector<Sample>> sources;
    for (const auto& spec : o->synthetic) {
      const auto [name, dir] = named_path(spec);
      sources[name] = usable_variants(read_manifest(dir / "manifest.jsonl"), dir, o->include_pending);
      if (sources[name].empty()) throw Error("synthetic source " + name + " has no usable variants");
    }
    std::map<std::string, SegmenterFactory> segmenters;
    for (const int width : o->widths) {
      SegmenterTrainingConfig config = o->config;
      config.width = width;
      const std::string name = "toyseg-w" + std::to_string(width);
      segmenters[name] = [config, name](const std::vector<Sample>& data, std::uint64_t seed) {
        SegmenterReport report;
        auto model = train_segmenter(data, config, RandomSource(seed, "segmenter/" + name), name, &report);
        return TrainedSegmenter{model, report.loss_ratio()};
      };
    }
    AugmentationOptions options;
    options.seeds = o->seeds;
    options.max_loss_ratio = o->max_loss_ratio;
    const AugmentationResult result = augmentation_experiment(train, sources, segmenters, id_test, ood_test, options);
    print_warnings(err, result.warnings);
    const RenderedTable table = render_augmentation(result);
    fs::create_directories(o->out);
    write_file_atomic(fs::path(o->out) / "augmentation.txt", table.text);
    write_file_atomic(fs::path(o->out) / "augmentation.csv", table.csv);
    write_run_config(fs::path(o->out) / "run_config.json", *sub);
    out << table.text;
  };
}

Action review_serve(CLI::App* sub) {
  struct Opts {
    std::string manifest = output_root() + "/bench/manifest.jsonl";
    std::string real;
    std::uint64_t seed = 0;
    std::string host = "127.0.0.1";
    int port = 8080;
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--manifest", o->manifest, "Benchmark manifest to curate");
  sub->add_option("--real", o->real, "Real dataset for blinded votes and source images");
  sub->add_option("--seed", o->seed, "Seed for queue order and opaque ids");
  sub->add_option("--host", o->host, "Bind address");
  sub->add_option("--port", o->port, "Port (0 picks a free one)")->check(CLI::Range(0, 65535));
  return [o](std::ostream& out, std::ostream&) {
    ReviewStore store(ReviewConfig{o->manifest, o->real, {}, o->seed});
    ReviewServer server(store);
    // Handle SIGINT/SIGTERM on this thread; the server threads inherit the mask.
    sigset_t stop_signals;
    sigemptyset(&stop_signals);
    sigaddset(&stop_signals, SIGINT);
    sigaddset(&stop_signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);
    const int port = server.bind(o->host, o->port);
    out << "listening on http://" << o->host << ":" << port << std::endl;
    std::thread worker([&server] { server.listen(); });
    int received = 0;
    sigwait(&stop_signals, &received);
    server.stop();
    worker.join();
    out << "stopped" << std::endl;
  };
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Attribute-edited polyp segmentation benchmark tools", "polypbench"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  std::map<CLI::App*, Action> actions;
  auto command = [&](const char* name, const char* help, auto&& make) {
    CLI::App* sub = app.add_subcommand(name, help);
    actions[sub] = make(sub);
  };
  command("phantom-gen", "Generate a procedural phantom dataset", phantom_gen);
  command("train-inpainter", "Train the background inpainting model",
          [](CLI::App* s) { return train_model(s, ModelRole::inpainter); });
  command("train-uncond", "Train the unconditional model used for editing",
          [](CLI::App* s) { return train_model(s, ModelRole::uncond); });
  command("train-repainter", "Train the boundary repainting model",
          [](CLI::App* s) { return train_model(s, ModelRole::repainter); });
  command("train-segmenter", "Train the toy segmentation model", train_segmenter_cmd);
  command("build-bench", "Generate healthy, size and position variants", build_bench);
  command("recon-check", "Reconstruct a dataset through the unconditional model", recon_check);
  command("evaluate", "Score one segmenter on a benchmark", evaluate_cmd);
  command("report", "Combine evaluations into the robustness table", report_cmd);
  command("quality-report", "FID, MS-SSIM and vote statistics of generated images", quality_cmd);
  command("augment-experiment", "Train segmenters with and without synthetic data", augment_cmd);
  command("review-serve", "Serve the curation and blinded-vote HTTP API", review_serve);
  std::string rerun_file;
  CLI::App* rerun = app.add_subcommand("rerun", "Repeat a run from its run_config.json");
  rerun->add_option("config", rerun_file, "run_config.json written by an earlier run")->required();

  std::vector<std::string> argv_storage{"polypbench"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_storage) argv.push_back(a.data());
  try {
    app.parse(int(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kSuccess;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return kSuccess;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsageError;
  }

  try {
    if (rerun->parsed()) {
      const json config = json::parse(read_text_file(rerun_file));
      return run(config.at("args").get<std::vector<std::string>>(), out, err);
    }
    for (auto& [sub, action] : actions)
      if (sub->parsed()) action(out, err);
    return kSuccess;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kDomainError;
  }
}

}  // namespace polypbench::cli
