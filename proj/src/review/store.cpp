#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <mutex>

#include "polypbench/io.hpp"
#include "polypbench/random.hpp"
#include "polypbench/review.hpp"

namespace polypbench {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(ReviewMode mode) { return mode == ReviewMode::curation ? "curation" : "blinded_vote"; }

ReviewMode review_mode_from_string(const std::string& text) {
  if (text == "curation") return ReviewMode::curation;
  if (text == "blinded_vote") return ReviewMode::blinded_vote;
  throw Error("unknown review mode '" + text + "' (expected curation or blinded_vote)");
}

namespace {

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

ReviewReply error_reply(int status, const std::string& message) { return {status, json{{"error", message}}}; }

json stats_json(const std::vector<VoteRecord>& votes, SetTruth truth) {
  const bool any = std::any_of(votes.begin(), votes.end(), [&](const VoteRecord& v) { return v.blinded_truth == truth; });
  if (!any) return nullptr;
  const VoteStats s = vote_stats(votes, truth);
  return {{"real_pct", s.real_pct}, {"fake_pct", s.fake_pct}, {"real_count", s.real_count}, {"fake_count", s.fake_count}};
}

std::string require_string(const json& request, const char* key) {
  const auto it = request.find(key);
  if (it == request.end() || !it->is_string() || it->get<std::string>().empty())
    throw Error(std::string("field '") + key + "' must be a non-empty string");
  return it->get<std::string>();
}

// Lines of an append-only log. A torn final line (no trailing newline) was
// never acknowledged; it is cut off so later appends start on a fresh line.
std::vector<std::string> read_log(const fs::path& path) {
  std::vector<std::string> lines;
  if (!fs::exists(path)) return lines;
  std::string text = read_text_file(path);
  const std::size_t end = text.rfind('\n');
  const std::size_t keep = end == std::string::npos ? 0 : end + 1;
  if (keep != text.size()) {
    text.resize(keep);
    write_file_atomic(path, text);
  }
  std::size_t start = 0;
  while (start < text.size()) {
    const std::size_t nl = text.find('\n', start);
    if (nl > start) lines.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  return lines;
}

}  // namespace

ReviewStore::ReviewStore(ReviewConfig config) : config_(std::move(config)) {
  manifest_ = read_manifest(config_.manifest_path);
  base_dir_ = config_.manifest_path.parent_path();
  if (config_.log_dir.empty()) config_.log_dir = base_dir_;
  fs::create_directories(config_.log_dir);

  const fs::path lock_path = config_.manifest_path.string() + ".lock";
  lock_fd_ = ::open(lock_path.c_str(), O_RDWR | O_CREAT, 0644);
  if (lock_fd_ < 0) throw Error("cannot open " + lock_path.string());
  if (::flock(lock_fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(lock_fd_);
    lock_fd_ = -1;
    throw Error("manifest " + config_.manifest_path.string() + " is held by another review service");
  }

  std::vector<std::string> real_ids;
  if (!config_.real_root.empty()) {
    const fs::path dir = config_.real_root / "images";
    if (!fs::is_directory(dir)) throw Error("real set has no images directory: " + dir.string());
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.path().extension() == ".png") real_ids.push_back(entry.path().stem().string());
    std::sort(real_ids.begin(), real_ids.end());
  }
  const std::set<std::string> real_known(real_ids.begin(), real_ids.end());

  for (const auto& id : real_ids) {
    const std::string item = opaque("item", "real/" + id);
    blind_[item] = {id, SetTruth::real_set, opaque("blind-image", "real/" + id)};
    images_[blind_[item].image] = config_.real_root / "images" / (id + ".png");
  }
  for (const auto& r : manifest_.records) {
    if (r.failed()) continue;
    const std::string vi = opaque("variant-image", r.variant_id), vm = opaque("variant-mask", r.variant_id);
    variant_image_[r.variant_id] = vi;
    variant_mask_[r.variant_id] = vm;
    images_[vi] = base_dir_ / r.image_path;
    images_[vm] = base_dir_ / r.mask_path;
    if (real_known.count(r.source_sample_id)) {
      const std::string si = opaque("source-image", r.source_sample_id);
      source_image_[r.variant_id] = si;
      images_[si] = config_.real_root / "images" / (r.source_sample_id + ".png");
    }
    const std::string item = opaque("item", "variant/" + r.variant_id);
    blind_[item] = {r.variant_id, SetTruth::synthetic_set, opaque("blind-image", "variant/" + r.variant_id)};
    images_[blind_[item].image] = base_dir_ / r.image_path;
  }
  for (const auto& [item, info] : blind_) blind_order_.push_back(item);
  replay();
}

ReviewStore::~ReviewStore() {
  if (lock_fd_ >= 0) {
    ::flock(lock_fd_, LOCK_UN);
    ::close(lock_fd_);
  }
}

fs::path ReviewStore::curation_log() const { return config_.log_dir / "curation.log.jsonl"; }
fs::path ReviewStore::vote_log() const { return config_.log_dir / "votes.log.jsonl"; }

std::string ReviewStore::opaque(const std::string& kind, const std::string& id) const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(splitmix64(config_.seed ^ stable_hash(kind + "\n" + id))));
  return buf;
}

void ReviewStore::apply_curation(const json& entry) {
  VariantRecord* record = manifest_.find(entry.at("item_id").get<std::string>());
  if (!record) throw Error("curation log names unknown variant " + entry.at("item_id").get<std::string>());
  record->verdict = verdict_from_string(entry.at("verdict").get<std::string>());
  record->reviewer = entry.at("reviewer").get<std::string>();
  record->timestamp = entry.at("timestamp").get<std::string>();
  record->note = entry.value("note", std::string());
}

void ReviewStore::replay() {
  bool changed = false;
  for (const auto& line : read_log(curation_log())) {
    const json entry = json::parse(line);
    const VariantRecord* record = manifest_.find(entry.at("item_id").get<std::string>());
    const Verdict logged = verdict_from_string(entry.at("verdict").get<std::string>());
    if (record && record->verdict == logged && record->reviewer == entry.at("reviewer").get<std::string>()) continue;
    apply_curation(entry);
    changed = true;
  }
  // The log is the durable record; a crash between append and manifest
  // rewrite is repaired here.
  if (changed) write_manifest(manifest_, config_.manifest_path);

  for (const auto& line : read_log(vote_log())) {
    const json entry = json::parse(line);
    const std::string item = entry.at("item_id").get<std::string>();
    const auto it = blind_.find(item);
    if (it == blind_.end()) throw Error("vote log names unknown item " + item);
    VoteRecord v{it->second.sample_id, vote_from_string(entry.at("verdict").get<std::string>()),
                 entry.at("reviewer").get<std::string>(), it->second.truth};
    if (!voted_.emplace(item, v.reviewer).second) continue;
    votes_.push_back(std::move(v));
  }
}

std::vector<std::string> ReviewStore::queue(ReviewMode mode, const std::string& reviewer) const {
  std::vector<std::string> items;
  if (mode == ReviewMode::curation) {
    for (const auto& r : manifest_.records)
      if (!r.failed()) items.push_back(r.variant_id);
    std::sort(items.begin(), items.end());
  } else {
    items = blind_order_;
  }
  RandomSource rng(config_.seed, "queue/" + to_string(mode) + "/" + reviewer);
  std::shuffle(items.begin(), items.end(), rng.engine());
  return items;
}

json ReviewStore::curation_payload(const VariantRecord& r) const {
  json params = json::object();
  if (r.size_factor) params["size_factor"] = *r.size_factor;
  if (r.dx) params["dx"] = *r.dx;
  if (r.dy) params["dy"] = *r.dy;
  if (r.tau) params["tau"] = *r.tau;
  const auto source = source_image_.find(r.variant_id);
  return {{"item_id", r.variant_id},
          {"source_sample_id", r.source_sample_id},
          {"family", r.family.label()},
          {"parameters", params},
          {"variant_image", "/image/" + variant_image_.at(r.variant_id)},
          {"variant_mask", "/image/" + variant_mask_.at(r.variant_id)},
          {"source_image", source == source_image_.end() ? json(nullptr) : json("/image/" + source->second)}};
}

ReviewReply ReviewStore::next(const std::string& mode_text, const std::string& reviewer) const {
  ReviewMode mode;
  try {
    mode = review_mode_from_string(mode_text);
  } catch (const Error& e) {
    return error_reply(400, e.what());
  }
  if (reviewer.empty()) return error_reply(400, "reviewer is required");
  std::shared_lock lock(mutex_);
  const std::vector<std::string> items = queue(mode, reviewer);
  std::size_t done = 0;
  std::optional<std::string> pending;
  for (const auto& id : items) {
    const bool decided = mode == ReviewMode::curation ? manifest_.find(id)->verdict != Verdict::pending
                                                      : voted_.count({id, reviewer}) > 0;
    if (decided) {
      ++done;
    } else if (!pending) {
      pending = id;
    }
  }
  json body{{"mode", to_string(mode)}, {"reviewer", reviewer}, {"position", done}, {"total", items.size()},
            {"done", !pending.has_value()}, {"item", nullptr}};
  if (pending) {
    if (mode == ReviewMode::curation) {
      body["item"] = curation_payload(*manifest_.find(*pending));
    } else {
      body["item"] = {{"item_id", *pending}, {"image", "/image/" + blind_.at(*pending).image}};
    }
  }
  return {200, body};
}

ReviewReply ReviewStore::record_verdict(const json& request) {
  std::string item, reviewer, verdict;
  try {
    if (!request.is_object()) throw Error("request body must be an object");
    item = require_string(request, "item_id");
    reviewer = require_string(request, "reviewer");
    verdict = require_string(request, "verdict");
  } catch (const Error& e) {
    return error_reply(400, e.what());
  }
  std::string note;
  if (const auto it = request.find("note"); it != request.end() && it->is_string()) note = it->get<std::string>();

  std::unique_lock lock(mutex_);
  if (const auto blind = blind_.find(item); blind != blind_.end()) {
    Vote vote;
    try {
      vote = vote_from_string(verdict);
    } catch (const Error& e) {
      return error_reply(400, e.what());
    }
    if (voted_.count({item, reviewer})) return error_reply(409, "verdict already recorded for this item and reviewer");
    const json entry{{"item_id", item},   {"sample_id", blind->second.sample_id},
                     {"reviewer", reviewer}, {"verdict", to_string(vote)},
                     {"blinded_truth", to_string(blind->second.truth)}, {"timestamp", utc_now()}};
    append_line_durable(vote_log(), entry.dump());
    voted_.emplace(item, reviewer);
    votes_.push_back({blind->second.sample_id, vote, reviewer, blind->second.truth});
    return {200, json{{"item_id", item}, {"reviewer", reviewer}, {"verdict", to_string(vote)}, {"recorded", true}}};
  }

  VariantRecord* record = manifest_.find(item);
  if (!record || record->failed()) return error_reply(404, "unknown item " + item);
  Verdict decision;
  try {
    decision = verdict_from_string(verdict);
  } catch (const Error& e) {
    return error_reply(400, e.what());
  }
  if (decision == Verdict::pending) return error_reply(400, "verdict must be accepted or rejected");
  if (record->verdict != Verdict::pending) return error_reply(409, "variant " + item + " is already curated");
  const json entry{{"item_id", item},
                   {"reviewer", reviewer},
                   {"verdict", to_string(decision)},
                   {"note", note},
                   {"timestamp", utc_now()}};
  append_line_durable(curation_log(), entry.dump());
  apply_curation(entry);
  write_manifest(manifest_, config_.manifest_path);
  return {200, json{{"item_id", item},
                    {"reviewer", reviewer},
                    {"verdict", to_string(decision)},
                    {"recorded", true},
                    {"record", to_json(*record)}}};
}

ReviewReply ReviewStore::stats(const std::string& mode_text) const {
  ReviewMode mode;
  try {
    mode = review_mode_from_string(mode_text);
  } catch (const Error& e) {
    return error_reply(400, e.what());
  }
  std::shared_lock lock(mutex_);
  if (mode == ReviewMode::curation) {
    long pending = 0, accepted = 0, rejected = 0, failed = 0;
    for (const auto& r : manifest_.records) {
      if (r.failed()) {
        ++failed;
        continue;
      }
      switch (r.verdict) {
        case Verdict::pending: ++pending; break;
        case Verdict::accepted: ++accepted; break;
        case Verdict::rejected: ++rejected; break;
      }
    }
    return {200, json{{"mode", "curation"},
                      {"pending", pending},
                      {"accepted", accepted},
                      {"rejected", rejected},
                      {"failed", failed}}};
  }
  return {200, json{{"mode", "blinded_vote"},
                    {"votes", votes_.size()},
                    {"real_set", stats_json(votes_, SetTruth::real_set)},
                    {"synthetic_set", stats_json(votes_, SetTruth::synthetic_set)}}};
}

ReviewReply ReviewStore::manifest() const {
  std::shared_lock lock(mutex_);
  json records = json::array();
  for (const auto& r : manifest_.records) records.push_back(to_json(r));
  return {200, json{{"records", records}}};
}

std::optional<fs::path> ReviewStore::image(const std::string& opaque_id) const {
  std::shared_lock lock(mutex_);
  const auto it = images_.find(opaque_id);
  if (it == images_.end()) return std::nullopt;
  return it->second;
}

std::vector<VoteRecord> ReviewStore::votes() const {
  std::shared_lock lock(mutex_);
  return votes_;
}

BenchmarkManifest ReviewStore::current_manifest() const {
  std::shared_lock lock(mutex_);
  return manifest_;
}

}  // namespace polypbench
