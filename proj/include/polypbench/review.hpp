#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "polypbench/metrics.hpp"
#include "polypbench/records.hpp"

namespace polypbench {

enum class ReviewMode { curation, blinded_vote };
std::string to_string(ReviewMode mode);
ReviewMode review_mode_from_string(const std::string& text);

struct ReviewConfig {
  std::filesystem::path manifest_path;  // variant paths resolve against its directory
  std::filesystem::path real_root;      // dataset dir with images/<id>.png
  std::filesystem::path log_dir;        // defaults to the manifest directory
  std::uint64_t seed = 0;               // queue order and opaque ids
};

/// A reply body with its HTTP status.
struct ReviewReply {
  int status = 200;
  nlohmann::json body;
};

/// Review state: the manifest plus two append-only logs (curation verdicts
/// and blinded votes) replayed at startup. Every accepted write is flushed
/// to its log before the call returns.
class ReviewStore {
 public:
  explicit ReviewStore(ReviewConfig config);
  ~ReviewStore();
  ReviewStore(const ReviewStore&) = delete;
  ReviewStore& operator=(const ReviewStore&) = delete;

  ReviewReply next(const std::string& mode, const std::string& reviewer) const;
  ReviewReply record_verdict(const nlohmann::json& request);
  ReviewReply stats(const std::string& mode) const;
  ReviewReply manifest() const;
  /// File behind an opaque image id.
  std::optional<std::filesystem::path> image(const std::string& opaque_id) const;

  std::vector<VoteRecord> votes() const;
  BenchmarkManifest current_manifest() const;
  /// Deterministic per (seed, mode, reviewer).
  std::vector<std::string> queue(ReviewMode mode, const std::string& reviewer) const;

  std::filesystem::path curation_log() const;
  std::filesystem::path vote_log() const;

 private:
  struct BlindItem {
    std::string sample_id;  // real sample id or variant id
    SetTruth truth;
    std::string image;  // opaque image id
  };

  std::string opaque(const std::string& kind, const std::string& id) const;
  void replay();
  void apply_curation(const nlohmann::json& entry);
  nlohmann::json curation_payload(const VariantRecord& record) const;

  ReviewConfig config_;
  std::filesystem::path base_dir_;
  int lock_fd_ = -1;
  mutable std::shared_mutex mutex_;
  BenchmarkManifest manifest_;
  std::map<std::string, std::filesystem::path> images_;  // opaque id → file
  std::map<std::string, std::string> variant_image_, variant_mask_, source_image_;
  std::map<std::string, BlindItem> blind_;  // opaque item id → hidden truth
  std::vector<std::string> blind_order_;    // opaque item ids, sorted
  std::vector<VoteRecord> votes_;
  std::set<std::pair<std::string, std::string>> voted_;  // (opaque item, reviewer)
};

/// HTTP front end over a ReviewStore.
class ReviewServer {
 public:
  explicit ReviewServer(ReviewStore& store);
  ~ReviewServer();
  /// Binds the port (0 picks a free one) and returns it; throws if taken.
  int bind(const std::string& host, int port);
  /// Serves until stop(); bind() first.
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace polypbench
