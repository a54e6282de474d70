#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace splitmetric {

/// One image with its class (branch) and optional super-class (chain).
struct ImageRecord {
  std::string image_id;
  std::string branch_id;
  std::optional<std::string> chain_id;     // absent = unknown chain
  std::optional<std::string> content_key;  // caller-supplied duplicate key
  std::optional<std::size_t> feature_ref;  // row in an EmbeddingMatrix

  bool operator==(const ImageRecord&) const = default;
};

/// Immutable image universe with branch and chain indices.
///
/// Construction validates that image ids are unique and that every branch
/// has a single chain (or none). Index containers are ordered maps so that
/// iteration is lexicographic.
class Catalog {
 public:
  Catalog() = default;
  explicit Catalog(std::vector<ImageRecord> records);

  const std::vector<ImageRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  /// branch_id -> image ids, in record order.
  const std::map<std::string, std::vector<std::string>>& branch_index() const {
    return branch_index_;
  }
  /// known chain_id -> branch ids, sorted.
  const std::map<std::string, std::vector<std::string>>& chain_index() const {
    return chain_index_;
  }
  const std::set<std::string>& unknown_branches() const { return unknown_branches_; }

  const ImageRecord& record(const std::string& image_id) const;
  bool contains(const std::string& image_id) const;
  const std::optional<std::string>& chain_of_branch(const std::string& branch_id) const;
  std::size_t branch_size(const std::string& branch_id) const;

 private:
  std::vector<ImageRecord> records_;
  std::unordered_map<std::string, std::size_t> position_;
  std::map<std::string, std::vector<std::string>> branch_index_;
  std::map<std::string, std::optional<std::string>> branch_chain_;
  std::map<std::string, std::vector<std::string>> chain_index_;
  std::set<std::string> unknown_branches_;
};

struct CatalogStats {
  std::size_t images = 0;
  std::size_t branches = 0;
  std::size_t chains = 0;  // known chains only
  std::size_t unknown_branches = 0;
  std::map<std::string, std::size_t> branch_sizes;
  /// branch size -> number of branches of that size
  std::map<std::size_t, std::size_t> size_histogram;
};

struct SkippedMerge {
  std::vector<std::string> branches;
  std::vector<std::string> chains;
};

struct DedupReport {
  std::vector<std::vector<std::string>> merged_groups;
  std::vector<std::string> dropped;
  std::vector<SkippedMerge> skipped;
};

struct DedupResult {
  Catalog catalog;
  DedupReport report;
};

Catalog parse_catalog(std::istream& in);
Catalog load_catalog(const std::filesystem::path& path);
void write_catalog(const Catalog& catalog, std::ostream& out);
void save_catalog(const Catalog& catalog, const std::filesystem::path& path);

/// Merges branches that share a content_key (union-find over duplicate
/// edges) into the lexicographically smallest branch id, then keeps one
/// copy (smallest image id) of each duplicated key inside merged branches.
/// Groups whose known chains disagree are skipped and reported.
DedupResult dedup_merge(const Catalog& catalog);

CatalogStats stats(const Catalog& catalog);

nlohmann::json to_json(const DedupReport& report);
nlohmann::json to_json(const CatalogStats& stats);

}  // namespace splitmetric
