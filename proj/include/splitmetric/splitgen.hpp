#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "splitmetric/catalog.hpp"

namespace splitmetric {

enum class SplitName : std::uint8_t {
  kTrain,
  kValSS,
  kValSU,
  kValUU,
  kTestSS,
  kTestSU,
  kTestUU,
  kTestUnk,
};

inline constexpr std::array<SplitName, 8> kAllSplits = {
    SplitName::kTrain,  SplitName::kValSS,  SplitName::kValSU,  SplitName::kValUU,
    SplitName::kTestSS, SplitName::kTestSU, SplitName::kTestUU, SplitName::kTestUnk};

std::string_view to_string(SplitName s);
std::optional<SplitName> parse_split_name(std::string_view token);

struct SplitConfig {
  std::uint64_t seed = 0;
  double uu_chain_fraction = 0.1;
  double su_branch_fraction = 0.1;
  std::size_t t1 = 25;
  std::size_t t2 = 3;
  std::size_t ss_divisor = 5;

  /// Throws Error when a field is out of range.
  void validate() const;
};

struct SplitAssignment {
  std::map<std::string, SplitName> assignment;
  SplitConfig config;
};

/// One row of a split file, kept as raw text so that malformed names can be
/// reported by verify_splits rather than rejected at parse time.
struct SplitRow {
  std::string image_id;
  std::string split;
};

/// Deterministic seen/unseen split generation.
///
/// Order of carving: unknown-chain branches -> test_unk; chains -> test_uu,
/// then val_uu; branches (keeping at least one per chain) -> test_su, then
/// val_su; per-branch image draws -> test_ss, then val_ss; the rest is train.
SplitAssignment generate_splits(const Catalog& catalog, const SplitConfig& config);

struct CheckResult {
  std::string name;
  std::string description;
  bool passed = true;
  std::vector<std::string> offending;
};

struct SplitCounts {
  std::size_t images = 0;
  std::size_t branches = 0;
  std::size_t chains = 0;
};

struct ConstraintReport {
  std::vector<CheckResult> checks;
  std::map<SplitName, SplitCounts> counts;
  SplitCounts trainval;
  SplitCounts total;

  bool all_passed() const;
  const CheckResult& check(std::string_view name) const;
};

struct VerifyOptions {
  std::size_t t2 = 1;
  /// When set, test_ss/val_ss per-branch counts are also checked against
  /// floor(N / ss_divisor).
  std::optional<std::size_t> ss_divisor;
};

ConstraintReport verify_splits(const Catalog& catalog, const std::vector<SplitRow>& rows,
                               const VerifyOptions& options);
ConstraintReport verify_splits(const Catalog& catalog, const SplitAssignment& assignment);

/// Per-split {images, branches, chains} counts only.
ConstraintReport split_report(const Catalog& catalog, const SplitAssignment& assignment);

std::vector<SplitRow> to_rows(const Catalog& catalog, const SplitAssignment& assignment);

/// CSV `image_id,split`, one row per catalog record in catalog order.
void write_splits(const Catalog& catalog, const SplitAssignment& assignment, std::ostream& out);
void save_splits(const Catalog& catalog, const SplitAssignment& assignment,
                 const std::filesystem::path& path);
std::vector<SplitRow> parse_split_rows(std::istream& in);
std::vector<SplitRow> load_split_rows(const std::filesystem::path& path);

/// Converts rows to an assignment; throws on unknown split names or ids.
SplitAssignment assignment_from_rows(const std::vector<SplitRow>& rows);

/// Image ids assigned to `split`, sorted.
std::vector<std::string> images_in(const SplitAssignment& assignment, SplitName split);

nlohmann::json counts_to_json(const ConstraintReport& report);
nlohmann::json to_json(const ConstraintReport& report);
nlohmann::json to_json(const SplitConfig& config);
SplitConfig split_config_from_json(const nlohmann::json& j);

}  // namespace splitmetric
