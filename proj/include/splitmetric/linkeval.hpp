#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "splitmetric/catalog.hpp"
#include "splitmetric/embedstore.hpp"

namespace splitmetric {

/// Pairwise link ground truth: two distinct images are linked iff they share
/// a branch.
class LinkOracle {
 public:
  LinkOracle() = default;
  explicit LinkOracle(std::map<std::string, std::string> labels) : labels_(std::move(labels)) {}
  static LinkOracle from_catalog(const Catalog& catalog);

  /// Throws Error for unknown ids.
  const std::string& label(const std::string& image_id) const;
  bool has(const std::string& image_id) const { return labels_.contains(image_id); }
  bool linked(const std::string& a, const std::string& b) const {
    return a != b && label(a) == label(b);
  }
  const std::map<std::string, std::string>& labels() const { return labels_; }

 private:
  std::map<std::string, std::string> labels_;
};

enum class PairMode : std::uint8_t { kRandom, kHard };

struct EvalPair {
  std::string anchor;
  std::string partner;
  int link = 0;
};

struct PairSet {
  std::vector<EvalPair> pairs;
  std::uint64_t seed = 0;
  PairMode mode = PairMode::kRandom;
  std::size_t skipped = 0;  // anchors without a positive (or hard negative)
};

/// Per image: up to K most similar different-branch ids, most similar first.
struct HardNegPool {
  std::size_t k = 0;
  std::map<std::string, std::vector<std::string>> negatives;
};

/// (#{p > n} + 0.5 #{p == n}) / (|pos| |neg|), computed from sorted
/// mid-ranks in O((P+N) log(P+N)). Throws Error if either side is empty.
double auroc(std::span<const double> pos_scores, std::span<const double> neg_scores);

/// One positive and one negative partner per eligible anchor (branch has 2+
/// images in `images`). Anchors are visited in sorted id order. In hard mode
/// the negative is drawn uniformly from the anchor's pool instead of the
/// whole split; anchors with an empty pool are skipped.
PairSet sample_eval_pairs(std::vector<std::string> images, const LinkOracle& oracle,
                          std::uint64_t seed, const HardNegPool* hard_pool = nullptr);

/// Top-K different-branch neighbours of every row of `reference` among its
/// own rows, by cosine similarity; ties go to the smaller id.
HardNegPool mine_hard_negatives(const EmbeddingMatrix& reference, const LinkOracle& oracle,
                                std::size_t k);

struct EvalOptions {
  std::size_t repeats = 10;
  std::uint64_t seed = 0;
  bool hard = false;
  std::optional<HardNegPool> hard_pool;
};

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;
  std::size_t repeats = 0;
  std::vector<double> values;
};

struct MetricReport {
  double r_at_1 = 0.0;
  MetricSummary auc;
  std::optional<MetricSummary> auc_h;
  std::size_t skipped = 0;  // singleton-branch anchors
  std::size_t anchors = 0;  // anchors counted by R@1
};

/// R@1 over non-singleton anchors, plus AUC (and AUC_H with `hard`) as
/// mean and population std over `repeats` pair samples; repeat r uses seed
/// `seed + r`.
MetricReport evaluate(const EmbeddingMatrix& embeddings, const LinkOracle& oracle,
                      const EvalOptions& options);

nlohmann::json to_json(const MetricReport& report);
/// "95.05 ± 0.03" style percentage cell.
std::string format_percent(const MetricSummary& summary);

nlohmann::json to_json(const HardNegPool& pool);
HardNegPool hard_pool_from_json(const nlohmann::json& j);

}  // namespace splitmetric
