#include "splitmetric/linkeval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "splitmetric/error.hpp"
#include "splitmetric/parallel.hpp"
#include "splitmetric/rng.hpp"

namespace splitmetric {

LinkOracle LinkOracle::from_catalog(const Catalog& catalog) {
  std::map<std::string, std::string> labels;
  for (const auto& r : catalog.records()) labels.emplace(r.image_id, r.branch_id);
  return LinkOracle(std::move(labels));
}

const std::string& LinkOracle::label(const std::string& image_id) const {
  auto it = labels_.find(image_id);
  if (it == labels_.end()) throw Error("link oracle: no label for '" + image_id + "'");
  return it->second;
}

double auroc(std::span<const double> pos_scores, std::span<const double> neg_scores) {
  if (pos_scores.empty() || neg_scores.empty()) {
    throw Error("auroc: both positive and negative scores are required");
  }
  struct Scored {
    double score;
    bool positive;
  };
  std::vector<Scored> all;
  all.reserve(pos_scores.size() + neg_scores.size());
  for (double s : pos_scores) all.push_back({s, true});
  for (double s : neg_scores) all.push_back({s, false});
  std::sort(all.begin(), all.end(), [](const Scored& a, const Scored& b) { return a.score < b.score; });

  // Twice the positive rank sum with mid-ranks: a tie block occupying
  // 1-based ranks [lo, hi] contributes (lo + hi) per member.
  std::uint64_t twice_rank_sum = 0;
  for (std::size_t lo = 0; lo < all.size();) {
    std::size_t hi = lo;
    while (hi + 1 < all.size() && all[hi + 1].score == all[lo].score) ++hi;
    std::uint64_t pos_in_block = 0;
    for (std::size_t i = lo; i <= hi; ++i) pos_in_block += all[i].positive;
    twice_rank_sum += pos_in_block * ((lo + 1) + (hi + 1));
    lo = hi + 1;
  }
  const std::uint64_t p = pos_scores.size();
  const std::uint64_t n = neg_scores.size();
  // 2U = 2 * rank_sum - P(P+1) = 2 #wins + #ties
  const std::uint64_t twice_u = twice_rank_sum - p * (p + 1);
  return static_cast<double>(twice_u) / static_cast<double>(2 * p * n);
}

PairSet sample_eval_pairs(std::vector<std::string> images, const LinkOracle& oracle,
                          std::uint64_t seed, const HardNegPool* hard_pool) {
  std::sort(images.begin(), images.end());
  images.erase(std::unique(images.begin(), images.end()), images.end());

  // images grouped by branch, branches in sorted order
  std::map<std::string, std::vector<std::string>> by_branch;
  for (const auto& id : images) by_branch[oracle.label(id)].push_back(id);
  if (by_branch.size() < 2) {
    throw Error("sample_eval_pairs: need at least 2 branches, found " +
                std::to_string(by_branch.size()));
  }
  std::vector<std::string> grouped;
  std::map<std::string, std::pair<std::size_t, std::size_t>> range;  // branch -> [begin, end)
  for (const auto& [b, ids] : by_branch) {
    range[b] = {grouped.size(), grouped.size() + ids.size()};
    grouped.insert(grouped.end(), ids.begin(), ids.end());
  }

  PairSet out;
  out.seed = seed;
  out.mode = hard_pool ? PairMode::kHard : PairMode::kRandom;
  SplitMix64 rng(seed);
  for (const auto& anchor : images) {
    const auto& members = by_branch.at(oracle.label(anchor));
    if (members.size() < 2) {
      ++out.skipped;
      continue;
    }
    const std::vector<std::string>* pool = nullptr;
    if (hard_pool) {
      auto it = hard_pool->negatives.find(anchor);
      if (it == hard_pool->negatives.end() || it->second.empty()) {
        ++out.skipped;
        continue;
      }
      pool = &it->second;
    }
    const auto self = static_cast<std::size_t>(
        std::find(members.begin(), members.end(), anchor) - members.begin());
    std::size_t pick = rng.below(members.size() - 1);
    if (pick >= self) ++pick;
    out.pairs.push_back({anchor, members[pick], 1});

    if (pool) {
      out.pairs.push_back({anchor, (*pool)[rng.below(pool->size())], 0});
    } else {
      const auto [begin, end] = range.at(oracle.label(anchor));
      std::size_t neg = rng.below(grouped.size() - (end - begin));
      if (neg >= begin) neg += end - begin;
      out.pairs.push_back({anchor, grouped[neg], 0});
    }
  }
  return out;
}

HardNegPool mine_hard_negatives(const EmbeddingMatrix& reference, const LinkOracle& oracle,
                                std::size_t k) {
  const auto& ids = reference.ids();
  for (const auto& id : ids) oracle.label(id);
  HardNegPool pool;
  pool.k = k;
  std::vector<std::vector<std::string>> found(ids.size());
  parallel_for(ids.size(), [&](std::size_t q) {
    const auto& branch = oracle.label(ids[q]);
    std::vector<std::pair<double, std::size_t>> candidates;
    for (std::size_t g = 0; g < ids.size(); ++g) {
      if (oracle.label(ids[g]) == branch) continue;
      candidates.emplace_back(cosine(reference.data(), q, reference.data(), g), g);
    }
    const std::size_t take = std::min(k, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take),
                      candidates.end(), [&](const auto& a, const auto& b) {
                        return a.first > b.first || (a.first == b.first && ids[a.second] < ids[b.second]);
                      });
    for (std::size_t i = 0; i < take; ++i) found[q].push_back(ids[candidates[i].second]);
  });
  for (std::size_t q = 0; q < ids.size(); ++q) pool.negatives.emplace(ids[q], std::move(found[q]));
  return pool;
}

namespace {

MetricSummary summarize(std::vector<double> values) {
  MetricSummary s;
  s.repeats = values.size();
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(var / static_cast<double>(values.size()));
  s.values = std::move(values);
  return s;
}

double pair_auc(const EmbeddingMatrix& embeddings, const PairSet& pairs) {
  std::vector<double> pos;
  std::vector<double> neg;
  for (const auto& p : pairs.pairs) {
    const double s = cosine(embeddings.data(), embeddings.row_of(p.anchor), embeddings.data(),
                            embeddings.row_of(p.partner));
    (p.link ? pos : neg).push_back(s);
  }
  return auroc(pos, neg);
}

}  // namespace

MetricReport evaluate(const EmbeddingMatrix& embeddings, const LinkOracle& oracle,
                      const EvalOptions& options) {
  if (options.repeats < 1) throw Error("evaluate: repeats must be >= 1");
  if (options.hard && !options.hard_pool) throw Error("evaluate: hard negatives requested but no pool");
  const auto& ids = embeddings.ids();

  std::map<std::string, std::size_t> branch_sizes;
  for (const auto& id : ids) ++branch_sizes[oracle.label(id)];

  MetricReport report;
  const auto knn = cosine_knn(embeddings, embeddings, ids.size() > 1 ? 1 : 0, true);
  std::size_t hits = 0;
  for (std::size_t q = 0; q < ids.size(); ++q) {
    const auto& branch = oracle.label(ids[q]);
    if (branch_sizes.at(branch) < 2) {
      ++report.skipped;
      continue;
    }
    ++report.anchors;
    hits += oracle.label(ids[knn.neighbors[q].front().index]) == branch;
  }
  report.r_at_1 = report.anchors ? static_cast<double>(hits) / static_cast<double>(report.anchors) : 0.0;

  std::vector<double> auc(options.repeats);
  std::vector<double> auc_h(options.hard ? options.repeats : 0);
  parallel_for(options.repeats, [&](std::size_t r) {
    const std::uint64_t seed = options.seed + r;
    auc[r] = pair_auc(embeddings, sample_eval_pairs(ids, oracle, seed));
    if (options.hard) {
      auc_h[r] = pair_auc(embeddings, sample_eval_pairs(ids, oracle, seed, &*options.hard_pool));
    }
  });
  report.auc = summarize(std::move(auc));
  if (options.hard) report.auc_h = summarize(std::move(auc_h));
  return report;
}

nlohmann::json to_json(const MetricReport& report) {
  auto summary = [](const MetricSummary& s) {
    return nlohmann::json{{"mean", s.mean}, {"std", s.std}, {"repeats", s.repeats}, {"values", s.values}};
  };
  return {{"r_at_1", report.r_at_1},
          {"auc", summary(report.auc)},
          {"auc_h", report.auc_h ? summary(*report.auc_h) : nlohmann::json(nullptr)},
          {"skipped", report.skipped}};
}

std::string format_percent(const MetricSummary& summary) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f ± %.2f", summary.mean * 100.0, summary.std * 100.0);
  return buf;
}

nlohmann::json to_json(const HardNegPool& pool) {
  return {{"k", pool.k}, {"negatives", pool.negatives}};
}

HardNegPool hard_pool_from_json(const nlohmann::json& j) {
  HardNegPool pool;
  pool.k = j.at("k").get<std::size_t>();
  pool.negatives = j.at("negatives").get<std::map<std::string, std::vector<std::string>>>();
  return pool;
}

}  // namespace splitmetric
