#include <algorithm>
#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "splitmetric/error.hpp"
#include "splitmetric/linkeval.hpp"
#include "splitmetric/rng.hpp"

namespace splitmetric {
namespace {

double brute_auroc(const std::vector<double>& pos, const std::vector<double>& neg) {
  double wins = 0;
  for (double p : pos)
    for (double n : neg) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  return wins / static_cast<double>(pos.size() * neg.size());
}

TEST(Auroc, ForcedCases) {
  EXPECT_EQ(auroc(std::vector{0.9, 0.8}, std::vector{0.3, 0.1}), 1.0);
  EXPECT_EQ(auroc(std::vector{0.5}, std::vector{0.5}), 0.5);
  EXPECT_EQ(auroc(std::vector{0.8, 0.4}, std::vector{0.6, 0.2}), 0.75);
  EXPECT_EQ(auroc(std::vector{0.1}, std::vector{0.9}), 0.0);
}

TEST(Auroc, EmptySideIsError) {
  EXPECT_THROW(auroc(std::vector<double>{}, std::vector{0.1}), Error);
  EXPECT_THROW(auroc(std::vector{0.1}, std::vector<double>{}), Error);
}

TEST(Auroc, MatchesBruteForceWithTies) {
  SplitMix64 rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t np = 1 + rng.below(60), nn = 1 + rng.below(60);
    const std::uint64_t levels = 1 + rng.below(12);  // few levels -> many ties
    std::vector<double> pos(np), neg(nn);
    for (auto& v : pos) v = static_cast<double>(rng.below(levels)) / 4.0;
    for (auto& v : neg) v = static_cast<double>(rng.below(levels)) / 4.0 - 0.25;
    const double got = auroc(pos, neg);
    EXPECT_EQ(got, brute_auroc(pos, neg)) << "trial " << trial;
    EXPECT_EQ(got + auroc(neg, pos), 1.0);
  }
}

LinkOracle oracle_of(std::initializer_list<std::pair<const char*, const char*>> labels) {
  std::map<std::string, std::string> m;
  for (const auto& [id, b] : labels) m.emplace(id, b);
  return LinkOracle(m);
}

TEST(LinkOracle, LinkIsBranchEqualityWithoutSelf) {
  const auto o = oracle_of({{"i1", "a"}, {"i2", "a"}, {"i3", "b"}});
  EXPECT_TRUE(o.linked("i1", "i2"));
  EXPECT_FALSE(o.linked("i1", "i1"));
  EXPECT_FALSE(o.linked("i1", "i3"));
  EXPECT_THROW(o.label("zz"), Error);
}

TEST(SampleEvalPairs, SingletonAnchorSkipped) {
  const auto o = oracle_of({{"i1", "a"}, {"i2", "a"}, {"i3", "b"}});
  const auto ps = sample_eval_pairs({"i1", "i2", "i3"}, o, 5);
  EXPECT_EQ(ps.skipped, 1u);
  ASSERT_EQ(ps.pairs.size(), 4u);
  EXPECT_EQ(ps.pairs[0].anchor, "i1");
  EXPECT_EQ(ps.pairs[0].partner, "i2");
  EXPECT_EQ(ps.pairs[0].link, 1);
  EXPECT_EQ(ps.pairs[1].partner, "i3");
  EXPECT_EQ(ps.pairs[1].link, 0);
  EXPECT_EQ(ps.pairs[2].anchor, "i2");
}

TEST(SampleEvalPairs, NeedsTwoBranches) {
  const auto o = oracle_of({{"i1", "a"}, {"i2", "a"}});
  EXPECT_THROW(sample_eval_pairs({"i1", "i2"}, o, 0), Error);
}

struct Instance {
  std::vector<std::string> ids;
  LinkOracle oracle;
  EmbeddingMatrix embeddings;
};

Instance random_instance(std::size_t n, std::size_t d, std::size_t branches, std::uint64_t seed,
                         bool quantize = false) {
  SplitMix64 rng(seed);
  Instance in;
  std::map<std::string, std::string> labels;
  RowMatrixF data(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i) {
    in.ids.push_back("x" + std::to_string(i));
    labels.emplace(in.ids.back(), "b" + std::to_string(rng.below(branches)));
    for (std::size_t c = 0; c < d; ++c) {
      double v = rng.normal();
      if (quantize) v = std::round(v);
      data(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = static_cast<float>(v);
    }
    if (data.row(static_cast<Eigen::Index>(i)).norm() == 0.0f) data(static_cast<Eigen::Index>(i), 0) = 1.0f;
  }
  in.oracle = LinkOracle(labels);
  in.embeddings = l2_normalize(EmbeddingMatrix(in.ids, data));
  return in;
}

TEST(SampleEvalPairs, CountsAndValidity) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto in = random_instance(60, 3, 12, seed);
    const auto ps = sample_eval_pairs(in.ids, in.oracle, seed);
    std::map<std::string, int> sizes;
    for (const auto& id : in.ids) ++sizes[in.oracle.label(id)];
    std::size_t eligible = 0;
    for (const auto& id : in.ids) eligible += sizes[in.oracle.label(id)] >= 2;
    EXPECT_EQ(ps.pairs.size(), 2 * eligible);
    EXPECT_EQ(ps.skipped, in.ids.size() - eligible);
    for (const auto& p : ps.pairs) {
      EXPECT_NE(p.anchor, p.partner);
      EXPECT_EQ(p.link, in.oracle.linked(p.anchor, p.partner) ? 1 : 0);
    }
    const auto again = sample_eval_pairs(in.ids, in.oracle, seed);
    ASSERT_EQ(again.pairs.size(), ps.pairs.size());
    for (std::size_t i = 0; i < ps.pairs.size(); ++i) EXPECT_EQ(again.pairs[i].partner, ps.pairs[i].partner);
  }
}

TEST(MineHardNegatives, PicksMostSimilarNegative) {
  RowMatrixF data(3, 2);
  data << 1, 0, 0, 1, 0.9f, 0.1f;
  const auto ref = l2_normalize(EmbeddingMatrix({"i1", "i2", "i3"}, data));
  const auto o = oracle_of({{"i1", "a"}, {"i2", "a"}, {"i3", "b"}});
  const auto pool = mine_hard_negatives(ref, o, 1);
  EXPECT_EQ(pool.negatives.at("i3"), (std::vector<std::string>{"i1"}));
  EXPECT_EQ(pool.negatives.at("i1"), (std::vector<std::string>{"i3"}));
}

TEST(MineHardNegatives, TruncatesAndHandlesSingleBranch) {
  const auto in = random_instance(10, 4, 2, 3);
  const auto pool = mine_hard_negatives(in.embeddings, in.oracle, 100);
  for (const auto& id : in.ids) {
    std::size_t negatives = 0;
    for (const auto& other : in.ids) negatives += in.oracle.label(other) != in.oracle.label(id);
    EXPECT_EQ(pool.negatives.at(id).size(), negatives);
  }
  RowMatrixF data = RowMatrixF::Identity(3, 3);
  const auto same = mine_hard_negatives(EmbeddingMatrix({"p", "q", "r"}, data, true),
                                        oracle_of({{"p", "z"}, {"q", "z"}, {"r", "z"}}), 5);
  for (const auto& [id, negs] : same.negatives) EXPECT_TRUE(negs.empty());
}

TEST(MineHardNegatives, MissingReferenceIdIsError) {
  const auto in = random_instance(5, 2, 2, 1);
  EXPECT_THROW(mine_hard_negatives(in.embeddings, oracle_of({{"x0", "a"}}), 2), Error);
}

TEST(MineHardNegatives, PoolIsHarderThanRandom) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto in = random_instance(120, 5, 10, seed);
    const std::size_t k = 5;
    const auto pool = mine_hard_negatives(in.embeddings, in.oracle, k);
    const auto& x = in.embeddings;
    for (const auto& id : in.ids) {
      const auto& negs = pool.negatives.at(id);
      if (negs.size() < k) continue;
      double pooled = 0, all = 0;
      std::size_t n_all = 0;
      for (const auto& n : negs) pooled += cosine(x.data(), x.row_of(id), x.data(), x.row_of(n));
      for (const auto& other : in.ids) {
        if (in.oracle.label(other) == in.oracle.label(id)) continue;
        all += cosine(x.data(), x.row_of(id), x.data(), x.row_of(other));
        ++n_all;
      }
      EXPECT_GE(pooled / static_cast<double>(negs.size()), all / static_cast<double>(n_all));
      for (const auto& n : negs) EXPECT_NE(in.oracle.label(n), in.oracle.label(id));
    }
  }
}

TEST(Evaluate, PerfectClusters) {
  RowMatrixF data(6, 2);
  data << 1, 0, 1, 0.001f, 1, -0.001f, 0, 1, 0.001f, 1, -0.001f, 1;
  std::vector<std::string> ids{"a1", "a2", "a3", "b1", "b2", "b3"};
  const auto e = l2_normalize(EmbeddingMatrix(ids, data));
  const auto o = oracle_of({{"a1", "A"}, {"a2", "A"}, {"a3", "A"}, {"b1", "B"}, {"b2", "B"}, {"b3", "B"}});
  const auto r = evaluate(e, o, {});
  EXPECT_EQ(r.r_at_1, 1.0);
  EXPECT_EQ(r.auc.mean, 1.0);
  EXPECT_EQ(r.auc.std, 0.0);
  EXPECT_EQ(r.auc.repeats, 10u);
}

TEST(Evaluate, IdenticalEmbeddingsGiveHalf) {
  RowMatrixF data(6, 2);
  data.setConstant(1.0f);
  const auto e = l2_normalize(EmbeddingMatrix({"a1", "a2", "a3", "b1", "b2", "b3"}, data));
  const auto o = oracle_of({{"a1", "A"}, {"a2", "A"}, {"a3", "A"}, {"b1", "B"}, {"b2", "B"}, {"b3", "B"}});
  EXPECT_EQ(evaluate(e, o, {}).auc.mean, 0.5);
}

TEST(Evaluate, HardWithoutPoolIsError) {
  const auto in = random_instance(20, 3, 4, 1);
  EvalOptions opts;
  opts.hard = true;
  EXPECT_THROW(evaluate(in.embeddings, in.oracle, opts), Error);
}

// Independent pass over all three metrics: brute-force nearest neighbour
// for R@1 and O(P*N) pair counting on the sampled pairs for AUC / AUC_H.
TEST(Evaluate, MatchesBruteForceReimplementation) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto in = random_instance(40, 4, 8, seed, seed % 2 == 0);
    const auto& x = in.embeddings;
    EvalOptions opts;
    opts.repeats = 4;
    opts.seed = seed * 11;
    opts.hard = true;
    opts.hard_pool = mine_hard_negatives(x, in.oracle, 3);
    const auto report = evaluate(x, in.oracle, opts);

    std::map<std::string, int> sizes;
    for (const auto& id : in.ids) ++sizes[in.oracle.label(id)];
    std::size_t hits = 0, anchors = 0;
    for (std::size_t q = 0; q < in.ids.size(); ++q) {
      if (sizes[in.oracle.label(in.ids[q])] < 2) continue;
      ++anchors;
      std::size_t best = q == 0 ? 1 : 0;
      for (std::size_t g = 0; g < in.ids.size(); ++g) {
        if (g == q) continue;
        if (cosine(x.data(), q, x.data(), g) > cosine(x.data(), q, x.data(), best)) best = g;
      }
      hits += in.oracle.label(in.ids[best]) == in.oracle.label(in.ids[q]);
    }
    EXPECT_EQ(report.r_at_1, static_cast<double>(hits) / static_cast<double>(anchors));
    EXPECT_EQ(report.anchors, anchors);

    for (std::size_t r = 0; r < opts.repeats; ++r) {
      for (bool hard : {false, true}) {
        const auto ps = sample_eval_pairs(in.ids, in.oracle, opts.seed + r, hard ? &*opts.hard_pool : nullptr);
        std::vector<double> pos, neg;
        for (const auto& p : ps.pairs) {
          const double s = cosine(x.data(), x.row_of(p.anchor), x.data(), x.row_of(p.partner));
          (in.oracle.linked(p.anchor, p.partner) ? pos : neg).push_back(s);
        }
        const double want = brute_auroc(pos, neg);
        EXPECT_EQ(hard ? report.auc_h->values[r] : report.auc.values[r], want);
      }
    }
    EXPECT_GE(report.auc.std, 0.0);
  }
}

TEST(Evaluate, RAt1ScalingInvariant) {
  const auto in = random_instance(50, 5, 6, 9);
  RowMatrixF scaled = in.embeddings.data() * 3.5f;
  const auto a = evaluate(in.embeddings, in.oracle, {1, 0, false, {}});
  const auto b = evaluate(EmbeddingMatrix(in.ids, scaled), in.oracle, {1, 0, false, {}});
  EXPECT_EQ(a.r_at_1, b.r_at_1);
}

TEST(Evaluate, DeterministicAndReportShape) {
  const auto in = random_instance(60, 3, 6, 2);
  EvalOptions opts;
  opts.hard = true;
  opts.hard_pool = mine_hard_negatives(in.embeddings, in.oracle, 10);
  const auto a = evaluate(in.embeddings, in.oracle, opts);
  const auto b = evaluate(in.embeddings, in.oracle, opts);
  EXPECT_EQ(a.auc.values, b.auc.values);
  EXPECT_EQ(a.auc_h->values, b.auc_h->values);
  const auto j = to_json(a);
  EXPECT_EQ(j["auc"]["repeats"], 10);
  EXPECT_EQ(j["auc"]["values"].size(), 10u);
  EXPECT_TRUE(j.contains("r_at_1"));
  EXPECT_TRUE(j["auc_h"].contains("std"));
  for (double v : {a.r_at_1, a.auc.mean, a.auc_h->mean}) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(FormatPercent, TableCell) {
  MetricSummary s;
  s.mean = 0.9505;
  s.std = 0.0003;
  EXPECT_EQ(format_percent(s), "95.05 ± 0.03");
}

TEST(HardPool, JsonRoundTrip) {
  const auto in = random_instance(20, 3, 4, 4);
  const auto pool = mine_hard_negatives(in.embeddings, in.oracle, 3);
  const auto back = hard_pool_from_json(to_json(pool));
  EXPECT_EQ(back.k, pool.k);
  EXPECT_EQ(back.negatives, pool.negatives);
}

}  // namespace
}  // namespace splitmetric
