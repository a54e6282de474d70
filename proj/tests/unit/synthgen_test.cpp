#include <cstring>

#include <gtest/gtest.h>

#include "splitmetric/error.hpp"
#include "splitmetric/synthgen.hpp"

namespace splitmetric {
namespace {

TEST(Synth, CountsFollowConfig) {
  SynthConfig cfg;
  cfg.n_chains = 4;
  cfg.branches_per_chain = 3;
  cfg.images_per_branch = 10;
  cfg.unknown_chain_fraction = 0.25;
  cfg.seed = 1;
  const auto corpus = generate(cfg);
  const auto s = stats(corpus.catalog);
  EXPECT_EQ(s.images, 120u);
  EXPECT_EQ(s.branches, 12u);
  EXPECT_EQ(s.chains, 3u);
  EXPECT_EQ(s.unknown_branches, 3u);
  EXPECT_EQ(corpus.features.rows(), 120u);
  EXPECT_EQ(corpus.features.dim(), cfg.d_in);
  EXPECT_EQ(corpus.features.ids().front(), corpus.catalog.records().front().image_id);
}

TEST(Synth, SameSeedSameBytes) {
  SynthConfig cfg;
  cfg.n_chains = 5;
  cfg.seed = 9;
  const auto a = generate(cfg);
  const auto b = generate(cfg);
  EXPECT_EQ(a.catalog.records(), b.catalog.records());
  ASSERT_EQ(a.features.data().size(), b.features.data().size());
  EXPECT_EQ(std::memcmp(a.features.data().data(), b.features.data().data(),
                        sizeof(float) * static_cast<std::size_t>(a.features.data().size())),
            0);
  cfg.seed = 10;
  EXPECT_NE(generate(cfg).features.data(), a.features.data());
}

TEST(Synth, RejectsBadConfig) {
  SynthConfig cfg;
  cfg.sigma_noise = cfg.sigma_branch;
  EXPECT_THROW(generate(cfg), Error);
  cfg = {};
  cfg.n_chains = 0;
  EXPECT_THROW(generate(cfg), Error);
}

struct DistanceMeans {
  double within_branch = 0, within_chain = 0, cross_chain = 0;
};

DistanceMeans distance_means(const SynthCorpus& corpus) {
  const auto& x = corpus.features.data();
  const auto& recs = corpus.catalog.records();
  // Chain membership from branch names: <chain>_bNN, including unknown chains.
  auto chain_of = [](const std::string& branch) { return branch.substr(0, branch.find('_')); };
  double sums[3] = {0, 0, 0};
  std::size_t counts[3] = {0, 0, 0};
  for (std::size_t i = 0; i < recs.size(); ++i) {
    for (std::size_t j = i + 1; j < recs.size(); ++j) {
      const double d = (x.row(static_cast<Eigen::Index>(i)) - x.row(static_cast<Eigen::Index>(j))).cast<double>().norm();
      const int kind = recs[i].branch_id == recs[j].branch_id                               ? 0
                       : chain_of(recs[i].branch_id) == chain_of(recs[j].branch_id) ? 1
                                                                                     : 2;
      sums[kind] += d;
      ++counts[kind];
    }
  }
  return {sums[0] / static_cast<double>(counts[0]), sums[1] / static_cast<double>(counts[1]),
          sums[2] / static_cast<double>(counts[2])};
}

TEST(Synth, HierarchicalSeparation) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SynthConfig cfg;
    cfg.n_chains = 6;
    cfg.branches_per_chain = 4;
    cfg.images_per_branch = 6;
    cfg.d_in = 16;
    cfg.sigma_chain = 1.0;
    cfg.sigma_branch = 0.5;
    cfg.sigma_noise = 0.25;  // boundary of sigma_c >= 2 sigma_b >= 4 sigma_n
    cfg.seed = seed;
    const auto m = distance_means(generate(cfg));
    EXPECT_LT(m.within_branch, m.within_chain) << "seed " << seed;
    EXPECT_LT(m.within_chain, m.cross_chain) << "seed " << seed;
  }
}

TEST(Synth, ConfigJsonRoundTrip) {
  SynthConfig cfg;
  cfg.d_in = 77;
  cfg.seed = 5;
  cfg.sigma_noise = 0.2;
  const auto back = synth_config_from_json(to_json(cfg));
  EXPECT_EQ(back.d_in, 77u);
  EXPECT_EQ(back.seed, 5u);
  EXPECT_EQ(back.sigma_noise, 0.2);
}

}  // namespace
}  // namespace splitmetric
