#include "splitmetric/synthgen.hpp"

#include <cmath>
#include <cstdio>
#include <set>

#include "splitmetric/error.hpp"
#include "splitmetric/rng.hpp"

namespace splitmetric {
namespace {

std::string numbered(const char* prefix, std::size_t i, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%0*zu", prefix, width, i);
  return buf;
}

int width_for(std::size_t n) {
  int w = 2;
  for (std::size_t cap = 100; cap < n; cap *= 10) ++w;
  return w;
}

}  // namespace

void SynthConfig::validate() const {
  if (n_chains < 1 || branches_per_chain < 1 || images_per_branch < 1 || d_in < 1) {
    throw Error("synth config: counts must be >= 1");
  }
  if (!(unknown_chain_fraction >= 0.0 && unknown_chain_fraction <= 1.0)) {
    throw Error("synth config: unknown_chain_fraction must be in [0,1]");
  }
  if (!(sigma_noise > 0.0 && sigma_branch > sigma_noise && sigma_chain > 0.0)) {
    throw Error("synth config: need sigma_branch > sigma_noise > 0 and sigma_chain > 0");
  }
}

SynthCorpus generate(const SynthConfig& config) {
  config.validate();
  SplitMix64 rng(config.seed);
  const auto d = static_cast<Eigen::Index>(config.d_in);

  std::vector<std::size_t> chain_order(config.n_chains);
  for (std::size_t c = 0; c < config.n_chains; ++c) chain_order[c] = c;
  const auto n_unknown = static_cast<std::size_t>(
      std::llround(config.unknown_chain_fraction * static_cast<double>(config.n_chains)));
  const auto unknown_list = rng.sample(chain_order, n_unknown);
  const std::set<std::size_t> unknown(unknown_list.begin(), unknown_list.end());

  const std::size_t total = config.n_chains * config.branches_per_chain * config.images_per_branch;
  RowMatrixF features(static_cast<Eigen::Index>(total), d);
  std::vector<ImageRecord> records;
  std::vector<std::string> ids;
  records.reserve(total);
  ids.reserve(total);

  const int cw = width_for(config.n_chains);
  const int bw = width_for(config.branches_per_chain);
  const int iw = std::max(3, width_for(config.images_per_branch));
  Eigen::VectorXd chain_latent(d);
  Eigen::VectorXd branch_latent(d);
  Eigen::Index row = 0;
  for (std::size_t c = 0; c < config.n_chains; ++c) {
    const std::string chain = numbered("c", c, cw);
    for (Eigen::Index j = 0; j < d; ++j) chain_latent(j) = config.sigma_chain * rng.normal();
    for (std::size_t b = 0; b < config.branches_per_chain; ++b) {
      const std::string branch = chain + numbered("_b", b, bw);
      for (Eigen::Index j = 0; j < d; ++j) {
        branch_latent(j) = chain_latent(j) + config.sigma_branch * rng.normal();
      }
      for (std::size_t i = 0; i < config.images_per_branch; ++i) {
        std::string id = branch + numbered("_i", i, iw);
        for (Eigen::Index j = 0; j < d; ++j) {
          features(row, j) = static_cast<float>(branch_latent(j) + config.sigma_noise * rng.normal());
        }
        records.push_back(ImageRecord{
            id, branch, unknown.contains(c) ? std::nullopt : std::optional<std::string>(chain),
            std::nullopt, static_cast<std::size_t>(row)});
        ids.push_back(std::move(id));
        ++row;
      }
    }
  }
  return {Catalog(std::move(records)), EmbeddingMatrix(std::move(ids), std::move(features))};
}

nlohmann::json to_json(const SynthConfig& c) {
  return {{"n_chains", c.n_chains},
          {"branches_per_chain", c.branches_per_chain},
          {"images_per_branch", c.images_per_branch},
          {"unknown_chain_fraction", c.unknown_chain_fraction},
          {"d_in", c.d_in},
          {"sigma_chain", c.sigma_chain},
          {"sigma_branch", c.sigma_branch},
          {"sigma_noise", c.sigma_noise},
          {"seed", c.seed}};
}

SynthConfig synth_config_from_json(const nlohmann::json& j) {
  SynthConfig c;
  c.n_chains = j.value("n_chains", c.n_chains);
  c.branches_per_chain = j.value("branches_per_chain", c.branches_per_chain);
  c.images_per_branch = j.value("images_per_branch", c.images_per_branch);
  c.unknown_chain_fraction = j.value("unknown_chain_fraction", c.unknown_chain_fraction);
  c.d_in = j.value("d_in", c.d_in);
  c.sigma_chain = j.value("sigma_chain", c.sigma_chain);
  c.sigma_branch = j.value("sigma_branch", c.sigma_branch);
  c.sigma_noise = j.value("sigma_noise", c.sigma_noise);
  c.seed = j.value("seed", c.seed);
  return c;
}

}  // namespace splitmetric
