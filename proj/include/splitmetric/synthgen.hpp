#pragma once

#include <cstdint>

#include <nlohmann/json.hpp>

#include "splitmetric/catalog.hpp"
#include "splitmetric/embedstore.hpp"

namespace splitmetric {

/// Hierarchical Gaussian corpus: chain latent u_c ~ N(0, sigma_chain^2 I),
/// branch v_b = u_c + N(0, sigma_branch^2 I), image x = v_b + N(0, sigma_noise^2 I).
struct SynthConfig {
  std::size_t n_chains = 40;
  std::size_t branches_per_chain = 8;
  std::size_t images_per_branch = 20;
  double unknown_chain_fraction = 0.15;
  std::size_t d_in = 32;
  double sigma_chain = 1.0;
  double sigma_branch = 0.5;
  double sigma_noise = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthCorpus {
  Catalog catalog;
  EmbeddingMatrix features;  // rows in catalog record order
};

/// Chains are named c000, c001, ...; branches <chain>_b00; images
/// <branch>_i000. round(unknown_chain_fraction * n_chains) chains, drawn
/// uniformly, lose their chain label in the catalog.
SynthCorpus generate(const SynthConfig& config);

nlohmann::json to_json(const SynthConfig& config);
SynthConfig synth_config_from_json(const nlohmann::json& j);

}  // namespace splitmetric
