#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "splitmetric/catalog.hpp"
#include "splitmetric/embedstore.hpp"
#include "splitmetric/linkeval.hpp"
#include "splitmetric/losses.hpp"
#include "splitmetric/splitgen.hpp"

namespace splitmetric {

/// Embedding head: affine-free layer norm -> W x + b -> L2 normalization.
struct ToyModel {
  RowMatrixD weight;  // d_out x d_in
  Eigen::VectorXd bias;
  double layernorm_eps = 1e-5;

  std::size_t d_in() const { return static_cast<std::size_t>(weight.cols()); }
  std::size_t d_out() const { return static_cast<std::size_t>(weight.rows()); }

  /// Gaussian weights scaled by 1/sqrt(d_in), zero bias.
  static ToyModel initialize(std::size_t d_in, std::size_t d_out, std::uint64_t seed);
};

/// Intermediate values kept by forward() for the backward pass.
struct ForwardCache {
  RowMatrixD normalized;  // layer-norm output, B x d_in
  Eigen::VectorXd inv_std;
  RowMatrixD hidden;      // before L2 normalization
  Eigen::VectorXd hidden_norm;
  RowMatrixD output;
};

/// Rows of `features` mapped to unit-length embeddings. A zero hidden row
/// (constant input with zero bias) maps to the zero vector.
RowMatrixD forward(const ToyModel& model, const RowMatrixD& features, ForwardCache* cache = nullptr);

struct HeadGradients {
  RowMatrixD weight;
  Eigen::VectorXd bias;
  RowMatrixD features;
};

HeadGradients backward(const ToyModel& model, const ForwardCache& cache,
                       const RowMatrixD& grad_output);

/// Embeds every row of `features`.
EmbeddingMatrix embed(const ToyModel& model, const EmbeddingMatrix& features);

struct BatchSpec {
  std::size_t m = 8;  // classes per batch
  std::size_t k = 4;  // images per class
  void validate() const;
};

struct BatchSample {
  std::vector<std::string> ids;
  std::vector<int> labels;  // index into ClassIndex::branches
};

/// Sorted branch list of a training split; a branch's label is its position.
struct ClassIndex {
  std::vector<std::string> branches;
  std::map<std::string, int> label;
  static ClassIndex from_images(const std::vector<std::string>& images, const LinkOracle& oracle);
};

/// m classes drawn uniformly without replacement among branches with >= k
/// images, then k images per class without replacement.
BatchSample sample_batch(const std::vector<std::string>& images, const LinkOracle& oracle,
                         const BatchSpec& spec, std::uint64_t seed);

struct TrainConfig {
  LossKind loss = LossKind::kMultiSim;
  LossParams params;
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;
  double augmentation_sigma = 0.05;  // supcon views
  double aux_learning_rate = 0.05;   // proxies / centers
  BatchSpec batch;
  std::size_t d_out = 512;
  std::size_t steps_per_epoch = 0;   // 0: |train| / |B|, at least 1
  std::size_t val_repeats = 1;

  void validate() const;
};

struct OptimizerState {
  RowMatrixD weight_velocity;
  Eigen::VectorXd bias_velocity;
  RowMatrixD aux_velocity;
};

struct StepResult {
  double loss = 0.0;
};

/// One SGD-with-momentum step on a batch of raw features. For supcon the
/// batch is expanded to two noisy views per row using `view_seed`. The class
/// bank (proxy/center losses) is updated with its own learning rate and
/// re-normalized. Throws Error on a non-finite loss or embedding.
StepResult train_step(ToyModel& model, const RowMatrixD& features, const std::vector<int>& labels,
                      const TrainConfig& config, OptimizerState& state, ClassBank* bank,
                      std::uint64_t view_seed);

/// Unit-normalized mean embedding of each class under `model`, repeated
/// `per_class` times with a small seeded jitter when per_class > 1.
ClassBank initial_class_bank(const ToyModel& model, const EmbeddingMatrix& features,
                             const std::vector<std::string>& images, const ClassIndex& classes,
                             const LinkOracle& oracle, int per_class, std::uint64_t seed);

struct HistoryRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_r_at_1 = 0.0;
  double val_auc = 0.0;
};

struct TrainResult {
  ToyModel model;  // best validation R@1
  std::optional<ClassBank> bank;
  std::vector<HistoryRow> history;
  std::size_t best_epoch = 0;
};

TrainResult train(const Catalog& catalog, const SplitAssignment& splits,
                  const EmbeddingMatrix& features, const TrainConfig& config);

void save_model(const ToyModel& model, const std::filesystem::path& path);
ToyModel load_model(const std::filesystem::path& path);
void write_history(const std::vector<HistoryRow>& history, std::ostream& out);

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

}  // namespace splitmetric
