#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "splitmetric/embedstore.hpp"

namespace splitmetric {

enum class LossKind : std::uint8_t { kTriplet, kCircle, kMultiSim, kSupCon, kProxyNCA, kSoftTriple };

inline constexpr LossKind kAllLosses[] = {LossKind::kTriplet,  LossKind::kCircle,
                                          LossKind::kMultiSim, LossKind::kSupCon,
                                          LossKind::kProxyNCA, LossKind::kSoftTriple};

std::string_view to_string(LossKind kind);
/// Parses the lowercase token; throws Error on unknown names.
LossKind parse_loss_kind(std::string_view token);
bool uses_class_bank(LossKind kind);

// Defaults: triplet margin, SupCon temperature and SoftTriple centers per
// class follow the tuned values of the benchmark this library targets. The
// remaining constants are the published defaults of each loss's original
// formulation.
struct TripletParams {
  double margin = 0.1;
};
struct CircleParams {
  double relaxation = 0.4;  // m
  double scale = 80.0;      // gamma
};
struct MultiSimParams {
  double alpha = 2.0;
  double beta = 50.0;
  double threshold = 1.0;  // lambda
  double epsilon = 0.1;    // pair-mining margin
};
struct SupConParams {
  double temperature = 0.05;
};
struct ProxyNCAParams {
  double temperature = 1.0 / 9.0;
};
struct SoftTripleParams {
  double scale = 20.0;          // lambda
  double center_temperature = 0.1;  // gamma
  double margin = 0.01;         // delta
  double regularization = 0.2;  // tau
  int centers_per_class = 5;    // J
};

struct LossParams {
  TripletParams triplet;
  CircleParams circle;
  MultiSimParams multisim;
  SupConParams supcon;
  ProxyNCAParams proxynca;
  SoftTripleParams softtriple;

  void validate() const;
};

nlohmann::json to_json(const LossParams& params);
/// Missing keys keep their defaults.
LossParams loss_params_from_json(const nlohmann::json& j);

/// B x d embeddings with one class id per row. Similarities are plain dot
/// products, so rows are expected to be unit length.
struct Batch {
  RowMatrixD embeddings;
  std::vector<int> labels;
};

/// Learned class vectors: `per_class` consecutive rows per entry of
/// `classes` (sorted, unique). One row per class is a ProxyNCA++ proxy bank;
/// J rows per class is a SoftTriple center bank.
struct ClassBank {
  std::vector<int> classes;
  int per_class = 1;
  RowMatrixD vectors;

  /// Position of `label` in `classes`; throws Error if absent.
  std::size_t slot(int label) const;
  void normalize_rows();
};

struct LossResult {
  double value = 0.0;
  RowMatrixD grad_embeddings;
  std::optional<RowMatrixD> grad_aux;
};

LossResult triplet_loss(const Batch& batch, const TripletParams& params);
LossResult circle_loss(const Batch& batch, const CircleParams& params);
LossResult multisim_loss(const Batch& batch, const MultiSimParams& params);
LossResult supcon_loss(const Batch& batch, const SupConParams& params);
LossResult proxynca_loss(const Batch& batch, const ClassBank& proxies, const ProxyNCAParams& params);
LossResult softtriple_loss(const Batch& batch, const ClassBank& centers,
                           const SoftTripleParams& params);

/// Dispatches on `kind`; `bank` is required for proxynca and softtriple.
LossResult compute_loss(LossKind kind, const Batch& batch, const LossParams& params,
                        const ClassBank* bank = nullptr);

/// Smallest distance from any hinge or pair-mining switch point of `kind`
/// on this batch. Infinity for losses that are smooth everywhere.
double kink_distance(LossKind kind, const Batch& batch, const LossParams& params);

struct FiniteDiffResult {
  double max_rel_error = 0.0;
  int resamples = 0;
};

/// Compares analytic gradients (embeddings and, when present, the class bank)
/// with central differences. The error per coordinate is
/// |analytic - numeric| / max(1e-12, |numeric|). If the batch sits within
/// max(1e-6, 4 * eps) of a kink it is jittered (seeded) and renormalized
/// until it does not.
FiniteDiffResult finite_diff_check(LossKind kind, Batch batch, const LossParams& params,
                                   double eps, std::optional<ClassBank> bank = std::nullopt,
                                   std::uint64_t seed = 0);

}  // namespace splitmetric
