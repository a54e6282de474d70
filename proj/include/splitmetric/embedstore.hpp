#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace splitmetric {

using RowMatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// N x d embeddings stored as 32-bit floats, one row per image id.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  /// Throws when ids are not unique, the row count differs from |ids|,
  /// d == 0, or `normalized` is set but some row is not unit length.
  EmbeddingMatrix(std::vector<std::string> ids, RowMatrixF data, bool normalized = false);

  const std::vector<std::string>& ids() const { return ids_; }
  const RowMatrixF& data() const { return data_; }
  bool normalized() const { return normalized_; }
  std::size_t rows() const { return static_cast<std::size_t>(data_.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(data_.cols()); }

  bool contains(const std::string& id) const { return index_.contains(id); }
  /// Row of `id`; throws if absent.
  std::size_t row_of(const std::string& id) const;

  /// Sub-matrix with the given ids in the given order.
  EmbeddingMatrix select(const std::vector<std::string>& ids) const;

 private:
  std::vector<std::string> ids_;
  RowMatrixF data_;
  bool normalized_ = false;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Neighbor {
  std::size_t index;
  double similarity;
};

/// neighbors[q] holds k entries for query row q, similarity descending.
struct NeighborList {
  std::vector<std::vector<Neighbor>> neighbors;
};

/// Writes `path` (binary EMB1) and the companion id file
/// (`path` with extension replaced by `.ids`).
void write_embeddings(const EmbeddingMatrix& matrix, const std::filesystem::path& path);
EmbeddingMatrix read_embeddings(const std::filesystem::path& path);
std::filesystem::path ids_path_for(const std::filesystem::path& path);

EmbeddingMatrix l2_normalize(const EmbeddingMatrix& matrix);

/// Cosine similarity of two rows with 64-bit accumulation.
double cosine(const RowMatrixF& a, std::size_t row_a, const RowMatrixF& b, std::size_t row_b);

/// Exact top-k by cosine similarity; ties go to the lower gallery index.
/// With `exclude_self`, the gallery row carrying the query's id is skipped.
NeighborList cosine_knn(const EmbeddingMatrix& queries, const EmbeddingMatrix& gallery,
                        std::size_t k, bool exclude_self);

}  // namespace splitmetric
