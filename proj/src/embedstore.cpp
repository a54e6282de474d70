#include "splitmetric/embedstore.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "splitmetric/error.hpp"
#include "splitmetric/parallel.hpp"

namespace splitmetric {
namespace {

constexpr std::array<char, 4> kMagic = {'E', 'M', 'B', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> bytes = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                                     static_cast<char>((v >> 16) & 0xFF),
                                     static_cast<char>((v >> 24) & 0xFF)};
  out.write(bytes.data(), 4);
}

bool get_u32(std::istream& in, std::uint32_t& v) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) return false;
  v = std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) |
      (std::uint32_t{b[3]} << 24);
  return true;
}

double row_norm(const RowMatrixF& m, Eigen::Index r) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < m.cols(); ++j) s += double{m(r, j)} * double{m(r, j)};
  return std::sqrt(s);
}

}  // namespace

EmbeddingMatrix::EmbeddingMatrix(std::vector<std::string> ids, RowMatrixF data, bool normalized)
    : ids_(std::move(ids)), data_(std::move(data)), normalized_(normalized) {
  if (data_.cols() < 1) throw Error("embeddings: dimension must be >= 1");
  if (static_cast<std::size_t>(data_.rows()) != ids_.size()) {
    throw Error("embeddings: " + std::to_string(ids_.size()) + " ids for " +
                std::to_string(data_.rows()) + " rows");
  }
  index_.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!index_.emplace(ids_[i], i).second) throw Error("embeddings: duplicate id '" + ids_[i] + "'");
  }
  if (normalized_) {
    for (Eigen::Index r = 0; r < data_.rows(); ++r) {
      if (std::abs(row_norm(data_, r) - 1.0) > 1e-5) {
        throw Error("embeddings: row " + std::to_string(r) + " is not unit length");
      }
    }
  }
}

std::size_t EmbeddingMatrix::row_of(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw Error("embeddings: no row for id '" + id + "'");
  return it->second;
}

EmbeddingMatrix EmbeddingMatrix::select(const std::vector<std::string>& ids) const {
  RowMatrixF sub(static_cast<Eigen::Index>(ids.size()), data_.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    sub.row(static_cast<Eigen::Index>(i)) = data_.row(static_cast<Eigen::Index>(row_of(ids[i])));
  }
  return EmbeddingMatrix(ids, std::move(sub), normalized_);
}

std::filesystem::path ids_path_for(const std::filesystem::path& path) {
  auto p = path;
  return p.replace_extension(".ids");
}

void write_embeddings(const EmbeddingMatrix& matrix, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("embeddings: cannot write '" + path.string() + "'");
  out.write(kMagic.data(), kMagic.size());
  put_u32(out, static_cast<std::uint32_t>(matrix.rows()));
  put_u32(out, static_cast<std::uint32_t>(matrix.dim()));
  const auto& data = matrix.data();
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    for (Eigen::Index j = 0; j < data.cols(); ++j) put_u32(out, std::bit_cast<std::uint32_t>(data(i, j)));
  }
  if (!out) throw Error("embeddings: write failed for '" + path.string() + "'");

  std::ofstream ids(ids_path_for(path), std::ios::binary);
  if (!ids) throw Error("embeddings: cannot write '" + ids_path_for(path).string() + "'");
  for (const auto& id : matrix.ids()) ids << id << '\n';
}

EmbeddingMatrix read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("embeddings: cannot open '" + path.string() + "'");
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4) || magic != kMagic) {
    throw Error("embeddings: bad magic in '" + path.string() + "'");
  }
  std::uint32_t n = 0;
  std::uint32_t d = 0;
  if (!get_u32(in, n) || !get_u32(in, d)) throw Error("embeddings: truncated header");
  if (d == 0) throw Error("embeddings: dimension must be >= 1");
  RowMatrixF data(n, d);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t j = 0; j < d; ++j) {
      std::uint32_t bits = 0;
      if (!get_u32(in, bits)) {
        throw Error("embeddings: dimension mismatch, file holds fewer than " + std::to_string(n) +
                    "x" + std::to_string(d) + " values");
      }
      data(i, j) = std::bit_cast<float>(bits);
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw Error("embeddings: dimension mismatch, trailing bytes after " + std::to_string(n) + "x" +
                std::to_string(d) + " values");
  }

  std::ifstream id_in(ids_path_for(path));
  if (!id_in) throw Error("embeddings: cannot open id file '" + ids_path_for(path).string() + "'");
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(id_in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) ids.push_back(line);
  }
  if (ids.size() != n) {
    throw Error("embeddings: id count " + std::to_string(ids.size()) + " != row count " +
                std::to_string(n));
  }
  return EmbeddingMatrix(std::move(ids), std::move(data));
}

EmbeddingMatrix l2_normalize(const EmbeddingMatrix& matrix) {
  RowMatrixF out = matrix.data();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double n = row_norm(out, r);
    if (n == 0.0) throw Error("l2_normalize: row " + std::to_string(r) + " is zero");
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
      out(r, j) = static_cast<float>(double{out(r, j)} / n);
    }
  }
  return EmbeddingMatrix(matrix.ids(), std::move(out), true);
}

double cosine(const RowMatrixF& a, std::size_t row_a, const RowMatrixF& b, std::size_t row_b) {
  const auto ra = static_cast<Eigen::Index>(row_a);
  const auto rb = static_cast<Eigen::Index>(row_b);
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    const double x = a(ra, j);
    const double y = b(rb, j);
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  const double denom = std::sqrt(na) * std::sqrt(nb);
  return denom > 0.0 ? dot / denom : 0.0;
}

NeighborList cosine_knn(const EmbeddingMatrix& queries, const EmbeddingMatrix& gallery,
                        std::size_t k, bool exclude_self) {
  if (queries.dim() != gallery.dim()) {
    throw Error("cosine_knn: dimension mismatch (" + std::to_string(queries.dim()) + " vs " +
                std::to_string(gallery.dim()) + ")");
  }
  const std::size_t nq = queries.rows();
  std::vector<std::ptrdiff_t> self(nq, -1);
  for (std::size_t q = 0; q < nq; ++q) {
    const auto& id = queries.ids()[q];
    if (gallery.contains(id)) {
      self[q] = static_cast<std::ptrdiff_t>(gallery.row_of(id));
    } else if (exclude_self) {
      throw Error("cosine_knn: query '" + id + "' is not in the gallery");
    }
  }
  const std::size_t available = gallery.rows() - (exclude_self && nq > 0 ? 1 : 0);
  if (k > available) {
    throw Error("cosine_knn: k=" + std::to_string(k) + " exceeds " + std::to_string(available) +
                " available gallery rows");
  }

  NeighborList result;
  result.neighbors.resize(nq);
  parallel_for(nq, [&](std::size_t q) {
    std::vector<Neighbor> all;
    all.reserve(gallery.rows());
    for (std::size_t g = 0; g < gallery.rows(); ++g) {
      if (exclude_self && static_cast<std::ptrdiff_t>(g) == self[q]) continue;
      all.push_back({g, cosine(queries.data(), q, gallery.data(), g)});
    }
    auto better = [](const Neighbor& a, const Neighbor& b) {
      return a.similarity > b.similarity || (a.similarity == b.similarity && a.index < b.index);
    };
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), better);
    all.resize(k);
    result.neighbors[q] = std::move(all);
  });
  return result;
}

}  // namespace splitmetric
