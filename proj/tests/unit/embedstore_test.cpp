#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include <gtest/gtest.h>

#include "splitmetric/embedstore.hpp"
#include "splitmetric/error.hpp"
#include "splitmetric/rng.hpp"

namespace splitmetric {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "splitmetric_embedstore_test";
  fs::create_directories(dir);
  return dir / name;
}

std::vector<std::string> make_ids(std::size_t n) {
  std::vector<std::string> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = "img" + std::to_string(i);
  return ids;
}

EmbeddingMatrix random_matrix(std::size_t n, std::size_t d, std::uint64_t seed, bool normalize = true) {
  SplitMix64 rng(seed);
  RowMatrixF data(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < data.size(); ++i) data.data()[i] = static_cast<float>(rng.normal());
  EmbeddingMatrix m(make_ids(n), data);
  return normalize ? l2_normalize(m) : m;
}

TEST(EmbeddingMatrix, Validation) {
  RowMatrixF two(2, 3);
  two.setOnes();
  EXPECT_THROW(EmbeddingMatrix({"a", "a"}, two), Error);
  EXPECT_THROW(EmbeddingMatrix({"a"}, two), Error);
  EXPECT_THROW(EmbeddingMatrix({"a", "b"}, two, true), Error);
  EXPECT_THROW(EmbeddingMatrix({}, RowMatrixF(0, 0)), Error);
  EXPECT_NO_THROW(EmbeddingMatrix({}, RowMatrixF(0, 4)));
}

TEST(EmbeddingIO, RoundTripIsBitExact) {
  RowMatrixF data(2, 3);
  data << 1.5f, -0.0f, 3.25e-7f, std::numeric_limits<float>::min(), 7.0f, -1e30f;
  const EmbeddingMatrix m({"x.jpg", "y.jpg"}, data);
  const auto path = scratch("rt.emb");
  write_embeddings(m, path);
  const auto back = read_embeddings(path);
  EXPECT_EQ(back.ids(), m.ids());
  ASSERT_EQ(back.rows(), 2u);
  ASSERT_EQ(back.dim(), 3u);
  EXPECT_EQ(std::memcmp(back.data().data(), data.data(), sizeof(float) * 6), 0);
  EXPECT_TRUE(fs::exists(scratch("rt.ids")));
}

TEST(EmbeddingIO, HeaderLayout) {
  RowMatrixF data(1, 2);
  data << 1.0f, 2.0f;
  const auto path = scratch("layout.emb");
  write_embeddings(EmbeddingMatrix({"a"}, data), path);
  std::ifstream in(path, std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), {});
  ASSERT_EQ(bytes.size(), 4u + 4u + 4u + 8u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "EMB1");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[8], 2);
  EXPECT_EQ(bytes[16 + 3], 0x40);  // 2.0f little-endian high byte
}

TEST(EmbeddingIO, EmptyMatrixRoundTrips) {
  const EmbeddingMatrix m({}, RowMatrixF(0, 5));
  const auto path = scratch("empty.emb");
  write_embeddings(m, path);
  const auto back = read_embeddings(path);
  EXPECT_EQ(back.rows(), 0u);
  EXPECT_EQ(back.dim(), 5u);
}

TEST(EmbeddingIO, TruncatedFileIsDimensionMismatch) {
  const auto path = scratch("trunc.emb");
  write_embeddings(random_matrix(4, 3, 1), path);
  fs::resize_file(path, fs::file_size(path) - 4);
  try {
    read_embeddings(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("dimension mismatch"), std::string::npos);
  }
}

TEST(EmbeddingIO, BadMagicAndIdCount) {
  const auto path = scratch("magic.emb");
  write_embeddings(random_matrix(2, 2, 1), path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("EMB2", 4);
  }
  EXPECT_THROW(read_embeddings(path), Error);

  write_embeddings(random_matrix(2, 2, 1), path);
  std::ofstream(ids_path_for(path)) << "only_one\n";
  EXPECT_THROW(read_embeddings(path), Error);
}

TEST(L2Normalize, PythagoreanRow) {
  RowMatrixF data(1, 2);
  data << 3.0f, 4.0f;
  const auto n = l2_normalize(EmbeddingMatrix({"a"}, data));
  EXPECT_TRUE(n.normalized());
  EXPECT_NEAR(n.data()(0, 0), 0.6f, 1e-7);
  EXPECT_NEAR(n.data()(0, 1), 0.8f, 1e-7);
}

TEST(L2Normalize, IdempotentOnUnitRows) {
  const auto once = random_matrix(20, 7, 3);
  const auto twice = l2_normalize(once);
  EXPECT_LE((once.data() - twice.data()).cwiseAbs().maxCoeff(), 1e-7f);
}

TEST(L2Normalize, ZeroRowNamesIndex) {
  RowMatrixF data(2, 2);
  data << 1.0f, 0.0f, 0.0f, 0.0f;
  try {
    l2_normalize(EmbeddingMatrix({"a", "b"}, data));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos);
  }
}

TEST(CosineKnn, DuplicateRowIsNearest) {
  RowMatrixF data(3, 2);
  data << 1, 0, 0, 1, 1, 0;
  const EmbeddingMatrix m(make_ids(3), data, true);
  const auto nl = cosine_knn(m, m, 1, true);
  EXPECT_EQ(nl.neighbors[0][0].index, 2u);
  EXPECT_DOUBLE_EQ(nl.neighbors[0][0].similarity, 1.0);
  EXPECT_EQ(nl.neighbors[2][0].index, 0u);
}

TEST(CosineKnn, OrthonormalGallery) {
  const EmbeddingMatrix g(make_ids(4), RowMatrixF::Identity(4, 4), true);
  RowMatrixF q(1, 4);
  q << 0, 0, 1, 0;
  const auto nl = cosine_knn(EmbeddingMatrix({"q"}, q, true), g, 1, false);
  EXPECT_EQ(nl.neighbors[0][0].index, 2u);
  EXPECT_DOUBLE_EQ(nl.neighbors[0][0].similarity, 1.0);
}

TEST(CosineKnn, KTooLargeWithExclusion) {
  const auto m = random_matrix(5, 3, 2);
  EXPECT_THROW(cosine_knn(m, m, 5, true), Error);
  EXPECT_NO_THROW(cosine_knn(m, m, 4, true));
  EXPECT_NO_THROW(cosine_knn(m, m, 5, false));
}

TEST(CosineKnn, TiesGoToLowerIndex) {
  RowMatrixF data(4, 2);
  data << 1, 0, 1, 0, 1, 0, 0, 1;
  const EmbeddingMatrix m(make_ids(4), data, true);
  const auto nl = cosine_knn(m, m, 2, true);
  EXPECT_EQ(nl.neighbors[2][0].index, 0u);
  EXPECT_EQ(nl.neighbors[2][1].index, 1u);
  EXPECT_EQ(nl.neighbors[3][0].index, 0u);
}

// O(N^2) oracle: full sort of every row by (similarity desc, index asc).
std::vector<std::vector<Neighbor>> brute_knn(const EmbeddingMatrix& q, const EmbeddingMatrix& g,
                                             std::size_t k, bool exclude_self) {
  std::vector<std::vector<Neighbor>> out(q.rows());
  for (std::size_t i = 0; i < q.rows(); ++i) {
    std::vector<Neighbor> all;
    for (std::size_t j = 0; j < g.rows(); ++j) {
      if (exclude_self && g.ids()[j] == q.ids()[i]) continue;
      all.push_back({j, cosine(q.data(), i, g.data(), j)});
    }
    std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
      return a.similarity != b.similarity ? a.similarity > b.similarity : a.index < b.index;
    });
    all.resize(k);
    out[i] = all;
  }
  return out;
}

TEST(CosineKnn, MatchesBruteForce) {
  SplitMix64 rng(99);
  for (std::uint64_t trial = 0; trial < 30; ++trial) {
    const std::size_t n = 2 + rng.below(299);
    const std::size_t d = 1 + rng.below(12);
    const std::size_t k = 1 + rng.below(std::min<std::size_t>(n - 1, 10));
    auto m = random_matrix(n, d, trial);
    // Plant exact duplicates so that ties occur.
    RowMatrixF data = m.data();
    for (std::size_t i = 0; i < n / 10; ++i) data.row(static_cast<Eigen::Index>(rng.below(n))) = data.row(0);
    m = EmbeddingMatrix(m.ids(), data, true);
    const auto got = cosine_knn(m, m, k, true);
    const auto want = brute_knn(m, m, k, true);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        ASSERT_EQ(got.neighbors[i][j].index, want[i][j].index) << "trial " << trial;
        ASSERT_EQ(got.neighbors[i][j].similarity, want[i][j].similarity);
      }
    }
  }
}

TEST(CosineKnn, ResultsSortedAndDistinct) {
  const auto m = random_matrix(100, 5, 4);
  const auto nl = cosine_knn(m, m, 10, true);
  for (std::size_t i = 0; i < nl.neighbors.size(); ++i) {
    const auto& row = nl.neighbors[i];
    std::set<std::size_t> seen;
    for (std::size_t j = 0; j < row.size(); ++j) {
      EXPECT_NE(row[j].index, i);
      EXPECT_TRUE(seen.insert(row[j].index).second);
      if (j > 0) EXPECT_GE(row[j - 1].similarity, row[j].similarity);
    }
  }
}

TEST(CosineKnn, ScalingInvariance) {
  const auto m = random_matrix(80, 6, 5, false);
  RowMatrixF scaled = m.data();
  SplitMix64 rng(5);
  for (Eigen::Index r = 0; r < scaled.rows(); ++r) scaled.row(r) *= static_cast<float>(0.1 + 10 * rng.uniform());
  const EmbeddingMatrix g2(m.ids(), scaled);
  const auto a = cosine_knn(m, m, 5, true);
  const auto b = cosine_knn(m, g2, 5, true);
  for (std::size_t i = 0; i < a.neighbors.size(); ++i) {
    for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(a.neighbors[i][j].index, b.neighbors[i][j].index);
  }
}

TEST(Cosine, Symmetric) {
  const auto m = random_matrix(50, 9, 6, false);
  for (std::size_t i = 0; i < 50; ++i) {
    for (std::size_t j = 0; j < 50; ++j) {
      EXPECT_NEAR(cosine(m.data(), i, m.data(), j), cosine(m.data(), j, m.data(), i), 1e-12);
    }
  }
}

TEST(CosineKnn, DimensionMismatchAndMissingSelf) {
  const auto a = random_matrix(3, 2, 1);
  const auto b = random_matrix(3, 4, 1);
  EXPECT_THROW(cosine_knn(a, b, 1, false), Error);
  RowMatrixF q(1, 2);
  q << 1, 0;
  EXPECT_THROW(cosine_knn(EmbeddingMatrix({"stranger"}, q), a, 1, true), Error);
}

TEST(EmbeddingMatrix, SelectKeepsOrder) {
  const auto m = random_matrix(5, 3, 7);
  const auto s = m.select({"img3", "img1"});
  EXPECT_EQ(s.ids(), (std::vector<std::string>{"img3", "img1"}));
  EXPECT_EQ(s.data().row(0), m.data().row(3));
  EXPECT_TRUE(s.normalized());
  EXPECT_THROW(m.select({"nope"}), Error);
}

}  // namespace
}  // namespace splitmetric
