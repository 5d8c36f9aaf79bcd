#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "spectra/svd.hpp"
#include "test_util.hpp"

using namespace spectra;
using namespace spectra::testing;

namespace {

double orthonormality_error(const Matrix& q) {
  const Matrix g = naive_matmul(naive_transpose(q), q);
  return max_abs_diff(g, Matrix::identity(q.cols()));
}

void expect_invariants(const Matrix& w, const SvdFactorization& f, const std::string& ctx) {
  const std::size_t p = std::min(w.rows(), w.cols());
  ASSERT_EQ(f.rank(), p) << ctx;
  ASSERT_EQ(f.u.rows(), w.rows()) << ctx;
  ASSERT_EQ(f.v.rows(), w.cols()) << ctx;
  EXPECT_LE(orthonormality_error(f.u), 1e-10) << ctx;
  EXPECT_LE(orthonormality_error(f.v), 1e-10) << ctx;
  for (std::size_t i = 0; i < p; ++i) {
    EXPECT_GE(f.s[i], 0.0) << ctx;
    if (i + 1 < p) {
      EXPECT_GE(f.s[i], f.s[i + 1]) << ctx;
    }
    const auto col = f.u.column(i);
    EXPECT_GE(col[detail::pivot_index(col)], 0.0) << ctx << " rank " << i;
  }
  EXPECT_LE(frobenius(w - reconstruct(f)), 1e-10 * std::max(1.0, frobenius(w))) << ctx;
}

}  // namespace

TEST(Svd, Identity) {
  const auto f = svd(Matrix::identity(2));
  EXPECT_EQ(f.s, (std::vector<double>{1.0, 1.0}));
  EXPECT_LE(max_abs_diff(matmul(f.u, f.v.transposed()), Matrix::identity(2)), 1e-15);
}

TEST(Svd, DiagonalIsItsOwnFactorization) {
  const std::vector<double> d = {3.0, 2.0};
  const auto f = svd(Matrix::diagonal(d));
  EXPECT_EQ(f.s, d);
  EXPECT_EQ(f.u, Matrix::identity(2));
  EXPECT_EQ(f.v, Matrix::identity(2));
}

TEST(Svd, MatchesEigenOracleOnRandom5x3) {
  const Matrix w = random_normal_matrix(5, 3, 7);
  const auto f = svd(w);
  const auto oracle = oracle_singular_values(w);
  ASSERT_EQ(oracle.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(f.s[i], oracle[i], 1e-8 * oracle[i]);
  expect_invariants(w, f, "5x3 seed 7");
}

TEST(Svd, InvariantsOnRandomShapes) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    SplitMix64 rng(seed);
    const std::size_t m = 1 + rng.next() % 12, n = 1 + rng.next() % 12;
    const Matrix w = random_normal_matrix(m, n, seed + 1000);
    expect_invariants(w, svd(w), "seed " + std::to_string(seed));
  }
}

TEST(Svd, RankDeficientAndZeroMatrices) {
  // Rank 2 in a 7×5 matrix: columns 2..4 are combinations of 0 and 1.
  Matrix w = random_normal_matrix(7, 5, 4);
  for (std::size_t i = 0; i < 7; ++i) {
    w(i, 2) = w(i, 0) + w(i, 1);
    w(i, 3) = 2 * w(i, 0);
    w(i, 4) = -w(i, 1);
  }
  const auto f = svd(w);
  expect_invariants(w, f, "rank 2");
  EXPECT_EQ(f.s[2], 0.0);
  EXPECT_EQ(f.s[4], 0.0);

  const auto z = svd(Matrix(3, 4));
  expect_invariants(Matrix(3, 4), z, "zero");
  for (double s : z.s) EXPECT_EQ(s, 0.0);
}

TEST(Svd, ScaleEquivariance) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix w = random_normal_matrix(9, 6, seed);
    const auto f = svd(w);
    for (double c : {-3.5, 0.25, 7.0}) {
      const auto g = svd(w * c);
      for (std::size_t i = 0; i < f.rank(); ++i) EXPECT_NEAR(g.s[i], std::abs(c) * f.s[i], 1e-12 * std::abs(c) * f.s[i]);
    }
  }
}

TEST(Svd, DeterministicBytes) {
  const Matrix w = random_normal_matrix(13, 11, 99);
  const auto a = svd(w), b = svd(w);
  EXPECT_EQ(a.u, b.u);
  EXPECT_EQ(a.v, b.v);
  EXPECT_EQ(a.s, b.s);
}

TEST(Svd, WideMatrixMatchesTransposeSpectrum) {
  const Matrix w = random_normal_matrix(4, 9, 21);
  const auto f = svd(w), g = svd(w.transposed());
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(f.s[i], g.s[i], 1e-13 * f.s[0]);
  expect_invariants(w, f, "wide");
}

TEST(Svd, ErrorsCarryLayerName) {
  Matrix bad(2, 2);
  bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    svd(bad, "enc.ffn");
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("enc.ffn"), std::string::npos);
  }
  SvdOptions tight;
  tight.max_sweeps = 1;
  try {
    svd(random_normal_matrix(20, 20, 1), "slow.layer", tight);
    FAIL();
  } catch (const ConvergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("slow.layer"), std::string::npos);
  }
}

TEST(Reconstruct, KeepSets) {
  const std::vector<double> d = {3.0, 2.0, 1.0};
  const Matrix w = Matrix::diagonal(d);
  const auto f = svd(w);
  EXPECT_LE(max_abs_diff(reconstruct(f), w), 1e-15);
  EXPECT_EQ(reconstruct(f, RankSet{}), Matrix(3, 3));
  const std::vector<double> d2 = {3.0, 2.0, 0.0};
  EXPECT_LE(max_abs_diff(reconstruct(f, RankSet({0, 1})), Matrix::diagonal(d2)), 1e-15);
  EXPECT_THROW(reconstruct(f, RankSet({3})), InvalidArgument);
}

TEST(MatrixHelpers, FrobeniusAndGap) {
  const std::vector<double> d34 = {3.0, 4.0};
  EXPECT_DOUBLE_EQ(frobenius(Matrix::diagonal(d34)), 5.0);
  const std::vector<double> d321 = {3.0, 2.0, 1.0};
  const auto f = svd(Matrix::diagonal(d321));
  EXPECT_DOUBLE_EQ(spectral_gap(f, 0), 1.0);
  EXPECT_DOUBLE_EQ(spectral_gap(f, 2), 1.0);  // σ_p = 0
  EXPECT_THROW(spectral_gap(f, 3), InvalidArgument);
}

TEST(MatrixHelpers, GapsMatchOracleOnRandom6x6) {
  const Matrix w = random_normal_matrix(6, 6, 17);
  const auto f = svd(w);
  const auto s = oracle_singular_values(w);
  for (std::size_t i = 0; i < 6; ++i) {
    const double want = s[i] - (i + 1 < 6 ? s[i + 1] : 0.0);
    EXPECT_NEAR(spectral_gap(f, i), want, 1e-10 * s[0]);
    EXPECT_GE(spectral_gap(f, i), 0.0);
  }
}

TEST(Degeneracy, FlagsEqualNeighbours) {
  const std::vector<double> d = {3.0, 2.0, 2.0, 1.0};
  const auto f = svd(Matrix::diagonal(d));
  EXPECT_FALSE(is_degenerate(f, 0));
  EXPECT_TRUE(is_degenerate(f, 1));
  EXPECT_TRUE(is_degenerate(f, 2));
  EXPECT_FALSE(is_degenerate(f, 3));
}
