#include <gtest/gtest.h>

#include "spectra/interventions.hpp"
#include "spectra/spectral_diag.hpp"
#include "spectra/tensor_store.hpp"
#include "test_util.hpp"

using namespace spectra;
using namespace spectra::testing;

namespace {

// Σᵢ σᵢ uᵢ vᵢᵀ summed entry by entry.
Matrix rank_one_sum(const Matrix& u, const std::vector<double>& s, const Matrix& v) {
  Matrix w(u.rows(), v.rows());
  for (std::size_t k = 0; k < s.size(); ++k)
    for (std::size_t i = 0; i < u.rows(); ++i)
      for (std::size_t j = 0; j < v.rows(); ++j) w(i, j) += s[k] * u(i, k) * v(j, k);
  return w;
}

SvdFactorization with_columns_from(SvdFactorization f, const SvdFactorization& donor, const RankSet& ranks) {
  for (std::size_t i : ranks) {
    f.u.set_column(i, donor.u.column(i));
    f.v.set_column(i, donor.v.column(i));
  }
  return f;
}

}  // namespace

TEST(Replace, DonorEqualsTargetAndEmptyRanks) {
  const Matrix w = random_normal_matrix(6, 4, 1);
  const auto f = svd(w);
  const auto g = svd(random_normal_matrix(6, 4, 2));
  EXPECT_LE(max_abs_diff(replace_vectors(f, f, RankSet::range(0, 4)), w), 1e-10);
  EXPECT_LE(max_abs_diff(replace_vectors(f, g, RankSet{}), w), 1e-10);
}

TEST(Replace, DiagonalTargetWithPermutedDonor) {
  const std::vector<double> d = {3.0, 2.0};
  const auto target = svd(Matrix::diagonal(d));
  SvdFactorization donor = target;
  donor.u = Matrix(2, 2, {1, 1, 0, 0});  // u₂ := e₁
  donor.v = Matrix(2, 2, {1, 1, 0, 0});  // v₂ := e₁
  const Matrix out = replace_vectors(target, donor, RankSet({1}));
  Matrix want(2, 2);
  want(0, 0) = 3.0 + 2.0;  // 3e₁e₁ᵀ + 2e₁e₁ᵀ
  EXPECT_LE(max_abs_diff(out, want), 1e-15);
}

TEST(Replace, SidesUseTheRightColumns) {
  const auto a = svd(random_normal_matrix(5, 4, 3));
  const auto b = svd(random_normal_matrix(5, 4, 4));
  const RankSet r({0, 2});
  Matrix ul = a.u, vr = a.v;
  for (std::size_t i : r) {
    ul.set_column(i, b.u.column(i));
    vr.set_column(i, b.v.column(i));
  }
  EXPECT_LE(max_abs_diff(replace_vectors(a, b, r, Side::Left), rank_one_sum(ul, a.s, a.v)), 1e-12);
  EXPECT_LE(max_abs_diff(replace_vectors(a, b, r, Side::Right), rank_one_sum(a.u, a.s, vr)), 1e-12);
  EXPECT_LE(max_abs_diff(replace_vectors(a, b, r, Side::Both), rank_one_sum(ul, a.s, vr)), 1e-12);
}

TEST(Replace, Errors) {
  const auto a = svd(random_normal_matrix(5, 4, 3));
  const auto b = svd(random_normal_matrix(4, 5, 4));
  EXPECT_THROW(replace_vectors(a, b, RankSet({0})), ShapeError);
  EXPECT_THROW(replace_vectors(a, a, RankSet({4})), InvalidArgument);
}

TEST(Swap, MatchesRankOneOracle) {
  const auto a = svd(random_normal_matrix(6, 4, 3));
  const auto b = svd(random_normal_matrix(6, 4, 4));
  const RankSet r({0, 1});
  const auto [x, y] = swap_vectors(a, b, r);
  const auto ea = with_columns_from(a, b, r), eb = with_columns_from(b, a, r);
  EXPECT_LE(max_abs_diff(x, rank_one_sum(ea.u, a.s, ea.v)), 1e-12);
  EXPECT_LE(max_abs_diff(y, rank_one_sum(eb.u, b.s, eb.v)), 1e-12);
}

TEST(Swap, SameInputsAndFullExchange) {
  const std::vector<double> s = {4.0, 2.0, 1.0};
  const Matrix wa = matrix_with_spectrum(5, 3, s, 1), wb = matrix_with_spectrum(5, 3, s, 2);
  const auto a = svd(wa), b = svd(wb);
  const auto [aa, aa2] = swap_vectors(a, a, RankSet::range(0, 3));
  EXPECT_LE(max_abs_diff(aa, wa), 1e-10);
  EXPECT_LE(max_abs_diff(aa2, wa), 1e-10);
  const auto [x, y] = swap_vectors(a, b, RankSet::range(0, 3));
  EXPECT_LE(max_abs_diff(x, wb), 1e-10);
  EXPECT_LE(max_abs_diff(y, wa), 1e-10);
}

TEST(Swap, InvolutionWithEqualSpectra) {
  const std::vector<double> s = {5.0, 3.0, 2.0, 1.0};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto a = svd(matrix_with_spectrum(7, 4, s, 2 * seed));
    const auto b = svd(matrix_with_spectrum(7, 4, s, 2 * seed + 1));
    // Full exchange, re-factorized, swapped back.
    const auto [x, y] = swap_vectors(a, b, RankSet::range(0, 4));
    const auto [xx, yy] = swap_vectors(svd(x), svd(y), RankSet::range(0, 4));
    EXPECT_LE(max_abs_diff(xx, reconstruct(a)), 1e-10);
    EXPECT_LE(max_abs_diff(yy, reconstruct(b)), 1e-10);
    // Partial exchange at the factorization level.
    const RankSet r({1, 3});
    const auto [px, py] = swap_vectors(with_columns_from(a, b, r), with_columns_from(b, a, r), r);
    EXPECT_LE(max_abs_diff(px, reconstruct(a)), 1e-10);
    EXPECT_LE(max_abs_diff(py, reconstruct(b)), 1e-10);
  }
}

TEST(Zero, ExamplesAndErrorIdentity) {
  const std::vector<double> d = {3.0, 2.0, 1.0}, d2 = {3.0, 2.0, 0.0};
  const auto f = svd(Matrix::diagonal(d));
  EXPECT_LE(max_abs_diff(zero_vectors(f, RankSet({2})), Matrix::diagonal(d2)), 1e-15);
  EXPECT_LE(max_abs_diff(zero_vectors(f, RankSet{}), Matrix::diagonal(d)), 1e-15);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix w = random_normal_matrix(8, 5, seed);
    const auto g = svd(w);
    const RankSet r({0, 3});
    const double err = frobenius(w - zero_vectors(g, r));
    const double want = g.s[0] * g.s[0] + g.s[3] * g.s[3];
    EXPECT_NEAR(err * err, want, 1e-10 * want);
  }
  EXPECT_THROW(zero_vectors(f, RankSet({3})), InvalidArgument);
}

TEST(Zero, EmptyRanksKeepSpectrum) {
  const Matrix w = random_normal_matrix(6, 5, 8);
  const auto f = svd(w);
  const auto g = svd(zero_vectors(f, RankSet{}));
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(g.s[i], f.s[i], 1e-12 * f.s[0]);
}

TEST(Randomize, DeterministicUnitNormAndSigmaKept) {
  SvdFactorization f = svd(random_normal_matrix(7, 5, 9), "enc.w");
  const RankSet r({0, 2, 4});
  const Matrix a = randomize_vectors(f, r, 42), b = randomize_vectors(f, r, 42);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, randomize_vectors(f, r, 43));
  const auto rf = randomized_factorization(f, r, 42);
  for (std::size_t i : r) {
    EXPECT_NEAR(norm2(rf.u.column(i)), 1.0, 1e-12);
    EXPECT_NEAR(norm2(rf.v.column(i)), 1.0, 1e-12);
  }
  EXPECT_EQ(rf.s, f.s);
  EXPECT_EQ(rf.u.column(1), f.u.column(1));
  EXPECT_LE(max_abs_diff(randomize_vectors(f, RankSet{}, 1), reconstruct(f)), 1e-15);
  // The stream is keyed by layer name as well as rank.
  SvdFactorization renamed = f;
  renamed.layer = "dec.w";
  EXPECT_NE(randomize_vectors(renamed, r, 42), a);
}

TEST(Randomize, StreamLayoutIsLeftThenRight) {
  const auto f = svd(random_normal_matrix(4, 3, 1), "x");
  const auto rf = randomized_factorization(f, RankSet({1}), 5);
  SplitMix64 rng(derive_seed(5, "x", 1));
  std::vector<double> u(4), v(3);
  for (double& x : u) x = rng.normal();
  for (double& x : v) x = rng.normal();
  const double nu = norm2(u), nv = norm2(v);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(rf.u(i, 1), u[i] / nu);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(rf.v(i, 1), v[i] / nv);
}

TEST(Mask, Examples) {
  const std::vector<double> d = {3.0, 2.0, 1.0};
  const auto f = svd(Matrix::diagonal(d));
  const std::vector<double> bottom = {3.0, 2.0, 0.0}, top = {0.0, 2.0, 1.0};
  EXPECT_LE(max_abs_diff(mask_by_order(f, 1, MaskDirection::BottomUp), Matrix::diagonal(bottom)), 1e-15);
  EXPECT_LE(max_abs_diff(mask_by_order(f, 1, MaskDirection::TopDown), Matrix::diagonal(top)), 1e-15);
  EXPECT_LE(max_abs_diff(mask_by_order(f, 0, MaskDirection::TopDown), Matrix::diagonal(d)), 1e-15);
  EXPECT_EQ(mask_by_order(f, 3, MaskDirection::BottomUp), Matrix(3, 3));
  EXPECT_THROW(mask_by_order(f, 4, MaskDirection::TopDown), InvalidArgument);
}

TEST(Mask, BottomUpErrorMatchesExplainedVariance) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix w = random_normal_matrix(9, 6, seed);
    const auto f = svd(w);
    const double total = frobenius(w) * frobenius(w);
    for (std::size_t k = 0; k <= 6; ++k) {
      const double err = frobenius(w - mask_by_order(f, 6 - k, MaskDirection::BottomUp));
      EXPECT_NEAR(explained_variance(f.s, k) + err * err / total, 1.0, 1e-10);
    }
  }
}

TEST(Interventions, CheckpointRoundTripIsByteIdentical) {
  CheckpointManifest m;
  const auto f = svd(random_normal_matrix(6, 5, 3), "w");
  m.entries["w"] = TensorRecord::from_matrix(randomize_vectors(f, RankSet({0, 1}), 7));
  m.metadata["spectra.mode"] = "randomize";
  const auto bytes = serialize_checkpoint(m, DType::F64);
  EXPECT_EQ(serialize_checkpoint(parse_checkpoint(bytes), DType::F64), bytes);
}
