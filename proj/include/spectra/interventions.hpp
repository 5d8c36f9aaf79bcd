#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "spectra/error.hpp"
#include "spectra/matrix.hpp"
#include "spectra/rng.hpp"
#include "spectra/svd.hpp"

namespace spectra {

// Counterfactual weights built from edited singular vectors. Every operation
// keeps the receiving factorization's singular values and rebuilds the matrix
// as the rank-1 sum Σ σᵢ uᵢ vᵢᵀ over the edited columns.

enum class Side { Left, Right, Both };
enum class MaskDirection { TopDown, BottomUp };

namespace detail {

inline void require_same_shape(const SvdFactorization& a, const SvdFactorization& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()) +
                     (a.layer.empty() ? std::string() : " in layer " + a.layer));
  }
}

inline void copy_column(Matrix& dst, const Matrix& src, std::size_t j) {
  for (std::size_t i = 0; i < dst.rows(); ++i) dst(i, j) = src(i, j);
}

}  // namespace detail

// Target's Σ everywhere; at the given ranks, the selected side(s) come from donor.
inline Matrix replace_vectors(const SvdFactorization& target, const SvdFactorization& donor, const RankSet& ranks,
                              Side side = Side::Both) {
  detail::require_same_shape(target, donor, "replace_vectors");
  ranks.require_within(target.rank());
  SvdFactorization edited = target;
  for (std::size_t i : ranks) {
    if (side != Side::Right) detail::copy_column(edited.u, donor.u, i);
    if (side != Side::Left) detail::copy_column(edited.v, donor.v, i);
  }
  return reconstruct(edited);
}

// Exchanges both left and right vectors at the given ranks; each output keeps
// its own singular values. Returns (a with b's vectors, b with a's vectors).
inline std::pair<Matrix, Matrix> swap_vectors(const SvdFactorization& a, const SvdFactorization& b,
                                              const RankSet& ranks) {
  detail::require_same_shape(a, b, "swap_vectors");
  ranks.require_within(a.rank());
  return {replace_vectors(a, b, ranks, Side::Both), replace_vectors(b, a, ranks, Side::Both)};
}

// Drops the rank-1 components at the given ranks.
inline Matrix zero_vectors(const SvdFactorization& f, const RankSet& ranks) {
  ranks.require_within(f.rank());
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < f.rank(); ++i)
    if (!ranks.contains(i)) keep.push_back(i);
  return reconstruct(f, RankSet(std::move(keep)));
}

// The factorization with uᵢ, vᵢ (i ∈ ranks) replaced by independent unit-norm
// Gaussian vectors. The result is generally not orthonormal. Stream for rank i
// is SplitMix64(derive_seed(seed, f.layer, i)): m normals for uᵢ, then n for vᵢ.
inline SvdFactorization randomized_factorization(const SvdFactorization& f, const RankSet& ranks, std::uint64_t seed) {
  ranks.require_within(f.rank());
  SvdFactorization out = f;
  for (std::size_t i : ranks) {
    SplitMix64 rng(derive_seed(seed, f.layer, i));
    std::vector<double> u(f.rows()), v(f.cols());
    for (double& x : u) x = rng.normal();
    for (double& x : v) x = rng.normal();
    const double nu = norm2(u), nv = norm2(v);
    for (double& x : u) x /= nu;
    for (double& x : v) x /= nv;
    out.u.set_column(i, u);
    out.v.set_column(i, v);
  }
  return out;
}

inline Matrix randomize_vectors(const SvdFactorization& f, const RankSet& ranks, std::uint64_t seed) {
  return reconstruct(randomized_factorization(f, ranks, seed));
}

inline RankSet mask_ranks(std::size_t p, std::size_t count, MaskDirection direction) {
  if (count > p) {
    throw InvalidArgument("mask count " + std::to_string(count) + " exceeds rank " + std::to_string(p));
  }
  return direction == MaskDirection::TopDown ? RankSet::range(0, count) : RankSet::range(p - count, p);
}

// TopDown removes ranks [0, count); BottomUp removes [p − count, p).
inline Matrix mask_by_order(const SvdFactorization& f, std::size_t count, MaskDirection direction) {
  return zero_vectors(f, mask_ranks(f.rank(), count, direction));
}

}  // namespace spectra
