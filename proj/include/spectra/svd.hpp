#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "spectra/error.hpp"
#include "spectra/matrix.hpp"

namespace spectra {

// Sorted, duplicate-free list of rank indices.
class RankSet {
 public:
  RankSet() = default;
  explicit RankSet(std::vector<std::size_t> indices) : indices_(std::move(indices)) {
    std::sort(indices_.begin(), indices_.end());
    indices_.erase(std::unique(indices_.begin(), indices_.end()), indices_.end());
  }

  // Half-open range [begin, end).
  static RankSet range(std::size_t begin, std::size_t end) {
    std::vector<std::size_t> v;
    for (std::size_t i = begin; i < end; ++i) v.push_back(i);
    return RankSet(std::move(v));
  }

  const std::vector<std::size_t>& indices() const noexcept { return indices_; }
  std::size_t size() const noexcept { return indices_.size(); }
  bool empty() const noexcept { return indices_.empty(); }
  bool contains(std::size_t i) const noexcept { return std::binary_search(indices_.begin(), indices_.end(), i); }
  auto begin() const noexcept { return indices_.begin(); }
  auto end() const noexcept { return indices_.end(); }

  // Throws InvalidArgument if any index is >= p.
  void require_within(std::size_t p) const {
    if (!indices_.empty() && indices_.back() >= p) {
      throw InvalidArgument("rank index " + std::to_string(indices_.back()) + " out of range [0, " +
                            std::to_string(p) + ")");
    }
  }

  friend bool operator==(const RankSet&, const RankSet&) = default;

 private:
  std::vector<std::size_t> indices_;
};

// W = U diag(S) Vᵀ with U m×p, V n×p, p = min(m, n).
struct SvdFactorization {
  std::string layer;
  Matrix u;
  std::vector<double> s;
  Matrix v;

  std::size_t rows() const noexcept { return u.rows(); }
  std::size_t cols() const noexcept { return v.rows(); }
  std::size_t rank() const noexcept { return s.size(); }
};

struct SvdOptions {
  int max_sweeps = 60;
  double orthogonality_tol = 1e-14;
};

namespace detail {

// Index of the largest |x|, lowest index on ties.
inline std::size_t pivot_index(std::span<const double> x) noexcept {
  std::size_t best = 0;
  double best_abs = -1.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (std::abs(x[i]) > best_abs) {
      best_abs = std::abs(x[i]);
      best = i;
    }
  }
  return best;
}

// Column-major m×n working copy of a tall matrix plus the accumulated right
// rotations. After jacobi_sweeps() the columns of `a` are mutually orthogonal.
struct JacobiState {
  std::size_t m = 0;
  std::size_t n = 0;
  std::vector<double> a;  // column j at [j*m, (j+1)*m)
  std::vector<double> v;  // column j at [j*n, (j+1)*n)

  std::span<double> acol(std::size_t j) { return {a.data() + j * m, m}; }
  std::span<double> vcol(std::size_t j) { return {v.data() + j * n, n}; }
};

inline void rotate(std::span<double> x, std::span<double> y, double c, double s) noexcept {
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double xk = x[k];
    const double yk = y[k];
    x[k] = c * xk - s * yk;
    y[k] = s * xk + c * yk;
  }
}

inline bool jacobi_sweeps(JacobiState& st, const SvdOptions& opt) {
  for (int sweep = 0; sweep < opt.max_sweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t i = 0; i + 1 < st.n; ++i) {
      for (std::size_t j = i + 1; j < st.n; ++j) {
        auto ai = st.acol(i);
        auto aj = st.acol(j);
        const double alpha = dot(ai, ai);
        const double beta = dot(aj, aj);
        const double gamma = dot(ai, aj);
        if (gamma == 0.0 || std::abs(gamma) <= opt.orthogonality_tol * std::sqrt(alpha) * std::sqrt(beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::hypot(1.0, zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        rotate(ai, aj, c, s);
        rotate(st.vcol(i), st.vcol(j), c, s);
      }
    }
    if (!rotated) return true;
  }
  return false;
}

// Gram-Schmidt of standard basis vectors against the accepted columns; returns
// the first candidate with a substantial orthogonal component.
inline std::vector<double> complete_basis(const std::vector<std::vector<double>>& accepted, std::size_t dim) {
  for (std::size_t k = 0; k < dim; ++k) {
    std::vector<double> e(dim, 0.0);
    e[k] = 1.0;
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& q : accepted) {
        const double proj = dot(q, e);
        for (std::size_t t = 0; t < dim; ++t) e[t] -= proj * q[t];
      }
    }
    const double nrm = norm2(e);
    if (nrm > 0.5) {
      for (double& x : e) x /= nrm;
      return e;
    }
  }
  throw ConvergenceError("unable to complete orthonormal basis");
}

}  // namespace detail

// Full SVD by one-sided (Hestenes) cyclic Jacobi, canonicalized:
//  - S non-increasing; exactly equal values ordered by the pivot index of uᵢ
//  - the largest-|.| entry of each uᵢ (lowest index on ties) is non-negative,
//    vᵢ flipped together with uᵢ
//  - singular values below max(m,n)·eps·σ₁ are set to 0 and their left
//    vectors completed to an orthonormal basis
// Identical input bytes give identical output bytes.
inline SvdFactorization svd(const Matrix& w, std::string_view layer = {}, const SvdOptions& opt = {}) {
  if (w.rows() == 0 || w.cols() == 0) {
    throw InvalidArgument("svd: empty matrix" + (layer.empty() ? std::string() : " in layer " + std::string(layer)));
  }
  if (!all_finite(w.values())) {
    throw InvalidArgument("svd: non-finite entry" + (layer.empty() ? std::string() : " in layer " + std::string(layer)));
  }

  const bool wide = w.rows() < w.cols();
  detail::JacobiState st;
  st.m = wide ? w.cols() : w.rows();
  st.n = wide ? w.rows() : w.cols();
  st.a.resize(st.m * st.n);
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) {
      // tall: column j of W; wide: column i of Wᵀ
      if (wide)
        st.a[i * st.m + j] = w(i, j);
      else
        st.a[j * st.m + i] = w(i, j);
    }
  st.v.assign(st.n * st.n, 0.0);
  for (std::size_t j = 0; j < st.n; ++j) st.v[j * st.n + j] = 1.0;

  if (!detail::jacobi_sweeps(st, opt)) {
    throw ConvergenceError("svd: no convergence after " + std::to_string(opt.max_sweeps) + " sweeps" +
                           (layer.empty() ? std::string() : " in layer " + std::string(layer)));
  }

  const std::size_t p = st.n;
  std::vector<double> sigma(p);
  for (std::size_t j = 0; j < p; ++j) sigma[j] = norm2(st.acol(j));
  const double smax = *std::max_element(sigma.begin(), sigma.end());
  const double zero_tol = smax * static_cast<double>(std::max(st.m, st.n)) * std::numeric_limits<double>::epsilon();

  // Left vectors (of the tall problem) for the non-zero columns.
  std::vector<std::vector<double>> left(p);
  std::vector<bool> is_zero(p);
  for (std::size_t j = 0; j < p; ++j) {
    is_zero[j] = !(sigma[j] > zero_tol);
    if (is_zero[j]) {
      sigma[j] = 0.0;
      continue;
    }
    auto col = st.acol(j);
    left[j].assign(col.begin(), col.end());
    for (double& x : left[j]) x /= sigma[j];
  }

  std::vector<std::size_t> order(p);
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::size_t> nonzero;
  std::vector<std::size_t> zeros;
  for (std::size_t j : order) (is_zero[j] ? zeros : nonzero).push_back(j);

  std::vector<std::vector<double>> accepted;
  accepted.reserve(p);
  for (std::size_t j : nonzero) accepted.push_back(left[j]);
  for (std::size_t j : zeros) {
    left[j] = detail::complete_basis(accepted, st.m);
    accepted.push_back(left[j]);
  }

  // Final (W-oriented) vectors, canonical sign, then ordering.
  struct Component {
    double sigma;
    std::vector<double> u;  // length w.rows()
    std::vector<double> v;  // length w.cols()
    std::size_t pivot;
  };
  std::vector<Component> comps(p);
  for (std::size_t j = 0; j < p; ++j) {
    auto vc = st.vcol(j);
    std::vector<double> right(vc.begin(), vc.end());
    Component& c = comps[j];
    c.sigma = sigma[j];
    c.u = wide ? std::move(right) : left[j];
    c.v = wide ? left[j] : std::move(right);
    c.pivot = detail::pivot_index(c.u);
    if (c.u[c.pivot] < 0.0) {
      for (double& x : c.u) x = -x;
      for (double& x : c.v) x = -x;
    }
  }
  std::stable_sort(comps.begin(), comps.end(), [](const Component& a, const Component& b) {
    if (a.sigma != b.sigma) return a.sigma > b.sigma;
    return a.pivot < b.pivot;
  });

  SvdFactorization f;
  f.layer = std::string(layer);
  f.u = Matrix(w.rows(), p);
  f.v = Matrix(w.cols(), p);
  f.s.resize(p);
  for (std::size_t j = 0; j < p; ++j) {
    f.s[j] = comps[j].sigma;
    f.u.set_column(j, comps[j].u);
    f.v.set_column(j, comps[j].v);
  }
  return f;
}

// Σ_{i∈keep} σᵢ uᵢ vᵢᵀ
inline Matrix reconstruct(const SvdFactorization& f, const RankSet& keep) {
  keep.require_within(f.rank());
  Matrix w(f.rows(), f.cols());
  for (std::size_t k : keep) {
    const double s = f.s[k];
    if (s == 0.0) continue;
    for (std::size_t i = 0; i < f.rows(); ++i) {
      const double su = s * f.u(i, k);
      if (su == 0.0) continue;
      auto row = w.row(i);
      for (std::size_t j = 0; j < f.cols(); ++j) row[j] += su * f.v(j, k);
    }
  }
  return w;
}

inline Matrix reconstruct(const SvdFactorization& f) { return reconstruct(f, RankSet::range(0, f.rank())); }

// σᵢ − σᵢ₊₁ with σ_p = 0.
inline double spectral_gap(const SvdFactorization& f, std::size_t i) {
  if (i >= f.rank()) {
    throw InvalidArgument("spectral_gap: rank " + std::to_string(i) + " out of range [0, " +
                          std::to_string(f.rank()) + ")");
  }
  const double next = i + 1 < f.rank() ? f.s[i + 1] : 0.0;
  return f.s[i] - next;
}

// True when rank i shares a near-equal singular value with a neighbour, i.e.
// the gap on either side is at most rel_tol·σ₁, so uᵢ and vᵢ are not unique.
inline bool is_degenerate(const SvdFactorization& f, std::size_t i, double rel_tol = 1e-10) {
  const double tol = rel_tol * (f.rank() > 0 ? f.s[0] : 0.0);
  if (spectral_gap(f, i) <= tol) return true;
  return i > 0 && spectral_gap(f, i - 1) <= tol;
}

}  // namespace spectra
