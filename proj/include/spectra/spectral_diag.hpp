#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "spectra/error.hpp"
#include "spectra/matrix.hpp"
#include "spectra/svd.hpp"
#include "spectra/tensor_store.hpp"

namespace spectra {

// Half-open rank interval [begin, end).
struct RankRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const noexcept { return end > begin ? end - begin : 0; }

  void require_within(std::size_t p) const {
    if (begin > end || end > p) {
      throw InvalidArgument("rank range [" + std::to_string(begin) + ", " + std::to_string(end) +
                            ") not within [0, " + std::to_string(p) + ")");
    }
  }

  RankRange clamped(std::size_t p) const noexcept { return {std::min(begin, p), std::min(end, p)}; }
};

inline constexpr double kDegenerateGapTol = 1e-10;

struct AlignmentSeries {
  std::string layer;
  std::vector<std::size_t> ranks;
  std::vector<double> left;   // |ũᵢᵀuᵢ|
  std::vector<double> right;  // |ṽᵢᵀvᵢ|
  std::vector<bool> degenerate;
};

namespace detail {

inline double column_abs_dot(const Matrix& a, const Matrix& b, std::size_t j) noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) s += a(i, j) * b(i, j);
  return std::abs(s);
}

}  // namespace detail

inline AlignmentSeries align_factorizations(const SvdFactorization& a, const SvdFactorization& b, RankRange ranks) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("align: shape mismatch " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.rows()) + "x" + std::to_string(b.cols()) +
                     (a.layer.empty() ? std::string() : " in layer " + a.layer));
  }
  ranks.require_within(a.rank());
  AlignmentSeries out;
  out.layer = a.layer.empty() ? b.layer : a.layer;
  for (std::size_t i = ranks.begin; i < ranks.end; ++i) {
    out.ranks.push_back(i);
    out.left.push_back(detail::column_abs_dot(a.u, b.u, i));
    out.right.push_back(detail::column_abs_dot(a.v, b.v, i));
    out.degenerate.push_back(is_degenerate(a, i, kDegenerateGapTol) || is_degenerate(b, i, kDegenerateGapTol));
  }
  return out;
}

// Cumulative update ΔW = post − pre measured against the pretrained spectrum:
//   rᵢ = σᵢ(ΔW) / σᵢ(pre),  aᵢ⁽ᵘ⁾ = |⟨uᵢ(ΔW), uᵢ(pre)⟩|,  aᵢ⁽ᵛ⁾ = |⟨vᵢ(ΔW), vᵢ(pre)⟩|
// When σᵢ(pre) = 0 the ratio is +inf and zero_pre is set.
struct DeltaSpectrum {
  std::string layer;
  std::vector<std::size_t> ranks;
  std::vector<double> ratios;
  std::vector<double> align_u;
  std::vector<double> align_v;
  std::vector<bool> zero_pre;
  std::vector<bool> degenerate;  // rank degenerate in pre or ΔW
};

inline DeltaSpectrum delta_spectrum(const SvdFactorization& pre, const SvdFactorization& delta, RankRange ranks) {
  const AlignmentSeries al = align_factorizations(delta, pre, ranks);
  DeltaSpectrum out;
  out.layer = pre.layer;
  out.ranks = al.ranks;
  out.align_u = al.left;
  out.align_v = al.right;
  out.degenerate = al.degenerate;
  for (std::size_t i : al.ranks) {
    const bool zero = pre.s[i] == 0.0;
    out.zero_pre.push_back(zero);
    out.ratios.push_back(zero ? std::numeric_limits<double>::infinity() : delta.s[i] / pre.s[i]);
  }
  return out;
}

inline DeltaSpectrum delta_spectrum(const LayerPair& pair, RankRange ranks) {
  if (!pair.pre.same_shape(pair.post)) throw ShapeError("delta: shape mismatch in layer " + pair.name);
  const SvdFactorization pre = svd(pair.pre, pair.name);
  const SvdFactorization delta = svd(pair.post - pair.pre, pair.name);
  return delta_spectrum(pre, delta, ranks);
}

// ---------------------------------------------------------------------------
// Spectrum-level statistics

enum class EntropyWeighting {
  Sigma,         // pᵢ = σᵢ / Σσ
  SigmaSquared,  // pᵢ = σᵢ² / Σσ²
};

inline double effective_rank(std::span<const double> s, EntropyWeighting w = EntropyWeighting::Sigma) {
  double total = 0.0;
  for (double x : s) {
    if (x < 0.0 || !std::isfinite(x)) throw InvalidArgument("effective_rank: singular values must be finite and >= 0");
    total += w == EntropyWeighting::Sigma ? x : x * x;
  }
  if (!(total > 0.0)) throw InvalidArgument("effective_rank: all-zero spectrum");
  double h = 0.0;
  for (double x : s) {
    const double p = (w == EntropyWeighting::Sigma ? x : x * x) / total;
    if (p > 0.0) h -= p * std::log(p);
  }
  return std::exp(h);
}

// Σ_{i<K} σᵢ² / Σ σᵢ²
inline double explained_variance(std::span<const double> s, std::size_t k) {
  if (k > s.size()) {
    throw InvalidArgument("explained_variance: K = " + std::to_string(k) + " exceeds " + std::to_string(s.size()));
  }
  double total = 0.0;
  for (double x : s) total += x * x;
  if (!(total > 0.0)) throw InvalidArgument("explained_variance: all-zero spectrum");
  double head = 0.0;
  for (std::size_t i = 0; i < k; ++i) head += s[i] * s[i];
  return head / total;
}

// Smallest K with explained_variance(s, K) >= threshold.
inline std::size_t rank_for_energy(std::span<const double> s, double threshold) {
  for (std::size_t k = 0; k <= s.size(); ++k)
    if (explained_variance(s, k) >= threshold) return k;
  return s.size();
}

struct SpectrumChangeStats {
  std::size_t n_sv = 0;
  double rsd = 0.0;
  double mrc = 0.0;
  double maxrc = 0.0;
  double t1rc = 0.0;
  double tailrc = 0.0;
  double er_pre = 0.0;
  double er_post = 0.0;
  double d_er = 0.0;
  std::size_t tail_size = 0;
  std::size_t excluded = 0;  // ranks with σ_pre = 0, left out of the relative changes
};

struct SpectrumChangeOptions {
  double tail_fraction = 0.1;
  EntropyWeighting weighting = EntropyWeighting::Sigma;
};

// ⌈fraction·n⌉ clamped to [1, n]; robust to 0.1·30 = 3.0000000000000004.
inline std::size_t tail_count(std::size_t n, double fraction) {
  if (!(fraction > 0.0) || fraction > 1.0) throw InvalidArgument("tail fraction must lie in (0, 1]");
  const double raw = fraction * static_cast<double>(n);
  auto t = static_cast<std::size_t>(std::ceil(raw - 1e-9 * std::max(1.0, raw)));
  return std::clamp<std::size_t>(t, 1, n);
}

inline SpectrumChangeStats spectrum_change(std::span<const double> pre, std::span<const double> post,
                                           const SpectrumChangeOptions& opt = {}) {
  if (pre.size() != post.size()) {
    throw ShapeError("spectrum_change: length mismatch " + std::to_string(pre.size()) + " vs " +
                     std::to_string(post.size()));
  }
  if (pre.empty()) throw InvalidArgument("spectrum_change: empty spectrum");
  const std::size_t n = pre.size();

  SpectrumChangeStats st;
  st.n_sv = n;
  double diff2 = 0.0, pre2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    diff2 += (post[i] - pre[i]) * (post[i] - pre[i]);
    pre2 += pre[i] * pre[i];
  }
  if (!(pre2 > 0.0)) throw InvalidArgument("spectrum_change: all-zero pretrained spectrum");
  st.rsd = std::sqrt(diff2) / std::sqrt(pre2);

  std::vector<double> rel(n, std::numeric_limits<double>::quiet_NaN());
  std::size_t used = 0;
  double abs_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (pre[i] == 0.0) {
      ++st.excluded;
      continue;
    }
    rel[i] = (post[i] - pre[i]) / pre[i];
    abs_sum += std::abs(rel[i]);
    st.maxrc = std::max(st.maxrc, std::abs(rel[i]));
    ++used;
  }
  st.mrc = abs_sum / static_cast<double>(used);
  st.t1rc = rel[0];

  st.tail_size = tail_count(n, opt.tail_fraction);
  double tail_sum = 0.0;
  std::size_t tail_used = 0;
  for (std::size_t i = n - st.tail_size; i < n; ++i) {
    if (std::isnan(rel[i])) continue;
    tail_sum += rel[i];
    ++tail_used;
  }
  st.tailrc = tail_used ? tail_sum / static_cast<double>(tail_used) : std::numeric_limits<double>::quiet_NaN();

  st.er_pre = effective_rank(pre, opt.weighting);
  st.er_post = effective_rank(post, opt.weighting);
  st.d_er = st.er_post - st.er_pre;
  return st;
}

// Entry (i, j) is the mean over ranks [0, topk) of the left alignment between
// seq[i] and seq[j]. Symmetric with unit diagonal.
inline Matrix trajectory_alignment(std::span<const SvdFactorization> seq, std::size_t topk) {
  if (seq.empty()) throw InvalidArgument("trajectory_alignment: empty sequence");
  for (const auto& f : seq) {
    if (f.rows() != seq[0].rows() || f.cols() != seq[0].cols()) {
      throw ShapeError("trajectory_alignment: checkpoints disagree in shape" +
                       (seq[0].layer.empty() ? std::string() : " for layer " + seq[0].layer));
    }
  }
  if (topk == 0 || topk > seq[0].rank()) {
    throw InvalidArgument("trajectory_alignment: topk " + std::to_string(topk) + " not in [1, " +
                          std::to_string(seq[0].rank()) + "]");
  }
  const std::size_t t = seq.size();
  Matrix out(t, t);
  for (std::size_t i = 0; i < t; ++i) {
    out(i, i) = 1.0;
    for (std::size_t j = i + 1; j < t; ++j) {
      const AlignmentSeries al = align_factorizations(seq[i], seq[j], {0, topk});
      double mean = 0.0;
      for (double x : al.left) mean += x;
      mean /= static_cast<double>(topk);
      out(i, j) = mean;
      out(j, i) = mean;
    }
  }
  return out;
}

}  // namespace spectra
