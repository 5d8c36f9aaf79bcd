#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "spectra/error.hpp"

namespace spectra {

struct CorrelationResult {
  double r = 0.0;
  std::size_t n = 0;
  double p_value = 1.0;  // two-sided, Student-t with n − 2 degrees of freedom
};

inline CorrelationResult pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw ShapeError("pearson: length mismatch " + std::to_string(x.size()) + " vs " + std::to_string(y.size()));
  }
  const std::size_t n = x.size();
  if (n < 3) throw InvalidArgument("pearson: need at least 3 samples, got " + std::to_string(n));
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw InvalidArgument("pearson: constant input");

  CorrelationResult res;
  res.n = n;
  res.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  const double df = static_cast<double>(n - 2);
  const double one_minus_r2 = 1.0 - res.r * res.r;
  if (one_minus_r2 <= 0.0) {
    res.p_value = 0.0;
  } else {
    const double t = std::abs(res.r) * std::sqrt(df / one_minus_r2);
    const boost::math::students_t dist(df);
    res.p_value = std::clamp(2.0 * boost::math::cdf(boost::math::complement(dist, t)), 0.0, 1.0);
  }
  return res;
}

// Benjamini-Hochberg step-up at level q: with p sorted ascending, find the
// largest i (1-based) with p₍ᵢ₎ ≤ i·q/m and reject ranks 1..i. Returns the
// rejected original indices in ascending order.
inline std::vector<std::size_t> bh_fdr(std::span<const double> p, double q) {
  if (!(q > 0.0 && q < 1.0)) throw InvalidArgument("bh_fdr: q must lie in (0, 1)");
  for (double v : p)
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("bh_fdr: p-value outside [0, 1]");

  const std::size_t m = p.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });

  std::size_t cutoff = 0;
  for (std::size_t i = m; i >= 1; --i) {
    if (p[order[i - 1]] <= static_cast<double>(i) * q / static_cast<double>(m)) {
      cutoff = i;
      break;
    }
  }
  std::vector<std::size_t> rejected(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cutoff));
  std::sort(rejected.begin(), rejected.end());
  return rejected;
}

}  // namespace spectra
