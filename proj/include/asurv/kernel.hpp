#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "asurv/errors.hpp"

namespace asurv {

enum class KernelFamily { epanechnikov, biweight };

// Compactly supported kernel on [-1, 1]. Order 2 kernels are nonnegative,
// which keeps the weighted TPR/TNR estimates inside [0, 1]. Order 4 variants
// (twicing construction) are available but experimental: they take negative
// values, so estimates built from them are no longer bona fide proportions.
struct KernelSpec {
  KernelFamily family = KernelFamily::epanechnikov;
  int order = 2;  // 2 or 4
};

inline double kernel_1d(const KernelSpec& spec, double u) {
  if (std::abs(u) >= 1.0) return 0.0;
  const double u2 = u * u;
  double base = 0.0;
  double b = 1.0, c = 0.0;  // order-4 factor (b - c*u^2)
  switch (spec.family) {
    case KernelFamily::epanechnikov:
      base = 0.75 * (1.0 - u2);
      b = 15.0 / 8.0;
      c = 35.0 / 8.0;
      break;
    case KernelFamily::biweight:
      base = (15.0 / 16.0) * (1.0 - u2) * (1.0 - u2);
      b = 7.0 / 4.0;
      c = 21.0 / 4.0;
      break;
  }
  if (spec.order == 2) return base;
  if (spec.order == 4) return (b - c * u2) * base;
  throw InvalidInput("kernel order must be 2 or 4");
}

// Bivariate kernel as the product of two univariate kernels.
inline double kernel_2d(const KernelSpec& spec, double u, double v) {
  return kernel_1d(spec, u) * kernel_1d(spec, v);
}

struct Bandwidths {
  double h = 0.0;       // univariate, for negative-biopsy smoothing
  double htilde = 0.0;  // bivariate, for adjacent-pair smoothing
};

// h = time_scale * n^{-1/5}, htilde = time_scale * n^{-1/6}.
//
// time_scale = 1 reproduces the literal rate rules; in practice it is set to
// the spread of the observed biopsy times so the windows cover data.
inline Bandwidths default_bandwidths(std::size_t n, double time_scale) {
  if (n < 2) throw InvalidN("default_bandwidths: need n >= 2");
  if (!(time_scale > 0.0)) throw InvalidN("default_bandwidths: time_scale must be > 0");
  const double nd = static_cast<double>(n);
  return Bandwidths{time_scale * std::pow(nd, -0.2), time_scale * std::pow(nd, -1.0 / 6.0)};
}

// Sample standard deviation of the non-baseline observed biopsy times,
// pooled over subjects. The baseline time 0 is a shared convention and says
// nothing about the visit spread, so it is excluded.
inline double biopsy_time_scale(const std::vector<double>& times) {
  if (times.size() < 2) return 1.0;
  const double mean = std::accumulate(times.begin(), times.end(), 0.0) / static_cast<double>(times.size());
  double ss = 0.0;
  for (double t : times) ss += (t - mean) * (t - mean);
  const double sd = std::sqrt(ss / static_cast<double>(times.size() - 1));
  return sd > 0.0 ? sd : 1.0;
}

}  // namespace asurv
