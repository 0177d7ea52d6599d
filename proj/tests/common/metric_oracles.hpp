#pragma once

// Brute-force reference implementations of the metrics.

#include <algorithm>
#include <cmath>
#include <vector>

#include "sparsecbct/metrics.hpp"
#include "sparsecbct/volume.hpp"

namespace sparsecbct::oracle {

inline double mae(const VoxelVolume& a, const VoxelVolume& b, const BinaryMask* m) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (m && !(*m)[i]) continue;
    s += std::abs(double(a.values()[i]) - double(b.values()[i]));
    ++n;
  }
  return s / double(n);
}

inline double psnr(const VoxelVolume& a, const VoxelVolume& b, const BinaryMask* m) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (m && !(*m)[i]) continue;
    const double d = double(a.values()[i]) - double(b.values()[i]);
    s += d * d;
    ++n;
  }
  return 10.0 * std::log10(2000.0 * 2000.0 / (s / double(n)));
}

// Mean over all 7x7x7 windows, recomputing each window's moments directly.
inline double ssim(const VoxelVolume& a, const VoxelVolume& b) {
  const auto d = a.dims();
  const double c1 = std::pow(0.01 * 2000.0, 2), c2 = std::pow(0.03 * 2000.0, 2);
  double total = 0.0;
  std::size_t windows = 0;
  for (std::size_t z = 0; z + 7 <= d.nz; ++z)
    for (std::size_t y = 0; y + 7 <= d.ny; ++y)
      for (std::size_t x = 0; x + 7 <= d.nx; ++x) {
        double ma = 0, mb = 0;
        for (std::size_t k = 0; k < 7; ++k)
          for (std::size_t j = 0; j < 7; ++j)
            for (std::size_t i = 0; i < 7; ++i) {
              ma += a.at(x + i, y + j, z + k);
              mb += b.at(x + i, y + j, z + k);
            }
        ma /= 343.0;
        mb /= 343.0;
        double va = 0, vb = 0, cov = 0;
        for (std::size_t k = 0; k < 7; ++k)
          for (std::size_t j = 0; j < 7; ++j)
            for (std::size_t i = 0; i < 7; ++i) {
              const double da = a.at(x + i, y + j, z + k) - ma;
              const double db = b.at(x + i, y + j, z + k) - mb;
              va += da * da;
              vb += db * db;
              cov += da * db;
            }
        va /= 343.0;
        vb /= 343.0;
        cov /= 343.0;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++windows;
      }
  return total / double(windows);
}

inline double dice(const BinaryMask& a, const BinaryMask& b) {
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    na += a[i];
    nb += b[i];
    both += a[i] && b[i];
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * double(both) / double(na + nb);
}

// Exhaustive between-class variance over every bin boundary of a 256-bin histogram.
inline double otsu(const VoxelVolume& v) {
  double lo = 1e300, hi = -1e300;
  for (float x : v.values()) {
    lo = std::min(lo, double(x));
    hi = std::max(hi, double(x));
  }
  const double w = (hi - lo) / 256.0;
  std::vector<double> hist(256, 0.0);
  for (float x : v.values()) {
    const auto bin = std::min<std::size_t>(255, std::size_t((double(x) - lo) / w));
    hist[bin] += 1.0;
  }
  double best = -1.0;
  std::size_t best_k = 1;
  for (std::size_t k = 1; k < 256; ++k) {
    double n0 = 0, n1 = 0, s0 = 0, s1 = 0;
    for (std::size_t b = 0; b < 256; ++b) {
      const double c = lo + (double(b) + 0.5) * w;
      if (b < k) {
        n0 += hist[b];
        s0 += hist[b] * c;
      } else {
        n1 += hist[b];
        s1 += hist[b] * c;
      }
    }
    if (n0 == 0 || n1 == 0) continue;
    const double m0 = s0 / n0, m1 = s1 / n1;
    const double between = n0 * n1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_k = k;
    }
  }
  return lo + double(best_k) * w;
}

}  // namespace sparsecbct::oracle
