#pragma once

#include <algorithm>
#include <cmath>

#include "cameras/raster.hpp"

namespace cameras {

namespace detail {

// Source coordinate of output cell j under the half-pixel-center convention:
// s = (j + 0.5) * (src_n / dst_n) - 0.5, clamped to [0, src_n - 1].
inline double source_coord(int j, int src_n, int dst_n) {
  double s = (j + 0.5) * (static_cast<double>(src_n) / dst_n) - 0.5;
  return std::clamp(s, 0.0, static_cast<double>(src_n - 1));
}

struct AxisTap {
  int lo;
  int hi;
  double frac;  // weight of hi; lo gets (1 - frac)
};

inline AxisTap axis_tap(int j, int src_n, int dst_n) {
  double s = source_coord(j, src_n, dst_n);
  int lo = static_cast<int>(std::floor(s));
  int hi = std::min(lo + 1, src_n - 1);
  return {lo, hi, s - lo};
}

}  // namespace detail

/// Resizes a raster with bilinear interpolation (half-pixel centers, edge
/// clamped). Identity when target dims equal source dims.
inline Raster2D bilinear_resize(const Raster2D& src, int target_h, int target_w) {
  require(target_h >= 1 && target_w >= 1, Errc::invalid_argument,
          "target dims must be positive, got " + std::to_string(target_h) + "x" +
              std::to_string(target_w));
  require(src.height >= 1 && src.width >= 1, Errc::invalid_argument, "empty source raster");
  require(src.all_finite(), Errc::invalid_argument, "source raster has non-finite values");

  Raster2D out(target_h, target_w);
  std::vector<detail::AxisTap> cols(target_w);
  for (int j = 0; j < target_w; ++j) cols[j] = detail::axis_tap(j, src.width, target_w);

  for (int i = 0; i < target_h; ++i) {
    const detail::AxisTap r = detail::axis_tap(i, src.height, target_h);
    const double* row_lo = src.values.data() + static_cast<size_t>(r.lo) * src.width;
    const double* row_hi = src.values.data() + static_cast<size_t>(r.hi) * src.width;
    double* dst = out.values.data() + static_cast<size_t>(i) * target_w;
    for (int j = 0; j < target_w; ++j) {
      const detail::AxisTap& c = cols[j];
      double top = (1.0 - c.frac) * row_lo[c.lo] + c.frac * row_lo[c.hi];
      double bot = (1.0 - c.frac) * row_hi[c.lo] + c.frac * row_hi[c.hi];
      dst[j] = (1.0 - r.frac) * top + r.frac * bot;
    }
  }
  return out;
}

/// Channel-wise bilinear_resize; channel order preserved.
inline RasterStack resize_stack(const RasterStack& src, int target_h, int target_w) {
  require(target_h >= 1 && target_w >= 1, Errc::invalid_argument,
          "target dims must be positive");
  RasterStack out(src.channels, target_h, target_w);
  for (int k = 0; k < src.channels; ++k) out.set_channel(k, bilinear_resize(src.channel(k), target_h, target_w));
  return out;
}

/// Frobenius norm of (reference - up(down(reference))) where down goes to
/// (low_h, low_w) and up returns to the reference dims. Zero at equal dims.
inline double roundtrip_error(const Raster2D& reference, int low_h, int low_w) {
  require(low_h >= 1 && low_w >= 1, Errc::invalid_argument, "low dims must be positive");
  require(low_h <= reference.height && low_w <= reference.width, Errc::invalid_argument,
          "low dims exceed reference dims");
  Raster2D down = bilinear_resize(reference, low_h, low_w);
  Raster2D up = bilinear_resize(down, reference.height, reference.width);
  double acc = 0.0;
  for (size_t i = 0; i < reference.values.size(); ++i) {
    double d = reference.values[i] - up.values[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

}  // namespace cameras
