#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cameras/error.hpp"

namespace cameras {

/// Dense row-major 2D grid of real values. The workhorse container for
/// activation maps, gradient maps and saliency pre-maps.
struct Raster2D {
  int height = 0;
  int width = 0;
  std::vector<double> values;  // row-major, height*width entries

  Raster2D() = default;

  Raster2D(int h, int w, double fill = 0.0) : height(h), width(w) {
    require(h >= 1 && w >= 1, Errc::invalid_argument,
            "raster dims must be positive, got " + std::to_string(h) + "x" + std::to_string(w));
    values.assign(static_cast<size_t>(h) * w, fill);
  }

  double& at(int i, int j) { return values[static_cast<size_t>(i) * width + j]; }
  double at(int i, int j) const { return values[static_cast<size_t>(i) * width + j]; }

  size_t size() const { return values.size(); }

  bool all_finite() const {
    for (double v : values)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool same_dims(const Raster2D& o) const { return height == o.height && width == o.width; }
};

/// K same-sized channels stored contiguously, [channel][row][col].
struct RasterStack {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> values;

  RasterStack() = default;

  RasterStack(int k, int h, int w, double fill = 0.0) : channels(k), height(h), width(w) {
    require(k >= 1, Errc::invalid_argument, "stack needs at least one channel");
    require(h >= 1 && w >= 1, Errc::invalid_argument, "stack dims must be positive");
    values.assign(static_cast<size_t>(k) * h * w, fill);
  }

  double& at(int k, int i, int j) {
    return values[(static_cast<size_t>(k) * height + i) * width + j];
  }
  double at(int k, int i, int j) const {
    return values[(static_cast<size_t>(k) * height + i) * width + j];
  }

  size_t plane_size() const { return static_cast<size_t>(height) * width; }

  Raster2D channel(int k) const {
    Raster2D r(height, width);
    const double* src = values.data() + static_cast<size_t>(k) * plane_size();
    std::copy(src, src + plane_size(), r.values.begin());
    return r;
  }

  void set_channel(int k, const Raster2D& r) {
    require(r.height == height && r.width == width, Errc::invalid_argument,
            "channel dims mismatch");
    std::copy(r.values.begin(), r.values.end(),
              values.begin() + static_cast<size_t>(k) * plane_size());
  }

  bool same_dims(const RasterStack& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
};

}  // namespace cameras
