#pragma once

// Multi-scale accumulation saliency and the gradient-weighted class
// activation baseline. Maps come back normalized to [0,1] with float32
// values, matching the on-disk map format bit for bit.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "cameras/model_bridge.hpp"
#include "cameras/resample.hpp"

namespace cameras {

struct ScaleSize {
  int h = 0;
  int w = 0;
  bool operator==(const ScaleSize&) const = default;
};

enum class LadderKind {
  linear,            // evenly spaced from base to max_size, reaching max_size exactly
  paper_recurrence,  // comparison-only variant; grows super-linearly and may overshoot
};

/// The ladder of input sizes a multi-scale run walks through.
struct ScaleSchedule {
  ScaleSize base;      // the original image size the map is produced at
  ScaleSize max_size;  // largest size of the linear ladder
  int steps = 0;       // number of up-scaling steps after the base size
  LadderKind kind = LadderKind::linear;
  std::vector<ScaleSize> sizes;  // steps + 1 entries, sizes[0] == base
};

inline ScaleSchedule make_schedule(ScaleSize base, ScaleSize max_size, int steps,
                                   LadderKind kind = LadderKind::linear) {
  require(base.h >= 1 && base.w >= 1, Errc::invalid_argument, "base size must be positive");
  require(max_size.h >= base.h && max_size.w >= base.w, Errc::invalid_argument,
          "max size must dominate the base size component-wise");
  require(steps >= 0, Errc::invalid_argument, "steps must be non-negative");

  ScaleSchedule s{base, max_size, steps, kind, {}};
  s.sizes.reserve(static_cast<size_t>(steps) + 1);
  if (steps == 0) {
    s.sizes.push_back(base);
    return s;
  }
  if (kind == LadderKind::linear) {
    for (int t = 1; t <= steps + 1; ++t) {
      auto lerp = [&](int lo, int hi) {
        return lo + static_cast<int>(std::lround(static_cast<double>(hi - lo) * (t - 1) / steps));
      };
      s.sizes.push_back({lerp(base.h, max_size.h), lerp(base.w, max_size.w)});
    }
  } else {
    ScaleSize cur = base;
    ScaleSize inc{max_size.h / steps, max_size.w / steps};
    for (int t = 1; t <= steps + 1; ++t) {
      if (t > 1) cur = {cur.h + inc.h * (t - 1), cur.w + inc.w * (t - 1)};
      s.sizes.push_back(cur);
    }
  }
  return s;
}

/// A scale whose prediction disagreed with the run's target label and was
/// therefore excluded from the accumulation.
struct SkippedScale {
  int index = 0;  // position in the schedule, 0-based
  ScaleSize size;
  int predicted_label = -1;
};

struct MapMeta {
  std::string method;
  std::string layer;
  std::vector<ScaleSize> schedule_sizes;
  int accepted_scales = 0;  // t_m
  std::vector<SkippedScale> skipped;
  int target_label = -1;
};

/// Importance raster in [0,1]. Values are float32 so that the normative map
/// file format round-trips bit-exactly.
struct SaliencyMap {
  int height = 0;
  int width = 0;
  std::vector<float> values;  // row-major
  MapMeta meta;

  SaliencyMap() = default;
  SaliencyMap(int h, int w, float fill = 0.0f)
      : height(h), width(w), values(static_cast<size_t>(h) * w, fill) {}

  float at(int i, int j) const { return values[static_cast<size_t>(i) * width + j]; }
  float& at(int i, int j) { return values[static_cast<size_t>(i) * width + j]; }
};

class DegenerateScheduleError : public Error {
 public:
  DegenerateScheduleError(std::string msg, std::vector<SkippedScale> scales)
      : Error(Errc::degenerate_schedule, std::move(msg)), per_scale(std::move(scales)) {}
  std::vector<SkippedScale> per_scale;
};

/// Min-max rescale to [0,1]; a constant raster maps to all zeros since it
/// carries no localization signal.
inline Raster2D normalize(const Raster2D& raw) {
  require(raw.all_finite(), Errc::invalid_argument, "cannot normalize non-finite raster");
  auto [mn_it, mx_it] = std::minmax_element(raw.values.begin(), raw.values.end());
  double mn = *mn_it, mx = *mx_it;
  Raster2D out(raw.height, raw.width);
  if (mx == mn) return out;
  double span = mx - mn;
  for (size_t i = 0; i < raw.values.size(); ++i) out.values[i] = (raw.values[i] - mn) / span;
  return out;
}

/// Channel-wise product of gradients and activations, summed over channels,
/// rectified and normalized.
inline SaliencyMap fuse(const RasterStack& activations, const RasterStack& gradients) {
  require(activations.same_dims(gradients), Errc::invalid_argument,
          "activation/gradient stacks must share dims");
  Raster2D pre(activations.height, activations.width, 0.0);
  for (int k = 0; k < activations.channels; ++k) {
    const double* a = activations.values.data() + static_cast<size_t>(k) * activations.plane_size();
    const double* g = gradients.values.data() + static_cast<size_t>(k) * gradients.plane_size();
    for (size_t i = 0; i < pre.values.size(); ++i) pre.values[i] += a[i] * g[i];
  }
  for (double& v : pre.values) v = std::max(0.0, v);
  Raster2D norm = normalize(pre);
  SaliencyMap map(activations.height, activations.width);
  for (size_t i = 0; i < norm.values.size(); ++i)
    map.values[i] = static_cast<float>(norm.values[i]);
  return map;
}

/// Bilinear resize of every channel of a preprocessed image.
inline ImageTensor resize_image(const ImageTensor& img, int h, int w) {
  ImageTensor out(img.channels, h, w);
  Raster2D plane(img.height, img.width);
  for (int c = 0; c < img.channels; ++c) {
    std::copy_n(img.values.begin() + static_cast<size_t>(c) * img.height * img.width,
                plane.values.size(), plane.values.begin());
    Raster2D r = bilinear_resize(plane, h, w);
    std::copy(r.values.begin(), r.values.end(),
              out.values.begin() + static_cast<size_t>(c) * h * w);
  }
  return out;
}

/// Multi-scale accumulation saliency. Walks the schedule, keeps scales whose
/// prediction matches the target label, averages the up-sampled activation
/// and gradient stacks and fuses them into one map at the base size.
inline SaliencyMap compute_cameras(const Model& model, const ImageTensor& image,
                                   const ScaleSchedule& schedule, const LayerRef& layer,
                                   std::optional<int> target = std::nullopt) {
  require(!schedule.sizes.empty(), Errc::invalid_argument, "empty schedule");
  require(schedule.base.h == image.height && schedule.base.w == image.width,
          Errc::invalid_argument, "schedule base size must equal the image size");

  const int label = target ? *target : model.predict(image).label;
  const int h = image.height, w = image.width;

  RasterStack acc_a, acc_w;
  int accepted = 0;
  std::vector<SkippedScale> skipped;

  for (size_t t = 0; t < schedule.sizes.size(); ++t) {
    const ScaleSize size = schedule.sizes[t];
    ImageTensor scaled = resize_image(image, size.h, size.w);
    Prediction pred = model.predict(scaled);
    if (pred.label != label) {
      skipped.push_back({static_cast<int>(t), size, pred.label});
      continue;
    }
    LayerTensors cap = model.capture(scaled, layer, label);
    RasterStack a_up = resize_stack(cap.activations, h, w);
    RasterStack w_up = resize_stack(cap.gradients, h, w);
    if (accepted == 0) {
      acc_a = std::move(a_up);
      acc_w = std::move(w_up);
    } else {
      require(acc_a.channels == a_up.channels, Errc::capture_failed,
              "channel count changed across scales");
      for (size_t i = 0; i < acc_a.values.size(); ++i) {
        acc_a.values[i] += a_up.values[i];
        acc_w.values[i] += w_up.values[i];
      }
    }
    ++accepted;
  }

  if (accepted == 0) {
    std::string detail = "every scale flipped the prediction away from label " +
                         std::to_string(label) + ";";
    for (const auto& s : skipped)
      detail += " scale " + std::to_string(s.index) + " (" + std::to_string(s.size.h) + "x" +
                std::to_string(s.size.w) + ") -> " + std::to_string(s.predicted_label) + ",";
    detail.pop_back();
    throw DegenerateScheduleError(detail, std::move(skipped));
  }

  if (accepted > 1) {
    double inv = 1.0 / static_cast<double>(accepted);
    for (size_t i = 0; i < acc_a.values.size(); ++i) {
      acc_a.values[i] *= inv;
      acc_w.values[i] *= inv;
    }
  }

  SaliencyMap map = fuse(acc_a, acc_w);
  map.meta = {"cameras", layer.path, schedule.sizes, accepted, std::move(skipped), label};
  return map;
}

/// Gradient-weighted class activation baseline: each channel weighted by its
/// spatially averaged gradient (with the 1/(m+n) prefactor), summed,
/// rectified at the capture resolution, then up-sampled and normalized.
inline SaliencyMap compute_gradcam(const Model& model, const ImageTensor& image,
                                   const LayerRef& layer,
                                   std::optional<int> target = std::nullopt) {
  const int label = target ? *target : model.predict(image).label;
  LayerTensors cap = model.capture(image, layer, label);
  const int m = cap.activations.height, n = cap.activations.width;

  Raster2D pre(m, n, 0.0);
  for (int k = 0; k < cap.activations.channels; ++k) {
    double wk = 0.0;
    const double* g = cap.gradients.values.data() + static_cast<size_t>(k) * cap.gradients.plane_size();
    for (size_t i = 0; i < cap.gradients.plane_size(); ++i) wk += g[i];
    wk /= static_cast<double>(m + n);
    const double* a = cap.activations.values.data() + static_cast<size_t>(k) * cap.activations.plane_size();
    for (size_t i = 0; i < pre.values.size(); ++i) pre.values[i] += wk * a[i];
  }
  for (double& v : pre.values) v = std::max(0.0, v);

  Raster2D up = bilinear_resize(pre, image.height, image.width);
  Raster2D norm = normalize(up);
  SaliencyMap map(image.height, image.width);
  for (size_t i = 0; i < norm.values.size(); ++i)
    map.values[i] = static_cast<float>(norm.values[i]);
  map.meta = {"gradcam", layer.path, {{image.height, image.width}}, 1, {}, label};
  return map;
}

}  // namespace cameras
