#pragma once

// Quantitative map evaluation: the pointing game over annotated object
// regions and the positive/negative map density scores.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cameras/model_bridge.hpp"
#include "cameras/saliency.hpp"

namespace cameras {

/// Inclusive pixel box; x is the column axis, y the row axis.
struct BBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

struct BinaryMask {
  int height = 0, width = 0;
  std::vector<uint8_t> on;  // nonzero = inside the region

  bool at(int i, int j) const { return on[static_cast<size_t>(i) * width + j] != 0; }
};

/// One annotated object region: exactly one of bbox or mask is set.
struct ObjectAnnotation {
  std::string label;
  std::optional<BBox> bbox;
  std::optional<BinaryMask> mask;
};

struct PointingRecord {
  std::string image_id;
  std::string cls;
  bool hit = false;
  int max_i = 0, max_j = 0;  // row, col of the map argmax
  int tolerance = 0;
};

struct DensityScores {
  double rho_plus = 0.0;
  double rho_minus = 0.0;
  double base_confidence = 0.0;  // unmasked probability of the label
};

namespace detail {

inline void validate_annotation(const ObjectAnnotation& a, int h, int w) {
  require(a.bbox.has_value() != a.mask.has_value(), Errc::invalid_argument,
          "annotation must carry exactly one of bbox or mask");
  if (a.bbox) {
    const BBox& b = *a.bbox;
    require(b.x0 >= 0 && b.y0 >= 0 && b.x0 <= b.x1 && b.y0 <= b.y1 && b.x1 < w && b.y1 < h,
            Errc::invalid_argument, "bbox out of bounds or inverted");
  } else {
    require(a.mask->height == h && a.mask->width == w, Errc::invalid_argument,
            "mask dims must equal the map dims");
    bool any = false;
    for (uint8_t v : a.mask->on) any = any || v != 0;
    require(any, Errc::invalid_argument, "mask region is empty");
  }
}

inline bool point_in_region(const ObjectAnnotation& a, int i, int j, int tol) {
  if (a.bbox) {
    const BBox& b = *a.bbox;
    return j >= b.x0 - tol && j <= b.x1 + tol && i >= b.y0 - tol && i <= b.y1 + tol;
  }
  const BinaryMask& m = *a.mask;
  int i0 = std::max(0, i - tol), i1 = std::min(m.height - 1, i + tol);
  int j0 = std::max(0, j - tol), j1 = std::min(m.width - 1, j + tol);
  for (int y = i0; y <= i1; ++y)
    for (int x = j0; x <= j1; ++x)
      if (m.at(y, x)) return true;
  return false;
}

}  // namespace detail

/// Hit iff the map argmax (first occurrence, row-major, on ties) lies within
/// the union of the class regions dilated by `tolerance` (Chebyshev radius).
inline PointingRecord pointing_game(const SaliencyMap& map,
                                    const std::vector<ObjectAnnotation>& annotations,
                                    int tolerance, std::string image_id = "",
                                    std::string cls = "") {
  require(!annotations.empty(), Errc::invalid_argument, "no annotations for pointing game");
  require(tolerance >= 0, Errc::invalid_argument, "tolerance must be non-negative");
  for (const auto& a : annotations) detail::validate_annotation(a, map.height, map.width);

  int best_i = 0, best_j = 0;
  float best = map.values.empty() ? 0.0f : map.values[0];
  for (int i = 0; i < map.height; ++i)
    for (int j = 0; j < map.width; ++j)
      if (map.at(i, j) > best) {
        best = map.at(i, j);
        best_i = i;
        best_j = j;
      }

  PointingRecord rec{std::move(image_id), std::move(cls), false, best_i, best_j, tolerance};
  for (const auto& a : annotations)
    if (detail::point_in_region(a, best_i, best_j, tolerance)) {
      rec.hit = true;
      break;
    }
  return rec;
}

inline double aggregate_pointing(const std::vector<PointingRecord>& records) {
  require(!records.empty(), Errc::invalid_argument, "no pointing records to aggregate");
  int hits = 0;
  for (const auto& r : records) hits += r.hit ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

namespace detail {

inline double masked_confidence(const Model& model, const ImageTensor& image,
                                const SaliencyMap& map, int label, bool complement) {
  require(map.height == image.height && map.width == image.width, Errc::invalid_argument,
          "map dims must match the image");
  require(label >= 0 && label < model.num_classes(), Errc::invalid_argument,
          "label out of range");
  ImageTensor masked(image.channels, image.height, image.width);
  for (int c = 0; c < image.channels; ++c)
    for (int i = 0; i < image.height; ++i)
      for (int j = 0; j < image.width; ++j) {
        double m = static_cast<double>(map.at(i, j));
        if (complement) m = 1.0 - m;
        masked.at(c, i, j) = image.at(c, i, j) * m;
      }
  return model.predict(masked).probabilities[static_cast<size_t>(label)];
}

}  // namespace detail

/// Confidence retained by the salient pixels, normalized by the map's mass:
/// P(model(I (*) Psi)) * (h*w) / sum(Psi). Masking happens in normalized
/// input space on all channels identically.
inline double positive_density(const Model& model, const ImageTensor& image,
                               const SaliencyMap& map, int label) {
  double sum = 0.0;
  for (float v : map.values) sum += static_cast<double>(v);
  require(sum > 0.0, Errc::undefined_density, "saliency map has zero mass");
  double p = detail::masked_confidence(model, image, map, label, false);
  return p * (static_cast<double>(map.height) * map.width) / sum;
}

/// Mirror of positive_density on the complement map (1 - Psi); lower is
/// better.
inline double negative_density(const Model& model, const ImageTensor& image,
                               const SaliencyMap& map, int label) {
  double sum = 0.0;
  for (float v : map.values) sum += 1.0 - static_cast<double>(v);
  require(sum > 0.0, Errc::undefined_density, "complement map has zero mass");
  double p = detail::masked_confidence(model, image, map, label, true);
  return p * (static_cast<double>(map.height) * map.width) / sum;
}

}  // namespace cameras
