#pragma once

// Sanity checks for saliency methods: cascading weight randomization (maps
// must degrade as layers are scrambled from the logits backwards) and the
// adversarial-perturbation correspondence test (per-pixel perturbation
// magnitude should rank like the map).

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "cameras/attack.hpp"
#include "cameras/model_bridge.hpp"
#include "cameras/saliency.hpp"

namespace cameras {

namespace detail {

inline std::vector<double> tie_averaged_ranks(const std::vector<double>& v) {
  const size_t n = v.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace detail

/// Spearman rank correlation with tie-averaged ranks. Identical inputs give
/// exactly 1.0; a constant input (no ordinal information) gives 0.0 against
/// anything it does not equal bit-for-bit.
inline double spearman_correlation(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size() && !a.empty(), Errc::invalid_argument,
          "correlation needs two equal-length non-empty vectors");
  if (a == b) return 1.0;
  std::vector<double> ra = detail::tie_averaged_ranks(a);
  std::vector<double> rb = detail::tie_averaged_ranks(b);
  double ma = 0.0, mb = 0.0;
  for (size_t i = 0; i < ra.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= static_cast<double>(ra.size());
  mb /= static_cast<double>(rb.size());
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (size_t i = 0; i < ra.size(); ++i) {
    double da = ra[i] - ma, db = rb[i] - mb;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  if (ra == rb) return 1.0;
  return std::clamp(cov / (std::sqrt(va) * std::sqrt(vb)), -1.0, 1.0);
}

inline double spearman_correlation(const std::vector<float>& a, const std::vector<float>& b) {
  std::vector<double> da(a.begin(), a.end()), db(b.begin(), b.end());
  return spearman_correlation(da, db);
}

/// Any map-producing operation; called with the model's own prediction as
/// the target so randomized models explain what they actually predict.
using SaliencyFn = std::function<SaliencyMap(const Model&, const ImageTensor&)>;

struct CurvePoint {
  int depth = 0;
  std::string layer_name;                // deepest layer randomized at this point
  std::optional<double> similarity;      // empty when the map computation failed
  std::optional<SaliencyMap> map;
};

struct RandomizationCurve {
  SaliencyMap original;
  std::vector<CurvePoint> points;  // strictly increasing depths
  uint64_t seed = 0;
};

/// Progressively randomizes the model from the output layer backwards and
/// records the rank correlation of each depth's map with the original one.
/// A failed map computation becomes a missing point, not an error.
inline RandomizationCurve cascading_randomization(const Model& model, const ImageTensor& image,
                                                  const SaliencyFn& saliency_fn,
                                                  const std::vector<int>& depths, uint64_t seed) {
  require(!depths.empty(), Errc::invalid_argument, "need at least one randomization depth");
  const int layer_count = static_cast<int>(model.list_layers().size());
  for (size_t i = 0; i < depths.size(); ++i) {
    require(depths[i] >= 1 && depths[i] <= layer_count, Errc::invalid_argument,
            "depth " + std::to_string(depths[i]) + " outside [1, " +
                std::to_string(layer_count) + "]");
    if (i > 0)
      require(depths[i] > depths[i - 1], Errc::invalid_argument,
              "depths must be strictly increasing");
  }

  RandomizationCurve curve;
  curve.seed = seed;
  curve.original = saliency_fn(model, image);
  std::vector<LayerRef> layers = model.list_layers();

  for (int depth : depths) {
    CurvePoint point;
    point.depth = depth;
    point.layer_name = layers[static_cast<size_t>(depth - 1)].path;
    try {
      std::unique_ptr<Model> randomized = model.randomize_through(depth, seed);
      SaliencyMap map = saliency_fn(*randomized, image);
      point.similarity = spearman_correlation(map.values, curve.original.values);
      point.map = std::move(map);
    } catch (const Error&) {
      // missing point: depth recorded without evidence
    }
    curve.points.push_back(std::move(point));
  }
  return curve;
}

/// Mean similarity over the curve's evidenced points.
inline double curve_mean_similarity(const RandomizationCurve& curve) {
  double sum = 0.0;
  int n = 0;
  for (const auto& p : curve.points)
    if (p.similarity) {
      sum += *p.similarity;
      ++n;
    }
  require(n > 0, Errc::sanity_inconclusive, "randomization curve has no evidenced points");
  return sum / static_cast<double>(n);
}

/// Runs the vanilla attack and correlates per-pixel perturbation magnitude
/// (L2 over channels, raw pixel units) with the map.
inline double adversarial_correspondence(const Model& model, const ImageTensor& image,
                                         const SaliencyMap& map, const AttackConfig& cfg) {
  require(map.height == image.height && map.width == image.width, Errc::invalid_argument,
          "map dims must match the image");
  int target = least_likely_label(model, image);
  AttackResult attack = pgd(model, image, target, cfg);
  if (!attack.success)
    fail(Errc::sanity_inconclusive,
         "attack stalled at confidence " + std::to_string(attack.final_confidence));

  const PreprocessSpec& pp = model.descriptor().preprocess;
  std::vector<double> magnitude(static_cast<size_t>(image.height) * image.width, 0.0);
  for (int i = 0; i < image.height; ++i)
    for (int j = 0; j < image.width; ++j) {
      double acc = 0.0;
      for (int c = 0; c < image.channels; ++c) {
        double raw = attack.perturbation.at(c, i, j) * pp.stddev[static_cast<size_t>(c)];
        acc += raw * raw;
      }
      magnitude[static_cast<size_t>(i) * image.width + j] = std::sqrt(acc);
    }
  std::vector<double> psi(map.values.begin(), map.values.end());
  return spearman_correlation(magnitude, psi);
}

enum class PassRule {
  below_threshold,  // evidence < threshold passes (randomization degradation)
  above_threshold,  // evidence > threshold passes (beat a control value)
};

struct SanityVerdict {
  std::string method;
  bool passed = false;
  double evidence = 0.0;
  double threshold = 0.0;
  PassRule rule = PassRule::below_threshold;
  std::string criterion;  // human-readable statement of what was applied
};

/// Applies a configured pass threshold to the evidence; missing evidence is
/// rejected outright.
inline SanityVerdict make_verdict(std::string method, std::optional<double> evidence,
                                  double threshold, PassRule rule, std::string criterion) {
  require(evidence.has_value() && std::isfinite(*evidence), Errc::invalid_argument,
          "verdict requires evidence");
  SanityVerdict v;
  v.method = std::move(method);
  v.evidence = *evidence;
  v.threshold = threshold;
  v.rule = rule;
  v.criterion = std::move(criterion);
  v.passed = rule == PassRule::below_threshold ? v.evidence < threshold : v.evidence > threshold;
  return v;
}

/// Model-independent control map: image gradient magnitude (3x3 Sobel on the
/// channel mean, edge-replicated). Must fail cascading randomization; keeping
/// it failing is the suite's own sanity check.
inline SaliencyMap edge_baseline_map(const ImageTensor& image) {
  const int h = image.height, w = image.width;
  Raster2D gray(h, w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double acc = 0.0;
      for (int c = 0; c < image.channels; ++c) acc += image.at(c, i, j);
      gray.at(i, j) = acc / image.channels;
    }
  auto px = [&](int i, int j) {
    return gray.at(std::clamp(i, 0, h - 1), std::clamp(j, 0, w - 1));
  };
  Raster2D mag(h, w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double gx = px(i - 1, j + 1) + 2 * px(i, j + 1) + px(i + 1, j + 1) -
                  px(i - 1, j - 1) - 2 * px(i, j - 1) - px(i + 1, j - 1);
      double gy = px(i + 1, j - 1) + 2 * px(i + 1, j) + px(i + 1, j + 1) -
                  px(i - 1, j - 1) - 2 * px(i - 1, j) - px(i - 1, j + 1);
      mag.at(i, j) = std::sqrt(gx * gx + gy * gy);
    }
  Raster2D norm = normalize(mag);
  SaliencyMap map(h, w);
  for (size_t i = 0; i < norm.values.size(); ++i)
    map.values[i] = static_cast<float>(norm.values[i]);
  map.meta.method = "edge-control";
  map.meta.accepted_scales = 0;
  return map;
}

}  // namespace cameras
