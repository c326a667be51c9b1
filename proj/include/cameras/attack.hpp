#pragma once

// Projected signed-gradient attacks: a vanilla targeted baseline and the
// saliency-masked variant that penalizes perturbation mass outside the
// salient region. The infinity-norm budget is given in raw pixel units and
// converted per channel through the model's preprocessing std.

#include <cmath>
#include <string>
#include <vector>

#include "cameras/model_bridge.hpp"
#include "cameras/saliency.hpp"

namespace cameras {

struct AttackConfig {
  double epsilon = 12.0 / 255.0;  // ℓ∞ budget, raw pixel units
  double step_alpha = 0.0;        // raw pixel units; 0 picks epsilon / 10
  int max_iterations = 200;
  double target_confidence = 0.99;  // early-stop softmax confidence on the target
  double beta = 50.0;               // weight of the off-mask penalty
};

struct AttackResult {
  ImageTensor perturbation;     // normalized input space, image-shaped
  ImageTensor perturbed_image;  // clip(image + perturbation)
  int target_label = -1;
  bool success = false;
  double final_confidence = 0.0;
  int iterations = 0;
  double l2_norm = 0.0;    // raw pixel units
  double linf_norm = 0.0;  // raw pixel units
  std::vector<double> confidence_trace;  // one entry per iteration
  std::vector<double> linf_trace;        // raw-unit ℓ∞ of p after each iteration
};

/// Class with the minimal clean-image score; ties break to the lowest index.
inline int least_likely_label(const Model& model, const ImageTensor& image) {
  Prediction p = model.predict(image);
  return static_cast<int>(std::min_element(p.scores.begin(), p.scores.end()) - p.scores.begin());
}

namespace detail {

inline void validate_attack_config(const AttackConfig& cfg) {
  require(cfg.epsilon > 0.0, Errc::invalid_argument, "epsilon must be positive");
  require(cfg.step_alpha >= 0.0, Errc::invalid_argument, "step size must be non-negative");
  require(cfg.max_iterations >= 1, Errc::invalid_argument, "need at least one iteration");
  require(cfg.target_confidence >= 0.0 && cfg.target_confidence <= 1.0, Errc::invalid_argument,
          "target confidence must be in [0,1]");
  require(cfg.beta >= 0.0, Errc::invalid_argument, "beta must be non-negative");
}

inline double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace detail

/// Targeted projected signed-gradient attack. Minimizes the cross-entropy
/// toward `target` plus, when a mask is given, beta times the L2 norm of the
/// perturbation weighted by (1 - mask) broadcast over channels. After every
/// step the perturbation is clamped to the per-channel ℓ∞ budget and to the
/// valid input range; stops early once the target confidence is reached.
inline AttackResult pgd(const Model& model, const ImageTensor& image, int target,
                        const AttackConfig& cfg, const SaliencyMap* mask = nullptr) {
  detail::validate_attack_config(cfg);
  validate_image(image);
  require(target >= 0 && target < model.num_classes(), Errc::invalid_argument,
          "attack target out of range");
  if (mask)
    require(mask->height == image.height && mask->width == image.width, Errc::invalid_argument,
            "mask dims must match the image");

  const PreprocessSpec& pp = model.descriptor().preprocess;
  require(pp.channels() == image.channels, Errc::invalid_argument,
          "preprocess spec does not cover the image channels");

  const int C = image.channels, H = image.height, W = image.width;
  std::vector<double> eps_norm(C), alpha_norm(C), lo(C), hi(C);
  double alpha_raw = cfg.step_alpha > 0.0 ? cfg.step_alpha : cfg.epsilon / 10.0;
  for (int c = 0; c < C; ++c) {
    eps_norm[c] = cfg.epsilon / pp.stddev[c];
    alpha_norm[c] = alpha_raw / pp.stddev[c];
    lo[c] = pp.normalized_lo(c);
    hi[c] = pp.normalized_hi(c);
  }

  ImageTensor p(C, H, W, 0.0);
  AttackResult result;
  result.target_label = target;

  const bool penalized = mask != nullptr && cfg.beta > 0.0;
  for (int iter = 1; iter <= cfg.max_iterations; ++iter) {
    ImageTensor current(C, H, W);
    for (size_t i = 0; i < current.values.size(); ++i)
      current.values[i] = image.values[i] + p.values[i];

    ImageTensor grad = model.loss_input_gradient(current, target);
    for (double g : grad.values)
      require(std::isfinite(g), Errc::attack_diverged, "non-finite attack gradient");

    if (penalized) {
      double r = 0.0;
      for (int c = 0; c < C; ++c)
        for (int i = 0; i < H; ++i)
          for (int j = 0; j < W; ++j) {
            double wv = p.at(c, i, j) * (1.0 - static_cast<double>(mask->at(i, j)));
            r += wv * wv;
          }
      r = std::sqrt(r);
      if (r > 1e-12) {
        for (int c = 0; c < C; ++c)
          for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) {
              double om = 1.0 - static_cast<double>(mask->at(i, j));
              grad.at(c, i, j) += cfg.beta * p.at(c, i, j) * om * om / r;
            }
      }
    }

    double linf_raw = 0.0;
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
          double v = p.at(c, i, j) - alpha_norm[c] * detail::sign(grad.at(c, i, j));
          double lo_b = std::max(-eps_norm[c], lo[c] - image.at(c, i, j));
          double hi_b = std::min(eps_norm[c], hi[c] - image.at(c, i, j));
          v = std::clamp(v, lo_b, hi_b);
          p.at(c, i, j) = v;
          linf_raw = std::max(linf_raw, std::abs(v) * pp.stddev[c]);
        }

    ImageTensor stepped(C, H, W);
    for (size_t i = 0; i < stepped.values.size(); ++i)
      stepped.values[i] = image.values[i] + p.values[i];
    double conf = model.predict(stepped).probabilities[static_cast<size_t>(target)];
    result.confidence_trace.push_back(conf);
    result.linf_trace.push_back(linf_raw);
    result.iterations = iter;
    if (conf >= cfg.target_confidence) {
      result.success = true;
      break;
    }
  }

  result.final_confidence = result.confidence_trace.back();
  result.perturbation = p;
  result.perturbed_image = ImageTensor(C, H, W);
  double l2 = 0.0, linf = 0.0;
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) {
        double clipped = std::clamp(image.at(c, i, j) + p.at(c, i, j), lo[c], hi[c]);
        result.perturbed_image.at(c, i, j) = clipped;
        double raw = p.at(c, i, j) * pp.stddev[c];
        l2 += raw * raw;
        linf = std::max(linf, std::abs(raw));
      }
  result.l2_norm = std::sqrt(l2);
  result.linf_norm = linf;
  return result;
}

/// Percentage by which the masked attack shrank the perturbation L2 norm
/// relative to the vanilla attack on the same image and target.
inline double norm_reduction(const AttackResult& masked, const AttackResult& vanilla) {
  require(masked.success && vanilla.success, Errc::not_comparable,
          "both attacks must have reached the target confidence");
  require(masked.target_label == vanilla.target_label, Errc::not_comparable,
          "attacks target different labels");
  require(masked.perturbation.values.size() == vanilla.perturbation.values.size(),
          Errc::not_comparable, "attacks ran on different image shapes");
  require(vanilla.l2_norm > 0.0, Errc::not_comparable, "vanilla perturbation is empty");
  return 100.0 * (1.0 - masked.l2_norm / vanilla.l2_norm);
}

}  // namespace cameras
