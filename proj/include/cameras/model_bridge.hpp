#pragma once

// The narrow interface through which saliency, metrics, sanity and attack
// code touches a classifier. Everything model-framework specific stays behind
// the Model base class; NetModel adapts the in-repo nn framework.

#include <algorithm>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cameras/error.hpp"
#include "cameras/nn.hpp"
#include "cameras/raster.hpp"

namespace cameras {

/// Per-channel normalization contract plus the raw value range it maps from.
struct PreprocessSpec {
  std::vector<double> mean;
  std::vector<double> stddev;
  double range_lo = 0.0;
  double range_hi = 1.0;

  int channels() const { return static_cast<int>(mean.size()); }

  double normalized_lo(int c) const { return (range_lo - mean[c]) / stddev[c]; }
  double normalized_hi(int c) const { return (range_hi - mean[c]) / stddev[c]; }
};

/// Registration descriptor for a model: identity, preprocessing contract,
/// default capture layer and input-size constraint.
struct ModelDesc {
  std::string id;
  PreprocessSpec preprocess;
  std::string default_layer;  // empty: resolve the last convolutional layer
  int min_input = 8;
};

/// A preprocessed planar image, values already in the model's normalized
/// input space.
struct ImageTensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> values;  // [channel][row][col]

  ImageTensor() = default;
  ImageTensor(int c, int h, int w, double fill = 0.0)
      : channels(c), height(h), width(w), values(static_cast<size_t>(c) * h * w, fill) {}

  double& at(int c, int i, int j) {
    return values[(static_cast<size_t>(c) * height + i) * width + j];
  }
  double at(int c, int i, int j) const {
    return values[(static_cast<size_t>(c) * height + i) * width + j];
  }
  size_t size() const { return values.size(); }
};

inline void validate_image(const ImageTensor& img) {
  require(img.channels == 1 || img.channels == 3, Errc::invalid_argument,
          "image must have 1 or 3 channels, got " + std::to_string(img.channels));
  require(img.height >= 8 && img.width >= 8, Errc::invalid_argument,
          "image must be at least 8x8, got " + std::to_string(img.height) + "x" +
              std::to_string(img.width));
  for (double v : img.values)
    require(std::isfinite(v), Errc::invalid_argument, "image has non-finite values");
}

struct Prediction {
  int label = -1;                      // argmax of scores
  std::vector<double> scores;          // pre-softmax logits
  std::vector<double> probabilities;   // softmax of scores

  int num_classes() const { return static_cast<int>(scores.size()); }
};

/// Names one layer of a registered model.
struct LayerRef {
  std::string path;
  bool operator==(const LayerRef&) const = default;
};

/// Activations and gradients captured at one layer for one input: the
/// gradient stack holds d(score[target]) / d(activation) coefficient-wise.
struct LayerTensors {
  LayerRef layer;
  RasterStack activations;
  RasterStack gradients;
};

class Model {
 public:
  virtual ~Model() = default;

  virtual const ModelDesc& descriptor() const = 0;
  virtual int num_classes() const = 0;

  /// Inference-mode forward pass; deterministic for a fixed model and input.
  virtual Prediction predict(const ImageTensor& image) const = 0;

  /// One forward plus one backward pass; returns the layer's activations and
  /// the gradients of the target-class logit with respect to them.
  virtual LayerTensors capture(const ImageTensor& image, const LayerRef& layer,
                               int target_label) const = 0;

  /// Parameterized layers in output-to-input order.
  virtual std::vector<LayerRef> list_layers() const = 0;

  /// Independent copy with the first `depth` layers (output-to-input order)
  /// re-drawn from each tensor's empirical mean/std. Deterministic per seed;
  /// the original model is untouched.
  virtual std::unique_ptr<Model> randomize_through(int depth, uint64_t seed) const = 0;

  /// d(cross_entropy(scores, target)) / d(image), image-shaped.
  virtual ImageTensor loss_input_gradient(const ImageTensor& image, int target_label) const = 0;

  /// Whether concurrent predict/capture calls on this handle are safe.
  virtual bool reentrant() const = 0;

  /// Resolves the capture layer: the descriptor's choice if set, otherwise
  /// the model's final convolutional layer.
  LayerRef default_layer() const {
    if (!descriptor().default_layer.empty()) return {descriptor().default_layer};
    for (const LayerRef& ref : list_layers())
      if (is_conv_layer(ref)) return ref;  // output-to-input order: first conv is the last one
    fail(Errc::layer_not_found, "model has no convolutional layer");
  }

  virtual bool is_conv_layer(const LayerRef& ref) const = 0;
};

/// Bridge implementation over nn::SequentialNet.
class NetModel final : public Model {
 public:
  NetModel(nn::SequentialNet net, ModelDesc desc) : net_(std::move(net)), desc_(std::move(desc)) {
    int classes = 0;
    for (size_t i = 0; i < net_.layer_count(); ++i)
      if (auto* fc = dynamic_cast<const nn::Linear*>(&net_.layer(i)))
        classes = fc->out_features();
    require(classes > 0, Errc::invalid_argument, "network has no linear head");
    num_classes_ = classes;
    for (size_t i = 0; i < net_.layer_count(); ++i)
      if (auto* conv = dynamic_cast<const nn::Conv2d*>(&net_.layer(i))) {
        input_channels_ = conv->in_channels();
        break;
      }
  }

  const ModelDesc& descriptor() const override { return desc_; }
  int num_classes() const override { return num_classes_; }
  const nn::SequentialNet& net() const { return net_; }

  Prediction predict(const ImageTensor& image) const override {
    nn::SequentialNet::Trace trace;
    return run_forward(image, trace);
  }

  LayerTensors capture(const ImageTensor& image, const LayerRef& layer,
                       int target_label) const override {
    int idx = net_.find(layer.path);
    require(idx >= 0, Errc::layer_not_found, "no layer named '" + layer.path + "'");
    require(target_label >= 0 && target_label < num_classes_, Errc::invalid_argument,
            "target label out of range");
    nn::SequentialNet::Trace trace;
    run_forward(image, trace);
    nn::Tensor grad = net_.grad_logit_at_layer(trace, target_label, idx);
    const nn::Tensor& act = trace.outputs[static_cast<size_t>(idx)];
    for (double v : grad.v)
      require(std::isfinite(v), Errc::capture_failed, "non-finite gradient at " + layer.path);
    LayerTensors out{layer, to_stack(act), to_stack(grad)};
    return out;
  }

  std::vector<LayerRef> list_layers() const override {
    std::vector<LayerRef> refs;
    for (size_t i = net_.layer_count(); i-- > 0;)
      if (net_.layer(i).has_params()) refs.push_back({net_.layer(i).name()});
    return refs;
  }

  std::unique_ptr<Model> randomize_through(int depth, uint64_t seed) const override {
    std::vector<LayerRef> order = list_layers();
    require(depth >= 1 && depth <= static_cast<int>(order.size()), Errc::invalid_argument,
            "randomization depth must be in [1, " + std::to_string(order.size()) + "], got " +
                std::to_string(depth));
    nn::SequentialNet copy = net_.clone();
    for (int d = 1; d <= depth; ++d) {
      int idx = copy.find(order[static_cast<size_t>(d - 1)].path);
      std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ull * static_cast<uint64_t>(d)));
      copy.layer(static_cast<size_t>(idx)).redraw_params(rng);
    }
    return std::make_unique<NetModel>(std::move(copy), desc_);
  }

  ImageTensor loss_input_gradient(const ImageTensor& image, int target_label) const override {
    require(target_label >= 0 && target_label < num_classes_, Errc::invalid_argument,
            "target label out of range");
    nn::SequentialNet::Trace trace;
    run_forward(image, trace);
    nn::Tensor g = net_.grad_loss_at_input(trace, target_label);
    ImageTensor out(image.channels, image.height, image.width);
    out.values = std::move(g.v);
    return out;
  }

  bool reentrant() const override { return true; }  // const net, caller-held traces

  bool is_conv_layer(const LayerRef& ref) const override {
    int idx = net_.find(ref.path);
    return idx >= 0 && net_.layer(static_cast<size_t>(idx)).is_conv();
  }

  /// Prediction with one activation coefficient nudged by `delta` during the
  /// forward pass. Supports finite-difference checks of capture().
  Prediction predict_nudged(const ImageTensor& image, const LayerRef& layer, int k, int i, int j,
                            double delta) const {
    int idx = net_.find(layer.path);
    require(idx >= 0, Errc::layer_not_found, "no layer named '" + layer.path + "'");
    nn::SequentialNet::Injection inj{idx, k, i, j, delta};
    validate_input(image);
    nn::Tensor x = to_tensor(image);
    std::vector<double> logits = net_.forward(x, nullptr, &inj);
    return make_prediction(logits);
  }

 private:
  void validate_input(const ImageTensor& image) const {
    validate_image(image);
    require(image.channels == input_channels_, Errc::unsupported_input,
            desc_.id + " expects " + std::to_string(input_channels_) + " channels, got " +
                std::to_string(image.channels));
    require(image.height >= desc_.min_input && image.width >= desc_.min_input,
            Errc::unsupported_input,
            desc_.id + " cannot ingest " + std::to_string(image.height) + "x" +
                std::to_string(image.width) + " (minimum " + std::to_string(desc_.min_input) +
                ")");
  }

  Prediction run_forward(const ImageTensor& image, nn::SequentialNet::Trace& trace) const {
    validate_input(image);
    std::vector<double> logits = net_.forward(to_tensor(image), &trace);
    return make_prediction(logits);
  }

  static Prediction make_prediction(std::vector<double> logits) {
    Prediction p;
    p.label = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    p.probabilities = nn::softmax(logits);
    p.scores = std::move(logits);
    return p;
  }

  static nn::Tensor to_tensor(const ImageTensor& img) {
    nn::Tensor t(img.channels, img.height, img.width);
    t.v = img.values;
    return t;
  }

  static RasterStack to_stack(const nn::Tensor& t) {
    RasterStack s(t.c, t.h, t.w);
    s.values = t.v;
    return s;
  }

  nn::SequentialNet net_;
  ModelDesc desc_;
  int num_classes_ = 0;
  int input_channels_ = 0;
};

}  // namespace cameras
