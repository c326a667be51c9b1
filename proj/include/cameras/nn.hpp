#pragma once

// Minimal CPU network framework backing the model bridge: plain tensors,
// conv / adaptive-pool / linear layers with exact backward passes, and a
// sequential container with an explicit forward trace. All state needed by a
// backward pass lives in the caller-held trace, so a const net is safe to use
// from multiple threads at once.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "cameras/error.hpp"
#include "cameras/rand.hpp"

namespace cameras::nn {

struct Tensor {
  int c = 0, h = 0, w = 0;
  std::vector<double> v;  // [channel][row][col]

  Tensor() = default;
  Tensor(int c_, int h_, int w_, double fill = 0.0) : c(c_), h(h_), w(w_) {
    require(c_ >= 1 && h_ >= 1 && w_ >= 1, Errc::invalid_argument, "tensor dims must be positive");
    v.assign(static_cast<size_t>(c_) * h_ * w_, fill);
  }

  double& at(int k, int i, int j) { return v[(static_cast<size_t>(k) * h + i) * w + j]; }
  double at(int k, int i, int j) const { return v[(static_cast<size_t>(k) * h + i) * w + j]; }
  size_t size() const { return v.size(); }
};

/// Per-layer parameter gradients, shaped like Layer::param_tensors().
using LayerGrads = std::vector<std::vector<double>>;

class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;

  const std::string& name() const { return name_; }
  virtual const char* kind() const = 0;
  virtual bool has_params() const { return false; }
  virtual bool is_conv() const { return false; }

  virtual Tensor forward(const Tensor& in) const = 0;

  /// Maps grad wrt this layer's output to grad wrt its input; accumulates
  /// parameter gradients into `pg` when non-null (pre-sized by make_grads).
  virtual Tensor backward(const Tensor& in, const Tensor& out, const Tensor& grad_out,
                          LayerGrads* pg) const = 0;

  virtual std::vector<std::vector<double>*> param_tensors() { return {}; }
  virtual std::unique_ptr<Layer> clone() const = 0;

  LayerGrads make_grads() {
    LayerGrads g;
    for (auto* p : param_tensors()) g.emplace_back(p->size(), 0.0);
    return g;
  }

  /// Redraws every parameter tensor i.i.d. from a normal fitted to that
  /// tensor's empirical mean and (population) std.
  void redraw_params(std::mt19937_64& rng) {
    for (auto* p : param_tensors()) {
      if (p->empty()) continue;
      double mean = 0.0;
      for (double x : *p) mean += x;
      mean /= static_cast<double>(p->size());
      double var = 0.0;
      for (double x : *p) var += (x - mean) * (x - mean);
      double sd = std::sqrt(var / static_cast<double>(p->size()));
      for (double& x : *p) x = mean + sd * rnd::normal01(rng);
    }
  }

 private:
  std::string name_;
};

class Conv2d final : public Layer {
 public:
  Conv2d(std::string name, int in_ch, int out_ch, int ksize, int stride, int pad, bool relu)
      : Layer(std::move(name)),
        in_ch_(in_ch),
        out_ch_(out_ch),
        ksize_(ksize),
        stride_(stride),
        pad_(pad),
        relu_(relu),
        weight_(static_cast<size_t>(out_ch) * in_ch * ksize * ksize, 0.0),
        bias_(out_ch, 0.0) {
    require(in_ch >= 1 && out_ch >= 1 && ksize >= 1 && stride >= 1 && pad >= 0,
            Errc::invalid_argument, "bad conv spec");
  }

  const char* kind() const override { return "conv"; }
  bool has_params() const override { return true; }
  bool is_conv() const override { return true; }
  int in_channels() const { return in_ch_; }
  int out_channels() const { return out_ch_; }
  bool fused_relu() const { return relu_; }

  void init_params(std::mt19937_64& rng) {
    double limit = std::sqrt(6.0 / (in_ch_ * ksize_ * ksize_));
    for (double& x : weight_) x = rnd::uniform(rng, -limit, limit);
    std::fill(bias_.begin(), bias_.end(), 0.0);
  }

  Tensor forward(const Tensor& in) const override {
    require(in.c == in_ch_, Errc::invalid_argument,
            name() + ": expected " + std::to_string(in_ch_) + " input channels, got " +
                std::to_string(in.c));
    int oh = (in.h + 2 * pad_ - ksize_) / stride_ + 1;
    int ow = (in.w + 2 * pad_ - ksize_) / stride_ + 1;
    require(oh >= 1 && ow >= 1, Errc::unsupported_input,
            name() + ": input " + std::to_string(in.h) + "x" + std::to_string(in.w) +
                " too small for this layer");
    Tensor out(out_ch_, oh, ow);
    for (int oc = 0; oc < out_ch_; ++oc) {
      double* oplane = out.v.data() + static_cast<size_t>(oc) * oh * ow;
      std::fill(oplane, oplane + static_cast<size_t>(oh) * ow, bias_[oc]);
      for (int ic = 0; ic < in_ch_; ++ic) {
        const double* iplane = in.v.data() + static_cast<size_t>(ic) * in.h * in.w;
        for (int ky = 0; ky < ksize_; ++ky) {
          for (int kx = 0; kx < ksize_; ++kx) {
            double wv = wat(oc, ic, ky, kx);
            for (int oy = 0; oy < oh; ++oy) {
              int iy = oy * stride_ + ky - pad_;
              if (iy < 0 || iy >= in.h) continue;
              const double* irow = iplane + static_cast<size_t>(iy) * in.w;
              double* orow = oplane + static_cast<size_t>(oy) * ow;
              for (int ox = 0; ox < ow; ++ox) {
                int ix = ox * stride_ + kx - pad_;
                if (ix < 0 || ix >= in.w) continue;
                orow[ox] += wv * irow[ix];
              }
            }
          }
        }
      }
    }
    if (relu_)
      for (double& x : out.v) x = std::max(0.0, x);
    return out;
  }

  Tensor backward(const Tensor& in, const Tensor& out, const Tensor& grad_out,
                  LayerGrads* pg) const override {
    Tensor g = grad_out;
    if (relu_) {
      for (size_t i = 0; i < g.v.size(); ++i)
        if (out.v[i] <= 0.0) g.v[i] = 0.0;
    }
    Tensor gin(in.c, in.h, in.w, 0.0);
    std::vector<double>* gw = pg ? &(*pg)[0] : nullptr;
    std::vector<double>* gb = pg ? &(*pg)[1] : nullptr;
    int oh = g.h, ow = g.w;
    for (int oc = 0; oc < out_ch_; ++oc) {
      const double* gplane = g.v.data() + static_cast<size_t>(oc) * oh * ow;
      if (gb) {
        double acc = 0.0;
        for (int t = 0; t < oh * ow; ++t) acc += gplane[t];
        (*gb)[oc] += acc;
      }
      for (int ic = 0; ic < in_ch_; ++ic) {
        const double* iplane = in.v.data() + static_cast<size_t>(ic) * in.h * in.w;
        double* giplane = gin.v.data() + static_cast<size_t>(ic) * in.h * in.w;
        for (int ky = 0; ky < ksize_; ++ky) {
          for (int kx = 0; kx < ksize_; ++kx) {
            double wv = wat(oc, ic, ky, kx);
            double wacc = 0.0;
            for (int oy = 0; oy < oh; ++oy) {
              int iy = oy * stride_ + ky - pad_;
              if (iy < 0 || iy >= in.h) continue;
              const double* grow = gplane + static_cast<size_t>(oy) * ow;
              const double* irow = iplane + static_cast<size_t>(iy) * in.w;
              double* girow = giplane + static_cast<size_t>(iy) * in.w;
              for (int ox = 0; ox < ow; ++ox) {
                int ix = ox * stride_ + kx - pad_;
                if (ix < 0 || ix >= in.w) continue;
                wacc += grow[ox] * irow[ix];
                girow[ix] += wv * grow[ox];
              }
            }
            if (gw) (*gw)[widx(oc, ic, ky, kx)] += wacc;
          }
        }
      }
    }
    return gin;
  }

  std::vector<std::vector<double>*> param_tensors() override { return {&weight_, &bias_}; }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }

  // serialization hooks
  int ksize() const { return ksize_; }
  int stride() const { return stride_; }
  int pad() const { return pad_; }
  const std::vector<double>& weight() const { return weight_; }
  const std::vector<double>& bias() const { return bias_; }
  std::vector<double>& weight() { return weight_; }
  std::vector<double>& bias() { return bias_; }

 private:
  size_t widx(int oc, int ic, int ky, int kx) const {
    return ((static_cast<size_t>(oc) * in_ch_ + ic) * ksize_ + ky) * ksize_ + kx;
  }
  double wat(int oc, int ic, int ky, int kx) const { return weight_[widx(oc, ic, ky, kx)]; }

  int in_ch_, out_ch_, ksize_, stride_, pad_;
  bool relu_;
  std::vector<double> weight_;
  std::vector<double> bias_;
};

/// Averages the input over a fixed output grid regardless of input size.
/// out_h = out_w = 1 is global average pooling.
class AdaptiveAvgPool final : public Layer {
 public:
  AdaptiveAvgPool(std::string name, int out_h, int out_w)
      : Layer(std::move(name)), out_h_(out_h), out_w_(out_w) {
    require(out_h >= 1 && out_w >= 1, Errc::invalid_argument, "bad pool grid");
  }

  const char* kind() const override { return "pool"; }
  int out_h() const { return out_h_; }
  int out_w() const { return out_w_; }

  Tensor forward(const Tensor& in) const override {
    Tensor out(in.c, out_h_, out_w_);
    for (int k = 0; k < in.c; ++k)
      for (int i = 0; i < out_h_; ++i) {
        auto [ys, ye] = span(i, in.h, out_h_);
        for (int j = 0; j < out_w_; ++j) {
          auto [xs, xe] = span(j, in.w, out_w_);
          double acc = 0.0;
          for (int y = ys; y < ye; ++y)
            for (int x = xs; x < xe; ++x) acc += in.at(k, y, x);
          out.at(k, i, j) = acc / (static_cast<double>(ye - ys) * (xe - xs));
        }
      }
    return out;
  }

  Tensor backward(const Tensor& in, const Tensor&, const Tensor& grad_out,
                  LayerGrads*) const override {
    Tensor gin(in.c, in.h, in.w, 0.0);
    for (int k = 0; k < in.c; ++k)
      for (int i = 0; i < out_h_; ++i) {
        auto [ys, ye] = span(i, in.h, out_h_);
        for (int j = 0; j < out_w_; ++j) {
          auto [xs, xe] = span(j, in.w, out_w_);
          double share = grad_out.at(k, i, j) / (static_cast<double>(ye - ys) * (xe - xs));
          for (int y = ys; y < ye; ++y)
            for (int x = xs; x < xe; ++x) gin.at(k, y, x) += share;
        }
      }
    return gin;
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<AdaptiveAvgPool>(*this); }

 private:
  static std::pair<int, int> span(int i, int n, int out) {
    int s = (i * n) / out;
    int e = ((i + 1) * n + out - 1) / out;  // ceil
    return {s, std::max(e, s + 1)};
  }

  int out_h_, out_w_;
};

/// Fully connected head over the flattened input.
class Linear final : public Layer {
 public:
  Linear(std::string name, int in_features, int out_features)
      : Layer(std::move(name)),
        in_(in_features),
        out_(out_features),
        weight_(static_cast<size_t>(out_features) * in_features, 0.0),
        bias_(out_features, 0.0) {
    require(in_features >= 1 && out_features >= 1, Errc::invalid_argument, "bad linear spec");
  }

  const char* kind() const override { return "linear"; }
  bool has_params() const override { return true; }
  int in_features() const { return in_; }
  int out_features() const { return out_; }

  void init_params(std::mt19937_64& rng) {
    double limit = std::sqrt(6.0 / in_);
    for (double& x : weight_) x = rnd::uniform(rng, -limit, limit);
    std::fill(bias_.begin(), bias_.end(), 0.0);
  }

  Tensor forward(const Tensor& in) const override {
    require(static_cast<int>(in.size()) == in_, Errc::unsupported_input,
            name() + ": expected " + std::to_string(in_) + " features, got " +
                std::to_string(in.size()));
    Tensor out(out_, 1, 1);
    for (int o = 0; o < out_; ++o) {
      double acc = bias_[o];
      const double* wrow = weight_.data() + static_cast<size_t>(o) * in_;
      for (int i = 0; i < in_; ++i) acc += wrow[i] * in.v[i];
      out.v[o] = acc;
    }
    return out;
  }

  Tensor backward(const Tensor& in, const Tensor&, const Tensor& grad_out,
                  LayerGrads* pg) const override {
    Tensor gin(in.c, in.h, in.w, 0.0);
    for (int o = 0; o < out_; ++o) {
      double g = grad_out.v[o];
      const double* wrow = weight_.data() + static_cast<size_t>(o) * in_;
      for (int i = 0; i < in_; ++i) gin.v[i] += wrow[i] * g;
      if (pg) {
        double* gw = (*pg)[0].data() + static_cast<size_t>(o) * in_;
        for (int i = 0; i < in_; ++i) gw[i] += g * in.v[i];
        (*pg)[1][o] += g;
      }
    }
    return gin;
  }

  std::vector<std::vector<double>*> param_tensors() override { return {&weight_, &bias_}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Linear>(*this); }

  const std::vector<double>& weight() const { return weight_; }
  const std::vector<double>& bias() const { return bias_; }
  std::vector<double>& weight() { return weight_; }
  std::vector<double>& bias() { return bias_; }

 private:
  int in_, out_;
  std::vector<double> weight_;
  std::vector<double> bias_;
};

inline std::vector<double> softmax(const std::vector<double>& logits) {
  double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (double& x : p) x /= z;
  return p;
}

inline double cross_entropy(const std::vector<double>& logits, int target) {
  std::vector<double> p = softmax(logits);
  return -std::log(std::max(p[static_cast<size_t>(target)], 1e-300));
}

class SequentialNet {
 public:
  struct Trace {
    Tensor input;
    std::vector<Tensor> outputs;  // one per layer
  };

  /// Additive nudge applied to one coefficient of one layer's output during
  /// the forward pass. Test instrumentation for finite-difference checks.
  struct Injection {
    int layer = -1;
    int k = 0, i = 0, j = 0;
    double delta = 0.0;
  };

  void add(std::unique_ptr<Layer> layer) {
    require(find(layer->name()) < 0, Errc::invalid_argument,
            "duplicate layer name " + layer->name());
    layers_.push_back(std::move(layer));
  }

  size_t layer_count() const { return layers_.size(); }
  const Layer& layer(size_t i) const { return *layers_[i]; }
  Layer& layer(size_t i) { return *layers_[i]; }

  int find(const std::string& name) const {
    for (size_t i = 0; i < layers_.size(); ++i)
      if (layers_[i]->name() == name) return static_cast<int>(i);
    return -1;
  }

  /// Runs the net, returning logits. The trace, when provided, records the
  /// input and every layer output and is what backward passes consume.
  std::vector<double> forward(const Tensor& in, Trace* trace = nullptr,
                              const Injection* inj = nullptr) const {
    require(!layers_.empty(), Errc::invalid_argument, "empty network");
    if (trace) {
      trace->input = in;
      trace->outputs.clear();
      trace->outputs.reserve(layers_.size());
    }
    Tensor x = in;
    for (size_t i = 0; i < layers_.size(); ++i) {
      x = layers_[i]->forward(x);
      if (inj && inj->layer == static_cast<int>(i)) x.at(inj->k, inj->i, inj->j) += inj->delta;
      if (trace) trace->outputs.push_back(x);
    }
    require(x.h == 1 && x.w == 1, Errc::invalid_argument, "network must end in a 1x1 head");
    return x.v;
  }

  /// Propagates `grad` (wrt the final logits) back to the output of layer
  /// `down_to_layer`; -1 propagates all the way to the network input.
  /// Parameter gradients accumulate into `grads` when non-null.
  Tensor backward(const Trace& trace, const Tensor& grad_at_logits, int down_to_layer,
                  std::vector<LayerGrads>* grads = nullptr) const {
    require(down_to_layer >= -1 && down_to_layer < static_cast<int>(layers_.size()),
            Errc::invalid_argument, "bad backward stop layer");
    Tensor g = grad_at_logits;
    for (int i = static_cast<int>(layers_.size()) - 1; i > down_to_layer; --i) {
      const Tensor& in = (i == 0) ? trace.input : trace.outputs[i - 1];
      g = layers_[i]->backward(in, trace.outputs[i], g, grads ? &(*grads)[i] : nullptr);
    }
    return g;
  }

  /// d(logits[target]) / d(output of layers_[layer_idx]).
  Tensor grad_logit_at_layer(const Trace& trace, int target, int layer_idx) const {
    Tensor seed = onehot(trace, target);
    return backward(trace, seed, layer_idx);
  }

  /// d(cross_entropy(logits, target)) / d(input).
  Tensor grad_loss_at_input(const Trace& trace, int target) const {
    return backward(trace, ce_seed(trace, target), -1);
  }

  /// Accumulates parameter gradients of the cross-entropy loss.
  void accumulate_loss_grads(const Trace& trace, int target,
                             std::vector<LayerGrads>& grads) const {
    backward(trace, ce_seed(trace, target), -1, &grads);
  }

  std::vector<LayerGrads> make_grads() {
    std::vector<LayerGrads> g;
    g.reserve(layers_.size());
    for (auto& l : layers_) g.push_back(l->make_grads());
    return g;
  }

  SequentialNet clone() const {
    SequentialNet net;
    for (const auto& l : layers_) net.layers_.push_back(l->clone());
    return net;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), Errc::io_error, "cannot open " + path + " for writing");
    out.write("CNET", 4);
    write_u32(out, 1);  // format version
    write_u32(out, static_cast<uint32_t>(layers_.size()));
    for (const auto& l : layers_) {
      std::string kind = l->kind();
      uint8_t tag = kind == "conv" ? 1 : kind == "pool" ? 2 : 3;
      out.put(static_cast<char>(tag));
      write_str(out, l->name());
      if (auto* c = dynamic_cast<const Conv2d*>(l.get())) {
        write_u32(out, c->in_channels());
        write_u32(out, c->out_channels());
        write_u32(out, c->ksize());
        write_u32(out, c->stride());
        write_u32(out, c->pad());
        out.put(c->fused_relu() ? 1 : 0);
        write_vec(out, c->weight());
        write_vec(out, c->bias());
      } else if (auto* p = dynamic_cast<const AdaptiveAvgPool*>(l.get())) {
        write_u32(out, p->out_h());
        write_u32(out, p->out_w());
      } else if (auto* fc = dynamic_cast<const Linear*>(l.get())) {
        write_u32(out, fc->in_features());
        write_u32(out, fc->out_features());
        write_vec(out, fc->weight());
        write_vec(out, fc->bias());
      }
    }
    require(out.good(), Errc::io_error, "write failed for " + path);
  }

  static SequentialNet load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), Errc::io_error, "cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    require(in.good() && std::memcmp(magic, "CNET", 4) == 0, Errc::io_error,
            path + " is not a network file");
    require(read_u32(in) == 1, Errc::io_error, "unsupported network format version");
    uint32_t n = read_u32(in);
    SequentialNet net;
    for (uint32_t i = 0; i < n; ++i) {
      int tag = in.get();
      std::string name = read_str(in);
      if (tag == 1) {
        uint32_t ic = read_u32(in), oc = read_u32(in), k = read_u32(in), s = read_u32(in),
                 p = read_u32(in);
        bool relu = in.get() != 0;
        auto conv = std::make_unique<Conv2d>(name, ic, oc, k, s, p, relu);
        read_vec(in, conv->weight());
        read_vec(in, conv->bias());
        net.add(std::move(conv));
      } else if (tag == 2) {
        uint32_t oh = read_u32(in), ow = read_u32(in);
        net.add(std::make_unique<AdaptiveAvgPool>(name, oh, ow));
      } else if (tag == 3) {
        uint32_t fi = read_u32(in), fo = read_u32(in);
        auto fc = std::make_unique<Linear>(name, fi, fo);
        read_vec(in, fc->weight());
        read_vec(in, fc->bias());
        net.add(std::move(fc));
      } else {
        fail(Errc::io_error, "unknown layer tag in " + path);
      }
      require(in.good(), Errc::io_error, "truncated network file " + path);
    }
    return net;
  }

 private:
  Tensor onehot(const Trace& trace, int target) const {
    const Tensor& logits = trace.outputs.back();
    require(target >= 0 && target < static_cast<int>(logits.size()), Errc::invalid_argument,
            "target class out of range");
    Tensor seed(logits.c, 1, 1, 0.0);
    seed.v[target] = 1.0;
    return seed;
  }

  Tensor ce_seed(const Trace& trace, int target) const {
    const Tensor& logits = trace.outputs.back();
    require(target >= 0 && target < static_cast<int>(logits.size()), Errc::invalid_argument,
            "target class out of range");
    std::vector<double> p = softmax(logits.v);
    Tensor seed(logits.c, 1, 1, 0.0);
    for (size_t i = 0; i < p.size(); ++i) seed.v[i] = p[i];
    seed.v[target] -= 1.0;
    return seed;
  }

  static void write_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
  }
  static uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
  }
  static void write_str(std::ostream& out, const std::string& s) {
    write_u32(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  static std::string read_str(std::istream& in) {
    uint32_t n = read_u32(in);
    require(n < 4096, Errc::io_error, "implausible string length in network file");
    std::string s(n, '\0');
    in.read(s.data(), n);
    return s;
  }
  static void write_vec(std::ostream& out, const std::vector<double>& v) {
    write_u32(out, static_cast<uint32_t>(v.size()));
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  static void read_vec(std::istream& in, std::vector<double>& v) {
    uint32_t n = read_u32(in);
    require(n == v.size(), Errc::io_error, "parameter block size mismatch in network file");
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
  }

  std::vector<std::unique_ptr<Layer>> layers_;
};

}  // namespace cameras::nn
