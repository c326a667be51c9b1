#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <memory>
#include <random>

#include "cameras/saliency.hpp"
#include "support/rng.hpp"
#include "support/toy_fixture.hpp"

using namespace cameras;

namespace {

const testsupport::ToyDataset& dataset() {
  static auto ds = testsupport::make_toy_dataset(515);
  return ds;
}

const NetModel& toy_model() {
  static std::unique_ptr<NetModel> model = testsupport::train_toy_model(dataset(), 9);
  return *model;
}

/// Fixed-behavior stand-in whose prediction depends only on input width:
/// label 0 below the flip width, label 1 at or above it. Exercises the
/// scale-gating path without a real network.
class WidthStubModel final : public Model {
 public:
  explicit WidthStubModel(int flip_width) : flip_width_(flip_width) {
    desc_.id = "width-stub";
    desc_.preprocess = {{0.5}, {0.5}, 0.0, 1.0};
    desc_.min_input = 8;
  }

  const ModelDesc& descriptor() const override { return desc_; }
  int num_classes() const override { return 2; }

  Prediction predict(const ImageTensor& image) const override {
    Prediction p;
    p.label = image.width >= flip_width_ ? 1 : 0;
    p.scores = p.label == 1 ? std::vector<double>{0.0, 1.0} : std::vector<double>{1.0, 0.0};
    p.probabilities = nn::softmax(p.scores);
    return p;
  }

  LayerTensors capture(const ImageTensor& image, const LayerRef& layer, int) const override {
    int m = image.height / 2, n = image.width / 2;
    LayerTensors t{layer, RasterStack(1, m, n), RasterStack(1, m, n)};
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        t.activations.at(0, i, j) = static_cast<double>(i + j) / (m + n);
        t.gradients.at(0, i, j) = 1.0 / (1.0 + i);
      }
    return t;
  }

  std::vector<LayerRef> list_layers() const override { return {{"stub"}}; }
  std::unique_ptr<Model> randomize_through(int, uint64_t) const override {
    fail(Errc::invalid_argument, "stub cannot randomize");
  }
  ImageTensor loss_input_gradient(const ImageTensor& image, int) const override {
    return ImageTensor(image.channels, image.height, image.width, 0.0);
  }
  bool reentrant() const override { return true; }
  bool is_conv_layer(const LayerRef& ref) const override { return ref.path == "stub"; }

 private:
  int flip_width_;
  ModelDesc desc_;
};

void check_map_invariants(const SaliencyMap& map) {
  float mx = 0.0f;
  for (float v : map.values) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
    mx = std::max(mx, v);
  }
  if (mx > 0.0f) CHECK(mx == 1.0f);
}

}  // namespace

TEST_CASE("schedule ladder matches the frozen expansions") {
  ScaleSchedule s = make_schedule({224, 224}, {1000, 1000}, 7);
  std::vector<int> want = {224, 335, 446, 557, 667, 778, 889, 1000};
  REQUIRE(s.sizes.size() == 8);
  for (size_t i = 0; i < want.size(); ++i) {
    CHECK(s.sizes[i].h == want[i]);
    CHECK(s.sizes[i].w == want[i]);
  }

  ScaleSchedule single = make_schedule({224, 224}, {224, 224}, 0);
  REQUIRE(single.sizes.size() == 1);
  CHECK(single.sizes[0] == ScaleSize{224, 224});

  ScaleSchedule small = make_schedule({4, 4}, {8, 8}, 2);
  REQUIRE(small.sizes.size() == 3);
  CHECK(small.sizes[0] == ScaleSize{4, 4});
  CHECK(small.sizes[1] == ScaleSize{6, 6});
  CHECK(small.sizes[2] == ScaleSize{8, 8});
}

TEST_CASE("schedule sizes are monotone and pinned at both ends") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    int b = testsupport::uniform_int(rng, 8, 64);
    int m = b + testsupport::uniform_int(rng, 0, 300);
    int n = testsupport::uniform_int(rng, 1, 9);
    ScaleSchedule s = make_schedule({b, b}, {m, m}, n);
    CHECK(s.sizes.front() == ScaleSize{b, b});
    CHECK(s.sizes.back() == ScaleSize{m, m});
    for (size_t i = 1; i < s.sizes.size(); ++i) {
      CHECK(s.sizes[i].h >= s.sizes[i - 1].h);
      CHECK(s.sizes[i].w >= s.sizes[i - 1].w);
    }
  }
  CHECK_THROWS_AS(make_schedule({64, 64}, {32, 64}, 3), Error);
  CHECK_THROWS_AS(make_schedule({64, 64}, {128, 128}, -1), Error);
}

TEST_CASE("the printed recurrence ladder overshoots, as documented") {
  ScaleSchedule s = make_schedule({224, 224}, {1000, 1000}, 7, LadderKind::paper_recurrence);
  std::vector<int> want = {224, 366, 650, 1076, 1644, 2354, 3206, 4200};
  REQUIRE(s.sizes.size() == want.size());
  for (size_t i = 0; i < want.size(); ++i) CHECK(s.sizes[i].h == want[i]);
  CHECK(s.sizes.back().h > s.max_size.h);
}

TEST_CASE("normalize rescales and zeroes constants") {
  Raster2D r(2, 2);
  r.values = {0.0, 5.0, 10.0, 2.5};
  Raster2D out = normalize(r);
  CHECK(out.values[0] == 0.0);
  CHECK(out.values[1] == 0.5);
  CHECK(out.values[2] == 1.0);
  CHECK(out.values[3] == 0.25);

  Raster2D flat(3, 3, 4.2);
  Raster2D z = normalize(flat);
  for (double v : z.values) CHECK(v == 0.0);

  std::mt19937_64 rng(5);
  Raster2D noise(6, 6);
  for (auto& v : noise.values) v = testsupport::uniform(rng, -4.0, 9.0);
  Raster2D n = normalize(noise);
  CHECK(*std::min_element(n.values.begin(), n.values.end()) == 0.0);
  CHECK(*std::max_element(n.values.begin(), n.values.end()) == 1.0);

  noise.values[0] = std::nan("");
  CHECK_THROWS_AS(normalize(noise), Error);
}

TEST_CASE("fuse annihilates on zero gradients") {
  RasterStack a(3, 4, 4, 1.0), g(3, 4, 4, 0.0);
  SaliencyMap map = fuse(a, g);
  for (float v : map.values) CHECK(v == 0.0f);
}

TEST_CASE("fuse isolates the single positive coefficient") {
  RasterStack a(1, 3, 3, 1.0), g(1, 3, 3, -2.0);
  g.at(0, 1, 2) = 0.7;
  SaliencyMap map = fuse(a, g);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(map.at(i, j) == ((i == 1 && j == 2) ? 1.0f : 0.0f));
}

TEST_CASE("fuse matches a brute-force oracle on random stacks") {
  std::mt19937_64 rng(17);
  RasterStack a(2, 5, 6), g(2, 5, 6);
  for (auto& v : a.values) v = testsupport::uniform(rng, -1.0, 1.0);
  for (auto& v : g.values) v = testsupport::uniform(rng, -1.0, 1.0);
  SaliencyMap map = fuse(a, g);

  // independent elementwise-product loop
  std::vector<double> want(30, 0.0);
  for (int k = 0; k < 2; ++k)
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 6; ++j) want[static_cast<size_t>(i) * 6 + j] += a.at(k, i, j) * g.at(k, i, j);
  for (auto& v : want) v = std::max(v, 0.0);
  double mn = *std::min_element(want.begin(), want.end());
  double mx = *std::max_element(want.begin(), want.end());
  for (size_t i = 0; i < want.size(); ++i) {
    double norm = mx > mn ? (want[i] - mn) / (mx - mn) : 0.0;
    CHECK(std::abs(map.values[i] - norm) <= 1e-6);
  }

  RasterStack bad(2, 4, 6);
  CHECK_THROWS_AS(fuse(a, bad), Error);
}

TEST_CASE("fuse is invariant to joint channel permutation") {
  std::mt19937_64 rng(19);
  RasterStack a(4, 5, 5), g(4, 5, 5);
  for (auto& v : a.values) v = testsupport::uniform(rng, -1.0, 1.0);
  for (auto& v : g.values) v = testsupport::uniform(rng, -1.0, 1.0);
  RasterStack ar(4, 5, 5), gr(4, 5, 5);
  for (int k = 0; k < 4; ++k) {
    ar.set_channel(k, a.channel(3 - k));
    gr.set_channel(k, g.channel(3 - k));
  }
  SaliencyMap m1 = fuse(a, g);
  SaliencyMap m2 = fuse(ar, gr);
  for (size_t i = 0; i < m1.values.size(); ++i)
    CHECK(m1.values[i] == doctest::Approx(m2.values[i]).epsilon(1e-12));
}

TEST_CASE("single-scale run reduces to fuse of one capture, bit-exact") {
  const NetModel& model = toy_model();
  LayerRef layer = model.default_layer();
  for (int i = 0; i < 10; ++i) {
    const ImageTensor& img = dataset().test[static_cast<size_t>(i)].image;
    ScaleSchedule sched = make_schedule({img.height, img.width}, {img.height, img.width}, 0);
    SaliencyMap got = compute_cameras(model, img, sched, layer);

    Prediction p = model.predict(img);
    LayerTensors cap = model.capture(img, layer, p.label);
    SaliencyMap want = fuse(resize_stack(cap.activations, img.height, img.width),
                            resize_stack(cap.gradients, img.height, img.width));
    CHECK(got.values == want.values);
    CHECK(got.meta.accepted_scales == 1);
    check_map_invariants(got);
  }
}

TEST_CASE("duplicate-size scales average out exactly") {
  const NetModel& model = toy_model();
  const ImageTensor& img = dataset().test[11].image;
  LayerRef layer = model.default_layer();
  ScaleSchedule once = make_schedule({64, 64}, {64, 64}, 0);
  ScaleSchedule twice = make_schedule({64, 64}, {64, 64}, 1);  // [64, 64] duplicated
  REQUIRE(twice.sizes.size() == 2);
  SaliencyMap a = compute_cameras(model, img, once, layer);
  SaliencyMap b = compute_cameras(model, img, twice, layer);
  CHECK(a.values == b.values);
  CHECK(b.meta.accepted_scales == 2);
}

TEST_CASE("multi-scale runs are deterministic and record their gating") {
  const NetModel& model = toy_model();
  const ImageTensor& img = dataset().test[12].image;
  ScaleSchedule sched = make_schedule({64, 64}, {256, 256}, 7);
  SaliencyMap a = compute_cameras(model, img, sched, model.default_layer());
  SaliencyMap b = compute_cameras(model, img, sched, model.default_layer());
  CHECK(a.values == b.values);
  CHECK(a.meta.accepted_scales >= 1);
  CHECK(a.meta.accepted_scales + static_cast<int>(a.meta.skipped.size()) ==
        static_cast<int>(sched.sizes.size()));
  CHECK(a.meta.method == "cameras");
  CHECK(a.meta.layer == "conv3");
  check_map_invariants(a);
}

TEST_CASE("scales that flip the prediction are skipped and recorded") {
  WidthStubModel stub(100);
  ImageTensor img(1, 64, 64, 0.25);
  ScaleSchedule sched = make_schedule({64, 64}, {128, 128}, 4);  // 64,80,96,112,128
  SaliencyMap map = compute_cameras(stub, img, sched, {"stub"});
  CHECK(map.meta.accepted_scales == 3);
  REQUIRE(map.meta.skipped.size() == 2);
  CHECK(map.meta.skipped[0].size.w == 112);
  CHECK(map.meta.skipped[0].predicted_label == 1);
  CHECK(map.meta.skipped[1].size.w == 128);

  // every accepted scale agreed with the gating label by construction;
  // an unreachable target label must fail loudly with the per-scale labels
  ScaleSchedule small = make_schedule({64, 64}, {96, 96}, 2);  // 64,80,96: all predict 0
  try {
    compute_cameras(stub, img, small, {"stub"}, 1);
    FAIL("expected degenerate schedule");
  } catch (const DegenerateScheduleError& e) {
    CHECK(e.code() == Errc::degenerate_schedule);
    CHECK(e.per_scale.size() == 3);
    for (const auto& s : e.per_scale) CHECK(s.predicted_label == 0);
    CHECK(std::string(e.what()).find("64x64") != std::string::npos);
  }
}

TEST_CASE("cameras argmax lands in the class quadrant on held-out images") {
  const NetModel& model = toy_model();
  ScaleSchedule sched = make_schedule({64, 64}, {256, 256}, 7);
  int hits = 0, n = 10;
  for (int i = 0; i < n; ++i) {
    const auto& s = dataset().test[static_cast<size_t>(i)];
    SaliencyMap map = compute_cameras(model, s.image, sched, model.default_layer());
    auto it = std::max_element(map.values.begin(), map.values.end());
    int flat = static_cast<int>(it - map.values.begin());
    int mi = flat / map.width, mj = flat % map.width;
    if (mj >= s.quadrant.x0 && mj <= s.quadrant.x1 && mi >= s.quadrant.y0 && mi <= s.quadrant.y1)
      ++hits;
  }
  CHECK(hits >= 9);
}

TEST_CASE("gradcam matches an independent reference implementation") {
  const NetModel& model = toy_model();
  LayerRef layer = model.default_layer();
  for (int i = 0; i < 10; ++i) {
    const ImageTensor& img = dataset().test[static_cast<size_t>(20 + i)].image;
    Prediction p = model.predict(img);
    SaliencyMap got = compute_gradcam(model, img, layer);

    LayerTensors cap = model.capture(img, layer, p.label);
    int m = cap.activations.height, n = cap.activations.width;
    Raster2D s(m, n, 0.0);
    for (int k = 0; k < cap.activations.channels; ++k) {
      double wk = 0.0;
      for (int y = 0; y < m; ++y)
        for (int x = 0; x < n; ++x) wk += cap.gradients.at(k, y, x);
      wk /= static_cast<double>(m + n);
      for (int y = 0; y < m; ++y)
        for (int x = 0; x < n; ++x) s.at(y, x) += wk * cap.activations.at(k, y, x);
    }
    for (double& v : s.values) v = std::max(0.0, v);
    Raster2D up = bilinear_resize(s, img.height, img.width);
    auto [mn_it, mx_it] = std::minmax_element(up.values.begin(), up.values.end());
    for (size_t t = 0; t < up.values.size(); ++t) {
      double want =
          *mx_it > *mn_it ? (up.values[t] - *mn_it) / (*mx_it - *mn_it) : 0.0;
      CHECK(std::abs(static_cast<double>(got.values[t]) - want) <= 1e-5);
    }
    CHECK(got.meta.method == "gradcam");
    check_map_invariants(got);
  }
}

TEST_CASE("single-channel gradcam argmax follows the activation argmax") {
  using namespace cameras::nn;
  std::mt19937_64 rng(91);
  SequentialNet net;
  auto conv = std::make_unique<Conv2d>("conv1", 3, 1, 3, 1, 1, false);
  conv->init_params(rng);
  net.add(std::move(conv));
  net.add(std::make_unique<AdaptiveAvgPool>("gap", 1, 1));
  auto fc = std::make_unique<Linear>("fc", 1, 2);
  fc->weight() = {1.0, -1.0};  // class 0 weights the single channel positively
  fc->bias() = {0.0, 0.0};
  net.add(std::move(fc));
  NetModel model(std::move(net), testsupport::toy_desc());

  ImageTensor img(3, 16, 16);
  for (auto& v : img.values) v = testsupport::uniform(rng, -1.0, 1.0);
  LayerTensors cap = model.capture(img, {"conv1"}, 0);
  double best = -1e30;
  int want = -1;
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j)
      if (cap.activations.at(0, i, j) > best) {
        best = cap.activations.at(0, i, j);
        want = i * 16 + j;
      }
  REQUIRE(best > 0.0);

  SaliencyMap map = compute_gradcam(model, img, {"conv1"}, 0);
  auto it = std::max_element(map.values.begin(), map.values.end());
  CHECK(static_cast<int>(it - map.values.begin()) == want);
}
