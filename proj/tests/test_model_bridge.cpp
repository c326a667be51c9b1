#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <memory>
#include <random>

#include "cameras/model_bridge.hpp"
#include "support/rng.hpp"
#include "support/toy_fixture.hpp"

using namespace cameras;
using testsupport::ToyDataset;

namespace {

const ToyDataset& dataset() {
  static ToyDataset ds = testsupport::make_toy_dataset(2024);
  return ds;
}

const NetModel& toy_model() {
  static std::unique_ptr<NetModel> model = testsupport::train_toy_model(dataset(), 7);
  return *model;
}

/// 1 conv (no relu) -> global average pool -> linear head. The gradient of
/// logit q at the conv output has the closed form fc_weight[q][k] / (m*n).
std::unique_ptr<NetModel> linear_probe_model(uint64_t seed) {
  using namespace cameras::nn;
  std::mt19937_64 rng(seed);
  SequentialNet net;
  auto conv = std::make_unique<Conv2d>("conv1", 3, 4, 3, 1, 1, false);
  conv->init_params(rng);
  net.add(std::move(conv));
  net.add(std::make_unique<AdaptiveAvgPool>("gap", 1, 1));
  auto fc = std::make_unique<Linear>("fc", 4, 3);
  fc->init_params(rng);
  net.add(std::move(fc));
  ModelDesc desc;
  desc.id = "linear-probe";
  desc.preprocess = testsupport::toy_preprocess();
  return std::make_unique<NetModel>(std::move(net), desc);
}

ImageTensor random_image(std::mt19937_64& rng, int c = 3, int h = 16, int w = 16) {
  ImageTensor img(c, h, w);
  for (auto& v : img.values) v = testsupport::uniform(rng, -1.0, 1.0);
  return img;
}

}  // namespace

TEST_CASE("toy model reaches 95% train accuracy and agrees per image") {
  double acc = testsupport::toy_accuracy(toy_model(), dataset().train);
  CHECK(acc >= 0.95);
  int checked = 0;
  for (const auto& s : dataset().train) {
    if (checked++ >= 20) break;
    Prediction p = toy_model().predict(s.image);
    CHECK(p.label == static_cast<int>(std::max_element(p.scores.begin(), p.scores.end()) -
                                      p.scores.begin()));
  }
}

TEST_CASE("predict is deterministic and pure") {
  const auto& img_a = dataset().test[0].image;
  const auto& img_b = dataset().test[1].image;
  Prediction first = toy_model().predict(img_a);
  toy_model().predict(img_b);  // interleave other inputs
  Prediction second = toy_model().predict(img_a);
  toy_model().predict(img_b);
  Prediction third = toy_model().predict(img_a);
  CHECK(first.scores == second.scores);
  CHECK(first.scores == third.scores);
  CHECK(first.probabilities == second.probabilities);
  CHECK(first.label == third.label);
}

TEST_CASE("probabilities sum to one on an all-zero image") {
  ImageTensor zero(3, 64, 64, 0.0);
  Prediction p = toy_model().predict(zero);
  double sum = 0.0;
  for (double q : p.probabilities) sum += q;
  CHECK(std::abs(sum - 1.0) <= 1e-5);
  CHECK(p.num_classes() == 4);
}

TEST_CASE("unsupported inputs are rejected with the offending dims") {
  ImageTensor tiny(3, 9, 9, 0.1);
  tiny.height = 4;  // bypass the 8x8 floor to hit the model's own check
  tiny.width = 4;
  tiny.values.resize(3 * 4 * 4);
  try {
    toy_model().predict(tiny);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::invalid_argument);  // image invariant fires first
  }

  ImageTensor gray(1, 64, 64, 0.0);
  try {
    toy_model().predict(gray);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::unsupported_input);
    CHECK(std::string(e.what()).find("channels") != std::string::npos);
  }
}

TEST_CASE("capture matches the closed form on the linear probe model") {
  auto probe = linear_probe_model(41);
  std::mt19937_64 rng(43);
  ImageTensor img = random_image(rng, 3, 12, 10);
  int target = 2;
  LayerTensors cap = probe->capture(img, {"conv1"}, target);

  REQUIRE(cap.gradients.channels == 4);
  REQUIRE(cap.gradients.height == 12);
  REQUIRE(cap.gradients.width == 10);
  const auto* fc = dynamic_cast<const nn::Linear*>(
      &probe->net().layer(static_cast<size_t>(probe->net().find("fc"))));
  REQUIRE(fc != nullptr);
  double area = 12.0 * 10.0;
  for (int k = 0; k < 4; ++k) {
    double want = fc->weight()[static_cast<size_t>(target) * 4 + k] / area;
    for (int i = 0; i < 12; ++i)
      for (int j = 0; j < 10; ++j)
        CHECK(cap.gradients.at(k, i, j) == doctest::Approx(want).epsilon(1e-9));
  }
}

TEST_CASE("capture gradients match finite differences at the default layer") {
  const NetModel& model = toy_model();
  LayerRef layer = model.default_layer();
  CHECK(layer.path == "conv3");

  const ImageTensor& img = dataset().test[2].image;
  Prediction p = model.predict(img);
  LayerTensors cap = model.capture(img, layer, p.label);

  std::mt19937_64 rng(57);
  const double delta = 1e-3;
  int tested = 0;
  for (; tested < 120; ++tested) {
    int k = testsupport::uniform_int(rng, 0, cap.gradients.channels - 1);
    int i = testsupport::uniform_int(rng, 0, cap.gradients.height - 1);
    int j = testsupport::uniform_int(rng, 0, cap.gradients.width - 1);
    Prediction nudged = model.predict_nudged(img, layer, k, i, j, delta);
    double fd = (nudged.scores[p.label] - p.scores[p.label]) / delta;
    double g = cap.gradients.at(k, i, j);
    CHECK(std::abs(fd - g) <= 1e-2 * std::max(std::abs(g), 1e-6));
  }
  CHECK(tested >= 100);
}

TEST_CASE("capture is repeatable and activations align with the forward pass") {
  const ImageTensor& img = dataset().test[3].image;
  LayerRef layer = toy_model().default_layer();
  Prediction p = toy_model().predict(img);
  LayerTensors a = toy_model().capture(img, layer, p.label);
  LayerTensors b = toy_model().capture(img, layer, p.label);
  CHECK(a.activations.values == b.activations.values);
  CHECK(a.gradients.values == b.gradients.values);
  CHECK(a.activations.same_dims(a.gradients));
}

TEST_CASE("capture rejects unknown layers and bad targets") {
  const ImageTensor& img = dataset().test[0].image;
  try {
    toy_model().capture(img, {"conv9"}, 0);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::layer_not_found);
  }
  CHECK_THROWS_AS(toy_model().capture(img, {"conv3"}, 99), Error);
}

TEST_CASE("zero image through a bias-free network gives zero activations") {
  auto net = testsupport::make_toy_net(77);  // untrained: biases are zero
  NetModel model(std::move(net), testsupport::toy_desc());
  ImageTensor zero(3, 32, 32, 0.0);
  LayerTensors cap = model.capture(zero, model.default_layer(), 0);
  for (double v : cap.activations.values) CHECK(v == 0.0);
}

TEST_CASE("list_layers is output-first, stable, and finds the last conv") {
  std::vector<LayerRef> layers = toy_model().list_layers();
  REQUIRE(layers.size() == 4);
  CHECK(layers[0].path == "fc");
  CHECK(layers[1].path == "conv3");
  CHECK(layers[2].path == "conv2");
  CHECK(layers[3].path == "conv1");
  CHECK(toy_model().list_layers() == layers);
  CHECK(toy_model().default_layer().path == "conv3");
}

TEST_CASE("randomize_through is seeded and leaves untouched layers intact") {
  const NetModel& model = toy_model();
  CHECK_THROWS_AS(model.randomize_through(0, 5), Error);
  CHECK_THROWS_AS(model.randomize_through(5, 5), Error);

  auto r1 = model.randomize_through(2, 99);
  auto r2 = model.randomize_through(2, 99);
  auto r3 = model.randomize_through(2, 100);
  const ImageTensor& img = dataset().test[4].image;
  CHECK(r1->predict(img).scores == r2->predict(img).scores);
  CHECK(r1->predict(img).scores != r3->predict(img).scores);

  // original model is untouched
  CHECK(model.predict(img).scores == toy_model().predict(img).scores);

  // depth 1 and depth 3 with one seed: shared prefix identical, suffix original
  auto d1 = model.randomize_through(1, 31);
  auto d3 = model.randomize_through(3, 31);
  auto weights = [](const Model& m, const char* name) {
    const auto& nm = dynamic_cast<const NetModel&>(m);
    const auto* conv = dynamic_cast<const nn::Conv2d*>(
        &nm.net().layer(static_cast<size_t>(nm.net().find(name))));
    REQUIRE(conv != nullptr);
    return conv->weight();
  };
  auto fc_weights = [](const Model& m) {
    const auto& nm = dynamic_cast<const NetModel&>(m);
    const auto* fc =
        dynamic_cast<const nn::Linear*>(&nm.net().layer(static_cast<size_t>(nm.net().find("fc"))));
    REQUIRE(fc != nullptr);
    return fc->weight();
  };
  CHECK(fc_weights(*d1) == fc_weights(*d3));                 // both randomized with same stream
  CHECK(weights(*d1, "conv1") == weights(model, "conv1"));   // untouched everywhere
  CHECK(weights(*d3, "conv1") == weights(model, "conv1"));
  CHECK(weights(*d1, "conv3") == weights(model, "conv3"));   // beyond depth 1
  CHECK(weights(*d3, "conv3") != weights(model, "conv3"));   // within depth 3
}

TEST_CASE("full-depth randomization scrambles predictions") {
  const NetModel& model = toy_model();
  auto scrambled = model.randomize_through(4, 123);
  int disagree = 0;
  for (int i = 0; i < 20; ++i) {
    const ImageTensor& img = dataset().test[static_cast<size_t>(i)].image;
    if (scrambled->predict(img).label != model.predict(img).label) ++disagree;
  }
  CHECK(disagree >= 10);
}

TEST_CASE("loss_input_gradient matches finite differences") {
  const NetModel& model = toy_model();
  const ImageTensor& img = dataset().test[5].image;
  int target = 1;
  ImageTensor g = model.loss_input_gradient(img, target);

  std::mt19937_64 rng(71);
  auto loss = [&](const ImageTensor& x) {
    Prediction p = model.predict(x);
    return -std::log(std::max(p.probabilities[static_cast<size_t>(target)], 1e-300));
  };
  const double eps = 1e-6;
  for (int trial = 0; trial < 25; ++trial) {
    size_t idx = rng() % img.values.size();
    ImageTensor up = img, dn = img;
    up.values[idx] += eps;
    dn.values[idx] -= eps;
    double fd = (loss(up) - loss(dn)) / (2 * eps);
    CHECK(std::abs(fd - g.values[idx]) <= 1e-5 * std::max(1.0, std::abs(fd)));
  }
}
