// Test-harness fixture builder: generates the seeded 4-class quadrant
// dataset, trains the small conv net on it, and writes everything the CLI
// needs for a self-contained run (model descriptor + weights, held-out
// images as PPMs, per-image annotation JSONs, and an eval manifest).

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>

#include "cameras/io.hpp"
#include "support/toy_fixture.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cameras;

int main(int argc, char** argv) {
  CLI::App app{"Build the toy quadrant fixture: trained model, test images, annotations"};
  std::string out_dir;
  uint64_t seed = 7;
  int test_count = 100;
  int train_per_class = 60;
  bool quiet = false;
  app.add_option("--out", out_dir, "output directory")->required();
  app.add_option("--seed", seed, "dataset and training seed");
  app.add_option("--test-count", test_count, "number of held-out images to export");
  app.add_option("--train-per-class", train_per_class, "training images per class");
  app.add_flag("--quiet", quiet, "suppress progress output");
  CLI11_PARSE(app, argc, argv);

  try {
    int test_per_class = (test_count + testsupport::kToyClasses - 1) / testsupport::kToyClasses;
    testsupport::ToyDataset ds =
        testsupport::make_toy_dataset(seed, train_per_class, test_per_class);
    auto model = testsupport::train_toy_model(ds, seed);
    double train_acc = testsupport::toy_accuracy(*model, ds.train);
    double test_acc = testsupport::toy_accuracy(*model, ds.test);
    if (!quiet)
      std::cout << "trained toy model: train acc " << train_acc << ", test acc " << test_acc
                << "\n";
    if (train_acc < 0.95) {
      std::cerr << "training failed to reach 95% accuracy\n";
      return 2;
    }

    fs::create_directories(fs::path(out_dir) / "images");
    fs::create_directories(fs::path(out_dir) / "annotations");

    model->net().save((fs::path(out_dir) / "model.cnet").string());
    save_model_descriptor((fs::path(out_dir) / "model.json").string(), *model, "model.cnet");

    json entries = json::array();
    const auto& pp = model->descriptor().preprocess;
    for (int i = 0; i < test_count && i < static_cast<int>(ds.test.size()); ++i) {
      const testsupport::ToySample& s = ds.test[static_cast<size_t>(i)];
      char id[32];
      std::snprintf(id, sizeof id, "toy_%04d", i);
      std::string image_rel = std::string("images/") + id + ".ppm";
      std::string ann_rel = std::string("annotations/") + id + ".json";
      write_pnm((fs::path(out_dir) / image_rel).string(), denormalize(s.image, pp));

      json ann;
      ann["image_id"] = id;
      ann["width"] = s.image.width;
      ann["height"] = s.image.height;
      ann["objects"] = json::array({{{"label", std::to_string(s.label)},
                                     {"bbox", {s.quadrant.x0, s.quadrant.y0, s.quadrant.x1,
                                               s.quadrant.y1}}}});
      write_file_atomic((fs::path(out_dir) / ann_rel).string(), ann.dump(2) + "\n");
      entries.push_back({{"id", id}, {"image", image_rel}, {"annotations", ann_rel}});
    }
    json manifest{{"entries", entries}};
    write_file_atomic((fs::path(out_dir) / "eval_manifest.json").string(),
                      manifest.dump(2) + "\n");
    if (!quiet)
      std::cout << "wrote " << entries.size() << " images + annotations to " << out_dir << "\n";
    return 0;
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }
}
