// Command-line front end: batch saliency computation, metric evaluation,
// sanity checks and paired adversarial attacks over directories or manifests
// of images. Every run writes a manifest with the fully resolved
// configuration so it can be replayed from the output directory alone.

#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <thread>

#include "cameras/attack.hpp"
#include "cameras/io.hpp"
#include "cameras/metrics.hpp"
#include "cameras/rand.hpp"
#include "cameras/sanity.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cameras;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kModelError = 2;
constexpr int kPartialFailure = 3;

struct RunConfig {
  std::string model_path;
  std::string method = "cameras";
  std::optional<ScaleSize> zeta_base;  // resize inputs to this size when set
  ScaleSize zeta_max{1000, 1000};
  int steps = 7;
  std::string layer;  // empty resolves the model's last conv layer
  int tolerance_px = 15;
  uint64_t seed = 0;
  int workers = 0;  // 0 = one per hardware thread (capped), 1 when not reentrant
  std::vector<int> sanity_depths;  // empty = every depth
  double sanity_threshold = 0.3;
  bool sanity_correspondence = false;
  AttackConfig attack;
  std::string images_arg;
  std::string out_dir;
};

json config_to_json(const RunConfig& cfg) {
  json j;
  j["model"] = cfg.model_path;
  j["method"] = cfg.method;
  if (cfg.zeta_base) j["zeta_base"] = {cfg.zeta_base->h, cfg.zeta_base->w};
  j["zeta_max"] = {cfg.zeta_max.h, cfg.zeta_max.w};
  j["steps"] = cfg.steps;
  j["layer"] = cfg.layer;
  j["tolerance_px"] = cfg.tolerance_px;
  j["seed"] = cfg.seed;
  j["workers"] = cfg.workers;
  j["sanity"] = {{"depths", cfg.sanity_depths},
                 {"threshold", cfg.sanity_threshold},
                 {"correspondence", cfg.sanity_correspondence}};
  j["attack"] = {{"epsilon", cfg.attack.epsilon},
                 {"alpha", cfg.attack.step_alpha},
                 {"max_iterations", cfg.attack.max_iterations},
                 {"target_confidence", cfg.attack.target_confidence},
                 {"beta", cfg.attack.beta}};
  j["images"] = cfg.images_arg;
  j["out"] = cfg.out_dir;
  return j;
}

ScaleSize parse_size(const json& j, const char* key) {
  if (j.is_number_integer()) {
    int v = j.get<int>();
    return {v, v};
  }
  require(j.is_array() && j.size() == 2, Errc::bad_config,
          std::string(key) + " must be an integer or [h, w]");
  return {j.at(0).get<int>(), j.at(1).get<int>()};
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  require(in.good(), Errc::bad_config, "cannot open config " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    fail(Errc::bad_config, "config " + path + ": " + e.what());
  }
  try {
    if (doc.contains("model")) cfg.model_path = doc["model"].get<std::string>();
    if (doc.contains("method")) cfg.method = doc["method"].get<std::string>();
    if (doc.contains("zeta_base")) cfg.zeta_base = parse_size(doc["zeta_base"], "zeta_base");
    if (doc.contains("zeta_max")) cfg.zeta_max = parse_size(doc["zeta_max"], "zeta_max");
    if (doc.contains("steps")) cfg.steps = doc["steps"].get<int>();
    if (doc.contains("layer")) cfg.layer = doc["layer"].get<std::string>();
    if (doc.contains("tolerance_px")) cfg.tolerance_px = doc["tolerance_px"].get<int>();
    if (doc.contains("seed")) cfg.seed = doc["seed"].get<uint64_t>();
    if (doc.contains("workers")) cfg.workers = doc["workers"].get<int>();
    if (doc.contains("sanity")) {
      const json& s = doc["sanity"];
      if (s.contains("depths")) cfg.sanity_depths = s["depths"].get<std::vector<int>>();
      if (s.contains("threshold")) cfg.sanity_threshold = s["threshold"].get<double>();
      if (s.contains("correspondence"))
        cfg.sanity_correspondence = s["correspondence"].get<bool>();
    }
    if (doc.contains("attack")) {
      const json& a = doc["attack"];
      if (a.contains("epsilon")) cfg.attack.epsilon = a["epsilon"].get<double>();
      if (a.contains("alpha")) cfg.attack.step_alpha = a["alpha"].get<double>();
      if (a.contains("max_iterations"))
        cfg.attack.max_iterations = a["max_iterations"].get<int>();
      if (a.contains("target_confidence"))
        cfg.attack.target_confidence = a["target_confidence"].get<double>();
      if (a.contains("beta")) cfg.attack.beta = a["beta"].get<double>();
    }
  } catch (const json::exception& e) {
    fail(Errc::bad_config, "config " + path + ": " + e.what());
  }
}

struct WorkItem {
  std::string id;
  std::string image_path;
  std::string annotation_path;  // may be empty
};

std::vector<WorkItem> resolve_images(const std::string& arg) {
  std::vector<WorkItem> items;
  require(fs::exists(arg), Errc::bad_config, "images argument does not exist: " + arg);
  if (fs::is_directory(arg)) {
    for (const auto& entry : fs::directory_iterator(arg)) {
      if (!entry.is_regular_file()) continue;
      std::string ext = entry.path().extension().string();
      if (ext != ".ppm" && ext != ".pgm") continue;
      WorkItem item;
      item.id = entry.path().stem().string();
      item.image_path = entry.path().string();
      fs::path sidecar = entry.path();
      sidecar.replace_extension(".json");
      if (fs::exists(sidecar)) item.annotation_path = sidecar.string();
      items.push_back(std::move(item));
    }
    std::sort(items.begin(), items.end(),
              [](const WorkItem& a, const WorkItem& b) { return a.id < b.id; });
  } else {
    std::ifstream in(arg);
    json doc;
    try {
      in >> doc;
    } catch (const json::exception& e) {
      fail(Errc::bad_config, "image manifest " + arg + ": " + e.what());
    }
    require(doc.contains("entries") && doc["entries"].is_array(), Errc::bad_config,
            "image manifest needs an 'entries' array");
    fs::path base = fs::path(arg).parent_path();
    for (const json& e : doc["entries"]) {
      WorkItem item;
      item.image_path = (base / e.at("image").get<std::string>()).string();
      item.id = e.value("id", fs::path(item.image_path).stem().string());
      if (e.contains("annotations"))
        item.annotation_path = (base / e["annotations"].get<std::string>()).string();
      items.push_back(std::move(item));
    }
  }
  require(!items.empty(), Errc::bad_config, "no images found in " + arg);
  return items;
}

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int t = 0; t < workers; ++t)
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  for (auto& th : pool) th.join();
}

int worker_count(const RunConfig& cfg, const Model& model) {
  if (!model.reentrant()) return 1;
  if (cfg.workers > 0) return cfg.workers;
  unsigned hw = std::thread::hardware_concurrency();
  return static_cast<int>(std::clamp(hw, 1u, 8u));
}

struct Harness {
  RunConfig cfg;
  std::unique_ptr<NetModel> model;
  std::vector<WorkItem> items;
  LayerRef layer;

  ImageTensor load(const WorkItem& item) const {
    int want = model->descriptor().preprocess.channels();
    ImageTensor img = load_image(item.image_path, model->descriptor().preprocess, want);
    if (cfg.zeta_base && (img.height != cfg.zeta_base->h || img.width != cfg.zeta_base->w))
      img = resize_image(img, cfg.zeta_base->h, cfg.zeta_base->w);
    return img;
  }

  SaliencyMap map_for(const ImageTensor& img, std::optional<int> target = std::nullopt) const {
    if (cfg.method == "gradcam") return compute_gradcam(*model, img, layer, target);
    if (cfg.method == "edge-control") return edge_baseline_map(img);
    ScaleSchedule sched =
        make_schedule({img.height, img.width}, cfg.zeta_max, cfg.steps);
    return compute_cameras(*model, img, sched, layer, target);
  }

  SaliencyFn saliency_fn() const {
    return [this](const Model& m, const ImageTensor& img) {
      if (cfg.method == "gradcam") return compute_gradcam(m, img, layer);
      if (cfg.method == "edge-control") return edge_baseline_map(img);
      ScaleSchedule sched = make_schedule({img.height, img.width}, cfg.zeta_max, cfg.steps);
      return compute_cameras(m, img, sched, layer);
    };
  }
};

json skipped_to_json(const std::vector<SkippedScale>& skipped) {
  json arr = json::array();
  for (const auto& s : skipped)
    arr.push_back({{"index", s.index}, {"h", s.size.h}, {"w", s.size.w},
                   {"predicted_label", s.predicted_label}});
  return arr;
}

void write_manifest(const Harness& h, const std::string& command, json extra) {
  json manifest;
  manifest["command"] = command;
  manifest["config"] = config_to_json(h.cfg);
  manifest["model_id"] = h.model->descriptor().id;
  manifest["layer"] = h.layer.path;
  json ids = json::array();
  for (const auto& item : h.items) ids.push_back(item.id);
  manifest["image_ids"] = ids;
  manifest.update(extra);
  write_file_atomic((fs::path(h.cfg.out_dir) / "manifest.json").string(),
                    manifest.dump(2) + "\n");
}

int finish(const std::vector<std::string>& errors, int n) {
  if (errors.empty()) return kOk;
  std::cerr << errors.size() << " of " << n << " images failed:\n";
  for (const auto& e : errors) std::cerr << "  " << e << "\n";
  return kPartialFailure;
}

// -- saliency ---------------------------------------------------------------

int cmd_saliency(Harness& h) {
  const int n = static_cast<int>(h.items.size());
  std::vector<json> records(static_cast<size_t>(n));
  std::vector<std::string> errors;
  std::mutex err_mu;

  parallel_for(n, worker_count(h.cfg, *h.model), [&](int i) {
    const WorkItem& item = h.items[static_cast<size_t>(i)];
    json rec{{"id", item.id}, {"method", h.cfg.method}};
    auto started = std::chrono::steady_clock::now();
    try {
      ImageTensor img = h.load(item);
      SaliencyMap map = h.map_for(img);
      std::string map_file = item.id + ".cams";
      std::string overlay_file = item.id + "_overlay.ppm";
      write_map((fs::path(h.cfg.out_dir) / map_file).string(), map);
      Image8 base = denormalize(img, h.model->descriptor().preprocess);
      write_pnm((fs::path(h.cfg.out_dir) / overlay_file).string(),
                render_overlay(base, map));
      rec["map_file"] = map_file;
      rec["overlay_file"] = overlay_file;
      rec["label"] = map.meta.target_label;
      rec["t_m"] = map.meta.accepted_scales;
      rec["skipped_scales"] = skipped_to_json(map.meta.skipped);
    } catch (const Error& e) {
      rec["error"] = e.what();
      std::lock_guard<std::mutex> lock(err_mu);
      errors.push_back(item.id + ": " + e.what());
    }
    rec["elapsed_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(
                            std::chrono::steady_clock::now() - started)
                            .count();
    records[static_cast<size_t>(i)] = std::move(rec);
  });

  std::string lines;
  for (const auto& r : records) lines += r.dump() + "\n";
  write_file_atomic((fs::path(h.cfg.out_dir) / "records.jsonl").string(), lines);
  write_manifest(h, "saliency",
                 {{"records_file", "records.jsonl"}, {"failed", errors.size()}});
  return finish(errors, n);
}

// -- eval -------------------------------------------------------------------

struct AnnotationDoc {
  int width = 0, height = 0;
  std::map<std::string, std::vector<ObjectAnnotation>> by_label;
};

AnnotationDoc read_annotations(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), Errc::io_error, "cannot open annotations " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    fail(Errc::io_error, "annotations " + path + ": " + e.what());
  }
  AnnotationDoc out;
  try {
    out.width = doc.at("width").get<int>();
    out.height = doc.at("height").get<int>();
    for (const json& obj : doc.at("objects")) {
      ObjectAnnotation a;
      a.label = obj.at("label").is_string() ? obj["label"].get<std::string>()
                                            : std::to_string(obj["label"].get<int>());
      if (obj.contains("bbox")) {
        const json& b = obj["bbox"];
        a.bbox = BBox{b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(),
                      b.at(3).get<int>()};
      } else {
        fs::path mask_path = fs::path(path).parent_path() / obj.at("mask_file").get<std::string>();
        Image8 m = read_pnm(mask_path.string());
        require(m.channels == 1, Errc::io_error, "mask must be single-channel: " + mask_path.string());
        BinaryMask mask{m.height, m.width, {}};
        mask.on.assign(m.v.begin(), m.v.end());
        a.mask = std::move(mask);
      }
      out.by_label[a.label].push_back(std::move(a));
    }
  } catch (const json::exception& e) {
    fail(Errc::io_error, "annotations " + path + ": " + e.what());
  }
  return out;
}

int cmd_eval(Harness& h) {
  const int n = static_cast<int>(h.items.size());
  std::vector<std::vector<json>> rows(static_cast<size_t>(n));
  std::vector<std::string> errors;
  std::mutex err_mu;

  parallel_for(n, worker_count(h.cfg, *h.model), [&](int i) {
    const WorkItem& item = h.items[static_cast<size_t>(i)];
    auto record_error = [&](const std::string& msg, const std::string& cls = "") {
      json rec{{"id", item.id}, {"error", msg}};
      if (!cls.empty()) rec["class"] = cls;
      rows[static_cast<size_t>(i)].push_back(std::move(rec));
      std::lock_guard<std::mutex> lock(err_mu);
      errors.push_back(item.id + ": " + msg);
    };
    if (item.annotation_path.empty()) {
      record_error("no annotations for image");
      return;
    }
    ImageTensor img;
    AnnotationDoc ann;
    try {
      img = h.load(item);
      ann = read_annotations(item.annotation_path);
      require(ann.width == img.width && ann.height == img.height, Errc::invalid_argument,
              "annotation frame " + std::to_string(ann.width) + "x" +
                  std::to_string(ann.height) + " does not match image " +
                  std::to_string(img.width) + "x" + std::to_string(img.height));
    } catch (const Error& e) {
      record_error(e.what());
      return;
    }
    for (const auto& [label, objects] : ann.by_label) {
      try {
        int target = -1;
        try {
          target = std::stoi(label);
        } catch (const std::exception&) {
          fail(Errc::invalid_argument, "label '" + label + "' is not a class index");
        }
        SaliencyMap map = h.map_for(img, target);
        PointingRecord pr = pointing_game(map, objects, h.cfg.tolerance_px, item.id, label);
        json rec{{"id", item.id},
                 {"class", label},
                 {"hit", pr.hit},
                 {"max_point", {pr.max_i, pr.max_j}},
                 {"tolerance_px", pr.tolerance},
                 {"t_m", map.meta.accepted_scales}};
        rec["base_confidence"] =
            h.model->predict(img).probabilities[static_cast<size_t>(target)];
        try {
          rec["rho_plus"] = positive_density(*h.model, img, map, target);
        } catch (const Error& e) {
          rec["rho_plus"] = nullptr;
          rec["rho_plus_error"] = e.what();
        }
        try {
          rec["rho_minus"] = negative_density(*h.model, img, map, target);
        } catch (const Error& e) {
          rec["rho_minus"] = nullptr;
          rec["rho_minus_error"] = e.what();
        }
        rows[static_cast<size_t>(i)].push_back(std::move(rec));
      } catch (const Error& e) {
        record_error(e.what(), label);
      }
    }
  });

  std::vector<json> flat;
  for (auto& r : rows)
    for (auto& rec : r) flat.push_back(std::move(rec));

  int hits = 0, pointed = 0;
  double rp_sum = 0.0, rm_sum = 0.0;
  int rp_n = 0, rm_n = 0;
  for (const auto& rec : flat) {
    if (rec.contains("hit")) {
      ++pointed;
      hits += rec["hit"].get<bool>() ? 1 : 0;
    }
    if (rec.contains("rho_plus") && !rec["rho_plus"].is_null()) {
      rp_sum += rec["rho_plus"].get<double>();
      ++rp_n;
    }
    if (rec.contains("rho_minus") && !rec["rho_minus"].is_null()) {
      rm_sum += rec["rho_minus"].get<double>();
      ++rm_n;
    }
  }

  json report;
  report["method"] = h.cfg.method;
  report["masking"] = "normalized-input-space";
  report["tolerance_px"] = h.cfg.tolerance_px;
  report["records"] = flat;
  report["pointing_accuracy"] =
      pointed ? json(static_cast<double>(hits) / pointed) : json(nullptr);
  report["mean_rho_plus"] = rp_n ? json(rp_sum / rp_n) : json(nullptr);
  report["mean_rho_minus"] = rm_n ? json(rm_sum / rm_n) : json(nullptr);
  report["evaluated"] = pointed;
  write_file_atomic((fs::path(h.cfg.out_dir) / "report.json").string(),
                    report.dump(2) + "\n");

  std::string csv = "method,records,pointing_accuracy,mean_rho_plus,mean_rho_minus\n";
  csv += h.cfg.method + "," + std::to_string(pointed) + ",";
  csv += (pointed ? std::to_string(static_cast<double>(hits) / pointed) : "") + ",";
  csv += (rp_n ? std::to_string(rp_sum / rp_n) : "") + ",";
  csv += (rm_n ? std::to_string(rm_sum / rm_n) : "") + "\n";
  write_file_atomic((fs::path(h.cfg.out_dir) / "summary.csv").string(), csv);

  write_manifest(h, "eval",
                 {{"report_file", "report.json"}, {"summary_file", "summary.csv"},
                  {"failed", errors.size()}});
  return finish(errors, n);
}

// -- sanity -----------------------------------------------------------------

int cmd_sanity(Harness& h) {
  const int n = static_cast<int>(h.items.size());
  std::vector<int> depths = h.cfg.sanity_depths;
  if (depths.empty()) {
    int count = static_cast<int>(h.model->list_layers().size());
    for (int d = 1; d <= count; ++d) depths.push_back(d);
  }
  const std::string criterion = "mean rank correlation with the original map over depths >= 1 "
                                "stays below " + std::to_string(h.cfg.sanity_threshold);

  std::vector<json> per_image(static_cast<size_t>(n));
  std::vector<std::string> errors;
  std::mutex err_mu;
  SaliencyFn fn = h.saliency_fn();

  parallel_for(n, worker_count(h.cfg, *h.model), [&](int i) {
    const WorkItem& item = h.items[static_cast<size_t>(i)];
    json rec{{"id", item.id}};
    try {
      ImageTensor img = h.load(item);
      RandomizationCurve curve =
          cascading_randomization(*h.model, img, fn, depths, h.cfg.seed);
      json curve_json = json::array();
      for (const auto& p : curve.points)
        curve_json.push_back({{"depth", p.depth},
                              {"layer", p.layer_name},
                              {"similarity",
                               p.similarity ? json(*p.similarity) : json(nullptr)}});
      write_file_atomic(
          (fs::path(h.cfg.out_dir) / (item.id + "_curve.json")).string(),
          curve_json.dump(2) + "\n");
      write_pnm((fs::path(h.cfg.out_dir) / (item.id + "_strip.ppm")).string(),
                render_strip(curve));
      double mean = curve_mean_similarity(curve);
      SanityVerdict v = make_verdict(h.cfg.method, mean, h.cfg.sanity_threshold,
                                     PassRule::below_threshold, criterion);
      rec["mean_similarity"] = mean;
      rec["passed"] = v.passed;
      rec["curve_file"] = item.id + "_curve.json";
      rec["strip_file"] = item.id + "_strip.ppm";

      if (h.cfg.sanity_correspondence) {
        SaliencyMap map = h.map_for(img);
        double corr = adversarial_correspondence(*h.model, img, map, h.cfg.attack);
        std::mt19937_64 rng(h.cfg.seed ^ 0x5EEDFACEull ^ static_cast<uint64_t>(i));
        SaliencyMap random_map(img.height, img.width);
        for (auto& vf : random_map.values) vf = static_cast<float>(rnd::uniform01(rng));
        double control = adversarial_correspondence(*h.model, img, random_map, h.cfg.attack);
        SanityVerdict cv = make_verdict(
            h.cfg.method, corr, control, PassRule::above_threshold,
            "perturbation-magnitude rank correlation beats a uniform-random map control");
        rec["correspondence"] = corr;
        rec["correspondence_control"] = control;
        rec["correspondence_passed"] = cv.passed;
      }
    } catch (const Error& e) {
      rec["error"] = e.what();
      std::lock_guard<std::mutex> lock(err_mu);
      errors.push_back(item.id + ": " + e.what());
    }
    per_image[static_cast<size_t>(i)] = std::move(rec);
  });

  double total = 0.0;
  int evidenced = 0;
  for (const auto& rec : per_image)
    if (rec.contains("mean_similarity")) {
      total += rec["mean_similarity"].get<double>();
      ++evidenced;
    }

  json report;
  report["method"] = h.cfg.method;
  report["criterion"] = criterion;
  report["threshold"] = h.cfg.sanity_threshold;
  report["depths"] = depths;
  report["correspondence_protocol"] =
      "pixelwise Spearman rank correlation; reconstructed protocol, no reference "
      "implementation available";
  report["per_image"] = per_image;
  report["overall_mean_similarity"] = evidenced ? json(total / evidenced) : json(nullptr);
  report["passed"] = evidenced > 0 && (total / evidenced) < h.cfg.sanity_threshold;
  write_file_atomic((fs::path(h.cfg.out_dir) / "verdict.json").string(),
                    report.dump(2) + "\n");
  write_manifest(h, "sanity", {{"verdict_file", "verdict.json"}, {"failed", errors.size()}});
  return finish(errors, n);
}

// -- attack -----------------------------------------------------------------

json attack_result_json(const AttackResult& r) {
  return {{"success", r.success},
          {"iterations", r.iterations},
          {"final_confidence", r.final_confidence},
          {"l2_norm", r.l2_norm},
          {"linf_norm", r.linf_norm}};
}

int cmd_attack(Harness& h) {
  const int n = static_cast<int>(h.items.size());
  std::vector<json> per_image(static_cast<size_t>(n));
  std::vector<std::string> errors;
  std::mutex err_mu;

  parallel_for(n, worker_count(h.cfg, *h.model), [&](int i) {
    const WorkItem& item = h.items[static_cast<size_t>(i)];
    json rec{{"id", item.id}};
    try {
      ImageTensor img = h.load(item);
      int target = least_likely_label(*h.model, img);
      rec["target"] = target;
      AttackResult vanilla = pgd(*h.model, img, target, h.cfg.attack);
      SaliencyMap map = h.map_for(img);
      AttackResult masked = pgd(*h.model, img, target, h.cfg.attack, &map);
      rec["vanilla"] = attack_result_json(vanilla);
      rec["masked"] = attack_result_json(masked);
      const auto& pp = h.model->descriptor().preprocess;
      write_pnm((fs::path(h.cfg.out_dir) / (item.id + "_vanilla.ppm")).string(),
                denormalize(vanilla.perturbed_image, pp));
      write_pnm((fs::path(h.cfg.out_dir) / (item.id + "_masked.ppm")).string(),
                denormalize(masked.perturbed_image, pp));
      try {
        rec["reduction_percent"] = norm_reduction(masked, vanilla);
      } catch (const Error& e) {
        rec["reduction_percent"] = nullptr;
        rec["not_comparable"] = e.what();
      }
    } catch (const Error& e) {
      rec["error"] = e.what();
      std::lock_guard<std::mutex> lock(err_mu);
      errors.push_back(item.id + ": " + e.what());
    }
    per_image[static_cast<size_t>(i)] = std::move(rec);
  });

  double reduction_sum = 0.0;
  int comparable = 0;
  for (const auto& rec : per_image)
    if (rec.contains("reduction_percent") && !rec["reduction_percent"].is_null()) {
      reduction_sum += rec["reduction_percent"].get<double>();
      ++comparable;
    }

  json summary = {
      {"images", n},
      {"comparable_pairs", comparable},
      {"mean_reduction_percent", comparable ? json(reduction_sum / comparable) : json(nullptr)}};
  json attack_manifest = {
      {"config", config_to_json(h.cfg)}, {"per_image", per_image}, {"summary", summary}};
  write_file_atomic((fs::path(h.cfg.out_dir) / "attack_manifest.json").string(),
                    attack_manifest.dump(2) + "\n");
  write_manifest(h, "attack",
                 {{"attack_manifest_file", "attack_manifest.json"},
                  {"failed", errors.size()}});
  return finish(errors, n);
}

// -- wiring -----------------------------------------------------------------

struct CliOverrides {
  std::string config_path, model, images, out, method, layer;
  uint64_t seed = 0;
  int zeta_max = 0, steps = -1, tolerance = -1;
  double beta = -1.0, epsilon = -1.0;
  bool has_seed = false;
};

int run_command(const std::string& name, const CliOverrides& ov) {
  RunConfig cfg;
  try {
    if (!ov.config_path.empty()) apply_config_file(cfg, ov.config_path);
    if (!ov.model.empty()) cfg.model_path = ov.model;
    if (!ov.images.empty()) cfg.images_arg = ov.images;
    if (!ov.out.empty()) cfg.out_dir = ov.out;
    if (!ov.method.empty()) cfg.method = ov.method;
    if (!ov.layer.empty()) cfg.layer = ov.layer;
    if (ov.has_seed) cfg.seed = ov.seed;
    if (ov.zeta_max > 0) cfg.zeta_max = {ov.zeta_max, ov.zeta_max};
    if (ov.steps >= 0) cfg.steps = ov.steps;
    if (ov.tolerance >= 0) cfg.tolerance_px = ov.tolerance;
    if (ov.beta >= 0.0) cfg.attack.beta = ov.beta;
    if (ov.epsilon > 0.0) cfg.attack.epsilon = ov.epsilon;

    require(!cfg.model_path.empty(), Errc::bad_config, "no model descriptor given");
    require(!cfg.images_arg.empty(), Errc::bad_config, "no images given");
    require(!cfg.out_dir.empty(), Errc::bad_config, "no output directory given");
    bool method_ok = cfg.method == "cameras" || cfg.method == "gradcam" ||
                     (name == "sanity" && cfg.method == "edge-control");
    require(method_ok, Errc::bad_config, "unsupported method '" + cfg.method + "'");
    require(cfg.steps >= 0, Errc::bad_config, "steps must be non-negative");
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return kConfigError;
  }

  Harness h;
  h.cfg = cfg;
  try {
    h.model = load_model_descriptor(cfg.model_path);
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return kModelError;
  }

  try {
    h.items = resolve_images(cfg.images_arg);
    if (cfg.layer.empty()) {
      h.layer = h.model->default_layer();
    } else {
      h.layer = {cfg.layer};
      require(h.model->net().find(cfg.layer) >= 0, Errc::bad_config,
              "model has no layer named '" + cfg.layer + "'");
    }
    h.cfg.layer = h.layer.path;
    fs::create_directories(cfg.out_dir);
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return kConfigError;
  }

  try {
    if (name == "saliency") return cmd_saliency(h);
    if (name == "eval") return cmd_eval(h);
    if (name == "sanity") return cmd_sanity(h);
    return cmd_attack(h);
  } catch (const Error& e) {
    std::cerr << "fatal: " << e.what() << "\n";
    return kModelError;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"High-resolution saliency maps, evaluation metrics, sanity checks and "
               "saliency-guided attacks for small vision classifiers"};
  app.require_subcommand(1);

  CliOverrides ov;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", ov.config_path, "JSON run configuration");
    sub->add_option("--model", ov.model, "model descriptor JSON (overrides config)");
    sub->add_option("--images", ov.images, "image directory or manifest JSON");
    sub->add_option("--out", ov.out, "output directory");
    sub->add_option("--seed", ov.seed, "run seed")->each([&](const std::string&) {
      ov.has_seed = true;
    });
    sub->add_option("--zeta-max", ov.zeta_max, "largest ladder size (square)");
    sub->add_option("--steps", ov.steps, "up-scaling steps");
    sub->add_option("--layer", ov.layer, "capture layer path");
    sub->add_option("--method", ov.method, "cameras | gradcam");
    sub->add_option("--beta", ov.beta, "attack mask penalty weight");
    sub->add_option("--epsilon", ov.epsilon, "attack budget, raw pixel units");
    sub->add_option("--tolerance", ov.tolerance, "pointing-game tolerance, pixels");
  };

  add_common(app.add_subcommand("saliency", "compute maps, overlays and records"));
  add_common(app.add_subcommand("eval", "pointing game and map densities over a manifest"));
  add_common(app.add_subcommand("sanity", "cascading randomization (and optional "
                                          "perturbation correspondence) checks"));
  add_common(app.add_subcommand("attack", "paired vanilla and saliency-masked attacks"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  return run_command(app.get_subcommands().front()->get_name(), ov);
}
