#pragma once

// File formats and rendering for the command-line harness: binary PPM/PGM
// images, the bit-exact map file format, model descriptors, the fixed
// overlay colormap, and the randomization strip renderer.

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cameras/model_bridge.hpp"
#include "cameras/saliency.hpp"
#include "cameras/sanity.hpp"

namespace cameras {

/// Interleaved 8-bit raster (1 or 3 channels), the on-disk image shape.
struct Image8 {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<uint8_t> v;  // [row][col][channel]

  Image8() = default;
  Image8(int c, int h, int w, uint8_t fill = 0)
      : channels(c), height(h), width(w), v(static_cast<size_t>(c) * h * w, fill) {}

  uint8_t& at(int i, int j, int c) {
    return v[(static_cast<size_t>(i) * width + j) * channels + c];
  }
  uint8_t at(int i, int j, int c) const {
    return v[(static_cast<size_t>(i) * width + j) * channels + c];
  }
};

/// Writes bytes to a temp file in the target directory, then renames into
/// place, so readers never observe a partial file.
inline void write_file_atomic(const std::string& path, const void* data, size_t size) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), Errc::io_error, "cannot open " + tmp);
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    require(out.good(), Errc::io_error, "write failed for " + tmp);
  }
  require(std::rename(tmp.c_str(), path.c_str()) == 0, Errc::io_error,
          "cannot rename " + tmp + " to " + path);
}

inline void write_file_atomic(const std::string& path, const std::string& text) {
  write_file_atomic(path, text.data(), text.size());
}

// ---------------------------------------------------------------------------
// PPM / PGM (binary, 8-bit)

namespace detail {

inline int read_pnm_token(std::istream& in) {
  // skips whitespace and '#' comments per the PNM header grammar
  for (;;) {
    int ch = in.peek();
    if (ch == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(ch)) {
      in.get();
    } else {
      break;
    }
  }
  int value = -1;
  in >> value;
  return value;
}

}  // namespace detail

inline Image8 read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Errc::unreadable_image, "cannot open " + path);
  char magic[2] = {0, 0};
  in.read(magic, 2);
  require(in.good() && magic[0] == 'P' && (magic[1] == '5' || magic[1] == '6'),
          Errc::unreadable_image, path + ": not a binary PGM/PPM file");
  int channels = magic[1] == '6' ? 3 : 1;
  int w = detail::read_pnm_token(in);
  int h = detail::read_pnm_token(in);
  int maxval = detail::read_pnm_token(in);
  require(w >= 1 && h >= 1 && maxval == 255, Errc::unreadable_image,
          path + ": unsupported PNM header (need 8-bit, got maxval " + std::to_string(maxval) +
              ")");
  in.get();  // single whitespace after the header
  Image8 img(channels, h, w);
  in.read(reinterpret_cast<char*>(img.v.data()), static_cast<std::streamsize>(img.v.size()));
  require(in.gcount() == static_cast<std::streamsize>(img.v.size()), Errc::unreadable_image,
          path + ": truncated pixel data");
  return img;
}

inline void write_pnm(const std::string& path, const Image8& img) {
  require(img.channels == 1 || img.channels == 3, Errc::invalid_argument,
          "PNM supports 1 or 3 channels");
  std::string header = (img.channels == 3 ? "P6\n" : "P5\n") + std::to_string(img.width) + " " +
                       std::to_string(img.height) + "\n255\n";
  std::vector<uint8_t> blob(header.begin(), header.end());
  blob.insert(blob.end(), img.v.begin(), img.v.end());
  write_file_atomic(path, blob.data(), blob.size());
}

/// Decodes an 8-bit raster and normalizes it per the preprocessing spec.
/// Grayscale inputs are replicated when the model wants 3 channels.
inline ImageTensor load_image(const std::string& path, const PreprocessSpec& spec,
                              int want_channels) {
  Image8 raw = read_pnm(path);
  require(want_channels == 1 || want_channels == 3, Errc::invalid_argument,
          "models take 1 or 3 channels");
  require(raw.channels <= want_channels, Errc::unreadable_image,
          path + ": color image fed to a grayscale model");
  ImageTensor img(want_channels, raw.height, raw.width);
  double span = spec.range_hi - spec.range_lo;
  for (int c = 0; c < want_channels; ++c) {
    int src_c = raw.channels == 1 ? 0 : c;
    for (int i = 0; i < raw.height; ++i)
      for (int j = 0; j < raw.width; ++j) {
        double value = spec.range_lo + span * (raw.at(i, j, src_c) / 255.0);
        img.at(c, i, j) =
            (value - spec.mean[static_cast<size_t>(c)]) / spec.stddev[static_cast<size_t>(c)];
      }
  }
  return img;
}

/// Maps a normalized tensor back to 8-bit for rendering.
inline Image8 denormalize(const ImageTensor& img, const PreprocessSpec& spec) {
  Image8 out(img.channels, img.height, img.width);
  double span = spec.range_hi - spec.range_lo;
  for (int i = 0; i < img.height; ++i)
    for (int j = 0; j < img.width; ++j)
      for (int c = 0; c < img.channels; ++c) {
        double raw = img.at(c, i, j) * spec.stddev[static_cast<size_t>(c)] +
                     spec.mean[static_cast<size_t>(c)];
        raw = std::clamp(raw, spec.range_lo, spec.range_hi);
        out.at(i, j, c) = static_cast<uint8_t>(std::lround(255.0 * (raw - spec.range_lo) / span));
      }
  return out;
}

// ---------------------------------------------------------------------------
// Map file format: "CAMS", version byte 0x01, h and w as 32-bit
// little-endian unsigned, then h*w little-endian float32, row-major.

inline void write_map(const std::string& path, const SaliencyMap& map) {
  std::vector<uint8_t> blob;
  blob.reserve(9 + map.values.size() * 4);
  const char magic[4] = {'C', 'A', 'M', 'S'};
  blob.insert(blob.end(), magic, magic + 4);
  blob.push_back(0x01);
  auto push_u32 = [&](uint32_t v) {
    for (int b = 0; b < 4; ++b) blob.push_back(static_cast<uint8_t>(v >> (8 * b)));
  };
  push_u32(static_cast<uint32_t>(map.height));
  push_u32(static_cast<uint32_t>(map.width));
  static_assert(sizeof(float) == 4);
  for (float f : map.values) {
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    push_u32(bits);
  }
  write_file_atomic(path, blob.data(), blob.size());
}

inline SaliencyMap read_map(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Errc::io_error, "cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  require(in.good() && std::memcmp(magic, "CAMS", 4) == 0, Errc::io_error,
          path + ": not a map file");
  require(in.get() == 0x01, Errc::io_error, path + ": unsupported map format version");
  auto read_u32 = [&]() {
    uint8_t b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
  };
  uint32_t h = read_u32(), w = read_u32();
  require(in.good() && h >= 1 && w >= 1 && h < (1u << 20) && w < (1u << 20), Errc::io_error,
          path + ": implausible map dims");
  SaliencyMap map(static_cast<int>(h), static_cast<int>(w));
  for (auto& f : map.values) {
    uint32_t bits = read_u32();
    std::memcpy(&f, &bits, 4);
  }
  require(in.good(), Errc::io_error, path + ": truncated map data");
  return map;
}

// ---------------------------------------------------------------------------
// Rendering

/// Fixed heat colormap: piecewise-linear blue -> cyan -> yellow -> red,
/// channel(t) = clamp(1.5 - |4t - c0|, 0, 1) with c0 = 3, 2, 1 for r, g, b.
inline std::array<uint8_t, 3> heat_color(float t) {
  auto ch = [&](double c0) {
    return static_cast<uint8_t>(std::lround(
        255.0 * std::clamp(1.5 - std::abs(4.0 * static_cast<double>(t) - c0), 0.0, 1.0)));
  };
  return {ch(3.0), ch(2.0), ch(1.0)};
}

/// Alpha-blends the heat-mapped saliency onto the image.
inline Image8 render_overlay(const Image8& base, const SaliencyMap& map, double alpha = 0.5) {
  require(base.height == map.height && base.width == map.width, Errc::invalid_argument,
          "overlay base and map dims differ");
  Image8 out(3, base.height, base.width);
  for (int i = 0; i < base.height; ++i)
    for (int j = 0; j < base.width; ++j) {
      std::array<uint8_t, 3> heat = heat_color(map.at(i, j));
      for (int c = 0; c < 3; ++c) {
        double b = base.channels == 3 ? base.at(i, j, c) : base.at(i, j, 0);
        out.at(i, j, c) =
            static_cast<uint8_t>(std::lround((1.0 - alpha) * b + alpha * heat[c]));
      }
    }
  return out;
}

namespace detail {

// 3x5 digit glyphs, row-major bits
inline const char* digit_rows(int d) {
  static const char* glyphs[10] = {
      "111101101101111", "010110010010111", "111001111100111", "111001111001111",
      "101101111001001", "111100111001111", "111100111101111", "111001001001001",
      "111101111101111", "111101111001111"};
  return glyphs[d];
}

inline void draw_number(Image8& img, int value, int x, int y, int scale = 2) {
  std::string digits = std::to_string(value);
  for (char dc : digits) {
    const char* rows = digit_rows(dc - '0');
    for (int r = 0; r < 5; ++r)
      for (int c = 0; c < 3; ++c)
        if (rows[r * 3 + c] == '1')
          for (int sy = 0; sy < scale; ++sy)
            for (int sx = 0; sx < scale; ++sx) {
              int yy = y + r * scale + sy, xx = x + c * scale + sx;
              if (yy >= 0 && yy < img.height && xx >= 0 && xx < img.width)
                for (int ch = 0; ch < img.channels; ++ch) img.at(yy, xx, ch) = 255;
            }
    x += 4 * scale;
  }
}

}  // namespace detail

/// Original map followed by one panel per randomization depth, left to
/// right, white gutters, depth number drawn top-left (0 = original).
/// Failed depths render as black panels.
inline Image8 render_strip(const RandomizationCurve& curve) {
  const int h = curve.original.height, w = curve.original.width, gutter = 2;
  int panels = 1 + static_cast<int>(curve.points.size());
  Image8 strip(3, h, panels * w + (panels - 1) * gutter, 255);

  auto blit = [&](const SaliencyMap* map, int panel, int caption) {
    int x0 = panel * (w + gutter);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        std::array<uint8_t, 3> color =
            map ? heat_color(map->at(i, j)) : std::array<uint8_t, 3>{0, 0, 0};
        for (int c = 0; c < 3; ++c) strip.at(i, x0 + j, c) = color[c];
      }
    detail::draw_number(strip, caption, x0 + 2, 2);
  };

  blit(&curve.original, 0, 0);
  for (size_t p = 0; p < curve.points.size(); ++p)
    blit(curve.points[p].map ? &*curve.points[p].map : nullptr, static_cast<int>(p) + 1,
         curve.points[p].depth);
  return strip;
}

// ---------------------------------------------------------------------------
// Model registration descriptor (JSON)

/// Loads a NetModel from a JSON descriptor: id, preprocessing contract,
/// default layer and the CNET weights path (relative to the descriptor).
inline std::unique_ptr<NetModel> load_model_descriptor(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), Errc::bad_config, "cannot open model descriptor " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::bad_config, "model descriptor " + path + ": " + e.what());
  }
  try {
    ModelDesc desc;
    desc.id = doc.at("id").get<std::string>();
    require(doc.value("format", "cnet-v1") == "cnet-v1", Errc::bad_config,
            "unsupported model format in " + path);
    const auto& pp = doc.at("preprocess");
    desc.preprocess.mean = pp.at("mean").get<std::vector<double>>();
    desc.preprocess.stddev = pp.at("std").get<std::vector<double>>();
    require(desc.preprocess.mean.size() == desc.preprocess.stddev.size() &&
                !desc.preprocess.mean.empty(),
            Errc::bad_config, "preprocess mean/std shape mismatch in " + path);
    if (pp.contains("range")) {
      desc.preprocess.range_lo = pp.at("range").at(0).get<double>();
      desc.preprocess.range_hi = pp.at("range").at(1).get<double>();
    }
    desc.default_layer = doc.value("default_layer", std::string{});
    desc.min_input = doc.value("min_input", 8);

    std::filesystem::path weights =
        std::filesystem::path(path).parent_path() / doc.at("weights").get<std::string>();
    nn::SequentialNet net = nn::SequentialNet::load(weights.string());
    return std::make_unique<NetModel>(std::move(net), std::move(desc));
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::bad_config, "model descriptor " + path + ": " + e.what());
  }
}

inline void save_model_descriptor(const std::string& path, const NetModel& model,
                                  const std::string& weights_filename) {
  nlohmann::json doc;
  const ModelDesc& desc = model.descriptor();
  doc["id"] = desc.id;
  doc["format"] = "cnet-v1";
  doc["weights"] = weights_filename;
  doc["preprocess"] = {{"mean", desc.preprocess.mean},
                       {"std", desc.preprocess.stddev},
                       {"range", {desc.preprocess.range_lo, desc.preprocess.range_hi}}};
  doc["default_layer"] = desc.default_layer;
  doc["min_input"] = desc.min_input;
  write_file_atomic(path, doc.dump(2) + "\n");
}

}  // namespace cameras
