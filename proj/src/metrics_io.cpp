#include "pyratten/metrics_io.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "pyratten/attention.hpp"
#include "pyratten/network.hpp"

namespace pyratten {

namespace fs = std::filesystem;

Image::Image(int w, int h, int c) : width(w), height(h), channels(c) {
  if (w < 1 || h < 1 || (c != 1 && c != 3)) {
    throw ShapeError("invalid image geometry " + std::to_string(w) + "x" + std::to_string(h) +
                     "x" + std::to_string(c));
  }
  pixels.assign(static_cast<std::size_t>(w) * h * c, 0);
}

namespace {

std::uint32_t be32(const unsigned char* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) |
         std::uint32_t{p[3]};
}

}  // namespace

Image load_png(const std::string& path) {
  // Inspect IHDR directly so rejections can name the offending property.
  std::array<unsigned char, 33> header{};
  {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image '" + path + "'");
    in.read(reinterpret_cast<char*>(header.data()), header.size());
    if (in.gcount() != static_cast<std::streamsize>(header.size()) ||
        png_sig_cmp(header.data(), 0, 8) != 0 || std::string(header.begin() + 12, header.begin() + 16) != "IHDR") {
      throw FormatError("'" + path + "' is not a PNG file");
    }
  }
  const int depth = header[24];
  const int color_type = header[25];
  if (depth != 8) {
    throw FormatError("'" + path + "': unsupported bit depth " + std::to_string(depth) +
                      " (only 8-bit images are supported)");
  }
  if (color_type == 4 || color_type == 6) {
    throw FormatError("'" + path + "': alpha channels are not supported");
  }
  if (color_type != 0 && color_type != 2) {
    throw FormatError("'" + path + "': unsupported color type " + std::to_string(color_type) +
                      " (gray or RGB only)");
  }

  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw FormatError("'" + path + "': " + png.message);
  }
  const int channels = color_type == 0 ? 1 : 3;
  png.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Image img(static_cast<int>(be32(header.data() + 16)), static_cast<int>(be32(header.data() + 20)),
            channels);
  if (static_cast<int>(png.width) != img.width || static_cast<int>(png.height) != img.height) {
    png_image_free(&png);
    throw FormatError("'" + path + "': inconsistent header");
  }
  if (!png_image_finish_read(&png, nullptr, img.pixels.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw FormatError("'" + path + "': " + msg);
  }
  return img;
}

void save_png(const std::string& path, const Image& img) {
  if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * img.channels) {
    throw ShapeError("image buffer size does not match its geometry");
  }
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, img.pixels.data(), 0, nullptr)) {
    throw IoError("cannot write '" + path + "': " + png.message);
  }
}

Tensor image_to_tensor(const Image& img) {
  Tensor t(Shape{1, img.channels, img.height, img.width});
  auto out = t.mutable_data();
  const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
  for (int c = 0; c < img.channels; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      out[c * plane + i] = static_cast<Real>(img.pixels[i * img.channels + c] / 255.0);
    }
  }
  return t;
}

Image tensor_to_image(const Tensor& t, int batch) {
  const Shape& s = t.shape();
  if (s.c != 1 && s.c != 3) throw ShapeError("cannot convert " + s.str() + " to an image");
  Image img(s.w, s.h, s.c);
  const std::size_t plane = s.plane();
  const Real* src = t.data().data() + static_cast<std::size_t>(batch) * s.c * plane;
  for (int c = 0; c < s.c; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      const double v = std::clamp(static_cast<double>(src[c * plane + i]), 0.0, 1.0);
      img.pixels[i * s.c + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  }
  return img;
}

namespace {

void require_same_geometry(const Image& a, const Image& b, const char* what) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels) {
    throw ShapeError(std::string(what) + ": image geometry differs (" + std::to_string(a.width) +
                     "x" + std::to_string(a.height) + "x" + std::to_string(a.channels) + " vs " +
                     std::to_string(b.width) + "x" + std::to_string(b.height) + "x" +
                     std::to_string(b.channels) + ")");
  }
}

}  // namespace

double psnr(const Image& a, const Image& b, PsnrMode mode) {
  require_same_geometry(a, b, "psnr");
  double se = 0.0;
  std::size_t count = 0;
  if (mode == PsnrMode::kLuma && a.channels == 3) {
    const std::size_t n = static_cast<std::size_t>(a.width) * a.height;
    for (std::size_t i = 0; i < n; ++i) {
      auto luma = [i](const Image& img) {
        const auto* p = &img.pixels[i * 3];
        return 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
      };
      const double d = luma(a) - luma(b);
      se += d * d;
    }
    count = n;
  } else {
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
      const double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
      se += d * d;
    }
    count = a.pixels.size();
  }
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / (se / static_cast<double>(count)));
}

double ssim(const Image& a, const Image& b) {
  require_same_geometry(a, b, "ssim");
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5;
  if (a.width < kWin || a.height < kWin) {
    throw GeometryError("ssim needs images of at least 11x11, got " + std::to_string(a.width) +
                        "x" + std::to_string(a.height));
  }
  std::array<double, kWin * kWin> window{};
  double norm = 0.0;
  for (int y = 0; y < kWin; ++y) {
    for (int x = 0; x < kWin; ++x) {
      const double dy = y - kWin / 2, dx = x - kWin / 2;
      window[y * kWin + x] = std::exp(-(dx * dx + dy * dy) / (2.0 * kSigma * kSigma));
      norm += window[y * kWin + x];
    }
  }
  for (double& w : window) w /= norm;

  const double c1 = (0.01 * 255) * (0.01 * 255);
  const double c2 = (0.03 * 255) * (0.03 * 255);
  const int oh = a.height - kWin + 1, ow = a.width - kWin + 1;
  double total = 0.0;
  for (int c = 0; c < a.channels; ++c) {
    double channel_sum = 0.0;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int y = 0; y < kWin; ++y) {
          for (int x = 0; x < kWin; ++x) {
            const double w = window[y * kWin + x];
            const double va = a.at(ox + x, oy + y, c);
            const double vb = b.at(ox + x, oy + y, c);
            ma += w * va;
            mb += w * vb;
            saa += w * va * va;
            sbb += w * vb * vb;
            sab += w * va * vb;
          }
        }
        const double var_a = saa - ma * ma;
        const double var_b = sbb - mb * mb;
        const double cov = sab - ma * mb;
        channel_sum += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                       ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
      }
    }
    total += channel_sum / (static_cast<double>(oh) * ow);
  }
  return total / a.channels;
}

std::string format_db(double db) {
  if (std::isinf(db)) return "inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", db);
  return buf;
}

Dataset load_dataset(const std::string& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("dataset directory '" + dir + "' not found");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DatasetError("no .png images in '" + dir + "'");
  Dataset data;
  for (const auto& f : files) {
    data.images.push_back(image_to_tensor(load_png(f.string())));
    data.names.push_back(f.string());
  }
  return data;
}

AttentionExport export_attention_maps(const NetworkConfig& cfg, const ParamStore& store,
                                      const Image& img, int row, int col,
                                      const std::string& out_dir, int position) {
  if (cfg.attention_positions.empty()) {
    throw ConfigError("network has no attention module to visualise");
  }
  if (position < 0) position = *cfg.attention_positions.begin();
  if (row < 0 || row >= img.height || col < 0 || col >= img.width) {
    throw GeometryError("query (" + std::to_string(col) + ", " + std::to_string(row) +
                        ") outside image " + std::to_string(img.width) + "x" +
                        std::to_string(img.height));
  }
  NoTapeScope no_tape;
  const Tensor features = features_at_attention(image_to_tensor(img), cfg, store, position);
  const auto levels = attention_scores(features, cfg.attention,
                                       attention_params(store, position), row, col);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create '" + out_dir + "': " + ec.message());

  AttentionExport result;
  nlohmann::json index;
  index["query"] = {{"row", row}, {"col", col}};
  index["position"] = position;
  index["levels"] = nlohmann::json::array();
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const LevelWeights& lw = levels[l];
    const std::string stem = "level_" + std::to_string(l);
    const auto [lo, hi] = std::minmax_element(lw.weights.begin(), lw.weights.end());
    const double range = *hi - *lo;
    Image map(lw.width, lw.height, 1);
    for (std::size_t i = 0; i < lw.weights.size(); ++i) {
      map.pixels[i] = range > 0.0
                          ? static_cast<std::uint8_t>(std::lround(255.0 * (lw.weights[i] - *lo) / range))
                          : 0;
    }
    const std::string png_path = (fs::path(out_dir) / (stem + ".png")).string();
    const std::string csv_path = (fs::path(out_dir) / (stem + ".csv")).string();
    save_png(png_path, map);

    std::ofstream csv(csv_path);
    if (!csv) throw IoError("cannot write '" + csv_path + "'");
    double level_sum = 0.0;
    char buf[32];
    for (int y = 0; y < lw.height; ++y) {
      for (int x = 0; x < lw.width; ++x) {
        const double v = lw.weights[static_cast<std::size_t>(y) * lw.width + x];
        level_sum += v;
        std::snprintf(buf, sizeof buf, "%.9g", v);
        csv << (x ? "," : "") << buf;
      }
      csv << '\n';
    }
    if (!csv) throw IoError("failed writing '" + csv_path + "'");

    result.total_weight += level_sum;
    result.files.push_back(png_path);
    result.files.push_back(csv_path);
    index["levels"].push_back({{"level", l},
                               {"scale", lw.scale},
                               {"extents", {lw.height, lw.width}},
                               {"sum_of_weights", level_sum},
                               {"png", stem + ".png"},
                               {"csv", stem + ".csv"}});
  }
  index["total_weight"] = result.total_weight;
  const std::string index_path = (fs::path(out_dir) / "index.json").string();
  std::ofstream out(index_path);
  if (!out) throw IoError("cannot write '" + index_path + "'");
  out << index.dump(2) << '\n';
  result.files.push_back(index_path);
  return result;
}

}  // namespace pyratten
