#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pyratten/tensor.hpp"

namespace pyratten {

struct NetworkConfig;
class ParamStore;

// 8-bit image, row-major, interleaved RGB for three channels.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;  // 1 or 3
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, int c);
  std::uint8_t& at(int x, int y, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool operator==(const Image&) const = default;
};

Image load_png(const std::string& path);
void save_png(const std::string& path, const Image& img);

// (1, C, H, W) tensor with samples scaled to [0, 1].
Tensor image_to_tensor(const Image& img);
// Clamps to [0, 1] and rounds to 8 bit. Uses batch item `batch`.
Image tensor_to_image(const Tensor& t, int batch = 0);

enum class PsnrMode { kAllSamples, kLuma };

// 10 log10(255^2 / MSE); +infinity for identical images. kLuma compares the
// BT.601 luma of RGB inputs.
double psnr(const Image& a, const Image& b, PsnrMode mode = PsnrMode::kAllSamples);

// Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
// K2 = 0.03, L = 255, averaged over valid window positions and channels.
double ssim(const Image& a, const Image& b);

// Formats a PSNR value for JSON/text output ("inf" when infinite).
std::string format_db(double db);

struct Dataset {
  std::vector<Tensor> images;  // each (1, C, H, W) in [0, 1]
  std::vector<std::string> names;

  bool empty() const { return images.empty(); }
  std::size_t size() const { return images.size(); }
};

// All *.png files of a directory, sorted by file name.
Dataset load_dataset(const std::string& dir);

struct AttentionExport {
  std::vector<std::string> files;
  double total_weight = 0.0;
};

// Runs the network to the attention site at `position` (the first configured
// one when negative), takes the weights of query (row, col) and writes per
// level: level_<k>.png (min-max normalised), level_<k>.csv (raw weights,
// 9 significant digits), plus index.json.
AttentionExport export_attention_maps(const NetworkConfig& cfg, const ParamStore& store,
                                      const Image& img, int row, int col,
                                      const std::string& out_dir, int position = -1);

}  // namespace pyratten
