#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <unistd.h>

namespace support {

pyratten::ConvSpec random_conv(int c_out, int c_in, int k, int stride, int pad, Rng& rng,
                               double bound) {
  return pyratten::ConvSpec{pyratten::uniform_tensor(Shape{c_out, c_in, k, k}, -bound, bound, rng),
                            pyratten::uniform_tensor(Shape{c_out, 1, 1, 1}, -bound, bound, rng),
                            stride, pad, pad};
}

pyratten::AttentionParams random_attention(const pyratten::PyramidAttentionConfig& cfg, Rng& rng,
                                           double bound) {
  const int c = cfg.feature_channels, e = cfg.embed_channels;
  return pyratten::AttentionParams{random_conv(e, c, 1, 1, 0, rng, bound),
                                   random_conv(e, c, 1, 1, 0, rng, bound),
                                   random_conv(c, c, 1, 1, 0, rng, bound)};
}

pyratten::AttentionParams identity_theta_attention(const pyratten::PyramidAttentionConfig& cfg,
                                                   Rng& rng) {
  pyratten::AttentionParams p = random_attention(cfg, rng);
  const int c = cfg.feature_channels;
  Tensor eye(Shape{c, c, 1, 1});
  for (int i = 0; i < c; ++i) eye.mutable_data()[i * c + i] = 1;
  p.w_theta = pyratten::ConvSpec{eye, Tensor(Shape{c, 1, 1, 1}), 1, 0, 0};
  return p;
}

double dot(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) acc += static_cast<double>(x[i]) * y[i];
  return acc;
}

pyratten::Image self_similar_image(int width, int height, int channels, Rng& rng) {
  constexpr int kMotifs = 3, kCells = 4, kBands = 3;
  // Motif k: a kCells x kCells grid of colours.
  std::vector<double> motif(kMotifs * kCells * kCells * channels);
  for (double& v : motif) v = rng.uniform();
  double bg[3][3];
  for (int c = 0; c < channels; ++c) {
    bg[c][0] = rng.uniform(0.3, 0.7);
    bg[c][1] = rng.uniform(-0.2, 0.2);
    bg[c][2] = rng.uniform(-0.2, 0.2);
  }
  const int tiles[kBands] = {12, 10, 8};
  int band_motif[kBands], band_offset[kBands][2];
  for (int b = 0; b < kBands; ++b) {
    band_motif[b] = static_cast<int>(rng.below(kMotifs));
    band_offset[b][0] = static_cast<int>(rng.below(12));
    band_offset[b][1] = static_cast<int>(rng.below(12));
  }

  pyratten::Image img(width, height, channels);
  for (int y = 0; y < height; ++y) {
    const int b = std::min(kBands - 1, y * kBands / height);
    const int t = tiles[b];
    for (int x = 0; x < width; ++x) {
      const int u = ((x + band_offset[b][0]) % t) * kCells / t;
      const int v = ((y + band_offset[b][1]) % t) * kCells / t;
      for (int c = 0; c < channels; ++c) {
        const double back = bg[c][0] + bg[c][1] * x / width + bg[c][2] * y / height;
        const double fore = motif[((band_motif[b] * kCells + v) * kCells + u) * channels + c];
        const double value = 0.3 * back + 0.7 * fore;
        img.at(x, y, c) = static_cast<std::uint8_t>(std::lround(std::clamp(value, 0.0, 1.0) * 255));
      }
    }
  }
  return img;
}

void write_dataset(const std::filesystem::path& dir, int count, int width, int height,
                   int channels, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  Rng rng(seed);
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "img_%03d.png", i);
    pyratten::save_png((dir / name).string(), self_similar_image(width, height, channels, rng));
  }
}

std::filesystem::path temp_dir(const std::string& tag) {
  static int counter = 0;
  const auto dir = std::filesystem::temp_directory_path() /
                   ("pyratten_" + tag + "_" + std::to_string(::getpid()) + "_" +
                    std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace support
