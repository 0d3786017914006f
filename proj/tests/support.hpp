#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pyratten/attention.hpp"
#include "pyratten/metrics_io.hpp"
#include "pyratten/random.hpp"
#include "pyratten/tensor.hpp"

namespace support {

using pyratten::Rng;
using pyratten::Shape;
using pyratten::Tensor;

pyratten::ConvSpec random_conv(int c_out, int c_in, int k, int stride, int pad, Rng& rng,
                               double bound = 0.5);

// Random 1x1 embeddings for a config, including biases.
pyratten::AttentionParams random_attention(const pyratten::PyramidAttentionConfig& cfg, Rng& rng,
                                           double bound = 0.5);

// Identity theta (no bias); f and g random.
pyratten::AttentionParams identity_theta_attention(const pyratten::PyramidAttentionConfig& cfg,
                                                   Rng& rng);

double dot(const Tensor& a, const Tensor& b);

// Texture built from a few random motifs repeated across the image at
// several sizes, over a smooth background. Channels 1 or 3.
pyratten::Image self_similar_image(int width, int height, int channels, Rng& rng);

// Writes `count` images named img_000.png ... into dir (created).
void write_dataset(const std::filesystem::path& dir, int count, int width, int height,
                   int channels, std::uint64_t seed);

// Fresh empty directory under the system temp dir.
std::filesystem::path temp_dir(const std::string& tag);

}  // namespace support
