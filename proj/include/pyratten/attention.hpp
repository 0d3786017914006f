#pragma once

#include <vector>

#include "pyratten/ops.hpp"
#include "pyratten/tensor.hpp"

namespace pyratten {

class Rng;

struct PyramidAttentionConfig {
  std::vector<double> scales{1.0, 0.9, 0.8, 0.7, 0.6};
  int patch_size = 3;  // r, odd
  int embed_channels = 32;
  int feature_channels = 64;

  void validate() const;
};

// 1x1 embeddings: w_f and w_g map features to the matching space, w_theta
// maps features to the aggregated values.
struct AttentionParams {
  ConvSpec w_f;
  ConvSpec w_g;
  ConvSpec w_theta;

  void validate(const PyramidAttentionConfig& cfg) const;
};

enum class PatchPadding { kZero, kReplicate };

// Stride-1 bank of (C, r, r) patches centred on every position of one
// level, laid out as a (P, C, r, r) kernel tensor with P = H * W in
// row-major position order.
struct PatchStack {
  Tensor bank;
  int level = 0;
  int height = 0;
  int width = 0;

  int count() const { return height * width; }
  int source_row(int p) const { return p / width; }
  int source_col(int p) const { return p % width; }
};

// One descriptor map per scale, in scale order. Scale 1.0 yields x itself.
std::vector<Tensor> build_pyramid(const Tensor& x, const std::vector<double>& scales);

// z must have batch size 1 and r must be odd. Differentiable with respect
// to z.
PatchStack extract_patches(const Tensor& z, int r,
                           PatchPadding padding = PatchPadding::kZero, int level = 0);

// Non-local attention with an embedded Gaussian affinity.
Tensor nonlocal_attention(const Tensor& x, const AttentionParams& params);

// Non-local attention whose keys and values come from the map resized by s.
Tensor scale_agnostic_attention(const Tensor& x, double s, const AttentionParams& params);

// Block-matched attention over the whole feature pyramid with a joint
// softmax, implemented with convolutions over patch banks.
Tensor pyramid_attention(const Tensor& x, const PyramidAttentionConfig& cfg,
                         const AttentionParams& params);

struct LevelWeights {
  double scale = 1.0;
  int height = 0;
  int width = 0;
  std::vector<double> weights;  // height * width, row-major
};

// Post-softmax weights of one query position (row, col) of batch item
// `batch`, split per pyramid level.
std::vector<LevelWeights> attention_scores(const Tensor& x, const PyramidAttentionConfig& cfg,
                                           const AttentionParams& params, int row, int col,
                                           int batch = 0);

// Number of stride-1 r x r windows (centred on in-bounds positions) that
// cover each position of an H x W map. Shape (1, channels, H, W).
Tensor overlap_count(int channels, int height, int width, int r);

AttentionParams init_attention_params(const PyramidAttentionConfig& cfg, Rng& rng);

}  // namespace pyratten
