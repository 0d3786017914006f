#include "pyratten/attention.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pyratten/random.hpp"

namespace pyratten {

void PyramidAttentionConfig::validate() const {
  if (scales.empty()) throw ConfigError("attention scales must be non-empty");
  for (double s : scales) {
    if (!(s > 0.0 && s <= 1.0)) {
      throw ConfigError("attention scale " + std::to_string(s) + " not in (0, 1]");
    }
  }
  if (patch_size < 1 || patch_size % 2 == 0) {
    throw ConfigError("attention patch size must be odd and positive, got " +
                      std::to_string(patch_size));
  }
  if (feature_channels < 1 || embed_channels < 1) {
    throw ConfigError("attention channel widths must be positive");
  }
  if (embed_channels > feature_channels) {
    throw ConfigError("embed_channels (" + std::to_string(embed_channels) +
                      ") exceeds feature_channels (" + std::to_string(feature_channels) + ")");
  }
}

void AttentionParams::validate(const PyramidAttentionConfig& cfg) const {
  auto check = [](const ConvSpec& spec, int c_in, int c_out, const char* name) {
    spec.validate();
    if (spec.c_in() != c_in || spec.c_out() != c_out || spec.kernel_h() != 1 ||
        spec.kernel_w() != 1) {
      throw ShapeError(std::string("attention ") + name + " weight " +
                       spec.weight.shape().str() + " inconsistent with config (" +
                       std::to_string(c_out) + ", " + std::to_string(c_in) + ", 1, 1)");
    }
  };
  check(w_f, cfg.feature_channels, cfg.embed_channels, "w_f");
  check(w_g, cfg.feature_channels, cfg.embed_channels, "w_g");
  check(w_theta, cfg.feature_channels, cfg.feature_channels, "w_theta");
}

std::vector<Tensor> build_pyramid(const Tensor& x, const std::vector<double>& scales) {
  std::vector<Tensor> levels;
  levels.reserve(scales.size());
  for (double s : scales) {
    levels.push_back(s == 1.0 ? x : bicubic_resize(x, s));
  }
  return levels;
}

PatchStack extract_patches(const Tensor& z, int r, PatchPadding padding, int level) {
  if (r < 1 || r % 2 == 0) {
    throw ConfigError("patch size must be odd and positive, got " + std::to_string(r));
  }
  const Shape& s = z.shape();
  if (s.n != 1) {
    throw ShapeError("extract_patches expects batch size 1, got " + s.str());
  }
  const int half = r / 2;
  const int count = s.h * s.w;
  PatchStack stack;
  stack.level = level;
  stack.height = s.h;
  stack.width = s.w;
  stack.bank = Tensor(Shape{count, s.c, r, r});

  // Source index of each (patch, channel, ky, kx) entry, -1 for padding.
  auto source = [=](int p, int c, int ky, int kx) -> long {
    int y = p / s.w + ky - half;
    int x = p % s.w + kx - half;
    if (padding == PatchPadding::kReplicate) {
      y = std::clamp(y, 0, s.h - 1);
      x = std::clamp(x, 0, s.w - 1);
    } else if (y < 0 || y >= s.h || x < 0 || x >= s.w) {
      return -1;
    }
    return (static_cast<long>(c) * s.h + y) * s.w + x;
  };

  const Real* src = z.data().data();
  Real* out = stack.bank.mutable_data().data();
#pragma omp parallel for schedule(static)
  for (int p = 0; p < count; ++p) {
    Real* dst = out + static_cast<std::size_t>(p) * s.c * r * r;
    for (int c = 0; c < s.c; ++c) {
      for (int ky = 0; ky < r; ++ky) {
        for (int kx = 0; kx < r; ++kx) {
          const long idx = source(p, c, ky, kx);
          *dst++ = idx < 0 ? Real(0) : src[idx];
        }
      }
    }
  }

  if (Tape::current() && z.requires_grad()) {
    stack.bank.set_requires_grad(true);
    Tape::current()->record(
        "extract_patches", {z}, stack.bank, [source, count, s, r](Tape::Node& node) {
          const Real* dy = node.output.grad().data();
          Real* dz = node.inputs[0].grad_mut().data();
          // Serial: replicate padding maps several entries to one source.
          for (int p = 0; p < count; ++p) {
            const Real* g = dy + static_cast<std::size_t>(p) * s.c * r * r;
            for (int c = 0; c < s.c; ++c) {
              for (int ky = 0; ky < r; ++ky) {
                for (int kx = 0; kx < r; ++kx, ++g) {
                  const long idx = source(p, c, ky, kx);
                  if (idx >= 0) dz[idx] += *g;
                }
              }
            }
          }
        });
  }
  return stack;
}

namespace {

void check_features(const Tensor& x, const AttentionParams& params) {
  if (x.shape().c != params.w_f.c_in()) {
    throw ShapeError("attention input has " + std::to_string(x.shape().c) +
                     " channels, parameters expect " + std::to_string(params.w_f.c_in()));
  }
}

// Pixel-wise embedded-Gaussian attention of queries from x over keys and
// values from z (same batch size).
Tensor attend(const Tensor& x, const Tensor& z, const AttentionParams& params) {
  const Tensor queries = spatial_to_rows(conv2d(x, params.w_f));
  const Tensor keys = spatial_to_rows(conv2d(z, params.w_g));
  const Tensor values = spatial_to_rows(conv2d(z, params.w_theta));
  const Tensor weights = softmax(matmul(queries, keys, false, true), 3);
  return rows_to_spatial(matmul(weights, values), x.shape().h, x.shape().w);
}

}  // namespace

Tensor nonlocal_attention(const Tensor& x, const AttentionParams& params) {
  check_features(x, params);
  return attend(x, x, params);
}

Tensor scale_agnostic_attention(const Tensor& x, double s, const AttentionParams& params) {
  if (!(s > 0.0 && s <= 1.0)) {
    throw ConfigError("scale_agnostic_attention: scale " + std::to_string(s) +
                      " not in (0, 1]");
  }
  check_features(x, params);
  return attend(x, bicubic_resize(x, s), params);
}

Tensor overlap_count(int channels, int height, int width, int r) {
  const int half = r / 2;
  Tensor count(Shape{1, channels, height, width});
  Real* out = count.mutable_data().data();
  for (int y = 0; y < height; ++y) {
    const int ny = std::min(height - 1, y + half) - std::max(0, y - half) + 1;
    for (int x = 0; x < width; ++x) {
      const int nx = std::min(width - 1, x + half) - std::max(0, x - half) + 1;
      out[y * width + x] = static_cast<Real>(ny * nx);
    }
  }
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  for (int c = 1; c < channels; ++c) {
    std::copy(out, out + plane, out + c * plane);
  }
  return count;
}

namespace {

Tensor pyramid_attention_item(const Tensor& x, const PyramidAttentionConfig& cfg,
                              const AttentionParams& params) {
  const int r = cfg.patch_size;
  const int half = r / 2;
  const Shape& xs = x.shape();

  // Query blocks: every r x r neighbourhood of f(x), edge-replicated.
  const Tensor queries = pad_replicate(conv2d(x, params.w_f), half);

  const std::vector<Tensor> levels = build_pyramid(x, cfg.scales);
  std::vector<Tensor> scores;
  std::vector<PatchStack> values;
  scores.reserve(levels.size());
  values.reserve(levels.size());
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const int level = static_cast<int>(l);
    const PatchStack keys =
        extract_patches(conv2d(levels[l], params.w_g), r, PatchPadding::kReplicate, level);
    // One score map per key patch: (1, P_l, H, W).
    scores.push_back(conv2d(queries, ConvSpec{keys.bank, {}, 1, 0, 0}));
    values.push_back(extract_patches(conv2d(levels[l], params.w_theta), r,
                                     PatchPadding::kReplicate, level));
  }

  // Joint softmax over every position of every level.
  const Tensor joint = softmax(scores.size() == 1 ? scores.front() : concat(scores, 1), 1);

  Tensor aggregate;
  int offset = 0;
  for (const PatchStack& stack : values) {
    const Tensor weights =
        values.size() == 1 ? joint : slice(joint, 1, offset, offset + stack.count());
    offset += stack.count();
    const Tensor part = conv_transpose2d(weights, ConvSpec{stack.bank, {}, 1, half, half});
    aggregate = aggregate.defined() ? add(aggregate, part) : part;
  }

  if (r == 1) return aggregate;
  Tensor inv = overlap_count(xs.c, xs.h, xs.w, r);
  for (Real& v : inv.mutable_data()) v = Real(1) / v;
  return mul(aggregate, inv);
}

}  // namespace

Tensor pyramid_attention(const Tensor& x, const PyramidAttentionConfig& cfg,
                         const AttentionParams& params) {
  cfg.validate();
  params.validate(cfg);
  check_features(x, params);
  const int batch = x.shape().n;
  if (batch == 1) return pyramid_attention_item(x, cfg, params);
  std::vector<Tensor> items;
  items.reserve(batch);
  for (int b = 0; b < batch; ++b) {
    items.push_back(pyramid_attention_item(slice(x, 0, b, b + 1), cfg, params));
  }
  return concat(items, 0);
}

std::vector<LevelWeights> attention_scores(const Tensor& x, const PyramidAttentionConfig& cfg,
                                           const AttentionParams& params, int row, int col,
                                           int batch) {
  cfg.validate();
  params.validate(cfg);
  check_features(x, params);
  const Shape& xs = x.shape();
  if (batch < 0 || batch >= xs.n || row < 0 || row >= xs.h || col < 0 || col >= xs.w) {
    throw GeometryError("query (" + std::to_string(row) + ", " + std::to_string(col) +
                        ") of batch item " + std::to_string(batch) +
                        " outside feature map " + xs.str());
  }
  NoTapeScope no_tape;
  const int r = cfg.patch_size;
  const Tensor item = xs.n == 1 ? x : slice(x, 0, batch, batch + 1);
  const PatchStack query_stack =
      extract_patches(conv2d(item, params.w_f), r, PatchPadding::kReplicate);
  const std::size_t len = static_cast<std::size_t>(cfg.embed_channels) * r * r;
  const Real* query = query_stack.bank.data().data() + (static_cast<std::size_t>(row) * xs.w + col) * len;

  std::vector<LevelWeights> out;
  double max_score = -INFINITY;
  const std::vector<Tensor> levels = build_pyramid(item, cfg.scales);
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const PatchStack keys = extract_patches(conv2d(levels[l], params.w_g), r,
                                            PatchPadding::kReplicate, static_cast<int>(l));
    LevelWeights lw{cfg.scales[l], keys.height, keys.width, {}};
    lw.weights.resize(keys.count());
    const Real* bank = keys.bank.data().data();
    for (int p = 0; p < keys.count(); ++p) {
      double dot = 0.0;
      const Real* k = bank + static_cast<std::size_t>(p) * len;
      for (std::size_t i = 0; i < len; ++i) dot += static_cast<double>(query[i]) * k[i];
      lw.weights[p] = dot;
      max_score = std::max(max_score, dot);
    }
    out.push_back(std::move(lw));
  }
  double total = 0.0;
  for (auto& lw : out) {
    for (double& v : lw.weights) {
      v = std::exp(v - max_score);
      total += v;
    }
  }
  for (auto& lw : out) {
    for (double& v : lw.weights) v /= total;
  }
  return out;
}

AttentionParams init_attention_params(const PyramidAttentionConfig& cfg, Rng& rng) {
  const int c = cfg.feature_channels, e = cfg.embed_channels;
  auto make = [&](int c_out) {
    ConvSpec spec;
    spec.weight = he_uniform(Shape{c_out, c, 1, 1}, c, rng);
    spec.bias = Tensor(Shape{c_out, 1, 1, 1});
    return spec;
  };
  AttentionParams p;
  p.w_f = make(e);
  p.w_g = make(e);
  p.w_theta = make(c);
  return p;
}

}  // namespace pyratten
