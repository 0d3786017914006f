#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "pyratten/attention.hpp"
#include "pyratten/ops.hpp"
#include "pyratten/random.hpp"
#include "support.hpp"

using namespace pyratten;

namespace {

PyramidAttentionConfig make_cfg(int c, int e, std::vector<double> scales, int r) {
  PyramidAttentionConfig cfg;
  cfg.feature_channels = c;
  cfg.embed_channels = e;
  cfg.scales = std::move(scales);
  cfg.patch_size = r;
  return cfg;
}

double max_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - b.data()[i]));
  return m;
}

// Softmax row of query (row, col) of plain pixel attention, from the oracle
// projections.
std::vector<double> pixel_softmax_row(const Tensor& x, const AttentionParams& p, int row, int col) {
  const oracle::Array xa = oracle::Array::from(x);
  const oracle::Array f = oracle::project(xa, p.w_f), g = oracle::project(xa, p.w_g);
  const int h = x.shape().h, w = x.shape().w, e = f.shape.c;
  std::vector<double> s(h * w);
  for (int j = 0; j < h * w; ++j) {
    double d = 0;
    for (int k = 0; k < e; ++k) d += f.at(0, k, row, col) * g.at(0, k, j / w, j % w);
    s[j] = d;
  }
  const double mx = *std::max_element(s.begin(), s.end());
  double z = 0;
  for (double& v : s) z += (v = std::exp(v - mx));
  for (double& v : s) v /= z;
  return s;
}

}  // namespace

TEST_SUITE("build_pyramid") {
  TEST_CASE("40x40 at the default scales gives 40, 36, 32, 28, 24") {
    const Tensor x(Shape{1, 64, 40, 40}, Real(0.5));
    const std::vector<Tensor> levels = build_pyramid(x, {1.0, 0.9, 0.8, 0.7, 0.6});
    REQUIRE(levels.size() == 5);
    const int expect[] = {40, 36, 32, 28, 24};
    for (int i = 0; i < 5; ++i) {
      CHECK(levels[i].shape() == Shape{1, 64, expect[i], expect[i]});
      for (Real v : levels[i].data()) CHECK(v == doctest::Approx(0.5).epsilon(1e-6));
    }
  }

  TEST_CASE("a single unit scale returns the input tensor itself") {
    const Tensor x(Shape{1, 2, 5, 5}, Real(1));
    const std::vector<Tensor> levels = build_pyramid(x, {1.0});
    REQUIRE(levels.size() == 1);
    CHECK(levels[0].same_storage(x));
  }
}

TEST_SUITE("extract_patches") {
  TEST_CASE("r = 1 samples each pixel") {
    const PatchStack ps = extract_patches(Tensor(Shape{1, 1, 2, 2}, {1, 2, 3, 4}), 1);
    REQUIRE(ps.count() == 4);
    CHECK(ps.bank.shape() == Shape{4, 1, 1, 1});
    for (int i = 0; i < 4; ++i) CHECK(ps.bank.data()[i] == i + 1);
  }

  TEST_CASE("3x3 ramp with r = 3: centre is the whole map, corners are zero padded") {
    std::vector<Real> ramp(9);
    std::iota(ramp.begin(), ramp.end(), Real(1));
    const Tensor x(Shape{1, 1, 3, 3}, ramp);
    const PatchStack ps = extract_patches(x, 3);
    REQUIRE(ps.bank.shape() == Shape{9, 1, 3, 3});
    for (int p = 0; p < 9; ++p) {
      const int cy = ps.source_row(p), cx = ps.source_col(p);
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int y = cy + dy, xx = cx + dx;
          const Real expect = (y < 0 || y > 2 || xx < 0 || xx > 2) ? 0 : ramp[y * 3 + xx];
          CHECK(ps.bank.at(p, 0, dy + 1, dx + 1) == expect);
        }
      }
    }
    for (int i = 0; i < 9; ++i) CHECK(ps.bank.data()[4 * 9 + i] == ramp[i]);
  }

  TEST_CASE("replicate padding repeats the edge samples") {
    const PatchStack ps = extract_patches(Tensor(Shape{1, 1, 2, 2}, {1, 2, 3, 4}), 3, PatchPadding::kReplicate);
    // Patch at (0, 0): rows clamp to {0, 0, 1}, cols to {0, 0, 1}.
    const Real expect[9] = {1, 1, 2, 1, 1, 2, 3, 3, 4};
    for (int i = 0; i < 9; ++i) CHECK(ps.bank.data()[i] == expect[i]);
  }

  TEST_CASE("patch count is H * W for any r") {
    for (int r : {1, 3, 5, 7}) CHECK(extract_patches(Tensor(Shape{1, 3, 5, 7}), r).count() == 35);
  }

  TEST_CASE("even r and batched input are rejected") {
    CHECK_THROWS_AS(extract_patches(Tensor(Shape{1, 1, 4, 4}), 2), ConfigError);
    CHECK_THROWS_AS(extract_patches(Tensor(Shape{2, 1, 4, 4}), 3), ShapeError);
  }
}

TEST_SUITE("nonlocal_attention") {
  TEST_CASE("constant input with identity theta is unchanged") {
    Rng rng(31);
    const auto cfg = make_cfg(4, 2, {1.0}, 1);
    const AttentionParams p = support::identity_theta_attention(cfg, rng);
    const Tensor y = nonlocal_attention(Tensor(Shape{1, 4, 5, 5}, Real(0.3)), p);
    for (Real v : y.data()) CHECK(v == doctest::Approx(0.3).epsilon(1e-6));
  }

  TEST_CASE("matches the double-loop reference on 1x4x4x4") {
    Rng rng(32);
    for (int trial = 0; trial < 5; ++trial) {
      const auto cfg = make_cfg(4, 3, {1.0}, 1);
      const AttentionParams p = support::random_attention(cfg, rng, 1.0);
      const Tensor x = uniform_tensor(Shape{1, 4, 4, 4}, -1, 1, rng);
      CHECK(oracle::max_abs_diff(oracle::nonlocal(oracle::Array::from(x), p), nonlocal_attention(x, p)) < 1e-5);
    }
  }

  TEST_CASE("zero embeddings average theta over the whole map") {
    Rng rng(33);
    const auto cfg = make_cfg(3, 2, {1.0}, 1);
    AttentionParams p = support::random_attention(cfg, rng);
    for (ConvSpec* s : {&p.w_f, &p.w_g}) {
      s->weight = Tensor::zeros(s->weight.shape());
      s->bias = Tensor::zeros(s->bias.shape());
    }
    const Tensor x = uniform_tensor(Shape{1, 3, 5, 6}, -1, 1, rng);
    const oracle::Array theta = oracle::project(oracle::Array::from(x), p.w_theta);
    const Tensor y = nonlocal_attention(x, p);
    for (int c = 0; c < 3; ++c) {
      double mean = 0;
      for (int i = 0; i < 30; ++i) mean += theta.at(0, c, i / 6, i % 6);
      mean /= 30;
      for (int i = 0; i < 30; ++i) CHECK(std::abs(y.at(0, c, i / 6, i % 6) - mean) < 1e-6);
    }
  }
}

TEST_SUITE("scale_agnostic_attention") {
  TEST_CASE("s = 1 equals nonlocal attention") {
    Rng rng(34);
    const auto cfg = make_cfg(4, 2, {1.0}, 1);
    const AttentionParams p = support::random_attention(cfg, rng);
    const Tensor x = uniform_tensor(Shape{2, 4, 6, 5}, -1, 1, rng);
    CHECK(max_diff(scale_agnostic_attention(x, 1.0, p), nonlocal_attention(x, p)) < 1e-6);
  }

  TEST_CASE("constant input with identity theta is unchanged") {
    Rng rng(35);
    const AttentionParams p = support::identity_theta_attention(make_cfg(4, 2, {1.0}, 1), rng);
    const Tensor y = scale_agnostic_attention(Tensor(Shape{1, 4, 8, 8}, Real(-0.7)), 0.5, p);
    for (Real v : y.data()) CHECK(v == doctest::Approx(-0.7).epsilon(1e-6));
  }

  TEST_CASE("matches the reference over the downscaled descriptor map") {
    Rng rng(36);
    for (double s : {0.5, 0.7}) {
      const AttentionParams p = support::random_attention(make_cfg(4, 3, {1.0}, 1), rng, 1.0);
      const Tensor x = uniform_tensor(Shape{1, 4, 8, 8}, -1, 1, rng);
      CHECK(oracle::max_abs_diff(oracle::scale_agnostic(oracle::Array::from(x), s, p),
                                 scale_agnostic_attention(x, s, p)) < 1e-5);
    }
  }
}

TEST_SUITE("pyramid_attention") {
  TEST_CASE("one unit scale with r = 1 degenerates to nonlocal attention") {
    Rng rng(37);
    for (int trial = 0; trial < 20; ++trial) {
      const auto cfg = make_cfg(4, 3, {1.0}, 1);
      const AttentionParams p = support::random_attention(cfg, rng, 1.0);
      const Tensor x = uniform_tensor(Shape{1 + trial % 2, 4, 4 + trial % 5, 5}, -1, 1, rng);
      CHECK(max_diff(pyramid_attention(x, cfg, p), nonlocal_attention(x, p)) < 1e-5);
    }
  }

  TEST_CASE("matches the materialised patch-pair reference") {
    Rng rng(38);
    const auto cfg = make_cfg(8, 4, {1.0, 0.6}, 3);
    const AttentionParams p = support::random_attention(cfg, rng);
    const Tensor x = uniform_tensor(Shape{1, 8, 6, 6}, -1, 1, rng);
    CHECK(oracle::max_abs_diff(oracle::pyramid(oracle::Array::from(x), cfg, p), pyramid_attention(x, cfg, p)) < 1e-4);
  }

  TEST_CASE("constant input with identity theta is unchanged for any configuration") {
    Rng rng(39);
    for (int r : {1, 3, 5}) {
      for (const auto& scales : std::vector<std::vector<double>>{{1.0}, {1.0, 0.6}, {1.0, 0.9, 0.8, 0.7, 0.6}}) {
        const auto cfg = make_cfg(3, 2, scales, r);
        const AttentionParams p = support::identity_theta_attention(cfg, rng);
        const Tensor y = pyramid_attention(Tensor(Shape{1, 3, 9, 10}, Real(0.25)), cfg, p);
        for (Real v : y.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-5));
      }
    }
  }

  TEST_CASE("batch items are processed independently") {
    Rng rng(40);
    const auto cfg = make_cfg(4, 2, {1.0, 0.7}, 3);
    const AttentionParams p = support::random_attention(cfg, rng);
    const Tensor a = uniform_tensor(Shape{1, 4, 7, 7}, -1, 1, rng);
    const Tensor b = uniform_tensor(Shape{1, 4, 7, 7}, -1, 1, rng);
    const Tensor ab = pyramid_attention(concat({a, b}, 0), cfg, p);
    const Tensor ba = pyramid_attention(concat({b, a}, 0), cfg, p);
    CHECK(max_diff(slice(ab, 0, 0, 1), slice(ba, 0, 1, 2)) < 1e-6);
    CHECK(max_diff(slice(ab, 0, 1, 2), slice(ba, 0, 0, 1)) < 1e-6);
    CHECK(max_diff(slice(ab, 0, 0, 1), pyramid_attention(a, cfg, p)) < 1e-6);
  }

  TEST_CASE("block matching differs from pixel matching") {
    Rng rng(41);
    const AttentionParams p = support::random_attention(make_cfg(4, 2, {1.0}, 1), rng, 1.0);
    const Tensor x = uniform_tensor(Shape{1, 4, 6, 6}, -1, 1, rng);
    CHECK(max_diff(pyramid_attention(x, make_cfg(4, 2, {1.0}, 3), p), pyramid_attention(x, make_cfg(4, 2, {1.0}, 1), p)) > 1e-3);
  }

  TEST_CASE("too small an input names the offending scale") {
    Rng rng(42);
    const auto cfg = make_cfg(2, 1, {1.0, 0.1}, 3);
    const AttentionParams p = support::random_attention(cfg, rng);
    try {
      pyramid_attention(Tensor(Shape{1, 2, 4, 4}), cfg, p);
      FAIL("expected GeometryError");
    } catch (const GeometryError& e) {
      CHECK(std::string(e.what()).find("0.1") != std::string::npos);
    }
  }

  TEST_CASE("configuration validation") {
    CHECK_THROWS_AS(make_cfg(4, 2, {1.0}, 2).validate(), ConfigError);
    CHECK_THROWS_AS(make_cfg(4, 2, {}, 3).validate(), ConfigError);
    CHECK_THROWS_AS(make_cfg(4, 2, {1.0, -0.5}, 3).validate(), ConfigError);
    CHECK_NOTHROW(make_cfg(4, 2, {1.0, 0.5}, 3).validate());
  }
}

TEST_SUITE("attention_scores") {
  TEST_CASE("constant input gives uniform weights over every level") {
    Rng rng(43);
    const auto cfg = make_cfg(3, 2, {1.0, 0.9, 0.8, 0.7, 0.6}, 3);
    const AttentionParams p = support::random_attention(cfg, rng);
    const auto levels = attention_scores(Tensor(Shape{1, 3, 10, 10}, Real(0.4)), cfg, p, 4, 6);
    REQUIRE(levels.size() == 5);
    const double expect = 1.0 / (100 + 81 + 64 + 49 + 36);
    for (const LevelWeights& l : levels) {
      CHECK(l.weights.size() == static_cast<std::size_t>(l.height * l.width));
      for (double w : l.weights) CHECK(w == doctest::Approx(expect).epsilon(1e-5));
    }
  }

  TEST_CASE("one unit scale with r = 1 equals the nonlocal softmax row") {
    Rng rng(44);
    const auto cfg = make_cfg(4, 3, {1.0}, 1);
    const AttentionParams p = support::random_attention(cfg, rng, 1.0);
    const Tensor x = uniform_tensor(Shape{1, 4, 5, 6}, -1, 1, rng);
    const auto levels = attention_scores(x, cfg, p, 2, 3);
    REQUIRE(levels.size() == 1);
    const std::vector<double> row = pixel_softmax_row(x, p, 2, 3);
    REQUIRE(levels[0].weights.size() == row.size());
    for (std::size_t j = 0; j < row.size(); ++j) CHECK(std::abs(levels[0].weights[j] - row[j]) < 1e-6);
  }

  TEST_CASE("random queries sum to one and match the reference row") {
    Rng rng(45);
    const auto cfg = make_cfg(8, 4, {1.0, 0.9, 0.8, 0.7, 0.6}, 3);
    const AttentionParams p = support::random_attention(cfg, rng);
    const Tensor x = uniform_tensor(Shape{1, 8, 9, 8}, -1, 1, rng);
    for (int q = 0; q < 10; ++q) {
      const int row = static_cast<int>(rng.below(9)), col = static_cast<int>(rng.below(8));
      const auto levels = attention_scores(x, cfg, p, row, col);
      std::vector<double> flat;
      for (const LevelWeights& l : levels) flat.insert(flat.end(), l.weights.begin(), l.weights.end());
      CHECK(std::abs(std::accumulate(flat.begin(), flat.end(), 0.0) - 1.0) < 1e-5);
      const std::vector<double> ref = oracle::pyramid_row(oracle::Array::from(x), cfg, p, row, col);
      REQUIRE(ref.size() == flat.size());
      double err = 0;
      for (std::size_t j = 0; j < ref.size(); ++j) err = std::max(err, std::abs(ref[j] - flat[j]));
      CHECK(err < 1e-5);
    }
  }

  TEST_CASE("out-of-range query is a geometry error") {
    Rng rng(46);
    const auto cfg = make_cfg(2, 1, {1.0}, 1);
    const AttentionParams p = support::random_attention(cfg, rng);
    CHECK_THROWS_AS(attention_scores(Tensor(Shape{1, 2, 4, 4}), cfg, p, 4, 0), GeometryError);
  }
}

TEST_SUITE("overlap_count") {
  TEST_CASE("interior positions are covered r * r times") {
    const Tensor c = overlap_count(1, 5, 6, 3);
    CHECK(c.at(0, 0, 2, 2) == 9);
    CHECK(c.at(0, 0, 0, 0) == 4);
    CHECK(c.at(0, 0, 0, 3) == 6);
  }
}
