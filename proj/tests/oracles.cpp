#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace oracle {

Array Array::from(const Tensor& t) {
  Array a(t.shape());
  auto d = t.data();
  for (std::size_t i = 0; i < d.size(); ++i) a.v[i] = d[i];
  return a;
}

double max_abs_diff(const Array& a, const Tensor& b) {
  if (!(a.shape == b.shape())) {
    throw std::runtime_error("oracle shape " + a.shape.str() + " vs " + b.shape().str());
  }
  double m = 0.0;
  auto d = b.data();
  for (std::size_t i = 0; i < d.size(); ++i) m = std::max(m, std::abs(a.v[i] - d[i]));
  return m;
}

Array conv2d(const Array& x, const Array& w, const std::vector<double>& bias, int stride,
             int pad) {
  const Shape& xs = x.shape;
  const Shape& ws = w.shape;
  const int oh = (xs.h + 2 * pad - ws.h) / stride + 1;
  const int ow = (xs.w + 2 * pad - ws.w) / stride + 1;
  Array y(Shape{xs.n, ws.n, oh, ow});
  for (int n = 0; n < xs.n; ++n)
    for (int co = 0; co < ws.n; ++co)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = bias.empty() ? 0.0 : bias[co];
          for (int ci = 0; ci < ws.c; ++ci)
            for (int ky = 0; ky < ws.h; ++ky)
              for (int kx = 0; kx < ws.w; ++kx) {
                const int iy = oy * stride - pad + ky;
                const int ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= xs.h || ix < 0 || ix >= xs.w) continue;
                acc += x.at(n, ci, iy, ix) * w.at(co, ci, ky, kx);
              }
          y.at(n, co, oy, ox) = acc;
        }
  return y;
}

Array conv_transpose2d(const Array& x, const Array& w, int stride, int pad) {
  const Shape& xs = x.shape;
  const Shape& ws = w.shape;
  const int oh = (xs.h - 1) * stride - 2 * pad + ws.h;
  const int ow = (xs.w - 1) * stride - 2 * pad + ws.w;
  Array y(Shape{xs.n, ws.c, oh, ow});
  for (int n = 0; n < xs.n; ++n)
    for (int co = 0; co < ws.n; ++co)
      for (int iy = 0; iy < xs.h; ++iy)
        for (int ix = 0; ix < xs.w; ++ix)
          for (int ci = 0; ci < ws.c; ++ci)
            for (int ky = 0; ky < ws.h; ++ky)
              for (int kx = 0; kx < ws.w; ++kx) {
                const int oy = iy * stride - pad + ky;
                const int ox = ix * stride - pad + kx;
                if (oy < 0 || oy >= oh || ox < 0 || ox >= ow) continue;
                y.at(n, ci, oy, ox) += x.at(n, co, iy, ix) * w.at(co, ci, ky, kx);
              }
  return y;
}

namespace {

double catmull_rom(double d) {
  d = std::abs(d);
  if (d <= 1.0) return 1.5 * d * d * d - 2.5 * d * d + 1.0;
  if (d < 2.0) return -0.5 * d * d * d + 2.5 * d * d - 4.0 * d + 2.0;
  return 0.0;
}

}  // namespace

Array bicubic(const Array& x, double s) {
  const Shape& xs = x.shape;
  const int oh = static_cast<int>(std::lround(xs.h * s));
  const int ow = static_cast<int>(std::lround(xs.w * s));
  Array y(Shape{xs.n, xs.c, oh, ow});
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          const double sy = (oy + 0.5) * xs.h / oh - 0.5;
          const double sx = (ox + 0.5) * xs.w / ow - 0.5;
          const int y0 = static_cast<int>(std::floor(sy));
          const int x0 = static_cast<int>(std::floor(sx));
          double acc = 0.0;
          for (int ty = y0 - 1; ty <= y0 + 2; ++ty)
            for (int tx = x0 - 1; tx <= x0 + 2; ++tx) {
              const int cy = std::clamp(ty, 0, xs.h - 1);
              const int cx = std::clamp(tx, 0, xs.w - 1);
              acc += catmull_rom(sy - ty) * catmull_rom(sx - tx) * x.at(n, c, cy, cx);
            }
          y.at(n, c, oy, ox) = acc;
        }
  return y;
}

Array project(const Array& x, const pyratten::ConvSpec& spec) {
  const Array w = Array::from(spec.weight);
  const Shape& xs = x.shape;
  Array y(Shape{xs.n, w.shape.n, xs.h, xs.w});
  auto b = spec.bias.defined() ? spec.bias.data() : std::span<const pyratten::Real>{};
  for (int n = 0; n < xs.n; ++n)
    for (int o = 0; o < w.shape.n; ++o)
      for (int yy = 0; yy < xs.h; ++yy)
        for (int xx = 0; xx < xs.w; ++xx) {
          double acc = b.empty() ? 0.0 : b[o];
          for (int c = 0; c < xs.c; ++c) acc += w.at(o, c, 0, 0) * x.at(n, c, yy, xx);
          y.at(n, o, yy, xx) = acc;
        }
  return y;
}

namespace {

// Embedded-Gaussian attention of every pixel of x over every pixel of z.
Array pixel_attention(const Array& x, const Array& z, const pyratten::AttentionParams& p) {
  const Array f = project(x, p.w_f);
  const Array g = project(z, p.w_g);
  const Array t = project(z, p.w_theta);
  const Shape& xs = x.shape;
  const int hz = z.shape.h, wz = z.shape.w;
  Array y(xs);
  for (int n = 0; n < xs.n; ++n)
    for (int qy = 0; qy < xs.h; ++qy)
      for (int qx = 0; qx < xs.w; ++qx) {
        std::vector<double> s;
        for (int ky = 0; ky < hz; ++ky)
          for (int kx = 0; kx < wz; ++kx) {
            double dot = 0.0;
            for (int e = 0; e < f.shape.c; ++e) dot += f.at(n, e, qy, qx) * g.at(n, e, ky, kx);
            s.push_back(dot);
          }
        const double m = *std::max_element(s.begin(), s.end());
        double total = 0.0;
        for (double& v : s) total += (v = std::exp(v - m));
        for (int c = 0; c < xs.c; ++c) {
          double acc = 0.0;
          for (int j = 0; j < hz * wz; ++j) acc += s[j] / total * t.at(n, c, j / wz, j % wz);
          y.at(n, c, qy, qx) = acc;
        }
      }
  return y;
}

Array item(const Array& x, int n) {
  Array out(Shape{1, x.shape.c, x.shape.h, x.shape.w});
  const std::size_t len = out.v.size();
  std::copy(x.v.begin() + n * len, x.v.begin() + (n + 1) * len, out.v.begin());
  return out;
}

struct Level {
  Array g, t;
};

std::vector<Level> levels(const Array& x, const pyratten::PyramidAttentionConfig& cfg,
                          const pyratten::AttentionParams& p) {
  std::vector<Level> out;
  for (double s : cfg.scales) {
    const Array z = s == 1.0 ? x : bicubic(x, s);
    out.push_back({project(z, p.w_g), project(z, p.w_theta)});
  }
  return out;
}

double clamped(const Array& a, int c, int y, int x) {
  return a.at(0, c, std::clamp(y, 0, a.shape.h - 1), std::clamp(x, 0, a.shape.w - 1));
}

// Scores of query block (qy, qx) against every key block of every level.
std::vector<double> block_scores(const Array& f, const std::vector<Level>& lv, int half,
                                 int qy, int qx) {
  std::vector<double> s;
  for (const Level& l : lv) {
    for (int ky = 0; ky < l.g.shape.h; ++ky)
      for (int kx = 0; kx < l.g.shape.w; ++kx) {
        double dot = 0.0;
        for (int e = 0; e < f.shape.c; ++e)
          for (int dy = -half; dy <= half; ++dy)
            for (int dx = -half; dx <= half; ++dx)
              dot += clamped(f, e, qy + dy, qx + dx) * clamped(l.g, e, ky + dy, kx + dx);
        s.push_back(dot);
      }
  }
  return s;
}

std::vector<double> normalise(std::vector<double> s) {
  const double m = *std::max_element(s.begin(), s.end());
  double total = 0.0;
  for (double& v : s) total += (v = std::exp(v - m));
  for (double& v : s) v /= total;
  return s;
}

}  // namespace

Array nonlocal(const Array& x, const pyratten::AttentionParams& p) {
  return pixel_attention(x, x, p);
}

Array scale_agnostic(const Array& x, double s, const pyratten::AttentionParams& p) {
  return pixel_attention(x, bicubic(x, s), p);
}

Array pyramid(const Array& x, const pyratten::PyramidAttentionConfig& cfg,
              const pyratten::AttentionParams& p) {
  const int half = cfg.patch_size / 2;
  const Shape& xs = x.shape;
  Array y(xs);
  for (int n = 0; n < xs.n; ++n) {
    const Array xn = item(x, n);
    const Array f = project(xn, p.w_f);
    const std::vector<Level> lv = levels(xn, cfg, p);
    const int hw = xs.h * xs.w;
    // weights[i] is the joint softmax row of query i.
    std::vector<std::vector<double>> weights(hw);
    for (int i = 0; i < hw; ++i) weights[i] = normalise(block_scores(f, lv, half, i / xs.w, i % xs.w));

    for (int c = 0; c < xs.c; ++c)
      for (int oy = 0; oy < xs.h; ++oy)
        for (int ox = 0; ox < xs.w; ++ox) {
          double acc = 0.0;
          int overlaps = 0;
          for (int dy = -half; dy <= half; ++dy)
            for (int dx = -half; dx <= half; ++dx) {
              // Query block centred at (oy - dy, ox - dx) covers (oy, ox) at offset (dy, dx).
              const int qy = oy - dy, qx = ox - dx;
              if (qy < 0 || qy >= xs.h || qx < 0 || qx >= xs.w) continue;
              ++overlaps;
              const std::vector<double>& a = weights[qy * xs.w + qx];
              std::size_t j = 0;
              for (const Level& l : lv)
                for (int ky = 0; ky < l.t.shape.h; ++ky)
                  for (int kx = 0; kx < l.t.shape.w; ++kx, ++j)
                    acc += a[j] * clamped(l.t, c, ky + dy, kx + dx);
            }
          y.at(n, c, oy, ox) = acc / overlaps;
        }
  }
  return y;
}

std::vector<double> pyramid_row(const Array& x, const pyratten::PyramidAttentionConfig& cfg,
                                const pyratten::AttentionParams& p, int row, int col) {
  const Array f = project(x, p.w_f);
  return normalise(block_scores(f, levels(x, cfg, p), cfg.patch_size / 2, row, col));
}

double psnr(const pyratten::Image& a, const pyratten::Image& b) {
  double se = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
    se += d * d;
  }
  const double mse = se / a.pixels.size();
  if (mse == 0.0) return INFINITY;
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

double ssim(const pyratten::Image& a, const pyratten::Image& b) {
  double win[11][11];
  double wsum = 0.0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) wsum += win[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / 4.5);
  const double c1 = (0.01 * 255) * (0.01 * 255);
  const double c2 = (0.03 * 255) * (0.03 * 255);
  double total = 0.0;
  int count = 0;
  for (int c = 0; c < a.channels; ++c)
    for (int y = 0; y + 11 <= a.height; ++y)
      for (int x = 0; x + 11 <= a.width; ++x) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            const double w = win[i][j] / wsum;
            const double va = a.at(x + j, y + i, c), vb = b.at(x + j, y + i, c);
            ma += w * va;
            mb += w * vb;
            saa += w * va * va;
            sbb += w * vb * vb;
            sab += w * va * vb;
          }
        saa -= ma * ma;
        sbb -= mb * mb;
        sab -= ma * mb;
        total += (2 * ma * mb + c1) * (2 * sab + c2) / ((ma * ma + mb * mb + c1) * (saa + sbb + c2));
        ++count;
      }
  return total / count;
}

}  // namespace oracle
