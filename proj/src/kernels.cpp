#include "pyratten/kernels.hpp"

#include <cblas.h>
#include <omp.h>
#if defined(__SSE__)
#include <xmmintrin.h>
#endif

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <string>

namespace pyratten::kernels {

namespace {
int g_threads = -1;
}  // namespace

void set_num_threads(int n) {
  g_threads = n;
  const int effective = n <= 0 ? (n == 0 ? 1 : omp_get_num_procs()) : n;
  omp_set_num_threads(effective);
  openblas_set_num_threads(effective);
}

int num_threads() { return g_threads; }

void configure_threads_from_env() {
  if (const char* env = std::getenv("PYRATTEN_THREADS")) {
    try {
      set_num_threads(std::stoi(env));
    } catch (const std::exception&) {
      throw ConfigError(std::string("PYRATTEN_THREADS must be an integer, got '") +
                        env + "'");
    }
  }
}

#if defined(__SSE__)
namespace {

constexpr unsigned kFtzDaz = 0x8040;

void set_csr_all_threads(unsigned value) {
  _mm_setcsr(value);
#pragma omp parallel
  _mm_setcsr(value);
}

}  // namespace

FlushDenormalsScope::FlushDenormalsScope() : previous_(_mm_getcsr()) {
  set_csr_all_threads(previous_ | kFtzDaz);
}
FlushDenormalsScope::~FlushDenormalsScope() { set_csr_all_threads(previous_); }
#else
FlushDenormalsScope::FlushDenormalsScope() = default;
FlushDenormalsScope::~FlushDenormalsScope() = default;
#endif

void gemm(bool trans_a, bool trans_b, int m, int n, int k, Real alpha,
          const Real* a, int lda, const Real* b, int ldb, Real beta, Real* c,
          int ldc) {
  if (m == 0 || n == 0) return;
  const auto ta = trans_a ? CblasTrans : CblasNoTrans;
  const auto tb = trans_b ? CblasTrans : CblasNoTrans;
#ifdef PYRATTEN_DOUBLE
  cblas_dgemm(CblasRowMajor, ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
#else
  cblas_sgemm(CblasRowMajor, ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
#endif
}

void im2col(const Real* image, const ConvGeometry& g, Real* col) {
  const int oh = g.out_h();
  const int ow = g.out_w();
  const int rows = g.col_rows();
#pragma omp parallel for schedule(static)
  for (int row = 0; row < rows; ++row) {
    const int kx = row % g.kernel_w;
    const int ky = (row / g.kernel_w) % g.kernel_h;
    const int ch = row / (g.kernel_w * g.kernel_h);
    const Real* plane = image + static_cast<std::size_t>(ch) * g.height * g.width;
    Real* dst = col + static_cast<std::size_t>(row) * oh * ow;
    for (int oy = 0; oy < oh; ++oy) {
      const int iy = oy * g.stride - g.pad_h + ky;
      Real* line = dst + static_cast<std::size_t>(oy) * ow;
      if (iy < 0 || iy >= g.height) {
        std::fill(line, line + ow, Real(0));
        continue;
      }
      const Real* src = plane + static_cast<std::size_t>(iy) * g.width;
      for (int ox = 0; ox < ow; ++ox) {
        const int ix = ox * g.stride - g.pad_w + kx;
        line[ox] = (ix >= 0 && ix < g.width) ? src[ix] : Real(0);
      }
    }
  }
}

void col2im_add(const Real* col, const ConvGeometry& g, Real* image) {
  const int oh = g.out_h();
  const int ow = g.out_w();
  const int taps = g.kernel_h * g.kernel_w;
  // Parallel over channels: each channel plane is written by one thread.
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < g.channels; ++ch) {
    Real* plane = image + static_cast<std::size_t>(ch) * g.height * g.width;
    for (int tap = 0; tap < taps; ++tap) {
      const int ky = tap / g.kernel_w;
      const int kx = tap % g.kernel_w;
      const Real* src = col + (static_cast<std::size_t>(ch) * taps + tap) * oh * ow;
      for (int oy = 0; oy < oh; ++oy) {
        const int iy = oy * g.stride - g.pad_h + ky;
        if (iy < 0 || iy >= g.height) continue;
        Real* dst = plane + static_cast<std::size_t>(iy) * g.width;
        const Real* line = src + static_cast<std::size_t>(oy) * ow;
        for (int ox = 0; ox < ow; ++ox) {
          const int ix = ox * g.stride - g.pad_w + kx;
          if (ix >= 0 && ix < g.width) dst[ix] += line[ox];
        }
      }
    }
  }
}

double cubic_weight(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

ResampleAxis bicubic_axis(int in_size, int out_size) {
  ResampleAxis axis;
  axis.in_size = in_size;
  axis.out_size = out_size;
  axis.index.resize(static_cast<std::size_t>(out_size) * 4);
  axis.weight.resize(static_cast<std::size_t>(out_size) * 4);
  const double ratio = static_cast<double>(in_size) / out_size;
  for (int i = 0; i < out_size; ++i) {
    const double src = (i + 0.5) * ratio - 0.5;
    const double base = std::floor(src);
    const double t = src - base;
    for (int k = 0; k < 4; ++k) {
      const int idx = static_cast<int>(base) - 1 + k;
      axis.index[i * 4 + k] = std::clamp(idx, 0, in_size - 1);
      axis.weight[i * 4 + k] = cubic_weight(t - (k - 1));
    }
  }
  return axis;
}

void resample(const Real* in, int planes, const ResampleAxis& ay,
              const ResampleAxis& ax, Real* out) {
  const int ih = ay.in_size, iw = ax.in_size;
  const int oh = ay.out_size, ow = ax.out_size;
#pragma omp parallel
  {
    std::vector<double> rows(static_cast<std::size_t>(oh) * iw);
#pragma omp for schedule(static)
    for (int p = 0; p < planes; ++p) {
      const Real* src = in + static_cast<std::size_t>(p) * ih * iw;
      Real* dst = out + static_cast<std::size_t>(p) * oh * ow;
      for (int y = 0; y < oh; ++y) {
        double* line = rows.data() + static_cast<std::size_t>(y) * iw;
        std::fill(line, line + iw, 0.0);
        for (int k = 0; k < 4; ++k) {
          const double wy = ay.weight[y * 4 + k];
          const Real* s = src + static_cast<std::size_t>(ay.index[y * 4 + k]) * iw;
          for (int x = 0; x < iw; ++x) line[x] += wy * s[x];
        }
      }
      for (int y = 0; y < oh; ++y) {
        const double* line = rows.data() + static_cast<std::size_t>(y) * iw;
        for (int x = 0; x < ow; ++x) {
          double acc = 0.0;
          for (int k = 0; k < 4; ++k) acc += ax.weight[x * 4 + k] * line[ax.index[x * 4 + k]];
          dst[static_cast<std::size_t>(y) * ow + x] = static_cast<Real>(acc);
        }
      }
    }
  }
}

void resample_transpose_add(const Real* out_grad, int planes,
                            const ResampleAxis& ay, const ResampleAxis& ax,
                            Real* in_grad) {
  const int ih = ay.in_size, iw = ax.in_size;
  const int oh = ay.out_size, ow = ax.out_size;
#pragma omp parallel
  {
    std::vector<double> rows(static_cast<std::size_t>(oh) * iw);
    std::vector<double> acc(static_cast<std::size_t>(ih) * iw);
#pragma omp for schedule(static)
    for (int p = 0; p < planes; ++p) {
      const Real* g = out_grad + static_cast<std::size_t>(p) * oh * ow;
      std::fill(rows.begin(), rows.end(), 0.0);
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int y = 0; y < oh; ++y) {
        double* line = rows.data() + static_cast<std::size_t>(y) * iw;
        for (int x = 0; x < ow; ++x) {
          const double v = g[static_cast<std::size_t>(y) * ow + x];
          for (int k = 0; k < 4; ++k) line[ax.index[x * 4 + k]] += ax.weight[x * 4 + k] * v;
        }
      }
      for (int y = 0; y < oh; ++y) {
        const double* line = rows.data() + static_cast<std::size_t>(y) * iw;
        for (int k = 0; k < 4; ++k) {
          const double wy = ay.weight[y * 4 + k];
          double* d = acc.data() + static_cast<std::size_t>(ay.index[y * 4 + k]) * iw;
          for (int x = 0; x < iw; ++x) d[x] += wy * line[x];
        }
      }
      Real* dst = in_grad + static_cast<std::size_t>(p) * ih * iw;
      for (std::size_t i = 0; i < acc.size(); ++i) dst[i] += static_cast<Real>(acc[i]);
    }
  }
}

namespace {

// Underflowed weights become exact zeros: subnormal operands slow every
// downstream GEMM by an order of magnitude.
Real flush_subnormal(double v) {
  return std::abs(v) < static_cast<double>(std::numeric_limits<Real>::min()) ? Real(0)
                                                                              : static_cast<Real>(v);
}

}  // namespace

void softmax(const Real* x, int outer, int axis, int inner, Real* y) {
  const std::size_t stride = static_cast<std::size_t>(inner);
#pragma omp parallel
  {
    std::vector<Real> maxv(inner);
    std::vector<double> sum(inner);
#pragma omp for schedule(static)
    for (int o = 0; o < outer; ++o) {
      const Real* xs = x + static_cast<std::size_t>(o) * axis * inner;
      Real* ys = y + static_cast<std::size_t>(o) * axis * inner;
      std::copy(xs, xs + inner, maxv.begin());
      for (int a = 1; a < axis; ++a) {
        const Real* row = xs + a * stride;
        for (int i = 0; i < inner; ++i) maxv[i] = std::max(maxv[i], row[i]);
      }
      std::fill(sum.begin(), sum.end(), 0.0);
      for (int a = 0; a < axis; ++a) {
        const Real* row = xs + a * stride;
        for (int i = 0; i < inner; ++i) sum[i] += std::exp(static_cast<double>(row[i] - maxv[i]));
      }
      for (int i = 0; i < inner; ++i) sum[i] = 1.0 / sum[i];
      for (int a = 0; a < axis; ++a) {
        const Real* row = xs + a * stride;
        Real* out = ys + a * stride;
        for (int i = 0; i < inner; ++i) {
          out[i] = flush_subnormal(std::exp(static_cast<double>(row[i] - maxv[i])) * sum[i]);
        }
      }
    }
  }
}

void softmax_backward_add(const Real* y, const Real* dy, int outer, int axis,
                          int inner, Real* dx) {
  const std::size_t stride = static_cast<std::size_t>(inner);
#pragma omp parallel
  {
    std::vector<double> dot(inner);
#pragma omp for schedule(static)
    for (int o = 0; o < outer; ++o) {
      const std::size_t base = static_cast<std::size_t>(o) * axis * inner;
      std::fill(dot.begin(), dot.end(), 0.0);
      for (int a = 0; a < axis; ++a) {
        const Real* yr = y + base + a * stride;
        const Real* gr = dy + base + a * stride;
        for (int i = 0; i < inner; ++i) dot[i] += static_cast<double>(yr[i]) * gr[i];
      }
      for (int a = 0; a < axis; ++a) {
        const Real* yr = y + base + a * stride;
        const Real* gr = dy + base + a * stride;
        Real* dr = dx + base + a * stride;
        for (int i = 0; i < inner; ++i) dr[i] += flush_subnormal(yr[i] * (gr[i] - dot[i]));
      }
    }
  }
}

namespace reference {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, Real alpha,
          const Real* a, int lda, const Real* b, int ldb, Real beta, Real* c,
          int ldc) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p) {
        const Real av = trans_a ? a[p * lda + i] : a[i * lda + p];
        const Real bv = trans_b ? b[j * ldb + p] : b[p * ldb + j];
        acc += static_cast<double>(av) * bv;
      }
      Real& out = c[i * ldc + j];
      out = static_cast<Real>(alpha * acc + (beta == Real(0) ? 0.0 : beta * out));
    }
  }
}

void conv2d(const Real* x, int batch, const ConvGeometry& g, const Real* w,
            const Real* bias, int c_out, Real* y) {
  const int oh = g.out_h(), ow = g.out_w();
  for (int n = 0; n < batch; ++n) {
    for (int co = 0; co < c_out; ++co) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          double acc = bias ? bias[co] : 0.0;
          for (int ci = 0; ci < g.channels; ++ci) {
            for (int ky = 0; ky < g.kernel_h; ++ky) {
              for (int kx = 0; kx < g.kernel_w; ++kx) {
                const int iy = oy * g.stride - g.pad_h + ky;
                const int ix = ox * g.stride - g.pad_w + kx;
                if (iy < 0 || iy >= g.height || ix < 0 || ix >= g.width) continue;
                acc += static_cast<double>(
                           x[((static_cast<std::size_t>(n) * g.channels + ci) * g.height + iy) *
                                 g.width + ix]) *
                       w[((static_cast<std::size_t>(co) * g.channels + ci) * g.kernel_h + ky) *
                             g.kernel_w + kx];
              }
            }
          }
          y[((static_cast<std::size_t>(n) * c_out + co) * oh + oy) * ow + ox] =
              static_cast<Real>(acc);
        }
      }
    }
  }
}

void conv_transpose2d(const Real* x, int batch, const ConvGeometry& g,
                      const Real* w, int c_out, Real* y) {
  const int hs = g.out_h(), ws = g.out_w();
  std::vector<double> acc(static_cast<std::size_t>(batch) * g.channels * g.height * g.width, 0.0);
  for (int n = 0; n < batch; ++n) {
    for (int co = 0; co < c_out; ++co) {
      for (int sy = 0; sy < hs; ++sy) {
        for (int sx = 0; sx < ws; ++sx) {
          const double v =
              x[((static_cast<std::size_t>(n) * c_out + co) * hs + sy) * ws + sx];
          for (int ci = 0; ci < g.channels; ++ci) {
            for (int ky = 0; ky < g.kernel_h; ++ky) {
              for (int kx = 0; kx < g.kernel_w; ++kx) {
                const int iy = sy * g.stride - g.pad_h + ky;
                const int ix = sx * g.stride - g.pad_w + kx;
                if (iy < 0 || iy >= g.height || ix < 0 || ix >= g.width) continue;
                acc[((static_cast<std::size_t>(n) * g.channels + ci) * g.height + iy) * g.width +
                    ix] +=
                    v * w[((static_cast<std::size_t>(co) * g.channels + ci) * g.kernel_h + ky) *
                              g.kernel_w + kx];
              }
            }
          }
        }
      }
    }
  }
  for (std::size_t i = 0; i < acc.size(); ++i) y[i] = static_cast<Real>(acc[i]);
}

void softmax(const Real* x, int outer, int axis, int inner, Real* y) {
  for (int o = 0; o < outer; ++o) {
    for (int i = 0; i < inner; ++i) {
      auto idx = [&](int a) {
        return (static_cast<std::size_t>(o) * axis + a) * inner + i;
      };
      double m = x[idx(0)];
      for (int a = 1; a < axis; ++a) m = std::max(m, static_cast<double>(x[idx(a)]));
      double s = 0.0;
      for (int a = 0; a < axis; ++a) s += std::exp(x[idx(a)] - m);
      for (int a = 0; a < axis; ++a) y[idx(a)] = flush_subnormal(std::exp(x[idx(a)] - m) / s);
    }
  }
}

}  // namespace reference

}  // namespace pyratten::kernels
