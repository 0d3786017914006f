#pragma once

// Low-level numeric kernels over raw row-major buffers. The parallel
// versions are what the ops use; the `reference` namespace keeps plain
// serial loops that the tests and the benchmark compare against.

#include <cstddef>
#include <vector>

#include "pyratten/tensor.hpp"

namespace pyratten::kernels {

// Worker thread cap for OpenMP regions and BLAS. 0 means deterministic
// single-thread mode; negative means "library default".
void set_num_threads(int n);
int num_threads();
// Applies PYRATTEN_THREADS from the environment when set.
void configure_threads_from_env();

// Treats subnormal floats as zero on the calling thread and the OpenMP
// workers while alive, restoring the previous mode afterwards. Training
// produces long tails of underflowing attention weights whose subnormal
// arithmetic is otherwise very slow. No effect on non-x86 targets.
class FlushDenormalsScope {
 public:
  FlushDenormalsScope();
  ~FlushDenormalsScope();
  FlushDenormalsScope(const FlushDenormalsScope&) = delete;
  FlushDenormalsScope& operator=(const FlushDenormalsScope&) = delete;

 private:
  unsigned previous_ = 0;
};

// C = alpha * op(A) * op(B) + beta * C, all row-major.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, Real alpha,
          const Real* a, int lda, const Real* b, int ldb, Real beta, Real* c,
          int ldc);

struct ConvGeometry {
  int channels = 1;
  int height = 1;
  int width = 1;
  int kernel_h = 1;
  int kernel_w = 1;
  int stride = 1;
  int pad_h = 0;
  int pad_w = 0;

  int out_h() const { return (height + 2 * pad_h - kernel_h) / stride + 1; }
  int out_w() const { return (width + 2 * pad_w - kernel_w) / stride + 1; }
  int col_rows() const { return channels * kernel_h * kernel_w; }
  int col_cols() const { return out_h() * out_w(); }
};

// Unfolds one (C, H, W) image into a (C*kh*kw, Ho*Wo) column matrix with
// zero padding.
void im2col(const Real* image, const ConvGeometry& g, Real* col);
// Adjoint of im2col: scatters columns back, accumulating into `image`.
void col2im_add(const Real* col, const ConvGeometry& g, Real* image);

// Separable resampling matrix for one axis: out[i] = sum_k w[k] * in[idx[k]]
// with four taps per output sample.
struct ResampleAxis {
  int in_size = 0;
  int out_size = 0;
  std::vector<int> index;     // out_size * 4
  std::vector<double> weight; // out_size * 4
};

// Catmull-Rom (a = -0.5) bicubic taps with pixel-centre alignment and
// edge clamping.
double cubic_weight(double t);
ResampleAxis bicubic_axis(int in_size, int out_size);

// planes: number of (H, W) planes stored back to back.
void resample(const Real* in, int planes, const ResampleAxis& ay,
              const ResampleAxis& ax, Real* out);
// Transpose of resample, accumulating into `in_grad`.
void resample_transpose_add(const Real* out_grad, int planes,
                            const ResampleAxis& ay, const ResampleAxis& ax,
                            Real* in_grad);

// Numerically stable softmax over the middle axis of an
// (outer, axis, inner) view.
void softmax(const Real* x, int outer, int axis, int inner, Real* y);
void softmax_backward_add(const Real* y, const Real* dy, int outer, int axis,
                          int inner, Real* dx);

namespace reference {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, Real alpha,
          const Real* a, int lda, const Real* b, int ldb, Real beta, Real* c,
          int ldc);

// Direct 7-loop convolution of a full batch.
// x: (N, Cin, H, W); w: (Cout, Cin, kh, kw); bias may be null.
void conv2d(const Real* x, int batch, const ConvGeometry& g, const Real* w,
            const Real* bias, int c_out, Real* y);

// Direct scatter form of the transposed convolution.
// x: (N, Cout, Hs, Ws); w: (Cout, Cin, kh, kw); y: (N, Cin, Ho, Wo) with
// geometry `g` describing the forward convolution Cin -> Cout on (Ho, Wo).
void conv_transpose2d(const Real* x, int batch, const ConvGeometry& g,
                      const Real* w, int c_out, Real* y);

void softmax(const Real* x, int outer, int axis, int inner, Real* y);

}  // namespace reference

}  // namespace pyratten::kernels
