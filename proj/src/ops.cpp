#include "pyratten/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "pyratten/kernels.hpp"

namespace pyratten {

namespace {

using kernels::ConvGeometry;

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (Tape::current() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) {
    return t->defined() && t->requires_grad();
  });
}

void record(const char* op, std::vector<Tensor> inputs, Tensor& output,
            std::function<void(Tape::Node&)> backward) {
  output.set_requires_grad(true);
  Tape::current()->record(op, std::move(inputs), output, std::move(backward));
}

// Gradient buffer of `t` when it participates in differentiation, else null.
Real* grad_target(Tensor& t) {
  return (t.defined() && t.requires_grad()) ? t.grad_mut().data() : nullptr;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() +
                     " vs " + b.shape().str());
  }
}

void check_axis(int axis, const char* op) {
  if (axis < 0 || axis > 3) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " invalid for rank 4");
  }
}

// (outer, axis, inner) factorisation of a shape around `axis`.
struct AxisView {
  int outer;
  int axis;
  int inner;
};

AxisView axis_view(const Shape& s, int axis) {
  int outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (int i = axis + 1; i < 4; ++i) inner *= s[i];
  return {outer, s[axis], inner};
}

Shape with_axis(Shape s, int axis, int extent) {
  switch (axis) {
    case 0: s.n = extent; break;
    case 1: s.c = extent; break;
    case 2: s.h = extent; break;
    default: s.w = extent; break;
  }
  return s;
}

ConvGeometry conv_geometry(const ConvSpec& spec, int channels, int height,
                           int width) {
  return ConvGeometry{channels,          height,      width,      spec.kernel_h(),
                      spec.kernel_w(),   spec.stride, spec.pad_h, spec.pad_w};
}

bool is_pointwise(const ConvGeometry& g) {
  return g.kernel_h == 1 && g.kernel_w == 1 && g.stride == 1 && g.pad_h == 0 &&
         g.pad_w == 0;
}

void add_bias_grad(const Real* dy, int batch, int channels, std::size_t plane,
                   Real* db) {
  for (int n = 0; n < batch; ++n) {
    for (int c = 0; c < channels; ++c) {
      const Real* p = dy + (static_cast<std::size_t>(n) * channels + c) * plane;
      double acc = 0.0;
      for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      db[c] += static_cast<Real>(acc);
    }
  }
}

}  // namespace

void ConvSpec::validate() const {
  if (!weight.defined()) throw ConfigError("conv spec has no weight");
  if (stride < 1) throw ConfigError("conv stride must be >= 1, got " + std::to_string(stride));
  if (pad_h < 0 || pad_w < 0) throw ConfigError("conv padding must be >= 0");
  if (bias.defined() && bias.numel() != static_cast<std::size_t>(c_out())) {
    throw ShapeError("conv bias has " + std::to_string(bias.numel()) +
                     " values for " + std::to_string(c_out()) + " output channels");
  }
}

Tensor conv2d(const Tensor& x, const ConvSpec& spec) {
  spec.validate();
  const Shape& xs = x.shape();
  if (xs.c != spec.c_in()) {
    throw ShapeError("conv2d: input has " + std::to_string(xs.c) +
                     " channels, weight expects " + std::to_string(spec.c_in()));
  }
  const ConvGeometry g = conv_geometry(spec, xs.c, xs.h, xs.w);
  if (xs.h + 2 * g.pad_h < g.kernel_h || xs.w + 2 * g.pad_w < g.kernel_w) {
    throw GeometryError("conv2d: kernel " + spec.weight.shape().str() +
                        " does not fit input " + xs.str());
  }
  const int c_out = spec.c_out();
  const int rows = g.col_rows(), cols = g.col_cols();
  Tensor y(Shape{xs.n, c_out, g.out_h(), g.out_w()});

  const bool pointwise = is_pointwise(g);
  std::vector<Real> col(pointwise ? 0 : static_cast<std::size_t>(rows) * cols);
  const Real* w = spec.weight.data().data();
  Real* out = y.mutable_data().data();
  for (int n = 0; n < xs.n; ++n) {
    const Real* xn = x.data().data() + static_cast<std::size_t>(n) * xs.c * xs.plane();
    const Real* src = xn;
    if (!pointwise) {
      kernels::im2col(xn, g, col.data());
      src = col.data();
    }
    Real* yn = out + static_cast<std::size_t>(n) * c_out * cols;
    kernels::gemm(false, false, c_out, cols, rows, Real(1), w, rows, src, cols,
                  Real(0), yn, cols);
    if (spec.bias.defined()) {
      const Real* b = spec.bias.data().data();
      for (int c = 0; c < c_out; ++c) {
        Real* p = yn + static_cast<std::size_t>(c) * cols;
        for (int i = 0; i < cols; ++i) p[i] += b[c];
      }
    }
  }

  if (should_record({&x, &spec.weight, &spec.bias})) {
    record("conv2d", {x, spec.weight, spec.bias}, y, [g, c_out](Tape::Node& node) {
      Tensor& in = node.inputs[0];
      Tensor& weight = node.inputs[1];
      Tensor& bias = node.inputs[2];
      const Shape xs = in.shape();
      const int rows = g.col_rows(), cols = g.col_cols();
      const bool pointwise = is_pointwise(g);
      const Real* dy = node.output.grad().data();
      const Real* w = weight.data().data();
      Real* dx = grad_target(in);
      Real* dw = grad_target(weight);
      Real* db = grad_target(bias);
      std::vector<Real> col(pointwise ? 0 : static_cast<std::size_t>(rows) * cols);
      for (int n = 0; n < xs.n; ++n) {
        const Real* dyn = dy + static_cast<std::size_t>(n) * c_out * cols;
        const std::size_t xoff = static_cast<std::size_t>(n) * xs.c * xs.plane();
        if (dw) {
          const Real* src = in.data().data() + xoff;
          if (!pointwise) {
            kernels::im2col(src, g, col.data());
            src = col.data();
          }
          kernels::gemm(false, true, c_out, rows, cols, Real(1), dyn, cols, src,
                        cols, Real(1), dw, rows);
        }
        if (dx) {
          if (pointwise) {
            kernels::gemm(true, false, rows, cols, c_out, Real(1), w, rows, dyn,
                          cols, Real(1), dx + xoff, cols);
          } else {
            kernels::gemm(true, false, rows, cols, c_out, Real(1), w, rows, dyn,
                          cols, Real(0), col.data(), cols);
            kernels::col2im_add(col.data(), g, dx + xoff);
          }
        }
      }
      if (db) add_bias_grad(dy, xs.n, c_out, static_cast<std::size_t>(cols), db);
    });
  }
  return y;
}

Tensor conv_transpose2d(const Tensor& x, const ConvSpec& spec) {
  if (!spec.weight.defined()) throw ConfigError("conv spec has no weight");
  if (spec.stride < 1) throw ConfigError("conv stride must be >= 1");
  if (spec.pad_h < 0 || spec.pad_w < 0) throw ConfigError("conv padding must be >= 0");
  const Shape& xs = x.shape();
  const int c_out = spec.c_out();  // channels consumed
  const int c_in = spec.c_in();    // channels produced
  if (xs.c != c_out) {
    throw ShapeError("conv_transpose2d: input has " + std::to_string(xs.c) +
                     " channels, weight expects " + std::to_string(c_out));
  }
  if (spec.bias.defined() && spec.bias.numel() != static_cast<std::size_t>(c_in)) {
    throw ShapeError("conv_transpose2d: bias must have " + std::to_string(c_in) + " values");
  }
  const int oh = (xs.h - 1) * spec.stride - 2 * spec.pad_h + spec.kernel_h();
  const int ow = (xs.w - 1) * spec.stride - 2 * spec.pad_w + spec.kernel_w();
  if (oh < 1 || ow < 1) {
    throw GeometryError("conv_transpose2d: output extent " + std::to_string(oh) +
                        "x" + std::to_string(ow) + " from input " + xs.str());
  }
  const ConvGeometry g = conv_geometry(spec, c_in, oh, ow);
  const int rows = g.col_rows(), cols = g.col_cols();
  Tensor y(Shape{xs.n, c_in, oh, ow});
  const bool pointwise = is_pointwise(g);
  std::vector<Real> col(static_cast<std::size_t>(rows) * cols);
  const Real* w = spec.weight.data().data();
  for (int n = 0; n < xs.n; ++n) {
    const Real* xn = x.data().data() + static_cast<std::size_t>(n) * c_out * cols;
    Real* yn = y.mutable_data().data() + static_cast<std::size_t>(n) * c_in * oh * ow;
    if (pointwise) {
      kernels::gemm(true, false, rows, cols, c_out, Real(1), w, rows, xn, cols,
                    Real(0), yn, cols);
    } else {
      kernels::gemm(true, false, rows, cols, c_out, Real(1), w, rows, xn, cols,
                    Real(0), col.data(), cols);
      kernels::col2im_add(col.data(), g, yn);
    }
    if (spec.bias.defined()) {
      const Real* b = spec.bias.data().data();
      const std::size_t plane = static_cast<std::size_t>(oh) * ow;
      for (int c = 0; c < c_in; ++c) {
        Real* p = yn + c * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] += b[c];
      }
    }
  }

  if (should_record({&x, &spec.weight, &spec.bias})) {
    record("conv_transpose2d", {x, spec.weight, spec.bias}, y,
           [g, c_out, c_in](Tape::Node& node) {
             Tensor& in = node.inputs[0];
             Tensor& weight = node.inputs[1];
             Tensor& bias = node.inputs[2];
             const int batch = in.shape().n;
             const int rows = g.col_rows(), cols = g.col_cols();
             const std::size_t out_plane = static_cast<std::size_t>(g.height) * g.width;
             const bool pointwise = is_pointwise(g);
             const Real* dy = node.output.grad().data();
             const Real* w = weight.data().data();
             Real* dx = grad_target(in);
             Real* dw = grad_target(weight);
             Real* db = grad_target(bias);
             std::vector<Real> col(pointwise ? 0 : static_cast<std::size_t>(rows) * cols);
             for (int n = 0; n < batch; ++n) {
               const Real* dyn = dy + static_cast<std::size_t>(n) * c_in * out_plane;
               const Real* src = dyn;
               if (!pointwise) {
                 kernels::im2col(dyn, g, col.data());
                 src = col.data();
               }
               const std::size_t xoff = static_cast<std::size_t>(n) * c_out * cols;
               if (dx) {
                 kernels::gemm(false, false, c_out, cols, rows, Real(1), w, rows,
                               src, cols, Real(1), dx + xoff, cols);
               }
               if (dw) {
                 kernels::gemm(false, true, c_out, rows, cols, Real(1),
                               in.data().data() + xoff, cols, src, cols, Real(1),
                               dw, rows);
               }
             }
             if (db) add_bias_grad(dy, batch, c_in, out_plane, db);
           });
  }
  return y;
}

Shape resized_shape(const Shape& s, double factor) {
  if (!(factor > 0.0) || !std::isfinite(factor)) {
    throw GeometryError("resize scale must be a positive finite number, got " +
                        std::to_string(factor));
  }
  const long h = std::lround(s.h * factor);
  const long w = std::lround(s.w * factor);
  if (h < 1 || w < 1) {
    throw GeometryError("resize of " + s.str() + " by scale " + std::to_string(factor) +
                        " yields empty extent " + std::to_string(h) + "x" +
                        std::to_string(w));
  }
  return Shape{s.n, s.c, static_cast<int>(h), static_cast<int>(w)};
}

Tensor bicubic_resize(const Tensor& x, double factor) {
  const Shape& xs = x.shape();
  const Shape ys = resized_shape(xs, factor);
  if (ys == xs) return x;
  auto ay = kernels::bicubic_axis(xs.h, ys.h);
  auto ax = kernels::bicubic_axis(xs.w, ys.w);
  Tensor y(ys);
  kernels::resample(x.data().data(), xs.n * xs.c, ay, ax, y.mutable_data().data());
  if (should_record({&x})) {
    record("bicubic_resize", {x}, y,
           [ay = std::move(ay), ax = std::move(ax)](Tape::Node& node) {
             Tensor& in = node.inputs[0];
             const Shape& s = in.shape();
             kernels::resample_transpose_add(node.output.grad().data(), s.n * s.c,
                                             ay, ax, in.grad_mut().data());
           });
  }
  return y;
}

Tensor softmax(const Tensor& x, int axis) {
  check_axis(axis, "softmax");
  const AxisView v = axis_view(x.shape(), axis);
  Tensor y(x.shape());
  kernels::softmax(x.data().data(), v.outer, v.axis, v.inner, y.mutable_data().data());
  if (should_record({&x})) {
    record("softmax", {x}, y, [v](Tape::Node& node) {
      kernels::softmax_backward_add(node.output.data().data(),
                                    node.output.grad().data(), v.outer, v.axis,
                                    v.inner, node.inputs[0].grad_mut().data());
    });
  }
  return y;
}

Tensor relu(const Tensor& x) {
  Tensor y(x.shape());
  auto in = x.data();
  auto out = y.mutable_data();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > Real(0) ? in[i] : Real(0);
  if (should_record({&x})) {
    record("relu", {x}, y, [](Tape::Node& node) {
      auto xin = node.inputs[0].data();
      auto dy = node.output.grad();
      auto dx = node.inputs[0].grad_mut();
      for (std::size_t i = 0; i < xin.size(); ++i) {
        if (xin[i] > Real(0)) dx[i] += dy[i];
      }
    });
  }
  return y;
}

namespace {

Tensor add_scaled(const Tensor& a, const Tensor& b, Real sign, const char* op) {
  require_same_shape(a, b, op);
  Tensor y(a.shape());
  auto pa = a.data(), pb = b.data();
  auto out = y.mutable_data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + sign * pb[i];
  if (should_record({&a, &b})) {
    record(op, {a, b}, y, [sign](Tape::Node& node) {
      auto dy = node.output.grad();
      if (Real* da = grad_target(node.inputs[0])) {
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
      }
      if (Real* db = grad_target(node.inputs[1])) {
        for (std::size_t i = 0; i < dy.size(); ++i) db[i] += sign * dy[i];
      }
    });
  }
  return y;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return add_scaled(a, b, Real(1), "add"); }

Tensor sub(const Tensor& a, const Tensor& b) { return add_scaled(a, b, Real(-1), "sub"); }

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor y(a.shape());
  auto pa = a.data(), pb = b.data();
  auto out = y.mutable_data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * pb[i];
  if (should_record({&a, &b})) {
    record("mul", {a, b}, y, [](Tape::Node& node) {
      auto dy = node.output.grad();
      auto va = node.inputs[0].data(), vb = node.inputs[1].data();
      if (Real* da = grad_target(node.inputs[0])) {
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * vb[i];
      }
      if (Real* db = grad_target(node.inputs[1])) {
        for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * va[i];
      }
    });
  }
  return y;
}

Tensor scale(const Tensor& x, Real factor) {
  Tensor y(x.shape());
  auto in = x.data();
  auto out = y.mutable_data();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * factor;
  if (should_record({&x})) {
    record("scale", {x}, y, [factor](Tape::Node& node) {
      auto dy = node.output.grad();
      auto dx = node.inputs[0].grad_mut();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += factor * dy[i];
    });
  }
  return y;
}

Tensor sum(const Tensor& x) {
  auto in = x.data();
  const double total = std::accumulate(in.begin(), in.end(), 0.0);
  Tensor y = Tensor::scalar(static_cast<Real>(total));
  if (should_record({&x})) {
    record("sum", {x}, y, [](Tape::Node& node) {
      const Real g = node.output.grad()[0];
      for (Real& d : node.inputs[0].grad_mut()) d += g;
    });
  }
  return y;
}

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "l1_loss");
  auto p = pred.data(), t = target.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += std::abs(static_cast<double>(p[i]) - static_cast<double>(t[i]));
  }
  const double count = static_cast<double>(p.size());
  Tensor y = Tensor::scalar(static_cast<Real>(acc / count));
  if (should_record({&pred, &target})) {
    record("l1_loss", {pred, target}, y, [count](Tape::Node& node) {
      const Real g = static_cast<Real>(node.output.grad()[0] / count);
      auto vp = node.inputs[0].data(), vt = node.inputs[1].data();
      Real* dp = grad_target(node.inputs[0]);
      Real* dt = grad_target(node.inputs[1]);
      for (std::size_t i = 0; i < vp.size(); ++i) {
        const Real s = vp[i] > vt[i] ? Real(1) : (vp[i] < vt[i] ? Real(-1) : Real(0));
        if (dp) dp[i] += s * g;
        if (dt) dt[i] -= s * g;
      }
    });
  }
  return y;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  check_axis(axis, "concat");
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  Shape base = parts.front().shape();
  int total = 0;
  for (const Tensor& t : parts) {
    if (with_axis(t.shape(), axis, 1) != with_axis(base, axis, 1)) {
      throw ShapeError("concat: " + t.shape().str() + " incompatible with " +
                       base.str() + " along axis " + std::to_string(axis));
    }
    total += t.shape()[axis];
  }
  Tensor y(with_axis(base, axis, total));
  const AxisView out_view = axis_view(y.shape(), axis);
  Real* out = y.mutable_data().data();
  int offset = 0;
  for (const Tensor& t : parts) {
    const AxisView v = axis_view(t.shape(), axis);
    const std::size_t block = static_cast<std::size_t>(v.axis) * v.inner;
    const Real* src = t.data().data();
    for (int o = 0; o < v.outer; ++o) {
      std::copy(src + o * block, src + (o + 1) * block,
                out + (static_cast<std::size_t>(o) * out_view.axis + offset) * v.inner);
    }
    offset += v.axis;
  }
  bool any = false;
  for (const Tensor& t : parts) any = any || t.requires_grad();
  if (any && Tape::current()) {
    record("concat", parts, y, [axis](Tape::Node& node) {
      const AxisView ov = axis_view(node.output.shape(), axis);
      const Real* dy = node.output.grad().data();
      int offset = 0;
      for (Tensor& t : node.inputs) {
        const AxisView v = axis_view(t.shape(), axis);
        if (t.requires_grad()) {
          Real* dx = t.grad_mut().data();
          const std::size_t block = static_cast<std::size_t>(v.axis) * v.inner;
          for (int o = 0; o < v.outer; ++o) {
            const Real* src = dy + (static_cast<std::size_t>(o) * ov.axis + offset) * v.inner;
            Real* dst = dx + o * block;
            for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
          }
        }
        offset += v.axis;
      }
    });
  }
  return y;
}

Tensor slice(const Tensor& x, int axis, int begin, int end) {
  check_axis(axis, "slice");
  const int extent = x.shape()[axis];
  if (begin < 0 || end > extent || begin >= end) {
    throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for extent " + std::to_string(extent));
  }
  Tensor y(with_axis(x.shape(), axis, end - begin));
  const AxisView in_view = axis_view(x.shape(), axis);
  const std::size_t block = static_cast<std::size_t>(end - begin) * in_view.inner;
  const Real* src = x.data().data();
  Real* out = y.mutable_data().data();
  for (int o = 0; o < in_view.outer; ++o) {
    const Real* s = src + (static_cast<std::size_t>(o) * in_view.axis + begin) * in_view.inner;
    std::copy(s, s + block, out + o * block);
  }
  if (should_record({&x})) {
    record("slice", {x}, y, [in_view, begin, block](Tape::Node& node) {
      const Real* dy = node.output.grad().data();
      Real* dx = node.inputs[0].grad_mut().data();
      for (int o = 0; o < in_view.outer; ++o) {
        Real* d = dx + (static_cast<std::size_t>(o) * in_view.axis + begin) * in_view.inner;
        const Real* g = dy + o * block;
        for (std::size_t i = 0; i < block; ++i) d[i] += g[i];
      }
    });
  }
  return y;
}

Tensor pad_replicate(const Tensor& x, int pad) {
  if (pad < 0) throw ConfigError("pad_replicate: negative padding");
  if (pad == 0) return x;
  const Shape& s = x.shape();
  const int ph = s.h + 2 * pad, pw = s.w + 2 * pad;
  Tensor y(Shape{s.n, s.c, ph, pw});
  const int planes = s.n * s.c;
  const Real* src = x.data().data();
  Real* out = y.mutable_data().data();
  for (int p = 0; p < planes; ++p) {
    const Real* sp = src + static_cast<std::size_t>(p) * s.plane();
    Real* op = out + static_cast<std::size_t>(p) * ph * pw;
    for (int yy = 0; yy < ph; ++yy) {
      const int sy = std::clamp(yy - pad, 0, s.h - 1);
      for (int xx = 0; xx < pw; ++xx) {
        const int sx = std::clamp(xx - pad, 0, s.w - 1);
        op[yy * pw + xx] = sp[sy * s.w + sx];
      }
    }
  }
  if (should_record({&x})) {
    record("pad_replicate", {x}, y, [pad](Tape::Node& node) {
      const Shape s = node.inputs[0].shape();
      const int ph = s.h + 2 * pad, pw = s.w + 2 * pad;
      const Real* dy = node.output.grad().data();
      Real* dx = node.inputs[0].grad_mut().data();
      for (int p = 0; p < s.n * s.c; ++p) {
        const Real* gp = dy + static_cast<std::size_t>(p) * ph * pw;
        Real* dp = dx + static_cast<std::size_t>(p) * s.plane();
        for (int yy = 0; yy < ph; ++yy) {
          const int sy = std::clamp(yy - pad, 0, s.h - 1);
          for (int xx = 0; xx < pw; ++xx) {
            dp[sy * s.w + std::clamp(xx - pad, 0, s.w - 1)] += gp[yy * pw + xx];
          }
        }
      }
    });
  }
  return y;
}

Tensor spatial_to_rows(const Tensor& x) {
  const Shape& s = x.shape();
  const int positions = s.h * s.w;
  Tensor y(Shape{s.n, 1, positions, s.c});
  const Real* src = x.data().data();
  Real* out = y.mutable_data().data();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const Real* plane = src + (static_cast<std::size_t>(n) * s.c + c) * positions;
      Real* base = out + static_cast<std::size_t>(n) * positions * s.c + c;
      for (int p = 0; p < positions; ++p) base[static_cast<std::size_t>(p) * s.c] = plane[p];
    }
  }
  if (should_record({&x})) {
    record("spatial_to_rows", {x}, y, [](Tape::Node& node) {
      const Shape s = node.inputs[0].shape();
      const int positions = s.h * s.w;
      const Real* dy = node.output.grad().data();
      Real* dx = node.inputs[0].grad_mut().data();
      for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
          Real* plane = dx + (static_cast<std::size_t>(n) * s.c + c) * positions;
          const Real* base = dy + static_cast<std::size_t>(n) * positions * s.c + c;
          for (int p = 0; p < positions; ++p) plane[p] += base[static_cast<std::size_t>(p) * s.c];
        }
      }
    });
  }
  return y;
}

Tensor rows_to_spatial(const Tensor& rows, int height, int width) {
  const Shape& s = rows.shape();
  if (s.c != 1 || s.h != height * width) {
    throw ShapeError("rows_to_spatial: " + s.str() + " cannot be viewed as " +
                     std::to_string(height) + "x" + std::to_string(width));
  }
  const int channels = s.w;
  const int positions = s.h;
  Tensor y(Shape{s.n, channels, height, width});
  const Real* src = rows.data().data();
  Real* out = y.mutable_data().data();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < channels; ++c) {
      Real* plane = out + (static_cast<std::size_t>(n) * channels + c) * positions;
      const Real* base = src + static_cast<std::size_t>(n) * positions * channels + c;
      for (int p = 0; p < positions; ++p) plane[p] = base[static_cast<std::size_t>(p) * channels];
    }
  }
  if (should_record({&rows})) {
    record("rows_to_spatial", {rows}, y, [](Tape::Node& node) {
      const Shape s = node.inputs[0].shape();
      const int channels = s.w, positions = s.h;
      const Real* dy = node.output.grad().data();
      Real* dx = node.inputs[0].grad_mut().data();
      for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < channels; ++c) {
          const Real* plane = dy + (static_cast<std::size_t>(n) * channels + c) * positions;
          Real* base = dx + static_cast<std::size_t>(n) * positions * channels + c;
          for (int p = 0; p < positions; ++p) base[static_cast<std::size_t>(p) * channels] += plane[p];
        }
      }
    });
  }
  return y;
}

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.c != 1 || bs.c != 1 || as.n != bs.n) {
    throw ShapeError("matmul expects (N, 1, rows, cols) operands, got " + as.str() +
                     " and " + bs.str());
  }
  const int m = trans_a ? as.w : as.h;
  const int k = trans_a ? as.h : as.w;
  const int kb = trans_b ? bs.w : bs.h;
  const int n = trans_b ? bs.h : bs.w;
  if (k != kb) {
    throw ShapeError("matmul: inner extents differ (" + std::to_string(k) + " vs " +
                     std::to_string(kb) + ")");
  }
  Tensor y(Shape{as.n, 1, m, n});
  const std::size_t a_step = static_cast<std::size_t>(as.h) * as.w;
  const std::size_t b_step = static_cast<std::size_t>(bs.h) * bs.w;
  const std::size_t c_step = static_cast<std::size_t>(m) * n;
  for (int i = 0; i < as.n; ++i) {
    kernels::gemm(trans_a, trans_b, m, n, k, Real(1), a.data().data() + i * a_step, as.w,
                  b.data().data() + i * b_step, bs.w, Real(0),
                  y.mutable_data().data() + i * c_step, n);
  }
  if (should_record({&a, &b})) {
    record("matmul", {a, b}, y,
           [trans_a, trans_b, m, n, k, a_step, b_step, c_step](Tape::Node& node) {
             Tensor& ta = node.inputs[0];
             Tensor& tb = node.inputs[1];
             const int lda = ta.shape().w, ldb = tb.shape().w;
             const Real* dy = node.output.grad().data();
             Real* da = grad_target(ta);
             Real* db = grad_target(tb);
             for (int i = 0; i < ta.shape().n; ++i) {
               const Real* dyi = dy + i * c_step;
               const Real* ai = ta.data().data() + i * a_step;
               const Real* bi = tb.data().data() + i * b_step;
               if (da) {
                 if (!trans_a) {
                   kernels::gemm(false, !trans_b, m, k, n, Real(1), dyi, n, bi, ldb,
                                 Real(1), da + i * a_step, lda);
                 } else {
                   kernels::gemm(trans_b, true, k, m, n, Real(1), bi, ldb, dyi, n,
                                 Real(1), da + i * a_step, lda);
                 }
               }
               if (db) {
                 if (!trans_b) {
                   kernels::gemm(!trans_a, false, k, n, m, Real(1), ai, lda, dyi, n,
                                 Real(1), db + i * b_step, ldb);
                 } else {
                   kernels::gemm(true, trans_a, n, k, m, Real(1), dyi, n, ai, lda,
                                 Real(1), db + i * b_step, ldb);
                 }
               }
             }
           });
  }
  return y;
}

}  // namespace pyratten
