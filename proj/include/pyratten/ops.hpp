#pragma once

#include <optional>
#include <vector>

#include "pyratten/tensor.hpp"

namespace pyratten {

// Convolution parameters. `weight` is (C_out, C_in, kh, kw); `bias`, when
// defined, holds C_out values (stored as (C_out, 1, 1, 1)).
struct ConvSpec {
  Tensor weight;
  Tensor bias;
  int stride = 1;
  int pad_h = 0;
  int pad_w = 0;

  int c_out() const { return weight.shape().n; }
  int c_in() const { return weight.shape().c; }
  int kernel_h() const { return weight.shape().h; }
  int kernel_w() const { return weight.shape().w; }
  void validate() const;
};

// Every op below records a backward rule on the current Tape when one is
// active and at least one operand requires a gradient.

Tensor conv2d(const Tensor& x, const ConvSpec& spec);
// Adjoint of conv2d with respect to its input: maps C_out channels back to
// C_in channels. Bias (length C_in) is optional.
Tensor conv_transpose2d(const Tensor& x, const ConvSpec& spec);

// Output extents are round(H * scale) x round(W * scale).
Tensor bicubic_resize(const Tensor& x, double scale);
Shape resized_shape(const Shape& s, double scale);

Tensor softmax(const Tensor& x, int axis);

Tensor relu(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, Real factor);
Tensor sum(const Tensor& x);

// Mean absolute difference over all elements, as a single-element tensor.
Tensor l1_loss(const Tensor& pred, const Tensor& target);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, int begin, int end);

// Pads H and W by `pad` on each side, repeating the edge values.
Tensor pad_replicate(const Tensor& x, int pad);

// (N, C, H, W) -> (N, 1, H*W, C): one row per spatial position.
Tensor spatial_to_rows(const Tensor& x);
// Inverse of spatial_to_rows for the given spatial extents.
Tensor rows_to_spatial(const Tensor& rows, int height, int width);

// Batched matrix product over tensors shaped (N, 1, rows, cols).
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false,
              bool trans_b = false);

}  // namespace pyratten
