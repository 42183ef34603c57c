#pragma once

#include <cstddef>
#include <optional>
#include <span>

#include "vaegan/graph.hpp"
#include "vaegan/tensor.hpp"

namespace vaegan {

// Differentiable operations. Each records one node on the graph of its
// inputs and returns a handle to the result.
//
// Broadcasting for binary ops applies to the second operand only and is
// limited to two forms:
//   - scalar: b has one element (any rank of unit extents);
//   - per-channel: b is rank 1 with extent a.shape[1], a has rank >= 2.
// Everything else must match shapes exactly.

enum class ElementwiseKind { add, sub, mul, div, neg, exp, log, sigmoid, tanh, relu, square };

Var elementwise(ElementwiseKind kind, Var a, std::optional<Var> b = std::nullopt);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

Var add_scalar(Var a, double s);
Var mul_scalar(Var a, double s);

Var neg(Var a);
Var exp(Var a);
Var log(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
/// Gradient at exactly 0 is 0.
Var relu(Var a);
Var square(Var a);

/// Gradient passes where lo <= a <= hi, zero elsewhere.
Var clamp(Var a, double lo, double hi);

/// Sum of all elements, as a rank-0 tensor.
Var sum(Var a);

Var matmul(Var a, Var b);

/// x: N x C x H x W, kernel: F x C x kh x kw; zero padding.
Var conv2d(Var x, Var kernel, std::size_t stride, std::size_t pad);

/// Adjoint of conv2d with respect to its input. x: N x F x H x W, kernel has
/// the conv2d layout F x C x kh x kw and the result has C channels with
/// H' = (H-1)*stride - 2*pad + kh + output_padding.
Var conv2d_transpose(Var x, Var kernel, std::size_t stride, std::size_t pad,
                     std::size_t output_padding = 0);

Var reshape(Var a, Shape shape);

/// Concatenation along axis 0 or 1. Parts agree on every other axis.
Var concat(std::span<const Var> parts, std::size_t axis);

/// Rows [begin, end) along axis 0.
Var slice_rows(Var a, std::size_t begin, std::size_t end);

/// Marks v as a constant for backward(); the value is unchanged.
Var stop_gradient(Var v);

struct BatchStats {
  Tensor mean;      // per channel
  Tensor variance;  // per channel, biased (divides by count)
  std::size_t count = 0;
};

/// Normalizes x (N x C or N x C x H x W) per channel with statistics of the
/// batch itself, then scales by gamma and shifts by beta. The statistics used
/// are written to `stats` when given.
Var batch_norm_train(Var x, Var gamma, Var beta, double eps, BatchStats* stats = nullptr);

/// Same normalization with fixed statistics (no gradient to the statistics).
Var batch_norm_fixed(Var x, Var gamma, Var beta, const Tensor& mean, const Tensor& variance,
                     double eps);

// Raw kernels shared by forward and backward paths; exposed for oracles.
namespace kernels {

Shape conv2d_output_shape(const Shape& x, const Shape& kernel, std::size_t stride, std::size_t pad);
Tensor conv2d_forward(const Tensor& x, const Tensor& kernel, std::size_t stride, std::size_t pad);
/// Gradient of conv2d w.r.t. its input of shape `input_shape`.
Tensor conv2d_input_grad(const Tensor& grad_out, const Tensor& kernel, std::size_t stride,
                         std::size_t pad, const Shape& input_shape);
Tensor conv2d_kernel_grad(const Tensor& x, const Tensor& grad_out, std::size_t stride,
                          std::size_t pad, const Shape& kernel_shape);
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false, bool transpose_b = false);

}  // namespace kernels

}  // namespace vaegan
