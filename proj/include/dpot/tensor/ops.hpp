#pragma once

// Differentiable primitives. Each builds one graph node with a hand-written
// adjoint; tests/unit/test_ops.cpp checks every adjoint against finite
// differences.

#include <span>
#include <vector>

#include "dpot/tensor/tensor.hpp"

namespace dpot {

// Elementwise. `b` may equal a's shape, be a trailing suffix of it
// (broadcast over the leading axes), or hold a single value.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
/// Real operands only.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// Exact form x * Phi(x) with Phi the standard normal CDF.
Tensor gelu(const Tensor& a);
Tensor cos(const Tensor& a);

enum class Elementwise { Add, Mul, Gelu, Scale };
/// Tag-dispatched form of the four elementwise primitives; `s` is used by Scale.
Tensor elementwise(Elementwise op, const Tensor& a, const Tensor& b = {}, double s = 1.0);

double gelu_value(double x);
double gelu_derivative(double x);

/// a[..., m, k] x b[k, n] (shared) or b[..., k, n] (same leading axes).
Tensor matmul(const Tensor& a, const Tensor& b);

/// Block-diagonal linear map: x[..., g*k] with w[g, k, n] gives y[..., g*n],
/// group i of the features transformed by w[i].
Tensor grouped_matmul(const Tensor& x, const Tensor& w);

Tensor reshape(const Tensor& a, Shape shape);
/// out.shape[i] = a.shape[axes[i]].
Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes);

/// Unitary 2D DFT over the last two axes; real input is promoted to complex.
Tensor fft2(const Tensor& a);
/// Inverse of fft2 (and its adjoint).
Tensor ifft2(const Tensor& a);
Tensor real_part(const Tensor& c);
/// Complex [S] viewed as real [S, 2] holding (re, im).
Tensor as_real(const Tensor& c);
/// Real [S, 2] viewed as complex [S].
Tensor as_complex(const Tensor& r);

/// x[B, N, C]: statistics over the N positions and C/groups channels of each
/// group, then per-channel affine.
Tensor group_norm(const Tensor& x, std::size_t groups, const Tensor& weight, const Tensor& bias,
                  double eps = 1e-5);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// sum_i w_i * x_i^2 with constant weights.
Tensor weighted_square_sum(const Tensor& x, std::span<const double> weights);

}  // namespace dpot
