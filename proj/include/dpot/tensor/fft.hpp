#pragma once

// Complex FFTs on contiguous buffers. Power-of-two lengths use an iterative
// radix-2 transform; other lengths fall back to a tabulated O(n^2) DFT, which
// is plenty for token grids such as 12x12.

#include <complex>
#include <cstddef>
#include <span>

namespace dpot::fft {

using cplx = std::complex<double>;

enum class Direction { Forward, Inverse };

/// Unnormalized 1D DFT in place; Forward uses exp(-2*pi*i*j*k/n).
void transform_1d(std::span<cplx> data, Direction dir);

/// Unnormalized 2D DFT of a row-major rows x cols block, in place.
void transform_2d(std::span<cplx> data, std::size_t rows, std::size_t cols, Direction dir);

/// Symmetric 1/sqrt(rows*cols) normalization: the pair is unitary.
void unitary_2d(std::span<cplx> data, std::size_t rows, std::size_t cols, Direction dir);

/// Signed frequency index of bin j for an n-point transform: 0..n/2, then negatives.
inline long signed_mode(std::size_t j, std::size_t n) {
  const long jj = static_cast<long>(j);
  const long nn = static_cast<long>(n);
  return (2 * jj > nn) ? jj - nn : jj;
}

}  // namespace dpot::fft
