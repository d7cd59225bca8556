#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace dpot {

/// Band-limited resampling of a periodic [H, W, C] field (channels interleaved)
/// to [H2, W2, C]. Upsampling zero-pads the spectrum and splits an even input
/// Nyquist line evenly between +N/2 and -N/2; downsampling truncates and folds
/// +-M/2 into the output Nyquist line. Down(Up(x)) == x for any sizes.
std::vector<double> fourier_resample(std::span<const double> in, std::size_t H, std::size_t W,
                                     std::size_t C, std::size_t H2, std::size_t W2);

}  // namespace dpot
