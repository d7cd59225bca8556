#include "dpot/tensor/resample.hpp"

#include <string>

#include "dpot/error.hpp"
#include "dpot/tensor/fft.hpp"

namespace dpot {

namespace {

struct Tap {
  std::size_t src;
  double weight;
};

// For each output bin along one axis, the input bins that feed it.
std::vector<std::vector<Tap>> axis_map(std::size_t n, std::size_t m) {
  std::vector<std::vector<Tap>> map(m);
  const long ln = static_cast<long>(n), lm = static_cast<long>(m);
  auto wrap = [ln](long k) { return static_cast<std::size_t>((k % ln + ln) % ln); };
  for (std::size_t o = 0; o < m; ++o) {
    const long k = fft::signed_mode(o, m);
    if (m == n) {
      map[o].push_back({o, 1.0});
    } else if (m > n) {
      if (2 * std::abs(k) < ln) {
        map[o].push_back({wrap(k), 1.0});
      } else if (2 * std::abs(k) == ln) {
        map[o].push_back({wrap(k), 0.5});
      }
    } else {
      if (2 * std::abs(k) < lm) {
        map[o].push_back({wrap(k), 1.0});
      } else {  // output Nyquist bin collects +m/2 and -m/2
        map[o].push_back({wrap(k), 1.0});
        map[o].push_back({wrap(-k), 1.0});
      }
    }
  }
  return map;
}

}  // namespace

std::vector<double> fourier_resample(std::span<const double> in, std::size_t H, std::size_t W,
                                     std::size_t C, std::size_t H2, std::size_t W2) {
  if (in.size() != H * W * C) {
    throw ShapeError("fourier_resample: got " + std::to_string(in.size()) + " values for [" +
                     std::to_string(H) + "," + std::to_string(W) + "," + std::to_string(C) + "]");
  }
  if (H == 0 || W == 0 || H2 == 0 || W2 == 0) throw ShapeError("fourier_resample: empty grid");
  if (H == H2 && W == W2) return {in.begin(), in.end()};

  const auto rows = axis_map(H, H2);
  const auto cols = axis_map(W, W2);
  const double scale = 1.0 / static_cast<double>(H * W);
  std::vector<double> out(H2 * W2 * C);
  std::vector<fft::cplx> z(H * W), zo(H2 * W2);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t p = 0; p < H * W; ++p) z[p] = in[p * C + c];
    fft::transform_2d(z, H, W, fft::Direction::Forward);
    for (std::size_t i = 0; i < H2; ++i) {
      for (std::size_t j = 0; j < W2; ++j) {
        fft::cplx acc{};
        for (const Tap& r : rows[i])
          for (const Tap& q : cols[j]) acc += r.weight * q.weight * z[r.src * W + q.src];
        zo[i * W2 + j] = acc * scale;
      }
    }
    fft::transform_2d(zo, H2, W2, fft::Direction::Inverse);
    for (std::size_t p = 0; p < H2 * W2; ++p) out[p * C + c] = zo[p].real();
  }
  return out;
}

}  // namespace dpot
