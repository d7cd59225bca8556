#include "dpot/tensor/fft.hpp"

#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <unordered_map>
#include <vector>

namespace dpot::fft {
namespace {

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

struct Plan {
  std::size_t n = 0;
  bool radix2 = false;
  std::vector<std::size_t> bitrev;
  // radix-2: exp(-2 pi i k / n) for k < n/2; dft: exp(-2 pi i k / n) for k < n
  std::vector<cplx> twiddle;
};

Plan make_plan(std::size_t n) {
  Plan p;
  p.n = n;
  p.radix2 = is_pow2(n);
  const std::size_t count = p.radix2 ? n / 2 : n;
  p.twiddle.resize(count);
  for (std::size_t k = 0; k < count; ++k) {
    const double ang = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    p.twiddle[k] = {std::cos(ang), std::sin(ang)};
  }
  if (p.radix2) {
    p.bitrev.resize(n);
    std::size_t bits = 0;
    while ((std::size_t{1} << bits) < n) ++bits;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = 0;
      for (std::size_t b = 0; b < bits; ++b) r |= ((i >> b) & 1U) << (bits - 1 - b);
      p.bitrev[i] = r;
    }
  }
  return p;
}

const Plan& plan_for(std::size_t n) {
  thread_local std::unordered_map<std::size_t, std::unique_ptr<Plan>> cache;
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<Plan>(make_plan(n));
  return *slot;
}

void radix2(const Plan& p, cplx* x, Direction dir) {
  const std::size_t n = p.n;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = p.bitrev[i];
    if (i < r) std::swap(x[i], x[r]);
  }
  const bool inverse = dir == Direction::Inverse;
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t step = n / len;
    for (std::size_t start = 0; start < n; start += len) {
      for (std::size_t k = 0; k < half; ++k) {
        cplx w = p.twiddle[k * step];
        if (inverse) w = std::conj(w);
        const cplx u = x[start + k];
        const cplx v = x[start + k + half] * w;
        x[start + k] = u + v;
        x[start + k + half] = u - v;
      }
    }
  }
}

void direct(const Plan& p, cplx* x, Direction dir, std::vector<cplx>& scratch) {
  const std::size_t n = p.n;
  scratch.assign(x, x + n);
  const bool inverse = dir == Direction::Inverse;
  for (std::size_t k = 0; k < n; ++k) {
    cplx acc{0.0, 0.0};
    for (std::size_t j = 0; j < n; ++j) {
      cplx w = p.twiddle[(j * k) % n];
      if (inverse) w = std::conj(w);
      acc += scratch[j] * w;
    }
    x[k] = acc;
  }
}

void run(const Plan& p, cplx* x, Direction dir, std::vector<cplx>& scratch) {
  if (p.n <= 1) return;
  if (p.radix2) {
    radix2(p, x, dir);
  } else {
    direct(p, x, dir, scratch);
  }
}

}  // namespace

void transform_1d(std::span<cplx> data, Direction dir) {
  std::vector<cplx> scratch;
  run(plan_for(data.size()), data.data(), dir, scratch);
}

void transform_2d(std::span<cplx> data, std::size_t rows, std::size_t cols, Direction dir) {
  if (rows == 0 || cols == 0) throw std::invalid_argument("fft: empty 2D extent");
  if (data.size() != rows * cols) throw std::invalid_argument("fft: buffer size != rows*cols");
  std::vector<cplx> scratch;
  const Plan& row_plan = plan_for(cols);
  for (std::size_t r = 0; r < rows; ++r) run(row_plan, data.data() + r * cols, dir, scratch);
  if (rows == 1) return;
  const Plan& col_plan = plan_for(rows);
  std::vector<cplx> column(rows);
  for (std::size_t c = 0; c < cols; ++c) {
    for (std::size_t r = 0; r < rows; ++r) column[r] = data[r * cols + c];
    run(col_plan, column.data(), dir, scratch);
    for (std::size_t r = 0; r < rows; ++r) data[r * cols + c] = column[r];
  }
}

void unitary_2d(std::span<cplx> data, std::size_t rows, std::size_t cols, Direction dir) {
  transform_2d(data, rows, cols, dir);
  const double s = 1.0 / std::sqrt(static_cast<double>(rows * cols));
  for (auto& v : data) v *= s;
}

}  // namespace dpot::fft
