#include "dpot/pde/trajectory.hpp"

#include <cmath>

#include "dpot/error.hpp"

namespace dpot {

Trajectory::Trajectory(std::size_t t, std::size_t h, std::size_t w, std::size_t c)
    : T(t), H(h), W(w), C(c), values(t * h * w * c, 0.0), mask(h * w, 1) {}

std::size_t Trajectory::physical_channels() const {
  std::size_t n = 0;
  for (std::size_t c = 0; c < C; ++c) n += is_physical(c);
  return n;
}

void Trajectory::check_finite() const {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      const std::size_t t = i / frame_size();
      throw SolverError("non-finite value in trajectory (" + pde + ") at frame " + std::to_string(t) +
                        ", flat index " + std::to_string(i));
    }
  }
}

void Trajectory::round_to_storage() {
  for (auto& v : values) v = static_cast<double>(static_cast<float>(v));
}

ChannelStats TrajectoryDataset::compute_stats() const {
  const std::size_t C = this->C();
  ChannelStats s{std::vector<double>(C, 0.0), std::vector<double>(C, 0.0)};
  std::vector<double> count(C, 0.0);
  for (const auto& tr : trajectories) {
    for (std::size_t t = 0; t < tr.T; ++t) {
      for (std::size_t p = 0; p < tr.H * tr.W; ++p) {
        if (!tr.mask[p]) continue;
        for (std::size_t c = 0; c < C; ++c) {
          s.mean[c] += tr.values[(t * tr.H * tr.W + p) * C + c];
          count[c] += 1.0;
        }
      }
    }
  }
  for (std::size_t c = 0; c < C; ++c) s.mean[c] /= std::max(count[c], 1.0);
  for (const auto& tr : trajectories) {
    for (std::size_t t = 0; t < tr.T; ++t) {
      for (std::size_t p = 0; p < tr.H * tr.W; ++p) {
        if (!tr.mask[p]) continue;
        for (std::size_t c = 0; c < C; ++c) {
          const double d = tr.values[(t * tr.H * tr.W + p) * C + c] - s.mean[c];
          s.std[c] += d * d;
        }
      }
    }
  }
  for (std::size_t c = 0; c < C; ++c) s.std[c] = std::sqrt(s.std[c] / std::max(count[c], 1.0));
  return s;
}

ChannelStats TrajectoryDataset::stats() const {
  if (metadata.contains("channel_mean") && metadata.contains("channel_std")) {
    ChannelStats s;
    s.mean = metadata["channel_mean"].get<std::vector<double>>();
    s.std = metadata["channel_std"].get<std::vector<double>>();
    if (s.mean.size() == C() && s.std.size() == C()) return s;
  }
  return compute_stats();
}

void TrajectoryDataset::check_homogeneous() const {
  for (const auto& tr : trajectories) {
    if (tr.T != T() || tr.H != H() || tr.W != W() || tr.C != C()) {
      throw ShapeError("dataset trajectories differ in shape: [" + std::to_string(tr.T) + "," +
                       std::to_string(tr.H) + "," + std::to_string(tr.W) + "," + std::to_string(tr.C) +
                       "] vs [" + std::to_string(T()) + "," + std::to_string(H()) + "," +
                       std::to_string(W()) + "," + std::to_string(C()) + "]");
    }
    if (tr.values.size() != tr.T * tr.H * tr.W * tr.C || tr.mask.size() != tr.H * tr.W) {
      throw ShapeError("trajectory storage does not match its extents");
    }
  }
}

}  // namespace dpot
