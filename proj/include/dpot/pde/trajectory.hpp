#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace dpot {

/// One discretized solution u = (u^0, ..., u^{T-1}) on an H x W grid.
/// Values are row-major [t, h, w, c]; the mask is [h, w] with 1 = interior.
struct Trajectory {
  std::size_t T = 0, H = 0, W = 0, C = 0;
  std::vector<double> values;
  std::vector<std::uint8_t> mask;
  double dt_save = 0.0;
  std::string pde;
  std::vector<std::string> channels;
  /// Per channel: 1 for physical data, 0 for padding and the mask channel.
  /// Empty means every channel is physical.
  std::vector<std::uint8_t> channel_valid;

  Trajectory() = default;
  Trajectory(std::size_t t, std::size_t h, std::size_t w, std::size_t c);

  std::size_t frame_size() const { return H * W * C; }
  double& at(std::size_t t, std::size_t i, std::size_t j, std::size_t c) {
    return values[((t * H + i) * W + j) * C + c];
  }
  double at(std::size_t t, std::size_t i, std::size_t j, std::size_t c) const {
    return values[((t * H + i) * W + j) * C + c];
  }
  const double* frame(std::size_t t) const { return values.data() + t * frame_size(); }
  double* frame(std::size_t t) { return values.data() + t * frame_size(); }

  bool is_physical(std::size_t c) const { return channel_valid.empty() || channel_valid[c] != 0; }
  std::size_t physical_channels() const;

  /// Throws SolverError naming the first NaN/Inf entry.
  void check_finite() const;
  /// Rounds every value through real32, the on-disk storage type.
  void round_to_storage();
};

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> std;
};

/// A homogeneous collection: every trajectory shares T, H, W, C.
struct TrajectoryDataset {
  std::vector<Trajectory> trajectories;
  nlohmann::json metadata = nlohmann::json::object();

  std::size_t size() const { return trajectories.size(); }
  std::size_t T() const { return trajectories.empty() ? 0 : trajectories.front().T; }
  std::size_t H() const { return trajectories.empty() ? 0 : trajectories.front().H; }
  std::size_t W() const { return trajectories.empty() ? 0 : trajectories.front().W; }
  std::size_t C() const { return trajectories.empty() ? 0 : trajectories.front().C; }

  /// Per-channel mean/std over every value of every trajectory (mask interior).
  ChannelStats compute_stats() const;
  /// Stats stored in the metadata, falling back to compute_stats().
  ChannelStats stats() const;
  /// Throws ShapeError if trajectories disagree in shape.
  void check_homogeneous() const;
};

}  // namespace dpot
