#pragma once

// Preprocessing that lets heterogeneous PDE datasets share one model:
// resolution unification, channel padding with a trailing mask channel,
// windowing into (context, target) pairs, balanced sampling across datasets,
// per-channel standardization and training-time noise.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "dpot/pde/trajectory.hpp"

namespace dpot {

/// Resamples every frame to H_target x H_target: zero-padded Fourier
/// interpolation when upscaling, Fourier truncation when downscaling. The
/// mask is resampled by nearest neighbour. Targets must be powers of two >= 4.
Trajectory unify_resolution(const Trajectory& traj, std::size_t H_target);
/// Same resampling for any target size >= 4 (evaluation grids such as 48).
Trajectory resample_trajectory(const Trajectory& traj, std::size_t H_target);

/// Appends pad_value-filled channels up to C_max, then the mask as channel
/// C_max. channel_valid marks the original channels.
Trajectory pad_channels_and_mask(const Trajectory& traj, std::size_t C_max, double pad_value = 1.0);

struct UnifiedSample {
  std::size_t T_ctx = 0, H = 0, W = 0, C = 0;  // C counts the mask channel
  std::vector<double> context;                // [T_ctx, H, W, C]
  std::vector<double> target;                 // [H, W, C]
  std::size_t dataset_id = 0;
  std::vector<std::uint8_t> channel_valid;
};

/// Window starting at t_start (may be negative: leading frames replicate
/// frame 0). The target frame t_start + T_ctx must satisfy 1 <= idx < traj.T.
UnifiedSample make_window(const Trajectory& traj, long t_start, std::size_t T_ctx, std::size_t dataset_id = 0);

/// Window starts whose target exists: [-(T_ctx-1), T-T_ctx-1] with left padding,
/// [0, T-T_ctx-1] without.
long first_window_start(std::size_t T_ctx, bool left_pad);
std::size_t window_count(std::size_t T, std::size_t T_ctx, bool left_pad);

struct Draw {
  std::size_t dataset = 0;
  std::size_t trajectory = 0;
  long t_start = 0;
};

/// Deterministic, counter-based draws: draw(i) depends only on (seed, i), so a
/// stream can resume from any position and W workers can take draws w, w+W, ...
/// Dataset k is chosen with probability q_k = w_k / sum_j w_j, then a
/// trajectory and a window start uniformly within it.
class BalancedSampler {
 public:
  struct DatasetShape {
    std::size_t n_traj = 0;
    std::size_t T = 0;
  };

  BalancedSampler(std::vector<DatasetShape> datasets, std::vector<double> weights, std::uint64_t seed,
                  std::size_t T_ctx, bool left_pad = true);

  const std::vector<double>& probabilities() const { return q_; }
  Draw draw(std::uint64_t index) const;
  /// Next draw of the sequential stream.
  Draw next() { return draw(position_++); }
  std::uint64_t position() const { return position_; }
  void seek(std::uint64_t position) { position_ = position; }
  std::uint64_t seed() const { return seed_; }

 private:
  std::vector<DatasetShape> datasets_;
  std::vector<double> q_, cumulative_;
  std::uint64_t seed_;
  std::size_t T_ctx_;
  bool left_pad_;
  std::uint64_t position_ = 0;
};

/// Adds N(0, (eps * rms)^2) noise to physical channels at mask-interior pixels,
/// where rms is taken over those same entries. The last channel is the mask.
/// eps = 0 leaves the context bit-identical and draws nothing.
void inject_noise(std::span<double> context, std::size_t T_ctx, std::size_t H, std::size_t W, std::size_t C,
                  std::span<const std::uint8_t> channel_valid, double eps, std::mt19937_64& rng);

/// Per physical channel z-scoring of mask-interior values. A channel whose std
/// is zero or non-finite is passed through unchanged (mean 0, std 1) with a warning.
ChannelStats sanitize_stats(ChannelStats stats);
void standardize(Trajectory& traj, const ChannelStats& stats);
void destandardize(Trajectory& traj, const ChannelStats& stats);
/// Frame-level variants over [.., C] data with C >= stats size.
void standardize_values(std::span<double> values, std::size_t C, const ChannelStats& stats);
void destandardize_values(std::span<double> values, std::size_t C, const ChannelStats& stats);

}  // namespace dpot
