#include "dpot/data/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include <spdlog/spdlog.h>

#include "dpot/error.hpp"
#include "dpot/tensor/resample.hpp"
#include "dpot/util/hash.hpp"

namespace dpot {

namespace {

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

}  // namespace

Trajectory unify_resolution(const Trajectory& traj, std::size_t H_target) {
  if (!is_pow2(H_target) || H_target < 4) {
    throw ConfigError("unify_resolution: target H must be a power of two >= 4, got " + std::to_string(H_target));
  }
  return resample_trajectory(traj, H_target);
}

Trajectory resample_trajectory(const Trajectory& traj, std::size_t H_target) {
  if (H_target < 4) throw ConfigError("resample_trajectory: target H must be >= 4, got " + std::to_string(H_target));
  if (traj.H < 4 || traj.W < 4) throw ShapeError("resample_trajectory: source grid must be at least 4x4");
  if (traj.H == H_target && traj.W == H_target) return traj;

  Trajectory out(traj.T, H_target, H_target, traj.C);
  out.dt_save = traj.dt_save;
  out.pde = traj.pde;
  out.channels = traj.channels;
  out.channel_valid = traj.channel_valid;
  for (std::size_t t = 0; t < traj.T; ++t) {
    const auto r = fourier_resample({traj.frame(t), traj.frame_size()}, traj.H, traj.W, traj.C, H_target, H_target);
    std::copy(r.begin(), r.end(), out.frame(t));
  }
  for (std::size_t i = 0; i < H_target; ++i) {
    const std::size_t si = std::min(traj.H - 1, (2 * i + 1) * traj.H / (2 * H_target));
    for (std::size_t j = 0; j < H_target; ++j) {
      const std::size_t sj = std::min(traj.W - 1, (2 * j + 1) * traj.W / (2 * H_target));
      out.mask[i * H_target + j] = traj.mask[si * traj.W + sj] ? 1 : 0;
    }
  }
  return out;
}

Trajectory pad_channels_and_mask(const Trajectory& traj, std::size_t C_max, double pad_value) {
  if (C_max < traj.C) {
    throw ConfigError("pad_channels_and_mask: C_max = " + std::to_string(C_max) + " is smaller than the " +
                      std::to_string(traj.C) + " existing channels");
  }
  const std::size_t C = C_max + 1;
  Trajectory out(traj.T, traj.H, traj.W, C);
  out.dt_save = traj.dt_save;
  out.pde = traj.pde;
  out.mask = traj.mask;
  out.channels = traj.channels;
  out.channels.resize(traj.C);
  for (std::size_t c = traj.C; c < C_max; ++c) out.channels.push_back("pad" + std::to_string(c));
  out.channels.push_back("mask");
  out.channel_valid.assign(C, 0);
  for (std::size_t c = 0; c < traj.C; ++c) out.channel_valid[c] = traj.is_physical(c) ? 1 : 0;

  const std::size_t pixels = traj.H * traj.W;
  for (std::size_t t = 0; t < traj.T; ++t) {
    const double* src = traj.frame(t);
    double* dst = out.frame(t);
    for (std::size_t p = 0; p < pixels; ++p) {
      for (std::size_t c = 0; c < traj.C; ++c) dst[p * C + c] = src[p * traj.C + c];
      for (std::size_t c = traj.C; c < C_max; ++c) dst[p * C + c] = pad_value;
      dst[p * C + C_max] = traj.mask[p] ? 1.0 : 0.0;
    }
  }
  return out;
}

UnifiedSample make_window(const Trajectory& traj, long t_start, std::size_t T_ctx, std::size_t dataset_id) {
  if (T_ctx == 0) throw ConfigError("make_window: T_ctx must be >= 1");
  const long target = t_start + static_cast<long>(T_ctx);
  if (target < 1 || target >= static_cast<long>(traj.T)) {
    throw ShapeError("make_window: target frame " + std::to_string(target) + " outside [1, " +
                     std::to_string(traj.T) + ")");
  }
  UnifiedSample s;
  s.T_ctx = T_ctx;
  s.H = traj.H;
  s.W = traj.W;
  s.C = traj.C;
  s.dataset_id = dataset_id;
  s.channel_valid = traj.channel_valid.empty() ? std::vector<std::uint8_t>(traj.C, 1) : traj.channel_valid;
  const std::size_t fs = traj.frame_size();
  s.context.resize(T_ctx * fs);
  for (std::size_t k = 0; k < T_ctx; ++k) {
    const long src = std::max(0L, t_start + static_cast<long>(k));
    std::copy_n(traj.frame(static_cast<std::size_t>(src)), fs, s.context.data() + k * fs);
  }
  s.target.assign(traj.frame(static_cast<std::size_t>(target)), traj.frame(static_cast<std::size_t>(target)) + fs);
  return s;
}

long first_window_start(std::size_t T_ctx, bool left_pad) { return left_pad ? 1 - static_cast<long>(T_ctx) : 0; }

std::size_t window_count(std::size_t T, std::size_t T_ctx, bool left_pad) {
  const long last = static_cast<long>(T) - static_cast<long>(T_ctx) - 1;
  const long first = first_window_start(T_ctx, left_pad);
  return last < first ? 0 : static_cast<std::size_t>(last - first + 1);
}

BalancedSampler::BalancedSampler(std::vector<DatasetShape> datasets, std::vector<double> weights,
                                 std::uint64_t seed, std::size_t T_ctx, bool left_pad)
    : datasets_(std::move(datasets)), seed_(seed), T_ctx_(T_ctx), left_pad_(left_pad) {
  if (datasets_.empty()) throw ConfigError("sampler: no datasets");
  if (weights.size() != datasets_.size()) {
    throw ConfigError("sampler: " + std::to_string(weights.size()) + " weights for " +
                      std::to_string(datasets_.size()) + " datasets");
  }
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (!(weights[k] > 0.0) || !std::isfinite(weights[k])) {
      throw ConfigError("sampler: weight " + std::to_string(k) + " must be positive");
    }
    if (datasets_[k].n_traj == 0 || window_count(datasets_[k].T, T_ctx_, left_pad_) == 0) {
      throw ConfigError("sampler: dataset " + std::to_string(k) + " is empty but has positive weight");
    }
  }
  q_.resize(weights.size());
  cumulative_.resize(weights.size());
  double run = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    q_[k] = weights[k] / total;
    run += q_[k];
    cumulative_[k] = run;
  }
  cumulative_.back() = 1.0;
}

Draw BalancedSampler::draw(std::uint64_t index) const {
  Draw d;
  const double u = to_unit(hash_combine(seed_, index, 0));
  d.dataset = static_cast<std::size_t>(std::upper_bound(cumulative_.begin(), cumulative_.end(), u) - cumulative_.begin());
  d.dataset = std::min(d.dataset, datasets_.size() - 1);
  const DatasetShape& ds = datasets_[d.dataset];
  d.trajectory = static_cast<std::size_t>(hash_combine(seed_, index, 1) % ds.n_traj);
  const std::size_t windows = window_count(ds.T, T_ctx_, left_pad_);
  d.t_start = first_window_start(T_ctx_, left_pad_) + static_cast<long>(hash_combine(seed_, index, 2) % windows);
  return d;
}

void inject_noise(std::span<double> context, std::size_t T_ctx, std::size_t H, std::size_t W, std::size_t C,
                  std::span<const std::uint8_t> channel_valid, double eps, std::mt19937_64& rng) {
  if (eps < 0.0) throw ConfigError("inject_noise: eps must be >= 0");
  if (context.size() != T_ctx * H * W * C || channel_valid.size() != C) {
    throw ShapeError("inject_noise: context/channel layout mismatch");
  }
  if (eps == 0.0) return;
  const std::size_t mask_c = C - 1;
  double sq = 0.0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < T_ctx * H * W; ++p) {
    if (context[p * C + mask_c] == 0.0) continue;
    for (std::size_t c = 0; c < mask_c; ++c) {
      if (!channel_valid[c]) continue;
      sq += context[p * C + c] * context[p * C + c];
      ++n;
    }
  }
  if (n == 0) return;
  const double std = eps * std::sqrt(sq / static_cast<double>(n));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t p = 0; p < T_ctx * H * W; ++p) {
    if (context[p * C + mask_c] == 0.0) continue;
    for (std::size_t c = 0; c < mask_c; ++c) {
      if (channel_valid[c]) context[p * C + c] += std * normal(rng);
    }
  }
}

ChannelStats sanitize_stats(ChannelStats stats) {
  for (std::size_t c = 0; c < stats.std.size(); ++c) {
    if (!(stats.std[c] > 0.0) || !std::isfinite(stats.std[c])) {
      spdlog::warn("standardize: channel {} has std {}; passing it through unchanged", c, stats.std[c]);
      stats.std[c] = 1.0;
      stats.mean[c] = 0.0;
    }
    if (!std::isfinite(stats.mean[c])) throw ConfigError("standardize: non-finite channel mean");
  }
  return stats;
}

namespace {

template <typename F>
void per_physical(Trajectory& traj, const ChannelStats& stats, F&& f) {
  const std::size_t pixels = traj.H * traj.W;
  std::size_t phys = 0;
  for (std::size_t c = 0; c < traj.C; ++c) {
    if (!traj.is_physical(c)) continue;
    if (phys >= stats.mean.size()) throw ShapeError("standardize: fewer stats than physical channels");
    const double m = stats.mean[phys], s = stats.std[phys];
    ++phys;
    for (std::size_t t = 0; t < traj.T; ++t) {
      double* fr = traj.frame(t);
      for (std::size_t p = 0; p < pixels; ++p) {
        if (traj.mask[p]) fr[p * traj.C + c] = f(fr[p * traj.C + c], m, s);
      }
    }
  }
}

}  // namespace

void standardize(Trajectory& traj, const ChannelStats& stats) {
  const ChannelStats st = sanitize_stats(stats);
  per_physical(traj, st, [](double x, double m, double s) { return (x - m) / s; });
}

void destandardize(Trajectory& traj, const ChannelStats& stats) {
  const ChannelStats st = sanitize_stats(stats);
  per_physical(traj, st, [](double x, double m, double s) { return x * s + m; });
}

void standardize_values(std::span<double> values, std::size_t C, const ChannelStats& stats) {
  const std::size_t n = std::min(C, stats.mean.size());
  for (std::size_t i = 0; i + C <= values.size(); i += C)
    for (std::size_t c = 0; c < n; ++c) values[i + c] = (values[i + c] - stats.mean[c]) / stats.std[c];
}

void destandardize_values(std::span<double> values, std::size_t C, const ChannelStats& stats) {
  const std::size_t n = std::min(C, stats.mean.size());
  for (std::size_t i = 0; i + C <= values.size(); i += C)
    for (std::size_t c = 0; c < n; ++c) values[i + c] = values[i + c] * stats.std[c] + stats.mean[c];
}

}  // namespace dpot
