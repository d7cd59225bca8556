#pragma once

// Auto-regressive denoising training: masked relative loss on noisy
// teacher-forced contexts, one-cycle schedule, AdamW with gradient clipping,
// rollout evaluation with L2RE, and a resumable, seed-deterministic trainer.

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dpot/data/pipeline.hpp"
#include "dpot/model/dpot.hpp"
#include "json.hpp"

namespace dpot {

enum class LossKind { Relative, Mse };

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t steps_per_epoch = 100;
  std::size_t batch_size = 8;
  double peak_lr = 1e-3;
  double warmup_fraction = 0.2;
  double weight_decay = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.9;
  double adam_eps = 1e-8;
  double clip_norm = 1.0;
  double noise_eps = 0.0;
  LossKind loss = LossKind::Relative;
  std::vector<double> weights;  // per training dataset; empty = uniform
  std::uint64_t seed = 0;
  std::size_t eval_every = 0;        // epochs between evaluations; 0 = final epoch only
  std::size_t rollout_steps = 10;
  std::size_t eval_max_trajectories = 0;  // 0 = all
  bool left_pad = true;

  std::size_t total_steps() const { return epochs * steps_per_epoch; }
  /// Throws ConfigError unless peak_lr > 0, 0 < warmup_fraction < 1, noise_eps >= 0 and counts >= 1.
  void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// A dataset standardized with `stats`, unified to the model grid and padded
/// to C_max channels plus mask.
struct PreparedDataset {
  std::string name;
  std::vector<Trajectory> trajectories;
  ChannelStats stats;  // physical-channel statistics used for (de)standardization
  std::size_t T() const { return trajectories.empty() ? 0 : trajectories.front().T; }
};

/// `stats` defaults to the dataset's own statistics. `H` may be any size >= 4
/// (non-native sizes are only meaningful for evaluation).
PreparedDataset prepare_dataset(const TrajectoryDataset& raw, std::size_t H, std::size_t C_max, std::string name,
                                const std::optional<ChannelStats>& stats = std::nullopt);

/// lr at `step` of `total`: linear warmup from peak/25 to peak over the first
/// round(warmup_fraction * total) steps, then cosine decay to peak/1e4 at `total`.
double one_cycle_lr(std::size_t step, std::size_t total, double peak, double warmup_fraction);

/// Stacks samples into model tensors. Context [B, T_ctx, H, W, C]; target
/// [B, H, W, C-1]; weights mark mask-interior physical entries of the target.
struct Batch {
  Tensor context;
  Tensor target;
  std::vector<double> weights;
  std::size_t size = 0;
};
Batch make_batch(const std::vector<UnifiedSample>& samples);

/// Mean over the batch of the masked relative squared error
/// sum w (pred - y)^2 / sum w y^2 (or the masked mean squared error) between
/// forward(context + noise) and target. Noise of level eps is injected per sample.
Tensor ar_denoising_loss(const DpotModel& model, std::vector<UnifiedSample> samples, double eps,
                         std::mt19937_64& rng, LossKind kind = LossKind::Relative);
/// Loss of a prepared batch (no noise).
Tensor batch_loss(const Tensor& prediction, const Batch& batch, LossKind kind);

struct AdamWConfig {
  double beta1 = 0.9, beta2 = 0.9, eps = 1e-8, weight_decay = 1e-6;
};

class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}
  /// Decoupled decay p <- p (1 - lr wd), then the bias-corrected Adam update.
  /// Returns false (and leaves parameters untouched) when any gradient is non-finite.
  bool step(std::vector<Tensor>& params, double lr);
  std::size_t steps() const { return t_; }
  std::size_t skipped() const { return skipped_; }

  struct State {
    std::size_t t = 0, skipped = 0;
    std::vector<std::vector<double>> m, v;
  };
  State state() const { return {t_, skipped_, m_, v_}; }
  void set_state(State s);

 private:
  AdamWConfig cfg_;
  std::size_t t_ = 0, skipped_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Scales gradients so their global l2 norm is at most max_norm; returns the norm before clipping.
double clip_grad_norm(std::vector<Tensor>& params, double max_norm);

/// ||w (pred - truth)||_2 / ||w truth||_2 for one sample; nullopt when the truth norm is zero.
std::optional<double> l2re(std::span<const double> pred, std::span<const double> truth,
                           std::span<const double> weights);

struct RolloutResult {
  std::vector<double> frames;  // [completed, H, W, C] in model units, mask/pad channels re-attached
  std::size_t completed = 0;
  bool diverged = false;
};

/// Auto-regressive prediction: each predicted frame replaces the oldest context
/// frame. Physical channels come from the prediction; padded channels, the
/// mask channel and mask-exterior pixels are copied from the last context
/// frame. Stops early on a non-finite prediction.
RolloutResult rollout(const DpotModel& model, std::span<const double> context, std::size_t H, std::size_t W,
                      std::size_t C, std::span<const std::uint8_t> channel_valid, std::size_t n_steps);

struct EvalResult {
  double one_step = 0.0;
  double rollout = 0.0;
  std::vector<double> rollout_per_step;
  std::size_t samples = 0, excluded = 0;
};

/// One-step L2RE over every window with a full (unpadded) context, and rollout
/// L2RE of `rollout_steps` frames from the first T_ctx frames of each
/// trajectory. Errors are in destandardized units over mask-interior physical entries.
EvalResult evaluate(const DpotModel& model, const PreparedDataset& ds, std::size_t rollout_steps,
                    std::size_t max_trajectories = 0);

struct MetricsRow {
  std::size_t epoch = 0, step = 0;
  double lr = 0.0, loss = 0.0, wall_seconds = 0.0;
  std::map<std::string, double> one_step, rollout;
};

class MetricsLog {
 public:
  /// Rejects non-finite entries and non-increasing epochs.
  void append(MetricsRow row);
  const std::vector<MetricsRow>& rows() const { return rows_; }
  bool empty() const { return rows_.empty(); }
  const MetricsRow& back() const { return rows_.back(); }
  /// epoch,step,lr,loss,wall_seconds,onestep_<ds>...,rollout_<ds>...
  void write_csv(const std::string& path) const;
  /// epoch,step,metric,dataset,value
  void write_long_csv(const std::string& path) const;
  nlohmann::json to_json() const;
  static MetricsLog from_json(const nlohmann::json& j);

 private:
  std::vector<MetricsRow> rows_;
};

struct TrainerState {
  std::size_t step = 0, epoch = 0, nan_streak = 0;
  AdamW::State optimizer;
  MetricsLog metrics;
};

class Trainer {
 public:
  Trainer(DpotModel& model, std::vector<PreparedDataset> train, TrainConfig cfg,
          std::vector<PreparedDataset> eval = {});

  /// Runs until `epochs` are complete.
  void run();
  /// Runs at most n more epochs.
  void run_epochs(std::size_t n);
  /// One optimizer step; returns the loss (NaN when the step was skipped).
  double train_step();

  bool finished() const { return state_.epoch >= cfg_.epochs; }
  /// Snapshot including optimizer moments; restore() continues bit-identically.
  TrainerState state() const;
  void restore(TrainerState s);
  const MetricsLog& metrics() const { return state_.metrics; }
  const TrainConfig& config() const { return cfg_; }
  std::vector<UnifiedSample> batch_samples(std::size_t step) const;
  std::map<std::string, EvalResult> evaluate_all() const;

 private:
  DpotModel& model_;
  std::vector<PreparedDataset> train_, eval_;
  TrainConfig cfg_;
  BalancedSampler sampler_;
  AdamW opt_;
  TrainerState state_;
  std::vector<Tensor> params_;
};

}  // namespace dpot
