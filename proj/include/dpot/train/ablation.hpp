#pragma once

// Grid sweeps over heads, patch size, noise level or evaluation resolution.
// Every trained grid point shares the seed and the data.

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dpot/train/trainer.hpp"

namespace dpot {

enum class AblationKind { Heads, Patch, Noise, Resolution };

std::string ablation_name(AblationKind kind);
AblationKind parse_ablation(const std::string& name);

struct AblationSetup {
  ModelConfig model;
  TrainConfig train;
  std::uint64_t model_seed = 0;
  std::vector<PreparedDataset> train_sets;
  std::vector<PreparedDataset> eval_sets;
  /// Resolution sweeps: eval sets per grid resolution. Missing resolutions are
  /// produced by Fourier-resampling `eval_sets`.
  std::map<std::size_t, std::vector<PreparedDataset>> eval_by_resolution;
  std::size_t rollout_steps = 10;
};

struct AblationRow {
  std::string kind;
  double value = 0.0;
  bool trained = false;
  double final_loss = 0.0;
  std::map<std::string, double> one_step, rollout;
};

/// One row per grid value. Heads, patch and noise sweeps train a model per
/// value; a resolution sweep trains once at the base configuration and only
/// evaluates at each resolution.
std::vector<AblationRow> run_ablation(AblationKind kind, const std::vector<double>& grid, const AblationSetup& setup);

/// kind,value,trained,final_loss,onestep_<ds>...,rollout_<ds>...
void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path);

}  // namespace dpot
