#pragma once

// On-disk formats. Datasets: one little-endian binary file
//   "DPOTDS1\0" | u32 version, N, T, H, W, C, dtype (1 = real32)
//   | real32 payload [n, t, h, w, c] | u8 mask [n, h, w]
//   | u64 JSON length | JSON metadata | u32 CRC32 of all preceding bytes.
// Checkpoints: a directory holding manifest.json and blob.bin (little-endian
// real64 parameters followed by optimizer moments).

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dpot/model/dpot.hpp"
#include "dpot/pde/trajectory.hpp"
#include "dpot/train/trainer.hpp"
#include "json.hpp"

namespace dpot {

inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::uint32_t kDtypeReal32 = 1;

std::vector<std::uint8_t> encode_dataset(const TrajectoryDataset& ds);
TrajectoryDataset decode_dataset(const std::vector<std::uint8_t>& bytes, const std::string& origin = "<memory>");

/// Atomic write (temporary file, then rename).
void write_dataset(const TrajectoryDataset& ds, const std::string& path);
/// Throws IoError with kind Open, Truncated, BadMagic, UnknownVersion,
/// CrcMismatch or Inconsistent.
TrajectoryDataset read_dataset(const std::string& path);

struct Checkpoint {
  ModelConfig config;
  StateDict params;
  std::optional<TrainConfig> train_config;
  std::optional<TrainerState> trainer;
  nlohmann::json extra = nlohmann::json::object();
};

Checkpoint make_checkpoint(const DpotModel& model, const Trainer* trainer = nullptr,
                           nlohmann::json extra = nlohmann::json::object());

/// Writes dir/manifest.json and dir/blob.bin, replacing `dir` atomically.
void save_checkpoint(const Checkpoint& ck, const std::string& dir);
/// Throws IoError(Inconsistent) when the manifest and blob disagree.
Checkpoint load_checkpoint(const std::string& dir);
std::vector<std::uint8_t> read_blob(const std::string& dir);

/// Model with the checkpoint's configuration and parameters.
DpotModel model_from_checkpoint(const Checkpoint& ck);
/// Full load into an existing model; a configuration mismatch is rejected with both configs in the message.
void load_into(DpotModel& model, const Checkpoint& ck);
/// Copies only the Fourier-attention-layer tensors; returns the copied keys.
std::vector<std::string> load_attention_only(DpotModel& model, const Checkpoint& ck);

}  // namespace dpot
