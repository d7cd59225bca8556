#pragma once

// The DPOT network: positional encoding and patch embedding per frame,
// Fourier-feature temporal aggregation, L Fourier attention layers
// (per-mode multi-head MLP mixer, group norm, channel FFN) and a linear
// de-patchify decoder.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dpot/tensor/tensor.hpp"
#include "json.hpp"

namespace dpot {

struct ModelConfig {
  std::size_t H = 32;      // native resolution (square grids)
  std::size_t P = 4;       // patch size
  std::size_t T_ctx = 10;  // context frames
  std::size_t C_in = 3;    // input channels including the mask channel
  std::size_t C_out = 2;   // predicted channels
  std::size_t d_z = 64;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t d_ffn = 64;
  std::size_t groups = 8;

  std::size_t tokens_per_side() const { return H / P; }
  std::size_t head_dim() const { return d_z / heads; }
  /// Throws ConfigError unless P | H, heads | d_z, groups | d_z and all extents >= 1.
  void validate() const;

  static ModelConfig nano(std::size_t C_in = 3, std::size_t C_out = 2);
  /// Width/depth/heads of the smallest published configuration (512 wide, 4 layers, 4 heads).
  static ModelConfig tiny(std::size_t C_in = 3, std::size_t C_out = 2);
};

nlohmann::json config_to_json(const ModelConfig& c);
ModelConfig config_from_json(const nlohmann::json& j);
std::string config_str(const ModelConfig& c);

/// Closed-form parameter count of the architecture.
std::size_t parameter_count(const ModelConfig& c);
/// Closed-form count of the Fourier-attention-layer parameters (what transfer copies).
std::size_t attention_parameter_count(const ModelConfig& c);

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> values;
};
using StateDict = std::vector<NamedArray>;

/// Diagnostics for the mixer: `mode_mask` (length Hp*Wp, row-major over the
/// token-grid spectrum) zeroes the listed modes of the mixed spectrum, and
/// `identity_map` replaces the frequency MLP by the identity.
struct MixerOptions {
  std::vector<double> mode_mask;
  bool identity_map = false;
};

class DpotModel {
 public:
  explicit DpotModel(const ModelConfig& config, std::uint64_t seed = 0);

  const ModelConfig& config() const { return config_; }

  /// context [B, T_ctx, H', W', C_in] -> prediction [B, H', W', C_out]. When
  /// H' differs from the native H the frames are Fourier-resampled to H and the
  /// prediction resampled back (inference only; no gradient through the resampling).
  Tensor forward(const Tensor& context) const;

  /// W_p (x_i, y_j, t/T_ctx) for t = 1..T_ctx on the native grid: [T_ctx, H, H, C_in].
  Tensor positional_encoding() const;
  /// frames [..., H, H, C_in] -> tokens [..., H/P, H/P, d_z].
  Tensor patch_embed(const Tensor& frames) const;
  /// tokens [B, T_ctx, Hp, Wp, d_z] -> [B, Hp, Wp, d_z]: sum_t W_t (z_t * cos(gamma t/T_ctx)).
  Tensor temporal_aggregate(const Tensor& tokens) const;
  /// Mixer branch of layer l (without the residual): tokens [B, Hp, Wp, d_z].
  Tensor mixer(std::size_t layer, const Tensor& z, const MixerOptions* options = nullptr) const;
  /// Full layer: z + mixer, group norm, then z + FFN.
  Tensor fourier_attention_layer(std::size_t layer, const Tensor& z) const;
  /// tokens [B, Hp, Wp, d_z] -> [B, H, H, C_out].
  Tensor decode(const Tensor& z) const;

  /// Parameters in a fixed registration order.
  const std::vector<std::pair<std::string, Tensor>>& parameters() const { return params_; }
  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;
  bool has_param(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t num_parameters() const;

  StateDict state_dict() const;
  /// Copies values by name. Shapes must match; with `strict` every key of this
  /// model must be present.
  void load_state_dict(const StateDict& state, bool strict = true);
  void zero_grad();

  /// Re-draws the named tensor from its initialization law.
  void reinitialize(const std::string& name, std::uint64_t seed);

 private:
  Tensor forward_native(const Tensor& context) const;
  Tensor& add_param(const std::string& name, Shape shape);
  void init_param(const std::string& name, std::uint64_t seed);

  ModelConfig config_;
  std::vector<std::pair<std::string, Tensor>> params_;
  std::map<std::string, std::size_t> index_;
};

/// True for parameters that belong to a Fourier attention layer.
bool is_attention_param(const std::string& name);

struct TransferResult {
  DpotModel model;
  std::vector<std::string> copied;
  std::vector<std::string> reinitialized;
  std::size_t copied_values = 0;
};

/// Builds a model for `target` from a source state: attention-layer tensors are
/// always copied; embedding, temporal and decoder tensors are copied only when
/// H, P, T_ctx, C_in and C_out all agree and re-initialized otherwise.
/// Rejects sources whose d_z, heads, layers or d_ffn differ.
TransferResult transfer_weights(const ModelConfig& source_config, const StateDict& source,
                                const ModelConfig& target, std::uint64_t seed);

}  // namespace dpot
