#include "dpot/model/dpot.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "dpot/error.hpp"
#include "dpot/tensor/ops.hpp"
#include "dpot/tensor/resample.hpp"
#include "dpot/util/hash.hpp"

namespace dpot {

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("model config: " + msg);
  };
  need(H >= 1 && P >= 1 && T_ctx >= 1 && C_in >= 1 && C_out >= 1, "extents must be >= 1");
  need(d_z >= 1 && heads >= 1 && layers >= 1 && d_ffn >= 1 && groups >= 1, "widths must be >= 1");
  need(H % P == 0, "patch size " + std::to_string(P) + " must divide H = " + std::to_string(H));
  need(d_z % heads == 0, "heads " + std::to_string(heads) + " must divide d_z = " + std::to_string(d_z));
  need(d_z % groups == 0, "groups " + std::to_string(groups) + " must divide d_z = " + std::to_string(d_z));
}

ModelConfig ModelConfig::nano(std::size_t C_in, std::size_t C_out) {
  ModelConfig c;
  c.C_in = C_in;
  c.C_out = C_out;
  return c;
}

ModelConfig ModelConfig::tiny(std::size_t C_in, std::size_t C_out) {
  ModelConfig c;
  c.H = 128;
  c.P = 8;
  c.T_ctx = 10;
  c.C_in = C_in;
  c.C_out = C_out;
  c.d_z = 512;
  c.heads = 4;
  c.layers = 4;
  c.d_ffn = 512;
  c.groups = 8;
  return c;
}

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"H", c.H},         {"P", c.P},         {"T_ctx", c.T_ctx},   {"C_in", c.C_in},
          {"C_out", c.C_out}, {"d_z", c.d_z},     {"heads", c.heads},   {"layers", c.layers},
          {"d_ffn", c.d_ffn}, {"groups", c.groups}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  auto get = [&](const char* key, std::size_t& dst) {
    if (j.contains(key)) dst = j.at(key).get<std::size_t>();
  };
  get("H", c.H);
  get("P", c.P);
  get("T_ctx", c.T_ctx);
  get("C_in", c.C_in);
  get("C_out", c.C_out);
  get("d_z", c.d_z);
  get("heads", c.heads);
  get("layers", c.layers);
  get("d_ffn", c.d_ffn);
  get("groups", c.groups);
  c.validate();
  return c;
}

std::string config_str(const ModelConfig& c) { return config_to_json(c).dump(); }

std::size_t attention_parameter_count(const ModelConfig& c) {
  const std::size_t d = c.d_z, h = c.heads, dh = c.d_z / c.heads, f = c.d_ffn;
  return c.layers * (h * (2 * dh * dh + 2 * dh) + 2 * d + 2 * d * f + d + f);
}

std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t d = c.d_z, P2 = c.P * c.P;
  return 3 * c.C_in + P2 * c.C_in * d + d + c.T_ctx * d * d + d + attention_parameter_count(c) +
         d * P2 * c.C_out + P2 * c.C_out;
}

bool is_attention_param(const std::string& name) { return name.rfind("blocks.", 0) == 0; }

namespace {

std::string block_key(std::size_t l, const char* rest) { return "blocks." + std::to_string(l) + "." + rest; }

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

DpotModel::DpotModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  const std::size_t d = config_.d_z, P2 = config_.P * config_.P, h = config_.heads, dh = config_.head_dim();
  add_param("embed.pos_weight", {3, config_.C_in});
  add_param("embed.patch_weight", {P2 * config_.C_in, d});
  add_param("embed.patch_bias", {d});
  add_param("time.weight", {config_.T_ctx, d, d});
  add_param("time.gamma", {d});
  for (std::size_t l = 0; l < config_.layers; ++l) {
    add_param(block_key(l, "mixer.w1"), {h, dh, dh});
    add_param(block_key(l, "mixer.b1"), {h, dh});
    add_param(block_key(l, "mixer.w2"), {h, dh, dh});
    add_param(block_key(l, "mixer.b2"), {h, dh});
    add_param(block_key(l, "norm.weight"), {d});
    add_param(block_key(l, "norm.bias"), {d});
    add_param(block_key(l, "ffn.w1"), {d, config_.d_ffn});
    add_param(block_key(l, "ffn.b1"), {config_.d_ffn});
    add_param(block_key(l, "ffn.w2"), {config_.d_ffn, d});
    add_param(block_key(l, "ffn.b2"), {d});
  }
  add_param("decoder.weight", {d, P2 * config_.C_out});
  add_param("decoder.bias", {P2 * config_.C_out});
  if (num_parameters() != parameter_count(config_)) {
    throw Error("parameter registration (" + std::to_string(num_parameters()) + ") disagrees with closed form (" +
                std::to_string(parameter_count(config_)) + ")");
  }
  for (const auto& [name, t] : params_) init_param(name, seed);
}

Tensor& DpotModel::add_param(const std::string& name, Shape shape) {
  const std::size_t n = shape_numel(shape);
  index_[name] = params_.size();
  params_.emplace_back(name, Tensor::parameter(std::move(shape), std::vector<double>(n, 0.0)));
  return params_.back().second;
}

void DpotModel::init_param(const std::string& name, std::uint64_t seed) {
  const std::size_t d = config_.d_z, P2 = config_.P * config_.P;
  Tensor& t = param(name);
  auto v = t.mutable_data();
  std::mt19937_64 rng(hash_combine(seed, index_.at(name)));

  if (ends_with(name, "norm.weight")) {
    std::fill(v.begin(), v.end(), 1.0);
    return;
  }
  if (ends_with(name, "norm.bias") || name == "decoder.bias") {
    std::fill(v.begin(), v.end(), 0.0);
    return;
  }
  if (name == "time.gamma") {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& x : v) x = normal(rng);
    return;
  }
  std::size_t fan_in = 1;
  if (name == "embed.pos_weight") fan_in = 3;
  else if (name.rfind("embed.patch", 0) == 0) fan_in = P2 * config_.C_in;
  else if (name == "time.weight") fan_in = config_.T_ctx * d;
  else if (name.find(".mixer.") != std::string::npos) fan_in = config_.head_dim();
  else if (ends_with(name, "ffn.w1") || ends_with(name, "ffn.b1")) fan_in = d;
  else if (ends_with(name, "ffn.w2") || ends_with(name, "ffn.b2")) fan_in = config_.d_ffn;
  else if (name == "decoder.weight") fan_in = d;
  else throw Error("no initialization rule for parameter " + name);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> uni(-bound, bound);
  for (auto& x : v) x = uni(rng);
}

void DpotModel::reinitialize(const std::string& name, std::uint64_t seed) { init_param(name, seed); }

Tensor& DpotModel::param(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter " + name);
  return params_[it->second].second;
}

const Tensor& DpotModel::param(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter " + name);
  return params_[it->second].second;
}

std::size_t DpotModel::num_parameters() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

StateDict DpotModel::state_dict() const {
  StateDict out;
  out.reserve(params_.size());
  for (const auto& [name, t] : params_) out.push_back({name, t.shape(), t.to_vector()});
  return out;
}

void DpotModel::load_state_dict(const StateDict& state, bool strict) {
  std::map<std::string, bool> seen;
  for (const auto& entry : state) {
    auto it = index_.find(entry.name);
    if (it == index_.end()) throw ConfigError("state has unknown parameter " + entry.name);
    Tensor& t = params_[it->second].second;
    if (t.shape() != entry.shape || entry.values.size() != t.numel()) {
      throw ShapeError("parameter " + entry.name + ": expected " + shape_str(t.shape()) + ", state has " +
                       shape_str(entry.shape));
    }
    auto dst = t.mutable_data();
    std::copy(entry.values.begin(), entry.values.end(), dst.begin());
    seen[entry.name] = true;
  }
  if (strict) {
    for (const auto& [name, t] : params_) {
      if (!seen.count(name)) throw ConfigError("state is missing parameter " + name);
    }
  }
}

void DpotModel::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

Tensor DpotModel::positional_encoding() const {
  const std::size_t T = config_.T_ctx, H = config_.H;
  std::vector<double> coords(T * H * H * 3);
  std::size_t k = 0;
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < H; ++j) {
        coords[k++] = static_cast<double>(i) / static_cast<double>(H);
        coords[k++] = static_cast<double>(j) / static_cast<double>(H);
        coords[k++] = static_cast<double>(t + 1) / static_cast<double>(T);
      }
  return matmul(Tensor::from_vector({T, H, H, 3}, std::move(coords)), param("embed.pos_weight"));
}

Tensor DpotModel::patch_embed(const Tensor& frames) const {
  const std::size_t H = config_.H, P = config_.P, Hp = H / P, C = config_.C_in;
  const Shape& s = frames.shape();
  if (s.size() < 3 || s[s.size() - 3] != H || s[s.size() - 2] != H || s.back() != C) {
    throw ShapeError("patch_embed: expected [..., " + std::to_string(H) + ", " + std::to_string(H) + ", " +
                     std::to_string(C) + "], got " + shape_str(s));
  }
  Shape lead(s.begin(), s.end() - 3);
  const std::size_t L = shape_numel(lead);
  Tensor x = reshape(frames, {L, Hp, P, Hp, P, C});
  x = permute(x, {0, 1, 3, 2, 4, 5});
  x = reshape(x, {L, Hp, Hp, P * P * C});
  x = add(matmul(x, param("embed.patch_weight")), param("embed.patch_bias"));
  Shape out = lead;
  out.insert(out.end(), {Hp, Hp, config_.d_z});
  return reshape(x, out);
}

Tensor DpotModel::temporal_aggregate(const Tensor& tokens) const {
  const std::size_t T = config_.T_ctx, d = config_.d_z;
  const Shape& s = tokens.shape();
  if (s.size() != 5 || s[1] != T || s[4] != d) {
    throw ShapeError("temporal_aggregate: expected [B, " + std::to_string(T) + ", Hp, Wp, " + std::to_string(d) +
                     "], got " + shape_str(s));
  }
  std::vector<double> tn(T);
  for (std::size_t t = 0; t < T; ++t) tn[t] = static_cast<double>(t + 1) / static_cast<double>(T);
  const Tensor features = cos(matmul(Tensor::from_vector({T, 1}, tn), reshape(param("time.gamma"), {1, d})));
  Tensor z = permute(tokens, {0, 2, 3, 1, 4});
  z = mul(z, features);
  z = reshape(z, {s[0], s[2], s[3], T * d});
  return matmul(z, reshape(param("time.weight"), {T * d, d}));
}

Tensor DpotModel::mixer(std::size_t layer, const Tensor& z, const MixerOptions* options) const {
  if (layer >= config_.layers) throw ConfigError("mixer: layer index out of range");
  const Shape& s = z.shape();
  if (s.size() != 4 || s[3] != config_.d_z) {
    throw ShapeError("mixer: expected [B, Hp, Wp, " + std::to_string(config_.d_z) + "], got " + shape_str(s));
  }
  const std::size_t Hp = s[1], Wp = s[2], d = s[3];
  const double rootN = std::sqrt(static_cast<double>(Hp * Wp));

  // Unitary FFT rescaled to resolution-independent Fourier coefficients.
  Tensor spec = as_real(fft2(permute(z, {0, 3, 1, 2})));  // [B, d, Hp, Wp, 2]
  spec = scale(permute(spec, {0, 2, 3, 4, 1}), 1.0 / rootN);  // [B, Hp, Wp, 2, d]
  if (!options || !options->identity_map) {
    const Tensor b1 = reshape(param(block_key(layer, "mixer.b1")), {d});
    const Tensor b2 = reshape(param(block_key(layer, "mixer.b2")), {d});
    spec = gelu(add(grouped_matmul(spec, param(block_key(layer, "mixer.w1"))), b1));
    spec = add(grouped_matmul(spec, param(block_key(layer, "mixer.w2"))), b2);
  }
  if (options && !options->mode_mask.empty()) {
    if (options->mode_mask.size() != Hp * Wp) throw ShapeError("mixer: mode mask must have Hp*Wp entries");
    std::vector<double> m(Hp * Wp * 2 * d);
    for (std::size_t k = 0; k < Hp * Wp; ++k)
      std::fill_n(m.begin() + static_cast<long>(k * 2 * d), 2 * d, options->mode_mask[k]);
    spec = mul(spec, Tensor::from_vector({Hp, Wp, 2, d}, std::move(m)));
  }
  spec = scale(permute(spec, {0, 4, 1, 2, 3}), rootN);  // [B, d, Hp, Wp, 2]
  Tensor out = real_part(ifft2(as_complex(spec)));
  return permute(out, {0, 2, 3, 1});
}

Tensor DpotModel::fourier_attention_layer(std::size_t layer, const Tensor& z) const {
  const Shape s = z.shape();
  const std::size_t B = s[0], N = s[1] * s[2], d = config_.d_z;
  Tensor x = add(z, mixer(layer, z));
  x = reshape(group_norm(reshape(x, {B, N, d}), config_.groups, param(block_key(layer, "norm.weight")),
                         param(block_key(layer, "norm.bias"))),
              s);
  Tensor f = gelu(add(matmul(x, param(block_key(layer, "ffn.w1"))), param(block_key(layer, "ffn.b1"))));
  f = add(matmul(f, param(block_key(layer, "ffn.w2"))), param(block_key(layer, "ffn.b2")));
  return add(x, f);
}

Tensor DpotModel::decode(const Tensor& z) const {
  const Shape& s = z.shape();
  const std::size_t P = config_.P, Co = config_.C_out;
  if (s.size() != 4 || s[3] != config_.d_z) throw ShapeError("decode: expected [B, Hp, Wp, d_z], got " + shape_str(s));
  Tensor x = add(matmul(z, param("decoder.weight")), param("decoder.bias"));
  x = reshape(x, {s[0], s[1], s[2], P, P, Co});
  x = permute(x, {0, 1, 3, 2, 4, 5});
  return reshape(x, {s[0], s[1] * P, s[2] * P, Co});
}

Tensor DpotModel::forward_native(const Tensor& context) const {
  Tensor x = add(context, positional_encoding());
  Tensor z = temporal_aggregate(patch_embed(x));
  for (std::size_t l = 0; l < config_.layers; ++l) z = fourier_attention_layer(l, z);
  return decode(z);
}

Tensor DpotModel::forward(const Tensor& context) const {
  const Shape& s = context.shape();
  if (s.size() != 5 || s[1] != config_.T_ctx || s[4] != config_.C_in || s[2] != s[3]) {
    throw ShapeError("forward: expected [B, " + std::to_string(config_.T_ctx) + ", H, H, " +
                     std::to_string(config_.C_in) + "], got " + shape_str(s));
  }
  if (context.is_complex()) throw ShapeError("forward: context must be real");
  const std::size_t B = s[0], Hs = s[2], H = config_.H, T = config_.T_ctx, C = config_.C_in;
  if (Hs == H) return forward_native(context);

  const auto in = context.data();
  const std::size_t fs = Hs * Hs * C, fn = H * H * C;
  std::vector<double> native(B * T * fn);
  for (std::size_t f = 0; f < B * T; ++f) {
    const auto r = fourier_resample(in.subspan(f * fs, fs), Hs, Hs, C, H, H);
    std::copy(r.begin(), r.end(), native.begin() + static_cast<long>(f * fn));
  }
  const Tensor pred = forward_native(Tensor::from_vector({B, T, H, H, C}, std::move(native)));
  const auto pv = pred.data();
  const std::size_t Co = config_.C_out, po = H * H * Co, ps = Hs * Hs * Co;
  std::vector<double> out(B * ps);
  for (std::size_t b = 0; b < B; ++b) {
    const auto r = fourier_resample(pv.subspan(b * po, po), H, H, Co, Hs, Hs);
    std::copy(r.begin(), r.end(), out.begin() + static_cast<long>(b * ps));
  }
  return Tensor::from_vector({B, Hs, Hs, Co}, std::move(out));
}

TransferResult transfer_weights(const ModelConfig& source_config, const StateDict& source,
                                const ModelConfig& target, std::uint64_t seed) {
  auto mismatch = [](const char* what, std::size_t a, std::size_t b) {
    return ConfigError(std::string("transfer_weights: ") + what + " differs (" + std::to_string(a) + " vs " +
                       std::to_string(b) + ")");
  };
  if (source_config.d_z != target.d_z) throw mismatch("d_z", source_config.d_z, target.d_z);
  if (source_config.heads != target.heads) throw mismatch("heads", source_config.heads, target.heads);
  if (source_config.layers != target.layers) throw mismatch("layers", source_config.layers, target.layers);
  if (source_config.d_ffn != target.d_ffn) throw mismatch("d_ffn", source_config.d_ffn, target.d_ffn);
  const bool same_geometry = source_config.H == target.H && source_config.P == target.P &&
                             source_config.T_ctx == target.T_ctx && source_config.C_in == target.C_in &&
                             source_config.C_out == target.C_out;

  TransferResult r{DpotModel(target, seed), {}, {}, 0};
  std::map<std::string, const NamedArray*> by_name;
  for (const auto& e : source) by_name[e.name] = &e;
  for (const auto& [name, t] : r.model.parameters()) {
    auto it = by_name.find(name);
    const bool copy = it != by_name.end() && (is_attention_param(name) || same_geometry);
    if (!copy) {
      if (is_attention_param(name)) throw ConfigError("transfer_weights: source lacks " + name);
      r.reinitialized.push_back(name);
      continue;
    }
    r.model.load_state_dict({*it->second}, false);
    r.copied.push_back(name);
    r.copied_values += it->second->values.size();
  }
  return r;
}

}  // namespace dpot
