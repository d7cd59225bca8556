#include "dpot/io/persistence.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <zlib.h>

#include "dpot/error.hpp"

namespace dpot {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'D', 'P', 'O', 'T', 'D', 'S', '1', '\0'};
constexpr std::size_t kHeaderBytes = 8 + 7 * 4;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(p[k]) << (8 * k);
  return v;
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(p[k]) << (8 * k);
  return v;
}

std::uint32_t crc32_of(const std::uint8_t* p, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(IoError::Kind::Open, "cannot open " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(IoError::Kind::Open, "cannot write " + tmp);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError(IoError::Kind::Open, "write failed for " + tmp);
  }
  fs::rename(tmp, path);
}

}  // namespace

std::vector<std::uint8_t> encode_dataset(const TrajectoryDataset& ds) {
  if (ds.size() == 0) throw ConfigError("cannot write an empty dataset");
  ds.check_homogeneous();
  const Trajectory& first = ds.trajectories.front();
  const std::size_t N = ds.size(), T = first.T, H = first.H, W = first.W, C = first.C;
  nlohmann::json meta = ds.metadata.is_object() ? ds.metadata : nlohmann::json::object();
  meta["pde"] = first.pde;
  meta["dt_save"] = first.dt_save;
  meta["channels"] = first.channels;
  if (!first.channel_valid.empty()) meta["channel_valid"] = first.channel_valid;
  const std::string js = meta.dump();

  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + N * T * H * W * C * 4 + N * H * W + 8 + js.size() + 4);
  for (char ch : kMagic) out.push_back(static_cast<std::uint8_t>(ch));
  for (std::size_t v : {std::size_t{kDatasetVersion}, N, T, H, W, C, std::size_t{kDtypeReal32}}) {
    if (v > 0xffffffffu) throw ConfigError("dataset dimension exceeds 32 bits");
    put_u32(out, static_cast<std::uint32_t>(v));
  }
  for (const auto& tr : ds.trajectories)
    for (double x : tr.values) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
  for (const auto& tr : ds.trajectories)
    for (auto m : tr.mask) out.push_back(m ? 1 : 0);
  put_u64(out, js.size());
  out.insert(out.end(), js.begin(), js.end());
  put_u32(out, crc32_of(out.data(), out.size()));
  return out;
}

TrajectoryDataset decode_dataset(const std::vector<std::uint8_t>& b, const std::string& origin) {
  using K = IoError::Kind;
  if (b.size() < 8) throw IoError(K::Truncated, origin + ": file too short for the magic");
  if (std::memcmp(b.data(), kMagic, 8) != 0) throw IoError(K::BadMagic, origin + ": not a DPOT dataset (bad magic)");
  if (b.size() < kHeaderBytes) throw IoError(K::Truncated, origin + ": truncated header");
  std::uint32_t h[7];
  for (int k = 0; k < 7; ++k) h[k] = get_u32(b.data() + 8 + 4 * k);
  if (h[0] != kDatasetVersion) {
    throw IoError(K::UnknownVersion, origin + ": unsupported dataset version " + std::to_string(h[0]) +
                                         " (this build reads version " + std::to_string(kDatasetVersion) + ")");
  }
  const std::size_t N = h[1], T = h[2], H = h[3], W = h[4], C = h[5];
  if (h[6] != kDtypeReal32) throw IoError(K::Inconsistent, origin + ": unknown dtype code " + std::to_string(h[6]));
  if (N == 0 || T == 0 || H == 0 || W == 0 || C == 0) throw IoError(K::Inconsistent, origin + ": zero extent in header");
  const std::size_t payload = N * T * H * W * C * 4, masks = N * H * W;
  std::size_t off = kHeaderBytes;
  if (b.size() < off + payload + masks + 8 + 4) {
    throw IoError(K::Truncated, origin + ": truncated (" + std::to_string(b.size()) + " bytes; header implies at least " +
                                    std::to_string(off + payload + masks + 12) + ")");
  }
  const std::uint64_t jlen = get_u64(b.data() + off + payload + masks);
  const std::size_t total = off + payload + masks + 8 + jlen + 4;
  if (b.size() < total) throw IoError(K::Truncated, origin + ": truncated metadata or checksum");
  if (b.size() > total) {
    throw IoError(K::Inconsistent, origin + ": " + std::to_string(b.size() - total) + " trailing bytes after checksum");
  }
  const std::uint32_t stored = get_u32(b.data() + total - 4), actual = crc32_of(b.data(), total - 4);
  if (stored != actual) throw IoError(K::CrcMismatch, origin + ": CRC32 mismatch (file is corrupted)");

  TrajectoryDataset ds;
  try {
    ds.metadata = nlohmann::json::parse(b.begin() + static_cast<long>(off + payload + masks + 8),
                                        b.begin() + static_cast<long>(total - 4));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(K::Inconsistent, origin + ": metadata is not valid JSON: " + e.what());
  }
  const auto& m = ds.metadata;
  ds.trajectories.reserve(N);
  for (std::size_t n = 0; n < N; ++n) {
    Trajectory tr(T, H, W, C);
    const std::uint8_t* p = b.data() + off + n * T * H * W * C * 4;
    for (std::size_t i = 0; i < tr.values.size(); ++i)
      tr.values[i] = static_cast<double>(std::bit_cast<float>(get_u32(p + 4 * i)));
    const std::uint8_t* mk = b.data() + off + payload + n * H * W;
    for (std::size_t i = 0; i < H * W; ++i) {
      if (mk[i] > 1) throw IoError(K::Inconsistent, origin + ": mask byte outside {0,1}");
      tr.mask[i] = mk[i];
    }
    tr.pde = m.value("pde", std::string());
    tr.dt_save = m.value("dt_save", 0.0);
    tr.channels = m.value("channels", std::vector<std::string>());
    tr.channel_valid = m.value("channel_valid", std::vector<std::uint8_t>());
    if ((!tr.channels.empty() && tr.channels.size() != C) || (!tr.channel_valid.empty() && tr.channel_valid.size() != C)) {
      throw IoError(K::Inconsistent, origin + ": channel metadata disagrees with C = " + std::to_string(C));
    }
    ds.trajectories.push_back(std::move(tr));
  }
  return ds;
}

void write_dataset(const TrajectoryDataset& ds, const std::string& path) { write_file_atomic(path, encode_dataset(ds)); }

TrajectoryDataset read_dataset(const std::string& path) { return decode_dataset(read_file(path), path); }

Checkpoint make_checkpoint(const DpotModel& model, const Trainer* trainer, nlohmann::json extra) {
  Checkpoint ck;
  ck.config = model.config();
  ck.params = model.state_dict();
  if (trainer) {
    ck.train_config = trainer->config();
    ck.trainer = trainer->state();
  }
  ck.extra = std::move(extra);
  return ck;
}

namespace {

void put_f64s(std::vector<std::uint8_t>& out, const std::vector<double>& v) {
  for (double x : v) put_u64(out, std::bit_cast<std::uint64_t>(x));
}

std::vector<double> get_f64s(const std::vector<std::uint8_t>& blob, std::size_t offset, std::size_t count,
                             const std::string& what) {
  if (offset + count * 8 > blob.size() || offset % 8 != 0) {
    throw IoError(IoError::Kind::Inconsistent, "checkpoint: " + what + " lies outside blob.bin (offset " +
                                                   std::to_string(offset) + ", " + std::to_string(count) +
                                                   " values, blob " + std::to_string(blob.size()) + " bytes)");
  }
  std::vector<double> v(count);
  for (std::size_t i = 0; i < count; ++i) v[i] = std::bit_cast<double>(get_u64(blob.data() + offset + 8 * i));
  return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::string& dir) {
  std::vector<std::uint8_t> blob;
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : ck.params) {
    params.push_back({{"name", p.name}, {"offset", blob.size()}, {"shape", p.shape}, {"dtype", "f64"}});
    put_f64s(blob, p.values);
  }
  nlohmann::json manifest = {{"format", "dpot-checkpoint"},
                             {"version", 1},
                             {"config", config_to_json(ck.config)},
                             {"params", params},
                             {"extra", ck.extra}};
  if (ck.train_config) manifest["train_config"] = train_config_to_json(*ck.train_config);
  if (ck.trainer) {
    const TrainerState& s = *ck.trainer;
    nlohmann::json m = nlohmann::json::array(), v = nlohmann::json::array();
    for (std::size_t k = 0; k < s.optimizer.m.size(); ++k) {
      m.push_back({{"offset", blob.size()}, {"count", s.optimizer.m[k].size()}});
      put_f64s(blob, s.optimizer.m[k]);
      v.push_back({{"offset", blob.size()}, {"count", s.optimizer.v[k].size()}});
      put_f64s(blob, s.optimizer.v[k]);
    }
    const std::size_t batch = ck.train_config ? ck.train_config->batch_size : 0;
    manifest["trainer"] = {{"step", s.step},
                           {"epoch", s.epoch},
                           {"nan_streak", s.nan_streak},
                           {"optimizer", {{"t", s.optimizer.t}, {"skipped", s.optimizer.skipped}, {"m", m}, {"v", v}}},
                           {"rng", {{"seed", ck.train_config ? ck.train_config->seed : 0},
                                    {"sampler_position", s.step * batch},
                                    {"noise_stream", "hash(seed, step)"}}},
                           {"metrics", s.metrics.to_json()}};
  }
  manifest["blob_bytes"] = blob.size();

  const fs::path target(dir);
  const fs::path tmp = target.string() + ".tmp";
  const fs::path old = target.string() + ".old";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  {
    std::ofstream f(tmp / "blob.bin", std::ios::binary);
    if (!f) throw IoError(IoError::Kind::Open, "cannot write " + (tmp / "blob.bin").string());
    f.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
    std::ofstream g(tmp / "manifest.json");
    if (!g) throw IoError(IoError::Kind::Open, "cannot write " + (tmp / "manifest.json").string());
    g << manifest.dump(2) << "\n";
    if (!f || !g) throw IoError(IoError::Kind::Open, "checkpoint write failed in " + tmp.string());
  }
  fs::remove_all(old);
  if (fs::exists(target)) fs::rename(target, old);
  fs::rename(tmp, target);
  fs::remove_all(old);
}

std::vector<std::uint8_t> read_blob(const std::string& dir) { return read_file((fs::path(dir) / "blob.bin").string()); }

Checkpoint load_checkpoint(const std::string& dir) {
  using K = IoError::Kind;
  const auto mpath = (fs::path(dir) / "manifest.json").string();
  std::ifstream f(mpath);
  if (!f) throw IoError(K::Open, "cannot open " + mpath);
  nlohmann::json man;
  try {
    man = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(K::Inconsistent, mpath + ": invalid JSON: " + e.what());
  }
  if (man.value("format", std::string()) != "dpot-checkpoint") throw IoError(K::BadMagic, mpath + ": not a DPOT checkpoint");
  if (man.value("version", 0) != 1) {
    throw IoError(K::UnknownVersion, mpath + ": unsupported checkpoint version " + man.value("version", nlohmann::json()).dump());
  }
  const auto blob = read_blob(dir);
  if (man.value("blob_bytes", std::size_t{0}) != blob.size()) {
    throw IoError(K::Inconsistent, "checkpoint " + dir + ": manifest expects " +
                                       std::to_string(man.value("blob_bytes", std::size_t{0})) + " blob bytes, found " +
                                       std::to_string(blob.size()));
  }
  Checkpoint ck;
  try {
    ck.config = config_from_json(man.at("config"));
    for (const auto& p : man.at("params")) {
      NamedArray a;
      a.name = p.at("name").get<std::string>();
      a.shape = p.at("shape").get<Shape>();
      if (p.value("dtype", std::string("f64")) != "f64") throw IoError(K::Inconsistent, "checkpoint: unsupported dtype for " + a.name);
      a.values = get_f64s(blob, p.at("offset").get<std::size_t>(), shape_numel(a.shape), a.name);
      ck.params.push_back(std::move(a));
    }
    ck.extra = man.value("extra", nlohmann::json::object());
    if (man.contains("train_config")) ck.train_config = train_config_from_json(man.at("train_config"));
    if (man.contains("trainer")) {
      const auto& t = man.at("trainer");
      TrainerState s;
      s.step = t.at("step").get<std::size_t>();
      s.epoch = t.at("epoch").get<std::size_t>();
      s.nan_streak = t.at("nan_streak").get<std::size_t>();
      const auto& o = t.at("optimizer");
      s.optimizer.t = o.at("t").get<std::size_t>();
      s.optimizer.skipped = o.at("skipped").get<std::size_t>();
      for (const auto& e : o.at("m")) s.optimizer.m.push_back(get_f64s(blob, e.at("offset"), e.at("count"), "optimizer m"));
      for (const auto& e : o.at("v")) s.optimizer.v.push_back(get_f64s(blob, e.at("offset"), e.at("count"), "optimizer v"));
      s.metrics = MetricsLog::from_json(t.at("metrics"));
      ck.trainer = std::move(s);
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(K::Inconsistent, mpath + ": malformed manifest: " + e.what());
  }
  return ck;
}

DpotModel model_from_checkpoint(const Checkpoint& ck) {
  DpotModel m(ck.config);
  m.load_state_dict(ck.params, true);
  return m;
}

void load_into(DpotModel& model, const Checkpoint& ck) {
  if (config_str(model.config()) != config_str(ck.config)) {
    throw ConfigError("checkpoint configuration " + config_str(ck.config) + " does not match model configuration " +
                      config_str(model.config()));
  }
  model.load_state_dict(ck.params, true);
}

std::vector<std::string> load_attention_only(DpotModel& model, const Checkpoint& ck) {
  const ModelConfig& t = model.config();
  if (t.d_z != ck.config.d_z || t.heads != ck.config.heads || t.layers != ck.config.layers || t.d_ffn != ck.config.d_ffn) {
    throw ConfigError("checkpoint configuration " + config_str(ck.config) +
                      " has different attention shapes from model configuration " + config_str(t));
  }
  StateDict part;
  std::vector<std::string> keys;
  for (const auto& p : ck.params) {
    if (!is_attention_param(p.name)) continue;
    part.push_back(p);
    keys.push_back(p.name);
  }
  model.load_state_dict(part, false);
  return keys;
}

}  // namespace dpot
