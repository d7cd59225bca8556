#include "dpot/train/trainer.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include <spdlog/spdlog.h>

#include "dpot/error.hpp"
#include "dpot/tensor/ops.hpp"
#include "dpot/util/hash.hpp"

namespace dpot {

void TrainConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("train config: " + msg);
  };
  need(epochs >= 1 && steps_per_epoch >= 1 && batch_size >= 1, "epochs, steps_per_epoch and batch_size must be >= 1");
  need(peak_lr > 0.0 && std::isfinite(peak_lr), "peak_lr must be > 0");
  need(warmup_fraction > 0.0 && warmup_fraction < 1.0, "warmup_fraction must lie in (0, 1)");
  need(noise_eps >= 0.0 && std::isfinite(noise_eps), "noise_eps must be >= 0");
  need(weight_decay >= 0.0, "weight_decay must be >= 0");
  need(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "betas must lie in [0, 1)");
  need(clip_norm > 0.0, "clip_norm must be > 0");
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"steps_per_epoch", c.steps_per_epoch},
          {"batch_size", c.batch_size},
          {"peak_lr", c.peak_lr},
          {"warmup_fraction", c.warmup_fraction},
          {"weight_decay", c.weight_decay},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"clip_norm", c.clip_norm},
          {"noise_eps", c.noise_eps},
          {"loss", c.loss == LossKind::Relative ? "relative" : "mse"},
          {"weights", c.weights},
          {"seed", c.seed},
          {"eval_every", c.eval_every},
          {"rollout_steps", c.rollout_steps},
          {"eval_max_trajectories", c.eval_max_trajectories},
          {"left_pad", c.left_pad}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  auto get = [&](const char* key, auto& dst) {
    if (j.contains(key)) dst = j.at(key).get<std::decay_t<decltype(dst)>>();
  };
  get("epochs", c.epochs);
  get("steps_per_epoch", c.steps_per_epoch);
  get("batch_size", c.batch_size);
  get("peak_lr", c.peak_lr);
  get("warmup_fraction", c.warmup_fraction);
  get("weight_decay", c.weight_decay);
  get("beta1", c.beta1);
  get("beta2", c.beta2);
  get("adam_eps", c.adam_eps);
  get("clip_norm", c.clip_norm);
  get("noise_eps", c.noise_eps);
  get("weights", c.weights);
  get("seed", c.seed);
  get("eval_every", c.eval_every);
  get("rollout_steps", c.rollout_steps);
  get("eval_max_trajectories", c.eval_max_trajectories);
  get("left_pad", c.left_pad);
  if (j.contains("loss")) {
    const auto s = j.at("loss").get<std::string>();
    if (s == "relative") c.loss = LossKind::Relative;
    else if (s == "mse") c.loss = LossKind::Mse;
    else throw ConfigError("train config: unknown loss '" + s + "' (relative|mse)");
  }
  c.validate();
  return c;
}

PreparedDataset prepare_dataset(const TrajectoryDataset& raw, std::size_t H, std::size_t C_max, std::string name,
                                const std::optional<ChannelStats>& stats) {
  if (raw.size() == 0) throw ConfigError("prepare_dataset: dataset '" + name + "' is empty");
  raw.check_homogeneous();
  PreparedDataset out;
  out.name = std::move(name);
  out.stats = sanitize_stats(stats ? *stats : raw.stats());
  out.trajectories.reserve(raw.size());
  for (const auto& tr : raw.trajectories) {
    Trajectory t = tr;
    standardize(t, out.stats);
    if (t.H != H || t.W != H) t = resample_trajectory(t, H);
    out.trajectories.push_back(pad_channels_and_mask(t, C_max));
  }
  return out;
}

double one_cycle_lr(std::size_t step, std::size_t total, double peak, double warmup_fraction) {
  const double start = peak / 25.0, end = peak / 1e4;
  if (total == 0) return peak;
  step = std::min(step, total);
  const auto warm = static_cast<std::size_t>(std::llround(warmup_fraction * static_cast<double>(total)));
  if (step < warm) return start + (peak - start) * static_cast<double>(step) / static_cast<double>(warm);
  if (total == warm) return peak;
  const double p = static_cast<double>(step - warm) / static_cast<double>(total - warm);
  return end + (peak - end) * 0.5 * (1.0 + std::cos(M_PI * p));
}

Batch make_batch(const std::vector<UnifiedSample>& samples) {
  if (samples.empty()) throw ConfigError("batch is empty");
  const UnifiedSample& s0 = samples.front();
  const std::size_t T = s0.T_ctx, H = s0.H, W = s0.W, C = s0.C, Co = C - 1, fs = H * W * C;
  if (C < 2) throw ShapeError("batch: samples need at least one channel plus the mask");
  Batch b;
  b.size = samples.size();
  std::vector<double> ctx, tgt;
  ctx.reserve(b.size * T * fs);
  tgt.reserve(b.size * H * W * Co);
  b.weights.reserve(b.size * H * W * Co);
  for (const auto& s : samples) {
    if (s.T_ctx != T || s.H != H || s.W != W || s.C != C) throw ShapeError("batch: samples differ in shape");
    ctx.insert(ctx.end(), s.context.begin(), s.context.end());
    for (std::size_t p = 0; p < H * W; ++p) {
      const bool inside = s.target[p * C + Co] != 0.0;
      for (std::size_t c = 0; c < Co; ++c) {
        tgt.push_back(s.target[p * C + c]);
        b.weights.push_back(inside && s.channel_valid[c] ? 1.0 : 0.0);
      }
    }
  }
  b.context = Tensor::from_vector({b.size, T, H, W, C}, std::move(ctx));
  b.target = Tensor::from_vector({b.size, H, W, Co}, std::move(tgt));
  return b;
}

Tensor batch_loss(const Tensor& prediction, const Batch& batch, LossKind kind) {
  if (prediction.shape() != batch.target.shape()) {
    throw ShapeError("loss: prediction " + shape_str(prediction.shape()) + " vs target " +
                     shape_str(batch.target.shape()));
  }
  const std::size_t per = batch.target.numel() / batch.size;
  const auto y = batch.target.data();
  std::vector<double> w(batch.weights);
  for (std::size_t b = 0; b < batch.size; ++b) {
    double denom = 0.0, count = 0.0;
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
      denom += w[i] * y[i] * y[i];
      count += w[i];
    }
    if (kind == LossKind::Mse || denom <= 0.0) denom = std::max(count, 1.0);
    const double s = 1.0 / (denom * static_cast<double>(batch.size));
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) w[i] *= s;
  }
  return weighted_square_sum(sub(prediction, batch.target), w);
}

Tensor ar_denoising_loss(const DpotModel& model, std::vector<UnifiedSample> samples, double eps,
                         std::mt19937_64& rng, LossKind kind) {
  if (samples.empty()) throw ConfigError("loss: batch is empty");
  for (auto& s : samples) inject_noise(s.context, s.T_ctx, s.H, s.W, s.C, s.channel_valid, eps, rng);
  const Batch batch = make_batch(samples);
  return batch_loss(model.forward(batch.context), batch, kind);
}

void AdamW::set_state(State s) {
  t_ = s.t;
  skipped_ = s.skipped;
  m_ = std::move(s.m);
  v_ = std::move(s.v);
}

bool AdamW::step(std::vector<Tensor>& params, double lr) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw ShapeError("AdamW: parameter list changed size");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (m_[k].size() != params[k].numel()) throw ShapeError("AdamW: parameter shapes changed");
    for (double g : params[k].grad()) {
      if (!std::isfinite(g)) {
        ++skipped_;
        spdlog::warn("AdamW: non-finite gradient, step skipped ({} so far)", skipped_);
        return false;
      }
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k].mutable_data();
    const auto g = params[k].grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g.empty() ? 0.0 : g[i];
      p[i] *= 1.0 - lr * cfg_.weight_decay;
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
      p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
    }
  }
  return true;
}

double clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && std::isfinite(norm)) {
    const double s = max_norm / norm;
    for (auto& p : params)
      for (double& g : p.node()->grad) g *= s;
  }
  return norm;
}

std::optional<double> l2re(std::span<const double> pred, std::span<const double> truth,
                           std::span<const double> weights) {
  if (pred.size() != truth.size() || weights.size() != truth.size()) throw ShapeError("l2re: size mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double e = weights[i] * (pred[i] - truth[i]), t = weights[i] * truth[i];
    num += e * e;
    den += t * t;
  }
  if (!(den > 0.0)) return std::nullopt;
  return std::sqrt(num / den);
}

RolloutResult rollout(const DpotModel& model, std::span<const double> context, std::size_t H, std::size_t W,
                      std::size_t C, std::span<const std::uint8_t> channel_valid, std::size_t n_steps) {
  if (n_steps == 0) throw ConfigError("rollout: n_steps must be >= 1");
  const std::size_t T = model.config().T_ctx, fs = H * W * C, Co = C - 1;
  if (context.size() != T * fs || channel_valid.size() != C) throw ShapeError("rollout: context layout mismatch");
  std::vector<double> ctx(context.begin(), context.end());
  RolloutResult r;
  r.frames.reserve(n_steps * fs);
  for (std::size_t s = 0; s < n_steps; ++s) {
    const auto pred = model.forward(Tensor::from_vector({1, T, H, W, C}, ctx)).to_vector();
    const double* last = ctx.data() + (T - 1) * fs;
    std::vector<double> frame(last, last + fs);
    bool finite = true;
    for (std::size_t p = 0; p < H * W; ++p) {
      if (last[p * C + Co] == 0.0) continue;
      for (std::size_t c = 0; c < Co; ++c) {
        if (!channel_valid[c]) continue;
        frame[p * C + c] = pred[p * Co + c];
        finite = finite && std::isfinite(pred[p * Co + c]);
      }
    }
    if (!finite) {
      r.diverged = true;
      spdlog::warn("rollout: non-finite prediction at step {}; stopping", s + 1);
      break;
    }
    r.frames.insert(r.frames.end(), frame.begin(), frame.end());
    ++r.completed;
    std::copy(ctx.begin() + static_cast<long>(fs), ctx.end(), ctx.begin());
    std::copy(frame.begin(), frame.end(), ctx.end() - static_cast<long>(fs));
  }
  return r;
}

namespace {

// Destandardized physical values and weights of one [H, W, C] frame (C counts the mask).
void physical_view(std::span<const double> frame, std::size_t pixels, std::size_t C, const std::vector<std::uint8_t>& valid,
                   const ChannelStats& stats, std::span<const double> mask_source, std::vector<double>& vals,
                   std::vector<double>& weights) {
  const std::size_t Co = C - 1;
  for (std::size_t p = 0; p < pixels; ++p) {
    const bool inside = mask_source[p * C + Co] != 0.0;
    for (std::size_t c = 0; c < Co; ++c) {
      double v = frame[p * C + c];
      if (c < stats.mean.size()) v = v * stats.std[c] + stats.mean[c];
      vals.push_back(v);
      weights.push_back(inside && valid[c] ? 1.0 : 0.0);
    }
  }
}

}  // namespace

EvalResult evaluate(const DpotModel& model, const PreparedDataset& ds, std::size_t rollout_steps,
                    std::size_t max_trajectories) {
  const std::size_t T_ctx = model.config().T_ctx;
  const std::size_t n_traj =
      max_trajectories == 0 ? ds.trajectories.size() : std::min(max_trajectories, ds.trajectories.size());
  EvalResult r;
  double one_sum = 0.0;
  std::size_t one_n = 0;
  constexpr std::size_t chunk = 16;

  std::vector<UnifiedSample> pending;
  auto flush = [&](const Trajectory& tr) {
    if (pending.empty()) return;
    const Batch b = make_batch(pending);
    const auto pred = model.forward(b.context).to_vector();
    const std::size_t pixels = tr.H * tr.W, C = tr.C, Co = C - 1;
    for (std::size_t k = 0; k < pending.size(); ++k) {
      std::vector<double> pv, pw, tv, tw;
      std::vector<double> pf(pixels * C, 0.0);
      for (std::size_t p = 0; p < pixels; ++p)
        for (std::size_t c = 0; c < Co; ++c) pf[p * C + c] = pred[(k * pixels + p) * Co + c];
      const auto& s = pending[k];
      physical_view(pf, pixels, C, s.channel_valid, ds.stats, s.target, pv, pw);
      physical_view(s.target, pixels, C, s.channel_valid, ds.stats, s.target, tv, tw);
      if (auto e = l2re(pv, tv, tw)) {
        one_sum += *e;
        ++one_n;
      } else {
        ++r.excluded;
      }
    }
    pending.clear();
  };

  std::vector<double> step_sum;
  std::vector<std::size_t> step_n;
  double roll_sum = 0.0;
  std::size_t roll_n = 0;
  for (std::size_t n = 0; n < n_traj; ++n) {
    const Trajectory& tr = ds.trajectories[n];
    if (tr.T <= T_ctx) throw ConfigError("evaluate: trajectories need more than T_ctx frames");
    for (long t0 = 0; t0 + static_cast<long>(T_ctx) < static_cast<long>(tr.T); ++t0) {
      pending.push_back(make_window(tr, t0, T_ctx));
      if (pending.size() == chunk) flush(tr);
    }
    flush(tr);

    if (rollout_steps == 0) continue;
    const std::size_t steps = std::min(rollout_steps, tr.T - T_ctx);
    const std::size_t fs = tr.frame_size(), pixels = tr.H * tr.W;
    const std::vector<std::uint8_t> valid =
        tr.channel_valid.empty() ? std::vector<std::uint8_t>(tr.C, 1) : tr.channel_valid;
    const RolloutResult rr = rollout(model, {tr.values.data(), T_ctx * fs}, tr.H, tr.W, tr.C, valid, steps);
    if (step_sum.size() < steps) {
      step_sum.resize(steps, 0.0);
      step_n.resize(steps, 0);
    }
    std::vector<double> all_p, all_w, all_t, all_tw;
    for (std::size_t s = 0; s < rr.completed; ++s) {
      std::vector<double> pv, pw, tv, tw;
      const std::span<const double> truth(tr.frame(T_ctx + s), fs);
      physical_view({rr.frames.data() + s * fs, fs}, pixels, tr.C, valid, ds.stats, truth, pv, pw);
      physical_view(truth, pixels, tr.C, valid, ds.stats, truth, tv, tw);
      if (auto e = l2re(pv, tv, tw)) {
        step_sum[s] += *e;
        ++step_n[s];
      }
      all_p.insert(all_p.end(), pv.begin(), pv.end());
      all_t.insert(all_t.end(), tv.begin(), tv.end());
      all_w.insert(all_w.end(), tw.begin(), tw.end());
    }
    if (rr.diverged) {
      ++r.excluded;
      continue;
    }
    if (auto e = l2re(all_p, all_t, all_w)) {
      roll_sum += *e;
      ++roll_n;
    }
  }
  r.samples = one_n;
  r.one_step = one_n ? one_sum / static_cast<double>(one_n) : std::numeric_limits<double>::quiet_NaN();
  r.rollout = roll_n ? roll_sum / static_cast<double>(roll_n) : std::numeric_limits<double>::quiet_NaN();
  for (std::size_t s = 0; s < step_sum.size(); ++s)
    r.rollout_per_step.push_back(step_n[s] ? step_sum[s] / static_cast<double>(step_n[s])
                                           : std::numeric_limits<double>::quiet_NaN());
  return r;
}

void MetricsLog::append(MetricsRow row) {
  if (!rows_.empty() && row.epoch <= rows_.back().epoch) {
    throw TrainingError("metrics: epoch " + std::to_string(row.epoch) + " does not follow " +
                        std::to_string(rows_.back().epoch));
  }
  auto finite = [](double x) { return std::isfinite(x); };
  bool ok = finite(row.lr) && finite(row.loss) && finite(row.wall_seconds);
  for (const auto& [k, v] : row.one_step) ok = ok && finite(v);
  for (const auto& [k, v] : row.rollout) ok = ok && finite(v);
  if (!ok) throw TrainingError("metrics: non-finite entry at epoch " + std::to_string(row.epoch));
  rows_.push_back(std::move(row));
}

namespace {

std::vector<std::string> dataset_names(const std::vector<MetricsRow>& rows) {
  std::set<std::string> names;
  for (const auto& r : rows) {
    for (const auto& [k, v] : r.one_step) names.insert(k);
    for (const auto& [k, v] : r.rollout) names.insert(k);
  }
  return {names.begin(), names.end()};
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError(IoError::Kind::Open, "cannot write " + path);
  f.precision(17);
  return f;
}

}  // namespace

void MetricsLog::write_csv(const std::string& path) const {
  auto f = open_out(path);
  const auto names = dataset_names(rows_);
  f << "epoch,step,lr,loss,wall_seconds";
  for (const auto& n : names) f << ",onestep_" << n;
  for (const auto& n : names) f << ",rollout_" << n;
  f << "\n";
  for (const auto& r : rows_) {
    f << r.epoch << "," << r.step << "," << r.lr << "," << r.loss << "," << r.wall_seconds;
    for (const auto* m : {&r.one_step, &r.rollout})
      for (const auto& n : names) {
        f << ",";
        if (auto it = m->find(n); it != m->end()) f << it->second;
      }
    f << "\n";
  }
}

void MetricsLog::write_long_csv(const std::string& path) const {
  auto f = open_out(path);
  f << "epoch,step,metric,dataset,value\n";
  for (const auto& r : rows_) {
    f << r.epoch << "," << r.step << ",lr,," << r.lr << "\n";
    f << r.epoch << "," << r.step << ",loss,," << r.loss << "\n";
    for (const auto& [k, v] : r.one_step) f << r.epoch << "," << r.step << ",onestep_l2re," << k << "," << v << "\n";
    for (const auto& [k, v] : r.rollout) f << r.epoch << "," << r.step << ",rollout_l2re," << k << "," << v << "\n";
  }
}

nlohmann::json MetricsLog::to_json() const {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& r : rows_) {
    a.push_back({{"epoch", r.epoch},
                 {"step", r.step},
                 {"lr", r.lr},
                 {"loss", r.loss},
                 {"wall_seconds", r.wall_seconds},
                 {"one_step", r.one_step},
                 {"rollout", r.rollout}});
  }
  return a;
}

MetricsLog MetricsLog::from_json(const nlohmann::json& j) {
  MetricsLog log;
  for (const auto& e : j) {
    MetricsRow r;
    r.epoch = e.at("epoch").get<std::size_t>();
    r.step = e.at("step").get<std::size_t>();
    r.lr = e.at("lr").get<double>();
    r.loss = e.at("loss").get<double>();
    r.wall_seconds = e.at("wall_seconds").get<double>();
    r.one_step = e.at("one_step").get<std::map<std::string, double>>();
    r.rollout = e.at("rollout").get<std::map<std::string, double>>();
    log.append(std::move(r));
  }
  return log;
}

namespace {

BalancedSampler make_sampler(const std::vector<PreparedDataset>& train, const TrainConfig& cfg, std::size_t T_ctx) {
  if (train.empty()) throw ConfigError("train: no training datasets");
  std::vector<BalancedSampler::DatasetShape> shapes;
  for (const auto& d : train) shapes.push_back({d.trajectories.size(), d.T()});
  std::vector<double> w = cfg.weights.empty() ? std::vector<double>(train.size(), 1.0) : cfg.weights;
  return BalancedSampler(shapes, w, cfg.seed, T_ctx, cfg.left_pad);
}

}  // namespace

Trainer::Trainer(DpotModel& model, std::vector<PreparedDataset> train, TrainConfig cfg,
                 std::vector<PreparedDataset> eval)
    : model_(model),
      train_(std::move(train)),
      eval_(std::move(eval)),
      cfg_((cfg.validate(), cfg)),
      sampler_(make_sampler(train_, cfg_, model.config().T_ctx)),
      opt_(AdamWConfig{cfg_.beta1, cfg_.beta2, cfg_.adam_eps, cfg_.weight_decay}) {
  const ModelConfig& mc = model_.config();
  for (const auto& d : train_) {
    for (const auto& tr : d.trajectories) {
      if (tr.H != mc.H || tr.W != mc.H || tr.C != mc.C_in) {
        throw ShapeError("train: dataset '" + d.name + "' has frames [" + std::to_string(tr.H) + "," +
                         std::to_string(tr.W) + "," + std::to_string(tr.C) + "], model expects [" +
                         std::to_string(mc.H) + "," + std::to_string(mc.H) + "," + std::to_string(mc.C_in) + "]");
      }
    }
  }
  for (const auto& [name, t] : model_.parameters()) params_.push_back(t);
}

std::vector<UnifiedSample> Trainer::batch_samples(std::size_t step) const {
  std::vector<UnifiedSample> out;
  out.reserve(cfg_.batch_size);
  for (std::size_t k = 0; k < cfg_.batch_size; ++k) {
    const Draw d = sampler_.draw(static_cast<std::uint64_t>(step * cfg_.batch_size + k));
    out.push_back(make_window(train_[d.dataset].trajectories[d.trajectory], d.t_start, model_.config().T_ctx,
                              d.dataset));
  }
  return out;
}

double Trainer::train_step() {
  const std::size_t step = state_.step;
  std::mt19937_64 rng(hash_combine(cfg_.seed, step, 0x6e6f697365ULL));
  const Tensor loss = ar_denoising_loss(model_, batch_samples(step), cfg_.noise_eps, rng, cfg_.loss);
  const double value = loss.item();
  ++state_.step;
  if (!std::isfinite(value)) {
    ++state_.nan_streak;
    spdlog::warn("train: non-finite loss at step {} (streak {})", step, state_.nan_streak);
    if (state_.nan_streak >= 2) {
      throw TrainingError("training aborted: non-finite loss at consecutive steps " + std::to_string(step - 1) +
                          " and " + std::to_string(step) + " (lr " +
                          std::to_string(one_cycle_lr(step, cfg_.total_steps(), cfg_.peak_lr, cfg_.warmup_fraction)) +
                          ", noise eps " + std::to_string(cfg_.noise_eps) + ")");
    }
    return std::numeric_limits<double>::quiet_NaN();
  }
  state_.nan_streak = 0;
  model_.zero_grad();
  loss.backward();
  clip_grad_norm(params_, cfg_.clip_norm);
  opt_.step(params_, one_cycle_lr(step, cfg_.total_steps(), cfg_.peak_lr, cfg_.warmup_fraction));
  return value;
}

std::map<std::string, EvalResult> Trainer::evaluate_all() const {
  std::map<std::string, EvalResult> out;
  for (const auto& d : eval_) out[d.name] = evaluate(model_, d, cfg_.rollout_steps, cfg_.eval_max_trajectories);
  return out;
}

void Trainer::run_epochs(std::size_t n) {
  for (std::size_t e = 0; e < n && !finished(); ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    double sum = 0.0;
    std::size_t count = 0;
    double lr = 0.0;
    for (std::size_t s = 0; s < cfg_.steps_per_epoch; ++s) {
      lr = one_cycle_lr(state_.step, cfg_.total_steps(), cfg_.peak_lr, cfg_.warmup_fraction);
      const double l = train_step();
      if (std::isfinite(l)) {
        sum += l;
        ++count;
      }
    }
    ++state_.epoch;
    MetricsRow row;
    row.epoch = state_.epoch;
    row.step = state_.step;
    row.lr = lr;
    row.loss = count ? sum / static_cast<double>(count) : 0.0;
    const bool do_eval = !eval_.empty() && ((cfg_.eval_every && state_.epoch % cfg_.eval_every == 0) || finished());
    if (do_eval) {
      for (const auto& [name, r] : evaluate_all()) {
        if (std::isfinite(r.one_step)) row.one_step[name] = r.one_step;
        if (std::isfinite(r.rollout)) row.rollout[name] = r.rollout;
      }
    }
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    spdlog::info("epoch {} step {} lr {:.3e} loss {:.6f}", row.epoch, row.step, row.lr, row.loss);
    state_.metrics.append(std::move(row));
  }
}

void Trainer::run() { run_epochs(cfg_.epochs); }

TrainerState Trainer::state() const {
  TrainerState s = state_;
  s.optimizer = opt_.state();
  return s;
}

void Trainer::restore(TrainerState s) {
  if (s.step != s.epoch * cfg_.steps_per_epoch) throw ConfigError("trainer state: step/epoch inconsistent with config");
  opt_.set_state(s.optimizer);
  state_ = std::move(s);
}

}  // namespace dpot
