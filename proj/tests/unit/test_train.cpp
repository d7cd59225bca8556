#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "dpot/error.hpp"
#include "dpot/pde/solvers.hpp"
#include "dpot/tensor/ops.hpp"
#include "dpot/train/ablation.hpp"
#include "dpot/train/trainer.hpp"

using namespace dpot;

namespace {

ModelConfig tiny_model(std::size_t C_in = 2, std::size_t C_out = 1) {
  ModelConfig c;
  c.H = 16;
  c.P = 4;
  c.T_ctx = 4;
  c.C_in = C_in;
  c.C_out = C_out;
  c.d_z = 16;
  c.heads = 2;
  c.layers = 1;
  c.d_ffn = 16;
  c.groups = 4;
  return c;
}

TrajectoryDataset heat_data(std::size_t n, std::uint64_t seed, std::size_t H = 16) {
  SolverSpec s = default_spec(PdeKind::Heat);
  s.H = H;
  s.nu = 0.2;
  s.n_steps = 120;
  s.save_every = 10;
  return generate_dataset(s, n, seed);
}

TrainConfig small_train() {
  TrainConfig t;
  t.epochs = 4;
  t.steps_per_epoch = 5;
  t.batch_size = 4;
  t.seed = 9;
  t.eval_every = 2;
  t.rollout_steps = 3;
  return t;
}

std::vector<UnifiedSample> two_samples(const PreparedDataset& d, std::size_t T_ctx) {
  return {make_window(d.trajectories[0], 0, T_ctx), make_window(d.trajectories[1], 3, T_ctx)};
}

}  // namespace

TEST(OneCycle, EndpointsAndPeak) {
  const std::size_t total = 1000;
  EXPECT_DOUBLE_EQ(one_cycle_lr(0, total, 1e-3, 0.2), 4e-5);
  EXPECT_DOUBLE_EQ(one_cycle_lr(200, total, 1e-3, 0.2), 1e-3);
  EXPECT_NEAR(one_cycle_lr(total, total, 1e-3, 0.2), 1e-7, 1e-20);
  double best = 0.0;
  std::size_t arg = 0;
  for (std::size_t s = 0; s <= total; ++s) {
    const double lr = one_cycle_lr(s, total, 1e-3, 0.2);
    if (lr > best) {
      best = lr;
      arg = s;
    }
  }
  EXPECT_EQ(best, 1e-3);
  EXPECT_EQ(arg, 200u);
  for (std::size_t s = 200; s < total; ++s)
    EXPECT_GE(one_cycle_lr(s, total, 1e-3, 0.2), one_cycle_lr(s + 1, total, 1e-3, 0.2));
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  std::vector<Tensor> p{Tensor::parameter({1}, {0.0})};
  p[0].zero_grad();
  p[0].node()->grad[0] = 1.0;
  AdamW opt({0.9, 0.9, 1e-8, 0.0});
  ASSERT_TRUE(opt.step(p, 0.1));
  EXPECT_NEAR(p[0].data()[0], -0.1, 1e-6);
}

TEST(AdamW, ZeroGradientAndDecoupledDecay) {
  std::vector<Tensor> p{Tensor::parameter({3}, {1.0, -2.0, 0.5})};
  p[0].zero_grad();
  AdamW plain({0.9, 0.9, 1e-8, 0.0});
  plain.step(p, 0.1);
  EXPECT_EQ(p[0].to_vector(), (std::vector<double>{1.0, -2.0, 0.5}));
  AdamW decay({0.9, 0.9, 1e-8, 0.01});
  decay.step(p, 0.1);
  const auto v = p[0].to_vector();
  EXPECT_DOUBLE_EQ(v[0], 1.0 * (1 - 0.1 * 0.01));
  EXPECT_DOUBLE_EQ(v[1], -2.0 * (1 - 0.1 * 0.01));
}

TEST(AdamW, NonFiniteGradientSkipsStep) {
  std::vector<Tensor> p{Tensor::parameter({2}, {1.0, 2.0})};
  p[0].zero_grad();
  p[0].node()->grad[1] = std::nan("");
  AdamW opt;
  EXPECT_FALSE(opt.step(p, 0.1));
  EXPECT_EQ(opt.skipped(), 1u);
  EXPECT_EQ(opt.steps(), 0u);
  EXPECT_EQ(p[0].to_vector(), (std::vector<double>{1.0, 2.0}));
}

TEST(ClipGradNorm, ScalesToMaxNorm) {
  std::vector<Tensor> p{Tensor::parameter({2}, {0, 0}), Tensor::parameter({1}, {0})};
  for (auto& t : p) t.zero_grad();
  p[0].node()->grad = {3.0, 0.0};
  p[1].node()->grad = {4.0};
  EXPECT_DOUBLE_EQ(clip_grad_norm(p, 1.0), 5.0);
  EXPECT_NEAR(p[0].grad()[0], 0.6, 1e-15);
  EXPECT_NEAR(p[1].grad()[0], 0.8, 1e-15);
  EXPECT_DOUBLE_EQ(clip_grad_norm(p, 2.0), 1.0);
  EXPECT_NEAR(p[1].grad()[0], 0.8, 1e-15);
}

TEST(L2re, HandValues) {
  const std::vector<double> w{1, 1};
  EXPECT_NEAR(*l2re(std::vector<double>{1.1, 0.9}, std::vector<double>{1, 1}, w), 0.1, 1e-12);
  EXPECT_EQ(*l2re(std::vector<double>{1, 2}, std::vector<double>{1, 2}, w), 0.0);
  EXPECT_DOUBLE_EQ(*l2re(std::vector<double>{0, 0}, std::vector<double>{3, 4}, w), 1.0);
  EXPECT_FALSE(l2re(std::vector<double>{1, 1}, std::vector<double>{0, 0}, w).has_value());
  EXPECT_NEAR(*l2re(std::vector<double>{5, 0}, std::vector<double>{1, 1}, std::vector<double>{0, 1}), 1.0, 1e-15);
}

TEST(Loss, OracleAndZeroPrediction) {
  const auto d = prepare_dataset(heat_data(2, 1), 16, 1, "heat");
  const Batch b = make_batch(two_samples(d, 4));
  EXPECT_EQ(batch_loss(b.target, b, LossKind::Relative).item(), 0.0);
  EXPECT_NEAR(batch_loss(Tensor::zeros(b.target.shape()), b, LossKind::Relative).item(), 1.0, 1e-14);
}

TEST(Loss, MatchesHandRolledMaskedRelativeError) {
  const auto d = prepare_dataset(heat_data(2, 2), 16, 1, "heat");
  const DpotModel m(tiny_model(), 3);
  auto samples = two_samples(d, 4);
  const double eps = 1e-2;
  std::mt19937_64 rng(4), rng2(4);
  const double loss = ar_denoising_loss(m, samples, eps, rng).item();

  double expect = 0.0;
  for (auto s : samples) {
    inject_noise(s.context, s.T_ctx, s.H, s.W, s.C, s.channel_valid, eps, rng2);
    const auto pred = m.forward(Tensor::from_vector({1, 4, 16, 16, 2}, s.context)).to_vector();
    double num = 0.0, den = 0.0;
    for (std::size_t p = 0; p < 256; ++p) {
      if (s.target[p * 2 + 1] == 0.0) continue;
      const double y = s.target[p * 2];
      num += (pred[p] - y) * (pred[p] - y);
      den += y * y;
    }
    expect += num / den / 2.0;
  }
  EXPECT_NEAR(loss, expect, 1e-10);
}

TEST(Loss, ZeroNoiseEqualsNoInjector) {
  const auto d = prepare_dataset(heat_data(2, 5), 16, 1, "heat");
  const DpotModel m(tiny_model(), 6);
  std::mt19937_64 rng(7);
  const auto before = rng;
  const double with = ar_denoising_loss(m, two_samples(d, 4), 0.0, rng).item();
  const Batch b = make_batch(two_samples(d, 4));
  EXPECT_EQ(with, batch_loss(m.forward(b.context), b, LossKind::Relative).item());
  EXPECT_EQ(rng, before);
}

TEST(Rollout, OneStepEqualsForward) {
  const auto d = prepare_dataset(heat_data(1, 8), 16, 1, "heat");
  const DpotModel m(tiny_model(), 9);
  const Trajectory& tr = d.trajectories[0];
  const std::span<const double> ctx(tr.values.data(), 4 * tr.frame_size());
  const auto r = rollout(m, ctx, 16, 16, 2, tr.channel_valid, 1);
  ASSERT_EQ(r.completed, 1u);
  const auto f = m.forward(Tensor::from_vector({1, 4, 16, 16, 2}, {ctx.begin(), ctx.end()})).to_vector();
  for (std::size_t p = 0; p < 256; ++p) {
    EXPECT_EQ(r.frames[p * 2], f[p]);
    EXPECT_EQ(r.frames[p * 2 + 1], 1.0);
  }
}

TEST(Rollout, ConstantPreservingModelAndLength) {
  DpotModel m(tiny_model(), 10);
  for (const auto& [name, t] : m.parameters()) {
    auto v = m.param(name).mutable_data();
    std::fill(v.begin(), v.end(), 0.0);
  }
  auto bias = m.param("decoder.bias").mutable_data();
  std::fill(bias.begin(), bias.end(), 0.75);
  std::vector<double> ctx(4 * 256 * 2);
  for (std::size_t p = 0; p < 4 * 256; ++p) {
    ctx[p * 2] = 0.75;
    ctx[p * 2 + 1] = 1.0;
  }
  const std::vector<std::uint8_t> valid{1, 0};
  const auto r = rollout(m, ctx, 16, 16, 2, valid, 20);
  EXPECT_EQ(r.completed, 20u);
  EXPECT_EQ(r.frames.size(), 20u * 256 * 2);
  for (std::size_t i = 0; i < r.frames.size(); i += 2) EXPECT_EQ(r.frames[i], 0.75);
}

TEST(Evaluate, CountsWindowsAndRolloutSteps) {
  const auto d = prepare_dataset(heat_data(3, 11), 16, 1, "heat");
  const DpotModel m(tiny_model(), 12);
  const EvalResult r = evaluate(m, d, 5);
  EXPECT_EQ(r.samples, 3u * (13 - 4));
  EXPECT_EQ(r.rollout_per_step.size(), 5u);
  EXPECT_TRUE(std::isfinite(r.one_step));
  EXPECT_TRUE(std::isfinite(r.rollout));
  EXPECT_GT(r.one_step, 0.0);
}

TEST(Metrics, RejectsBadRowsAndWritesCsv) {
  MetricsLog log;
  MetricsRow r;
  r.epoch = 1;
  r.loss = 0.5;
  r.one_step["heat"] = 0.1;
  log.append(r);
  EXPECT_THROW(log.append(r), TrainingError);
  r.epoch = 2;
  r.loss = std::nan("");
  EXPECT_THROW(log.append(r), TrainingError);
  r.loss = 0.25;
  log.append(r);
  const auto dir = std::filesystem::temp_directory_path() / "dpot_metrics_test";
  std::filesystem::create_directories(dir);
  log.write_csv((dir / "m.csv").string());
  log.write_long_csv((dir / "l.csv").string());
  std::ifstream f(dir / "m.csv");
  std::string header;
  std::getline(f, header);
  EXPECT_EQ(header, "epoch,step,lr,loss,wall_seconds,onestep_heat,rollout_heat");
  const MetricsLog back = MetricsLog::from_json(log.to_json());
  EXPECT_EQ(back.rows().size(), 2u);
  EXPECT_EQ(back.back().loss, 0.25);
}

TEST(TrainConfigTest, ValidationAndJson) {
  TrainConfig t;
  t.warmup_fraction = 1.0;
  EXPECT_THROW(t.validate(), ConfigError);
  t = TrainConfig{};
  t.noise_eps = -1;
  EXPECT_THROW(t.validate(), ConfigError);
  t = small_train();
  t.loss = LossKind::Mse;
  EXPECT_EQ(train_config_to_json(train_config_from_json(train_config_to_json(t))), train_config_to_json(t));
}

namespace {

std::vector<std::pair<std::size_t, double>> losses(const MetricsLog& log) {
  std::vector<std::pair<std::size_t, double>> out;
  for (const auto& r : log.rows()) out.emplace_back(r.epoch, r.loss);
  return out;
}

}  // namespace

TEST(Trainer, DeterministicAndResumable) {
  const auto raw = heat_data(6, 13);
  const auto d = prepare_dataset(raw, 16, 1, "heat");
  const TrainConfig tc = small_train();

  DpotModel a(tiny_model(), 1);
  Trainer ta(a, {d}, tc, {d});
  ta.run();

  DpotModel b(tiny_model(), 1);
  Trainer tb(b, {d}, tc, {d});
  tb.run_epochs(2);
  const TrainerState mid = tb.state();
  const StateDict weights = b.state_dict();

  DpotModel c(tiny_model(), 99);
  c.load_state_dict(weights);
  Trainer tcn(c, {d}, tc, {d});
  tcn.restore(mid);
  tcn.run();

  EXPECT_EQ(losses(ta.metrics()), losses(tcn.metrics()));
  EXPECT_EQ(ta.metrics().back().one_step, tcn.metrics().back().one_step);
  EXPECT_EQ(ta.metrics().back().rollout, tcn.metrics().back().rollout);
  const auto sa = a.state_dict(), sc = c.state_dict();
  for (std::size_t i = 0; i < sa.size(); ++i) EXPECT_EQ(sa[i].values, sc[i].values) << sa[i].name;
}

TEST(Trainer, SeedsDifferButStayComparable) {
  const auto d = prepare_dataset(heat_data(6, 14), 16, 1, "heat");
  TrainConfig tc = small_train();
  tc.epochs = 6;
  double final[2];
  for (int k = 0; k < 2; ++k) {
    tc.seed = 100 + k;
    DpotModel m(tiny_model(), 100 + k);
    Trainer t(m, {d}, tc);
    t.run();
    final[k] = t.metrics().back().loss;
    EXPECT_TRUE(std::isfinite(final[k]));
  }
  EXPECT_NE(final[0], final[1]);
  EXPECT_LE(std::max(final[0], final[1]), 2.0 * std::min(final[0], final[1]));
}

TEST(Trainer, LossDropsOnHeat) {
  const auto d = prepare_dataset(heat_data(20, 15), 16, 1, "heat");
  TrainConfig tc = small_train();
  tc.epochs = 20;
  tc.steps_per_epoch = 10;
  tc.peak_lr = 3e-3;
  DpotModel m(tiny_model(), 16);
  Trainer t(m, {d}, tc);
  t.run();
  EXPECT_LT(t.metrics().back().loss, t.metrics().rows().front().loss / 10.0);
}

TEST(Trainer, RolloutErrorGrowsForUndertrainedModel) {
  const auto train = prepare_dataset(heat_data(10, 19), 16, 1, "heat");
  const auto held = prepare_dataset(heat_data(10, 20), 16, 1, "heat", train.stats);
  TrainConfig tc = small_train();
  tc.epochs = 3;
  std::vector<double> mean(6, 0.0);
  for (int seed = 0; seed < 5; ++seed) {
    tc.seed = 200 + seed;
    DpotModel m(tiny_model(), 200 + seed);
    Trainer t(m, {train}, tc);
    t.run();
    const auto r = evaluate(m, held, 6);
    for (std::size_t s = 0; s < 6; ++s) mean[s] += r.rollout_per_step[s] / 5.0;
  }
  for (std::size_t s = 1; s < 6; ++s) EXPECT_GE(mean[s], mean[s - 1]) << "step " << s;
}

TEST(Trainer, RejectsMismatchedData) {
  const auto d = prepare_dataset(heat_data(2, 17), 16, 2, "heat");
  DpotModel m(tiny_model(), 18);
  EXPECT_THROW(Trainer(m, {d}, small_train()), ShapeError);
}

namespace {

AblationSetup small_setup() {
  AblationSetup s;
  s.model = tiny_model();
  s.train = small_train();
  s.train.epochs = 1;
  s.train.steps_per_epoch = 2;
  s.model_seed = 21;
  s.train_sets = {prepare_dataset(heat_data(4, 22), 16, 1, "heat")};
  s.eval_sets = {prepare_dataset(heat_data(2, 23), 16, 1, "heat", s.train_sets[0].stats)};
  s.rollout_steps = 3;
  return s;
}

}  // namespace

TEST(Ablation, NoiseAndHeadGridsGiveOneTrainedRowEach) {
  const auto setup = small_setup();
  const auto noise = run_ablation(AblationKind::Noise, {0, 5e-5, 5e-4, 5e-3, 5e-2}, setup);
  ASSERT_EQ(noise.size(), 5u);
  for (const auto& r : noise) {
    EXPECT_TRUE(r.trained);
    EXPECT_TRUE(std::isfinite(r.one_step.at("heat")));
  }
  const auto heads = run_ablation(AblationKind::Heads, {1, 4, 8, 16}, setup);
  ASSERT_EQ(heads.size(), 4u);
  EXPECT_THROW(run_ablation(AblationKind::Heads, {3}, setup), ConfigError);
  const auto patch = run_ablation(AblationKind::Patch, {2, 4}, setup);
  EXPECT_EQ(patch.size(), 2u);
}

TEST(Ablation, ResolutionGridEvaluatesWithoutRetraining) {
  const auto setup = small_setup();
  const auto rows = run_ablation(AblationKind::Resolution, {16, 24, 32}, setup);
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& r : rows) {
    EXPECT_FALSE(r.trained);
    EXPECT_EQ(r.final_loss, rows[0].final_loss);
    EXPECT_TRUE(std::isfinite(r.rollout.at("heat")));
  }
  const auto path = (std::filesystem::temp_directory_path() / "dpot_ablation.csv").string();
  write_ablation_csv(rows, path);
  std::ifstream f(path);
  std::string line;
  std::size_t n = 0;
  while (std::getline(f, line)) ++n;
  EXPECT_EQ(n, 4u);
  EXPECT_EQ(parse_ablation("noise"), AblationKind::Noise);
  EXPECT_THROW(parse_ablation("depth"), ConfigError);
}
