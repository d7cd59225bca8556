#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "dpot/data/pipeline.hpp"
#include "dpot/error.hpp"
#include "dpot/pde/solvers.hpp"
#include "dpot/tensor/resample.hpp"

using namespace dpot;

namespace {

const double kTwoPi = 2.0 * std::numbers::pi;

Trajectory field_traj(std::size_t H, std::size_t T, std::size_t C, double (*f)(double, double, std::size_t)) {
  Trajectory tr(T, H, H, C);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < H; ++j)
        for (std::size_t c = 0; c < C; ++c) tr.at(t, i, j, c) = f(kTwoPi * i / H, kTwoPi * j / H, t + c);
  tr.channels.assign(C, "u");
  return tr;
}

Trajectory indexed_traj(std::size_t T, std::size_t H = 4) {
  Trajectory tr(T, H, H, 1);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t p = 0; p < H * H; ++p) tr.frame(t)[p] = static_cast<double>(t);
  return tr;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Unify, BandLimitedRoundTripIsIdentity) {
  auto tr = field_traj(32, 2, 2, [](double x, double y, std::size_t s) {
    return std::sin(x + 2 * y) + 0.3 * std::cos(5 * x) * std::sin(7 * y + s) + 0.1 * std::cos(15 * x);
  });
  auto up = unify_resolution(tr, 64);
  auto back = unify_resolution(up, 32);
  EXPECT_LE(max_abs_diff(back.values, tr.values), 1e-8);

  // Nyquist content survives the split/fold pair as well.
  std::vector<double> alt(16 * 16);
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t j = 0; j < 16; ++j) alt[i * 16 + j] = ((i + j) % 2 ? -1.0 : 1.0) + 0.2 * std::sin(kTwoPi * j / 16);
  auto again = fourier_resample(fourier_resample(alt, 16, 16, 1, 48, 48), 48, 48, 1, 16, 16);
  EXPECT_LE(max_abs_diff(again, alt), 1e-10);
}

TEST(Unify, ConstantStaysConstant) {
  auto tr = field_traj(32, 1, 1, [](double, double, std::size_t) { return 2.5; });
  for (std::size_t target : {4u, 16u, 64u, 128u}) {
    auto r = unify_resolution(tr, target);
    for (double v : r.values) ASSERT_NEAR(v, 2.5, 1e-12) << target;
  }
  auto r48 = fourier_resample(tr.values, 32, 32, 1, 48, 48);
  for (double v : r48) ASSERT_NEAR(v, 2.5, 1e-12);
}

TEST(Unify, UpscaleMatchesAnalyticSamples) {
  auto tr = field_traj(32, 1, 1, [](double x, double y, std::size_t) { return std::sin(3 * x) * std::cos(2 * y); });
  auto up = unify_resolution(tr, 64);
  auto exact = field_traj(64, 1, 1, [](double x, double y, std::size_t) { return std::sin(3 * x) * std::cos(2 * y); });
  EXPECT_LE(max_abs_diff(up.values, exact.values), 1e-8);
}

TEST(Unify, RejectsNonPowerOfTwoAndResamplesMask) {
  auto tr = field_traj(32, 1, 1, [](double x, double, std::size_t) { return x; });
  EXPECT_THROW(unify_resolution(tr, 48), ConfigError);
  EXPECT_THROW(unify_resolution(tr, 2), ConfigError);
  for (std::size_t i = 0; i < 32; ++i)
    for (std::size_t j = 0; j < 32; ++j) tr.mask[i * 32 + j] = (i < 16 && j >= 8) ? 1 : 0;
  auto up = unify_resolution(tr, 64);
  auto down = unify_resolution(tr, 16);
  for (std::size_t i = 0; i < 64; ++i)
    for (std::size_t j = 0; j < 64; ++j) ASSERT_EQ(up.mask[i * 64 + j], (i < 32 && j >= 16) ? 1 : 0);
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t j = 0; j < 16; ++j) ASSERT_EQ(down.mask[i * 16 + j], (i < 8 && j >= 4) ? 1 : 0);
}

TEST(Pad, AppendsFillThenMask) {
  auto tr = indexed_traj(3);
  auto p = pad_channels_and_mask(tr, 2, 1.0);
  ASSERT_EQ(p.C, 3u);
  EXPECT_EQ(p.channel_valid, (std::vector<std::uint8_t>{1, 0, 0}));
  EXPECT_EQ(p.channels.back(), "mask");
  for (std::size_t t = 0; t < 3; ++t) {
    for (std::size_t q = 0; q < 16; ++q) {
      EXPECT_EQ(p.frame(t)[q * 3 + 0], static_cast<double>(t));
      EXPECT_EQ(p.frame(t)[q * 3 + 1], 1.0);
      EXPECT_EQ(p.frame(t)[q * 3 + 2], 1.0);  // full-domain mask
    }
  }
  auto same = pad_channels_and_mask(tr, 1, 0.0);
  EXPECT_EQ(same.C, 2u);
  EXPECT_EQ(same.channel_valid, (std::vector<std::uint8_t>{1, 0}));
  auto two = tr;
  two.C = 2;
  two.values.resize(two.values.size() * 2);
  EXPECT_THROW(pad_channels_and_mask(two, 1, 1.0), ConfigError);
}

TEST(Pad, MaskChannelCarriesSubdomain) {
  auto spec = default_spec(PdeKind::Heat);
  spec.n_steps = 40;
  spec.mask = MaskRect{0, 16, 0, 32};
  auto tr = generate_trajectory(spec, 1);
  auto p = pad_channels_and_mask(tr, 1, 1.0);
  for (std::size_t q = 0; q < 32 * 32; ++q) EXPECT_EQ(p.frame(0)[q * 2 + 1], q < 16 * 32 ? 1.0 : 0.0);
}

TEST(Pad, CommutesWithUnify) {
  auto tr = generate_trajectory(default_spec(PdeKind::DiffusionReaction), 3);
  auto a = unify_resolution(pad_channels_and_mask(tr, 3, 1.0), 64);
  auto b = pad_channels_and_mask(unify_resolution(tr, 64), 3, 1.0);
  EXPECT_LE(max_abs_diff(a.values, b.values), 1e-6);
}

TEST(Window, ContextAndTargetFrames) {
  auto tr = indexed_traj(21);
  auto w = make_window(tr, 0, 10);
  for (std::size_t k = 0; k < 10; ++k) EXPECT_EQ(w.context[k * 16], static_cast<double>(k));
  EXPECT_EQ(w.target[0], 10.0);

  auto l = make_window(tr, -3, 10);
  const double expect[10] = {0, 0, 0, 0, 1, 2, 3, 4, 5, 6};
  for (std::size_t k = 0; k < 10; ++k) EXPECT_EQ(l.context[k * 16], expect[k]);
  EXPECT_EQ(l.target[0], 7.0);

  EXPECT_EQ(window_count(21, 10, true), 20u);
  EXPECT_EQ(window_count(21, 10, false), 11u);
  std::size_t n = 0;
  for (long s = -20; s <= 20; ++s) {
    try {
      make_window(tr, s, 10);
      ++n;
    } catch (const ShapeError&) {
    }
  }
  EXPECT_EQ(n, 20u);
  EXPECT_THROW(make_window(tr, 11, 10), ShapeError);
}

TEST(Sampler, FrequenciesMatchWeights) {
  const std::size_t n = 100000;
  for (auto w : {std::vector<double>{1, 1}, std::vector<double>{3, 1}}) {
    BalancedSampler s({{100, 21}, {10, 21}}, w, 7, 10);
    std::size_t first = 0;
    for (std::size_t i = 0; i < n; ++i) first += s.next().dataset == 0;
    const double q = w[0] / (w[0] + w[1]);
    EXPECT_DOUBLE_EQ(s.probabilities()[0], q);
    const double bound = 3.0 * std::sqrt(q * (1 - q) / n);
    EXPECT_LE(std::abs(static_cast<double>(first) / n - q), bound);
    EXPECT_LE(std::abs(static_cast<double>(first) / n - q), 0.01);
  }
  BalancedSampler one({{5, 21}}, {2.0}, 1, 10);
  for (std::size_t i = 0; i < 1000; ++i) ASSERT_EQ(one.draw(i).dataset, 0u);
}

TEST(Sampler, UniformWithinDatasetChiSquare) {
  BalancedSampler s({{100, 21}, {10, 21}}, {1, 1}, 99, 10);
  std::vector<double> counts(100, 0.0);
  std::set<long> starts;
  double total = 0.0;
  for (std::size_t i = 0; i < 200000; ++i) {
    Draw d = s.draw(i);
    if (d.dataset != 0) continue;
    counts[d.trajectory] += 1.0;
    total += 1.0;
    starts.insert(d.t_start);
    ASSERT_GE(d.t_start, -9);
    ASSERT_LE(d.t_start, 10);
  }
  double chi2 = 0.0;
  const double e = total / 100.0;
  for (double c : counts) chi2 += (c - e) * (c - e) / e;
  // 99th percentile of chi-square with 99 degrees of freedom
  EXPECT_LT(chi2, 134.642);
  EXPECT_EQ(starts.size(), 20u);
}

TEST(Sampler, DeterministicResumableAndStrided) {
  BalancedSampler a({{7, 15}, {3, 15}, {9, 15}}, {1, 2, 3}, 5, 4);
  BalancedSampler b({{7, 15}, {3, 15}, {9, 15}}, {1, 2, 3}, 5, 4);
  std::vector<Draw> seq;
  for (int i = 0; i < 300; ++i) seq.push_back(a.next());
  b.seek(150);
  for (int i = 150; i < 300; ++i) {
    Draw d = b.next();
    ASSERT_EQ(d.dataset, seq[i].dataset);
    ASSERT_EQ(d.trajectory, seq[i].trajectory);
    ASSERT_EQ(d.t_start, seq[i].t_start);
  }
  const std::size_t W = 3;
  for (std::size_t w = 0; w < W; ++w) {
    for (std::size_t k = 0; w + k * W < 300; ++k) ASSERT_EQ(a.draw(w + k * W).trajectory, seq[w + k * W].trajectory);
  }
  EXPECT_THROW(BalancedSampler({{0, 21}}, {1.0}, 1, 10), ConfigError);
  EXPECT_THROW(BalancedSampler({{3, 21}}, {0.0}, 1, 10), ConfigError);
  EXPECT_THROW(BalancedSampler({{3, 21}}, {1.0, 2.0}, 1, 10), ConfigError);
}

TEST(Noise, ZeroEpsIsIdentityAndStatisticsMatch) {
  const std::size_t T = 10, H = 32, W = 32, C = 3;  // u, pad, mask
  std::vector<double> ctx(T * H * W * C, 1.0);
  const std::vector<std::uint8_t> valid{1, 0, 0};
  auto before = ctx;
  std::mt19937_64 rng(1);
  inject_noise(ctx, T, H, W, C, valid, 0.0, rng);
  EXPECT_EQ(ctx, before);
  EXPECT_EQ(rng(), std::mt19937_64(1)());

  // 10 x 100 x 100 = 1e5 noised entries of an all-ones field
  const std::size_t h2 = 100;
  std::vector<double> big(T * h2 * h2 * C, 1.0);
  inject_noise(big, T, h2, h2, C, valid, 5e-3, rng);
  double s = 0.0, s2 = 0.0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < T * h2 * h2; ++p) {
    const double d = big[p * C] - 1.0;
    s += d;
    s2 += d * d;
    ++n;
    ASSERT_EQ(big[p * C + 1], 1.0);
    ASSERT_EQ(big[p * C + 2], 1.0);
  }
  const double sd = std::sqrt(s2 / n - (s / n) * (s / n));
  EXPECT_NEAR(sd, 5e-3, 5e-3 * 0.05);
}

TEST(Noise, OnlyMaskInteriorReceivesNoise) {
  const std::size_t T = 2, H = 4, W = 4, C = 2;
  std::vector<double> ctx(T * H * W * C, 3.0);
  for (std::size_t p = 0; p < T * H * W; ++p) ctx[p * C + 1] = (p % 2) ? 1.0 : 0.0;
  auto before = ctx;
  std::mt19937_64 rng(4);
  inject_noise(ctx, T, H, W, C, std::vector<std::uint8_t>{1, 0}, 0.1, rng);
  for (std::size_t p = 0; p < T * H * W; ++p) {
    EXPECT_EQ(ctx[p * C + 1], before[p * C + 1]);
    if (p % 2 == 0) EXPECT_EQ(ctx[p * C], 3.0);
    else EXPECT_NE(ctx[p * C], 3.0);
  }
}

TEST(Standardize, MomentsRoundTripAndDegenerateChannel) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(5.0, 2.0);
  Trajectory tr(4, 8, 8, 2);
  for (std::size_t i = 0; i < tr.values.size(); i += 2) {
    tr.values[i] = g(rng);
    tr.values[i + 1] = 7.0;
  }
  TrajectoryDataset ds;
  ds.trajectories.push_back(tr);
  const ChannelStats st = ds.compute_stats();
  auto z = tr;
  standardize(z, st);
  double m = 0.0, v = 0.0;
  const std::size_t n = tr.values.size() / 2;
  for (std::size_t i = 0; i < tr.values.size(); i += 2) m += z.values[i];
  m /= n;
  for (std::size_t i = 0; i < tr.values.size(); i += 2) v += (z.values[i] - m) * (z.values[i] - m);
  EXPECT_NEAR(m, 0.0, 1e-6);
  EXPECT_NEAR(std::sqrt(v / n), 1.0, 1e-6);
  for (std::size_t i = 1; i < tr.values.size(); i += 2) ASSERT_EQ(z.values[i], 7.0);
  destandardize(z, st);
  EXPECT_LE(max_abs_diff(z.values, tr.values), 1e-6);
}
