#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <random>

#include "dpot/error.hpp"
#include "dpot/model/dpot.hpp"
#include "dpot/tensor/grad_check.hpp"
#include "dpot/tensor/ops.hpp"
#include "dpot/tensor/resample.hpp"

using namespace dpot;

namespace {

std::vector<double> vals(const Tensor& t) { return t.to_vector(); }

std::vector<double> randn(std::size_t n, std::mt19937_64& rng, double s = 1.0) {
  std::normal_distribution<double> g(0.0, s);
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

void set(DpotModel& m, const std::string& name, const std::vector<double>& v) {
  auto d = m.param(name).mutable_data();
  ASSERT_EQ(d.size(), v.size()) << name;
  std::copy(v.begin(), v.end(), d.begin());
}

void fill(DpotModel& m, const std::string& name, double x) {
  auto d = m.param(name).mutable_data();
  std::fill(d.begin(), d.end(), x);
}

void zero_all(DpotModel& m) {
  for (const auto& [name, t] : m.parameters()) fill(m, name, 0.0);
}

ModelConfig small_config() {
  ModelConfig c;
  c.H = 8;
  c.P = 2;
  c.T_ctx = 3;
  c.C_in = 2;
  c.C_out = 1;
  c.d_z = 8;
  c.heads = 2;
  c.layers = 2;
  c.d_ffn = 8;
  c.groups = 4;
  return c;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  EXPECT_EQ(a.size(), b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(ModelConfig, ValidationRejectsBadSplits) {
  ModelConfig c = ModelConfig::nano();
  c.P = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig::nano();
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig::nano();
  c.groups = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_NO_THROW(ModelConfig::nano().validate());
}

TEST(ModelConfig, JsonRoundTrip) {
  const ModelConfig c = small_config();
  EXPECT_EQ(config_str(config_from_json(config_to_json(c))), config_str(c));
}

TEST(DpotModel, ParameterCountNano) {
  const DpotModel m(ModelConfig::nano(3, 2));
  // 9 + 3072 + 64 + 40960 + 64 + 2 * 10624 + 2048 + 32
  EXPECT_EQ(m.num_parameters(), 67497u);
  EXPECT_EQ(parameter_count(m.config()), 67497u);
}

TEST(DpotModel, ParameterCountTiny) {
  const DpotModel m(ModelConfig::tiny(3, 2));
  // 9 + 98304 + 512 + 2621440 + 512 + 4 * 658432 + 65536 + 128
  EXPECT_EQ(m.num_parameters(), 5420169u);
}

TEST(DpotModel, InitializationLaws) {
  const DpotModel m(ModelConfig::nano(), 7);
  for (double x : vals(m.param("decoder.bias"))) EXPECT_EQ(x, 0.0);
  for (double x : vals(m.param("blocks.0.norm.weight"))) EXPECT_EQ(x, 1.0);
  const double bound = 1.0 / std::sqrt(64.0);
  for (double x : vals(m.param("blocks.1.ffn.w1"))) EXPECT_LE(std::abs(x), bound);
  const auto g = vals(m.param("time.gamma"));
  double s2 = 0.0;
  for (double x : g) s2 += x * x;
  EXPECT_NEAR(s2 / static_cast<double>(g.size()), 1.0, 0.5);
  const DpotModel a(ModelConfig::nano(), 7), b(ModelConfig::nano(), 8);
  EXPECT_EQ(vals(a.param("time.weight")), vals(m.param("time.weight")));
  EXPECT_NE(vals(a.param("time.weight")), vals(b.param("time.weight")));
}

TEST(PositionalEncoding, ZeroAndCoordinateRows) {
  DpotModel m(small_config());
  fill(m, "embed.pos_weight", 0.0);
  for (double x : vals(m.positional_encoding())) EXPECT_EQ(x, 0.0);

  set(m, "embed.pos_weight", {1, 1, 0, 0, 0, 0});
  const auto p = vals(m.positional_encoding());
  const std::size_t H = 8, C = 2;
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < H; ++j)
        for (std::size_t c = 0; c < C; ++c)
          EXPECT_DOUBLE_EQ(p[((t * H + i) * H + j) * C + c], static_cast<double>(i) / H);
}

TEST(PositionalEncoding, MatchesLoopOracle) {
  DpotModel m(small_config(), 3);
  const auto w = vals(m.param("embed.pos_weight"));
  const auto p = vals(m.positional_encoding());
  const std::size_t T = 3, H = 8, C = 2;
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < H; ++j) {
        const double xyz[3] = {static_cast<double>(i) / H, static_cast<double>(j) / H,
                               static_cast<double>(t + 1) / T};
        for (std::size_t c = 0; c < C; ++c) {
          double e = 0.0;
          for (std::size_t k = 0; k < 3; ++k) e += xyz[k] * w[k * C + c];
          EXPECT_NEAR(p[((t * H + i) * H + j) * C + c], e, 1e-14);
        }
      }
}

TEST(PatchEmbed, ShapeAndBias) {
  DpotModel m(ModelConfig::nano());
  std::mt19937_64 rng(1);
  const Tensor frame = Tensor::from_vector({32, 32, 3}, randn(32 * 32 * 3, rng));
  EXPECT_EQ(m.patch_embed(frame).shape(), (Shape{8, 8, 64}));

  fill(m, "embed.patch_weight", 0.0);
  std::vector<double> b(64);
  for (std::size_t k = 0; k < 64; ++k) b[k] = 0.5 * static_cast<double>(k) - 3.0;
  set(m, "embed.patch_bias", b);
  const auto z = vals(m.patch_embed(frame));
  for (std::size_t tok = 0; tok < 64; ++tok)
    for (std::size_t k = 0; k < 64; ++k) EXPECT_EQ(z[tok * 64 + k], b[k]);

  EXPECT_THROW(m.patch_embed(Tensor::zeros({30, 32, 3})), ShapeError);
}

TEST(PatchEmbed, MatchesPatchExtractionOracle) {
  const ModelConfig c = small_config();
  DpotModel m(c, 5);
  std::mt19937_64 rng(2);
  const auto x = randn(8 * 8 * 2, rng);
  const auto z = vals(m.patch_embed(Tensor::from_vector({8, 8, 2}, x)));
  const auto W = vals(m.param("embed.patch_weight"));
  const auto b = vals(m.param("embed.patch_bias"));
  const std::size_t P = c.P, C = c.C_in, d = c.d_z, Hp = 4;
  for (std::size_t pi = 0; pi < Hp; ++pi)
    for (std::size_t pj = 0; pj < Hp; ++pj)
      for (std::size_t o = 0; o < d; ++o) {
        double e = b[o];
        for (std::size_t a = 0; a < P; ++a)
          for (std::size_t bb = 0; bb < P; ++bb)
            for (std::size_t ch = 0; ch < C; ++ch) {
              const double v = x[((pi * P + a) * 8 + pj * P + bb) * C + ch];
              e += v * W[((a * P + bb) * C + ch) * d + o];
            }
        EXPECT_NEAR(z[(pi * Hp + pj) * d + o], e, 1e-10);
      }
}

TEST(TemporalAggregate, MeanWhenGammaZeroAndScaledIdentity) {
  const ModelConfig c = small_config();
  DpotModel m(c);
  const std::size_t T = c.T_ctx, d = c.d_z, n = 4 * 4;
  fill(m, "time.gamma", 0.0);
  std::vector<double> W(T * d * d, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t k = 0; k < d; ++k) W[(t * d + k) * d + k] = 1.0 / static_cast<double>(T);
  set(m, "time.weight", W);
  std::mt19937_64 rng(3);
  const auto z = randn(2 * T * n * d, rng);
  const auto out = vals(m.temporal_aggregate(Tensor::from_vector({2, T, 4, 4, d}, z)));
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t p = 0; p < n * d; ++p) {
      double e = 0.0;
      for (std::size_t t = 0; t < T; ++t) e += z[(b * T + t) * n * d + p];
      EXPECT_NEAR(out[b * n * d + p], e / static_cast<double>(T), 1e-14);
    }
}

TEST(TemporalAggregate, SingleFrameIsLinearMap) {
  ModelConfig c = small_config();
  c.T_ctx = 1;
  DpotModel m(c, 4);
  fill(m, "time.gamma", 0.0);
  std::mt19937_64 rng(4);
  const auto z = randn(16 * 8, rng);
  const auto W = vals(m.param("time.weight"));
  const auto out = vals(m.temporal_aggregate(Tensor::from_vector({1, 1, 4, 4, 8}, z)));
  for (std::size_t p = 0; p < 16; ++p)
    for (std::size_t o = 0; o < 8; ++o) {
      double e = 0.0;
      for (std::size_t k = 0; k < 8; ++k) e += z[p * 8 + k] * W[k * 8 + o];
      EXPECT_NEAR(out[p * 8 + o], e, 1e-13);
    }
}

TEST(TemporalAggregate, MatchesComplexArithmeticOracle) {
  const ModelConfig c = small_config();
  DpotModel m(c, 9);
  const std::size_t T = c.T_ctx, d = c.d_z, n = 16;
  std::mt19937_64 rng(5);
  const auto z = randn(T * n * d, rng);
  const auto W = vals(m.param("time.weight"));
  const auto g = vals(m.param("time.gamma"));
  const auto out = vals(m.temporal_aggregate(Tensor::from_vector({1, T, 4, 4, d}, z)));
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t o = 0; o < d; ++o) {
      std::complex<double> acc = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        const double tn = static_cast<double>(t + 1) / static_cast<double>(T);
        for (std::size_t k = 0; k < d; ++k)
          acc += W[(t * d + k) * d + o] * z[(t * n + p) * d + k] * std::exp(std::complex<double>(0.0, -g[k] * tn));
      }
      EXPECT_NEAR(out[p * d + o], acc.real(), 1e-10);
    }
  EXPECT_THROW(m.temporal_aggregate(Tensor::zeros({1, T + 1, 4, 4, d})), ShapeError);
}

TEST(FourierAttention, ZeroMixerContributesNothing) {
  const ModelConfig c = small_config();
  DpotModel m(c, 11);
  for (const char* k : {"mixer.w1", "mixer.b1", "mixer.w2", "mixer.b2"}) fill(m, std::string("blocks.0.") + k, 0.0);
  std::mt19937_64 rng(6);
  const Tensor z = Tensor::from_vector({2, 4, 4, 8}, randn(2 * 16 * 8, rng));
  for (double x : vals(m.mixer(0, z))) EXPECT_NEAR(x, 0.0, 1e-15);

  // The layer then equals group norm followed by the FFN residual.
  const Tensor x = reshape(group_norm(reshape(z, {2, 16, 8}), c.groups, m.param("blocks.0.norm.weight"),
                                      m.param("blocks.0.norm.bias")),
                           {2, 4, 4, 8});
  Tensor f = gelu(add(matmul(x, m.param("blocks.0.ffn.w1")), m.param("blocks.0.ffn.b1")));
  f = add(matmul(f, m.param("blocks.0.ffn.w2")), m.param("blocks.0.ffn.b2"));
  EXPECT_LE(max_abs_diff(vals(m.fourier_attention_layer(0, z)), vals(add(x, f))), 1e-12);
}

TEST(FourierAttention, ZeroModeOnlyMixingIsMeanPooling) {
  const ModelConfig c = small_config();
  const DpotModel m(c, 12);
  std::mt19937_64 rng(7);
  const std::size_t B = 2, n = 16, d = 8;
  const auto z = randn(B * n * d, rng, 3.0);
  MixerOptions opt;
  opt.identity_map = true;
  opt.mode_mask.assign(n, 0.0);
  opt.mode_mask[0] = 1.0;
  const auto out = vals(m.mixer(0, Tensor::from_vector({B, 4, 4, d}, z), &opt));
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t k = 0; k < d; ++k) {
      double mean = 0.0;
      for (std::size_t p = 0; p < n; ++p) mean += z[(b * n + p) * d + k];
      mean /= static_cast<double>(n);
      for (std::size_t p = 0; p < n; ++p) EXPECT_NEAR(out[(b * n + p) * d + k], mean, 1e-10);
    }
}

TEST(FourierAttention, HeadsEqualBlockDiagonalSingleHead) {
  ModelConfig c2 = small_config();
  c2.heads = 2;
  ModelConfig c1 = c2;
  c1.heads = 1;
  DpotModel m2(c2, 13), m1(c1, 14);
  const std::size_t d = c2.d_z, dh = d / 2;
  for (const char* w : {"blocks.0.mixer.w1", "blocks.0.mixer.w2"}) {
    const auto A = vals(m2.param(w));  // [2, dh, dh]
    std::vector<double> full(d * d, 0.0);
    for (std::size_t g = 0; g < 2; ++g)
      for (std::size_t r = 0; r < dh; ++r)
        for (std::size_t s = 0; s < dh; ++s) full[(g * dh + r) * d + g * dh + s] = A[(g * dh + r) * dh + s];
    set(m1, w, full);
  }
  for (const char* b : {"blocks.0.mixer.b1", "blocks.0.mixer.b2"}) set(m1, b, vals(m2.param(b)));
  std::mt19937_64 rng(8);
  const Tensor z = Tensor::from_vector({2, 4, 4, d}, randn(2 * 16 * d, rng));
  EXPECT_LE(max_abs_diff(vals(m1.mixer(0, z)), vals(m2.mixer(0, z))), 1e-10);
}

TEST(FourierAttention, MixerCommutesWithBandLimitedUpsampling) {
  const ModelConfig c = small_config();
  DpotModel m(c, 15);
  const std::size_t d = c.d_z, h = c.heads, dh = d / h;
  // MLP(0) = 0 so modes absent from the coarse grid stay absent.
  const auto b1 = vals(m.param("blocks.0.mixer.b1"));
  const auto w2 = vals(m.param("blocks.0.mixer.w2"));
  std::vector<double> b2(d, 0.0);
  for (std::size_t g = 0; g < h; ++g)
    for (std::size_t o = 0; o < dh; ++o)
      for (std::size_t k = 0; k < dh; ++k) b2[g * dh + o] -= gelu_value(b1[g * dh + k]) * w2[(g * dh + k) * dh + o];
  set(m, "blocks.0.mixer.b2", b2);

  std::mt19937_64 rng(16);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t n = 8, N = 16;
  std::vector<double> z(n * n * d, 0.0);
  for (std::size_t k = 0; k < d; ++k)
    for (int kx = -2; kx <= 2; ++kx)
      for (int ky = 0; ky <= 2; ++ky) {
        const double a = normal(rng), ph = normal(rng);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j)
            z[(i * n + j) * d + k] += a * std::cos(2 * M_PI * (kx * static_cast<double>(i) + ky * static_cast<double>(j)) / n + ph);
      }
  const auto zu = fourier_resample(z, n, n, d, N, N);
  const auto coarse = vals(m.mixer(0, Tensor::from_vector({1, n, n, d}, z)));
  const auto fine = vals(m.mixer(0, Tensor::from_vector({1, N, N, d}, zu)));
  EXPECT_LE(max_abs_diff(fine, fourier_resample(coarse, n, n, d, N, N)), 1e-6);
}

TEST(Forward, ZeroParametersGiveDecoderBias) {
  const ModelConfig c = ModelConfig::nano(3, 2);
  DpotModel m(c, 17);
  zero_all(m);
  std::mt19937_64 rng(18);
  const Tensor x = Tensor::from_vector({1, 10, 32, 32, 3}, randn(10 * 32 * 32 * 3, rng));
  for (double v : vals(m.forward(x))) EXPECT_EQ(v, 0.0);
  std::vector<double> bias(32);
  for (std::size_t k = 0; k < 32; ++k) bias[k] = static_cast<double>(k);
  set(m, "decoder.bias", bias);
  const auto y = vals(m.forward(x));
  for (std::size_t i = 0; i < 32; ++i)
    for (std::size_t j = 0; j < 32; ++j)
      for (std::size_t ch = 0; ch < 2; ++ch)
        EXPECT_EQ(y[(i * 32 + j) * 2 + ch], bias[((i % 4) * 4 + j % 4) * 2 + ch]);
}

TEST(Forward, ShapeFiniteAndDeterministic) {
  const DpotModel m(ModelConfig::nano(3, 2), 19);
  std::mt19937_64 rng(20);
  const Tensor x = Tensor::from_vector({2, 10, 32, 32, 3}, randn(2 * 10 * 32 * 32 * 3, rng));
  const Tensor y = m.forward(x);
  EXPECT_EQ(y.shape(), (Shape{2, 32, 32, 2}));
  for (double v : vals(y)) EXPECT_TRUE(std::isfinite(v));
  EXPECT_EQ(vals(y), vals(m.forward(x)));
  try {
    m.forward(Tensor::zeros({1, 9, 32, 32, 3}));
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("[1,9,32,32,3]"), std::string::npos) << e.what();
  }
}

TEST(Forward, OffNativeResolutionRuns) {
  const DpotModel m(small_config(), 21);
  std::mt19937_64 rng(22);
  const Tensor x = Tensor::from_vector({1, 3, 12, 12, 2}, randn(3 * 12 * 12 * 2, rng));
  const Tensor y = m.forward(x);
  EXPECT_EQ(y.shape(), (Shape{1, 12, 12, 1}));
  for (double v : vals(y)) EXPECT_TRUE(std::isfinite(v));
}

TEST(Forward, GradientMatchesFiniteDifferences) {
  const ModelConfig c = small_config();
  DpotModel m(c, 23);
  std::mt19937_64 rng(24);
  const Tensor x = Tensor::from_vector({2, 3, 8, 8, 2}, randn(2 * 3 * 64 * 2, rng));
  const Tensor y = Tensor::from_vector({2, 8, 8, 1}, randn(2 * 64, rng));
  std::vector<Tensor> params;
  for (const auto& [name, t] : m.parameters()) params.push_back(t);
  const auto r = grad_check(
      [&] {
        const Tensor d = sub(m.forward(x), y);
        return mean(mul(d, d));
      },
      params);
  EXPECT_EQ(r.entries, m.num_parameters());
  EXPECT_LE(r.max_relative_error, 1e-4) << "param " << r.worst_param << " index " << r.worst_index;
}

TEST(Transfer, SameConfigCopiesEverything) {
  const ModelConfig c = small_config();
  const DpotModel src(c, 25);
  const auto r = transfer_weights(c, src.state_dict(), c, 26);
  EXPECT_EQ(r.copied.size(), src.parameters().size());
  EXPECT_TRUE(r.reinitialized.empty());
  const auto a = src.state_dict(), b = r.model.state_dict();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].values, b[i].values) << a[i].name;
}

TEST(Transfer, ResolutionChangeCopiesAttentionOnly) {
  const ModelConfig c = ModelConfig::nano(3, 2);
  ModelConfig t = c;
  t.H = 64;
  const DpotModel src(c, 27);
  const auto r = transfer_weights(c, src.state_dict(), t, 28);
  EXPECT_EQ(r.copied.size(), 10 * c.layers);
  for (const auto& k : r.copied) EXPECT_TRUE(is_attention_param(k)) << k;
  EXPECT_EQ(r.reinitialized.size(), 7u);
  EXPECT_EQ(r.copied_values, attention_parameter_count(c));
  // L * (h (2 dh^2 + 2 dh) + 2 d + 2 d f + d + f) with d = f = 64, h = 4
  EXPECT_EQ(r.copied_values, 2u * (4 * (2 * 16 * 16 + 2 * 16) + 128 + 2 * 64 * 64 + 128));
  const Tensor y = r.model.forward(Tensor::zeros({1, 10, 64, 64, 3}));
  EXPECT_EQ(y.shape(), (Shape{1, 64, 64, 2}));
}

TEST(Transfer, RejectsWidthDepthOrHeadMismatch) {
  const ModelConfig c = small_config();
  const DpotModel src(c, 29);
  for (int which = 0; which < 3; ++which) {
    ModelConfig t = c;
    if (which == 0) t.d_z = 16;
    if (which == 1) t.heads = 4;
    if (which == 2) t.layers = 3;
    EXPECT_THROW(transfer_weights(c, src.state_dict(), t, 30), ConfigError);
  }
}

TEST(StateDict, LoadRoundTripAndErrors) {
  const ModelConfig c = small_config();
  const DpotModel a(c, 31);
  DpotModel b(c, 32);
  b.load_state_dict(a.state_dict());
  EXPECT_EQ(vals(a.param("time.weight")), vals(b.param("time.weight")));
  StateDict partial{a.state_dict()[0]};
  EXPECT_THROW(b.load_state_dict(partial, true), ConfigError);
  EXPECT_NO_THROW(b.load_state_dict(partial, false));
  StateDict bad = a.state_dict();
  bad[1].shape = {1};
  EXPECT_THROW(b.load_state_dict(bad), ShapeError);
}
