#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>
#include <string>

#include "dpot/error.hpp"
#include "dpot/tensor/grad_check.hpp"
#include "dpot/tensor/ops.hpp"

using namespace dpot;

namespace {

std::vector<double> vals(const dpot::Tensor& t) { return t.to_vector(); }

std::vector<double> randn(std::size_t n, std::mt19937_64& rng, double s = 1.0) {
  std::normal_distribution<double> g(0.0, s);
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

double inner(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

// <f(x + eps v) - f(x), u> / eps  versus  <v, f'(x)^T u>.
void expect_adjoint_consistent(const std::string& name, const std::function<Tensor(const Tensor&)>& f,
                               Shape in_shape, DType in_type, unsigned seed) {
  std::mt19937_64 rng(seed);
  const std::size_t width = in_type == DType::Complex ? 2 : 1;
  const std::size_t n = shape_numel(in_shape) * width;
  auto x = randn(n, rng);
  auto v = randn(n, rng);
  const double eps = 1e-6;

  auto fx = f(Tensor::from_vector(in_shape, x, in_type));
  auto u = randn(fx.data().size(), rng);
  std::vector<double> xp(n);
  for (std::size_t i = 0; i < n; ++i) xp[i] = x[i] + eps * v[i];
  auto fxp = f(Tensor::from_vector(in_shape, xp, in_type));
  double fd = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) fd += (fxp.data()[i] - fx.data()[i]) * u[i];
  fd /= eps;

  Tensor leaf = Tensor::from_vector(in_shape, x, in_type);
  leaf.set_requires_grad(true);
  leaf.zero_grad();
  Tensor out = f(leaf);
  Tensor flat = out.is_complex() ? as_real(out) : out;
  Tensor loss = sum(mul(flat, Tensor::from_vector(flat.shape(), u)));
  loss.backward();
  const double ad = inner(v, leaf.grad());
  EXPECT_NEAR(fd, ad, 1e-4 * std::max(1.0, std::abs(ad))) << name;
}

}  // namespace

TEST(Elementwise, GeluEndpoints) {
  auto y = vals(gelu(Tensor::from_vector({3}, {0.0, 3.0, -0.5})));
  EXPECT_EQ(y[0], 0.0);
  // x * Phi(x) evaluated with 30-digit arithmetic.
  EXPECT_NEAR(y[1], 2.9959503059051097164, 1e-15);
  EXPECT_NEAR(y[2], -0.15426876936299344818, 1e-15);
}

TEST(Elementwise, AddAndBroadcast) {
  auto s = vals(add(Tensor::from_vector({2}, {1, 2}), Tensor::from_vector({2}, {3, 4})));
  EXPECT_EQ(s[0], 4.0);
  EXPECT_EQ(s[1], 6.0);

  auto b = vals(add(Tensor::from_vector({2, 2}, {1, 2, 3, 4}), Tensor::from_vector({2}, {10, 20})));
  EXPECT_EQ((std::vector<double>(b.begin(), b.end())), (std::vector<double>{11, 22, 13, 24}));

  auto sc = vals(mul(Tensor::from_vector({3}, {1, 2, 3}), Tensor::scalar(2.0)));
  EXPECT_EQ(sc[2], 6.0);

  auto e = vals(elementwise(Elementwise::Scale, Tensor::from_vector({2}, {1, -2}), {}, 3.0));
  EXPECT_EQ(e[1], -6.0);
}

TEST(Elementwise, ShapeMismatchReportsBothShapes) {
  try {
    add(Tensor::zeros({2, 3}), Tensor::zeros({2}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2]"), std::string::npos) << msg;
  }
  EXPECT_THROW(mul(Tensor::zeros({2}, DType::Complex), Tensor::zeros({2}, DType::Complex)), ShapeError);
}

TEST(Matmul, IdentityAndSmallProduct) {
  auto x = Tensor::from_vector({3, 2}, {1, 2, 3, 4, 5, 6});
  auto eye = Tensor::from_vector({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto y = vals(matmul(eye, x));
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(y[i], x.data()[i]);

  auto p = matmul(Tensor::from_vector({2, 2}, {1, 2, 3, 4}), Tensor::from_vector({2, 1}, {1, 1}));
  EXPECT_EQ(p.shape(), (Shape{2, 1}));
  EXPECT_EQ(p.data()[0], 3.0);
  EXPECT_EQ(p.data()[1], 7.0);
}

TEST(Matmul, MatchesTripleLoopOracle) {
  std::mt19937_64 rng(1);
  auto a = randn(20, rng);
  auto b = randn(15, rng);
  auto c = vals(matmul(Tensor::from_vector({4, 5}, a), Tensor::from_vector({5, 3}, b)));
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < 5; ++p) acc += a[i * 5 + p] * b[p * 3 + j];
      EXPECT_NEAR(c[i * 3 + j], acc, 1e-12);
    }
  }
}

TEST(Matmul, BatchedAndErrors) {
  std::mt19937_64 rng(2);
  auto a = randn(2 * 3 * 4, rng);
  auto b = randn(2 * 4 * 2, rng);
  auto c = matmul(Tensor::from_vector({2, 3, 4}, a), Tensor::from_vector({2, 4, 2}, b));
  EXPECT_EQ(c.shape(), (Shape{2, 3, 2}));
  double acc = 0.0;
  for (std::size_t p = 0; p < 4; ++p) acc += a[12 + 2 * 4 + p] * b[8 + p * 2 + 1];
  EXPECT_NEAR(c.data()[6 + 2 * 2 + 1], acc, 1e-12);
  EXPECT_THROW(matmul(Tensor::zeros({3, 4}), Tensor::zeros({5, 2})), ShapeError);
}

TEST(GroupedMatmul, EqualsBlockDiagonalMatmul) {
  std::mt19937_64 rng(3);
  const std::size_t g = 3, k = 2, n = 2;
  auto x = randn(5 * g * k, rng);
  auto w = randn(g * k * n, rng);
  auto y = vals(grouped_matmul(Tensor::from_vector({5, g * k}, x), Tensor::from_vector({g, k, n}, w)));
  std::vector<double> block(g * k * g * n, 0.0);
  for (std::size_t gi = 0; gi < g; ++gi)
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < n; ++b) block[(gi * k + a) * g * n + gi * n + b] = w[(gi * k + a) * n + b];
  auto z = vals(matmul(Tensor::from_vector({5, g * k}, x), Tensor::from_vector({g * k, g * n}, block)));
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], z[i], 1e-14);
}

TEST(Permute, MovesAxes) {
  auto x = Tensor::from_vector({2, 3}, {0, 1, 2, 3, 4, 5});
  auto y = permute(x, {1, 0});
  EXPECT_EQ(y.shape(), (Shape{3, 2}));
  EXPECT_EQ((std::vector<double>(y.data().begin(), y.data().end())),
            (std::vector<double>{0, 3, 1, 4, 2, 5}));
  EXPECT_THROW(permute(x, {0, 0}), ShapeError);
}

TEST(Adjoints, EveryPrimitiveIsConsistent) {
  std::mt19937_64 rng(99);
  auto cst = [&](Shape s) { return Tensor::from_vector(s, randn(shape_numel(s), rng)); };
  const auto b23 = cst({2, 3});
  const auto b3 = cst({3});
  const auto w34 = cst({3, 4});
  const auto wg = cst({2, 3, 2});
  const auto gn_w = cst({4});
  const auto gn_b = cst({4});
  const auto x234 = cst({2, 3, 4});
  const auto x154 = cst({1, 5, 4});
  std::vector<double> wts = randn(6, rng);

  expect_adjoint_consistent("add", [&](const Tensor& x) { return add(x, b23); }, {2, 3}, DType::Real, 1);
  expect_adjoint_consistent("add-bcast-rhs", [&](const Tensor& x) { return add(b23, x); }, {3}, DType::Real, 2);
  expect_adjoint_consistent("sub-rhs", [&](const Tensor& x) { return sub(b23, x); }, {2, 3}, DType::Real, 3);
  expect_adjoint_consistent("mul", [&](const Tensor& x) { return mul(x, b23); }, {2, 3}, DType::Real, 4);
  expect_adjoint_consistent("mul-bcast-rhs", [&](const Tensor& x) { return mul(b23, x); }, {3}, DType::Real, 5);
  expect_adjoint_consistent("mul-self", [&](const Tensor& x) { return mul(x, x); }, {2, 3}, DType::Real, 6);
  expect_adjoint_consistent("scale", [&](const Tensor& x) { return scale(x, -0.7); }, {5}, DType::Real, 7);
  expect_adjoint_consistent("gelu", [&](const Tensor& x) { return gelu(x); }, {7}, DType::Real, 8);
  expect_adjoint_consistent("cos", [&](const Tensor& x) { return dpot::cos(x); }, {7}, DType::Real, 9);
  expect_adjoint_consistent("matmul-lhs", [&](const Tensor& x) { return matmul(x, w34); }, {2, 3}, DType::Real, 10);
  expect_adjoint_consistent("matmul-rhs", [&](const Tensor& x) { return matmul(b23, x); }, {3, 4}, DType::Real, 11);
  expect_adjoint_consistent("grouped-x", [&](const Tensor& x) { return grouped_matmul(x, wg); }, {4, 6}, DType::Real, 12);
  expect_adjoint_consistent("grouped-w", [&](const Tensor& w) { return grouped_matmul(reshape(b23, {1, 6}), w); }, {2, 3, 2}, DType::Real, 13);
  expect_adjoint_consistent("reshape", [&](const Tensor& x) { return reshape(x, {3, 2}); }, {2, 3}, DType::Real, 14);
  expect_adjoint_consistent("permute", [&](const Tensor& x) { return permute(x, {2, 0, 1}); }, {2, 3, 4}, DType::Real, 15);
  expect_adjoint_consistent("permute-complex", [&](const Tensor& x) { return permute(x, {1, 0}); }, {3, 2}, DType::Complex, 16);
  expect_adjoint_consistent("fft2-real", [&](const Tensor& x) { return fft2(x); }, {2, 4, 6}, DType::Real, 17);
  expect_adjoint_consistent("fft2-complex", [&](const Tensor& x) { return fft2(x); }, {4, 4}, DType::Complex, 18);
  expect_adjoint_consistent("ifft2", [&](const Tensor& x) { return ifft2(x); }, {3, 5}, DType::Complex, 19);
  expect_adjoint_consistent("real_part", [&](const Tensor& x) { return real_part(x); }, {4}, DType::Complex, 20);
  expect_adjoint_consistent("as_real", [&](const Tensor& x) { return as_real(x); }, {4}, DType::Complex, 21);
  expect_adjoint_consistent("as_complex", [&](const Tensor& x) { return as_complex(x); }, {4, 2}, DType::Real, 22);
  expect_adjoint_consistent("group_norm-x", [&](const Tensor& x) { return group_norm(x, 2, gn_w, gn_b); }, {2, 3, 4}, DType::Real, 23);
  expect_adjoint_consistent("group_norm-w", [&](const Tensor& w) { return group_norm(x234, 2, w, gn_b); }, {4}, DType::Real, 24);
  expect_adjoint_consistent("group_norm-b", [&](const Tensor& b) { return group_norm(x154, 4, gn_w, b); }, {4}, DType::Real, 25);
  expect_adjoint_consistent("sum", [&](const Tensor& x) { return sum(x); }, {5}, DType::Real, 26);
  expect_adjoint_consistent("wss", [&](const Tensor& x) { return weighted_square_sum(x, wts); }, {2, 3}, DType::Real, 27);
}

TEST(GradCheck, SquareAtThree) {
  auto x = Tensor::parameter({1}, {3.0});
  auto r = grad_check([&] { return sum(mul(x, x)); }, {x});
  EXPECT_LE(r.max_relative_error, 1e-8);
  x.zero_grad();
  sum(mul(x, x)).backward();
  EXPECT_NEAR(x.grad()[0], 6.0, 1e-14);
}

TEST(GradCheck, ParsevalGradientIsTwiceInput) {
  std::mt19937_64 rng(4);
  auto x = Tensor::parameter({4, 4}, randn(16, rng));
  auto loss_fn = [&] {
    auto s = as_real(fft2(x));
    return weighted_square_sum(s, std::vector<double>(s.numel(), 1.0));
  };
  auto r = grad_check(loss_fn, {x});
  EXPECT_LE(r.max_relative_error, 1e-6);
  x.zero_grad();
  loss_fn().backward();
  for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(x.grad()[i], 2.0 * x.data()[i], 1e-12);
}

TEST(GradCheck, StridedSubsetAndStencilRefinement) {
  auto x = Tensor::parameter({100}, std::vector<double>(100, 0.5));
  auto r = grad_check([&] { return sum(mul(x, x)); }, {x}, {.max_entries_per_param = 10});
  EXPECT_EQ(r.entries, 10u);

  // d/dx x^4 at 1 is 4; the 2-point error at h = 1e-2 is h^2 * 24 / 6 = 4e-4,
  // while the five-point stencil is exact for quartics.
  auto y = Tensor::parameter({1}, {1.0});
  auto quartic = [&] { return sum(mul(mul(y, y), mul(y, y))); };
  auto coarse = grad_check(quartic, {y}, {.step = 1e-2});
  EXPECT_NEAR(coarse.max_relative_error, 1e-4, 1e-6);
  EXPECT_EQ(coarse.refined, 0u);
  auto refined = grad_check(quartic, {y}, {.step = 1e-2, .refine_above = 1e-6, .refine_step = 1e-2});
  EXPECT_EQ(refined.refined, 1u);
  EXPECT_LE(refined.max_relative_error, 1e-10);
}

TEST(GradCheck, RejectsNonScalarLoss) {
  auto x = Tensor::parameter({2}, {1.0, 2.0});
  EXPECT_THROW(grad_check([&] { return scale(x, 2.0); }, {x}), ShapeError);
}

TEST(Graph, DiamondVisitsEachNodeOnceAndOffPathLeavesStayZero) {
  auto x = Tensor::parameter({2}, {1.5, -2.0});
  auto unused = Tensor::parameter({2}, {4.0, 5.0});
  unused.zero_grad();
  x.zero_grad();
  auto y = scale(x, 2.0);
  auto z = add(mul(y, y), y);  // 4x^2 + 2x
  auto loss = sum(z);
  const std::size_t visited = loss.backward();
  EXPECT_EQ(visited, 5u);  // x, y, mul, add, sum
  EXPECT_NEAR(x.grad()[0], 8.0 * 1.5 + 2.0, 1e-14);
  EXPECT_NEAR(x.grad()[1], 8.0 * -2.0 + 2.0, 1e-14);
  EXPECT_EQ(unused.grad()[0], 0.0);
  EXPECT_EQ(unused.grad()[1], 0.0);
}

TEST(Graph, ForwardIsBitDeterministic) {
  std::mt19937_64 rng(5);
  auto a = randn(64 * 32, rng);
  auto b = randn(32 * 16, rng);
  auto r1 = gelu(matmul(Tensor::from_vector({64, 32}, a), Tensor::from_vector({32, 16}, b)));
  auto r2 = gelu(matmul(Tensor::from_vector({64, 32}, a), Tensor::from_vector({32, 16}, b)));
  EXPECT_TRUE(std::equal(r1.data().begin(), r1.data().end(), r2.data().begin()));
}
