#include "dpot/verify/checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <zlib.h>

#include "dpot/data/pipeline.hpp"
#include "dpot/io/persistence.hpp"
#include "dpot/model/dpot.hpp"
#include "dpot/pde/solvers.hpp"
#include "dpot/tensor/fft.hpp"
#include "dpot/tensor/grad_check.hpp"
#include "dpot/tensor/ops.hpp"
#include "dpot/train/trainer.hpp"

namespace dpot::verify {

namespace {

using cplx = std::complex<double>;
namespace fs = std::filesystem;

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

CheckResult finish(int id, std::string name, bool ok, std::string detail, const Stopwatch& sw, double budget) {
  CheckResult r{id, std::move(name), false, std::move(detail), sw.seconds(), budget};
  r.passed = ok && r.seconds <= budget;
  if (ok && !r.passed) r.detail += fmt::format("; over time budget ({:.1f} s > {:.0f} s)", r.seconds, budget);
  return r;
}

template <class F>
CheckResult guarded(int id, const std::string& name, double budget, F&& body) {
  const Stopwatch sw;
  try {
    return body(sw);
  } catch (const std::exception& e) {
    return finish(id, name, false, std::string("exception: ") + e.what(), sw, budget);
  }
}

std::vector<double> randn(std::size_t n, std::mt19937_64& rng, double s = 1.0) {
  std::normal_distribution<double> g(0.0, s);
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

std::vector<cplx> randc(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  std::vector<cplx> v(n);
  for (auto& x : v) x = {g(rng), g(rng)};
  return v;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double max_abs_diff(const std::vector<cplx>& a, const std::vector<cplx>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double rel_l2(const double* a, const double* b, std::size_t n) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num / den);
}

// ---------------------------------------------------------------- 1

GradCheckResult grad_check_model(const ModelConfig& mc, PdeKind pde, std::uint64_t seed, std::size_t max_entries) {
  SolverSpec s = default_spec(pde);
  s.H = mc.H;
  s.n_steps = 10 * (mc.T_ctx + 1);
  s.save_every = 10;
  const TrajectoryDataset raw = generate_dataset(s, 1, seed);
  const PreparedDataset ds = prepare_dataset(raw, mc.H, mc.C_in - 1, "gc");
  std::vector<UnifiedSample> samples{make_window(ds.trajectories[0], 0, mc.T_ctx)};
  DpotModel model(mc, seed + 1);
  std::vector<Tensor> params;
  for (const auto& [name, t] : model.parameters()) params.push_back(t);
  // The relative loss is O(1), so gradients below 1e-6 are compared in
  // absolute terms. Entries the 2-point difference cannot resolve are
  // re-estimated with the five-point stencil.
  GradCheckOptions opt;
  opt.step = 1e-5;
  opt.floor = 1e-6;
  opt.refine_above = 1e-5;
  opt.max_entries_per_param = max_entries;
  return grad_check(
      [&] {
        std::mt19937_64 rng(0);
        return ar_denoising_loss(model, samples, 0.0, rng, LossKind::Relative);
      },
      params, opt);
}

// ---------------------------------------------------------------- 2

std::vector<cplx> direct_dft(const std::vector<cplx>& x, std::size_t n) {
  std::vector<cplx> out(n * n);
  const double norm = 1.0 / static_cast<double>(n);
  for (std::size_t k1 = 0; k1 < n; ++k1)
    for (std::size_t k2 = 0; k2 < n; ++k2) {
      cplx acc{0.0, 0.0};
      for (std::size_t j1 = 0; j1 < n; ++j1)
        for (std::size_t j2 = 0; j2 < n; ++j2) {
          const auto phase = static_cast<double>((j1 * k1 + j2 * k2) % n) / static_cast<double>(n);
          acc += x[j1 * n + j2] * std::polar(1.0, -2.0 * std::numbers::pi * phase);
        }
      out[k1 * n + k2] = acc * norm;
    }
  return out;
}

std::vector<cplx> fwd(std::vector<cplx> x, std::size_t n) {
  fft::unitary_2d(x, n, n, fft::Direction::Forward);
  return x;
}

double norm2(const std::vector<cplx>& x) {
  double s = 0.0;
  for (const auto& v : x) s += std::norm(v);
  return std::sqrt(s);
}

// ---------------------------------------------------------------- 11

TrajectoryDataset golden_dataset() {
  TrajectoryDataset ds;
  for (std::size_t n = 0; n < 2; ++n) {
    Trajectory tr(2, 4, 4, 1);
    for (std::size_t i = 0; i < tr.values.size(); ++i) tr.values[i] = static_cast<double>(n * 32 + i) * 0.125 - 3.0;
    for (std::size_t p = 0; p < 16; ++p) tr.mask[p] = n == 0 ? 1 : static_cast<std::uint8_t>((p / 4 + p % 4) % 2);
    tr.pde = "heat";
    tr.dt_save = 0.5;
    tr.channels = {"u"};
    ds.trajectories.push_back(tr);
  }
  ds.metadata = {{"pde", "heat"}, {"dt_save", 0.5}, {"channels", {"u"}}, {"seed", 7}};
  return ds;
}

constexpr std::size_t kGoldenBytes = 390;
constexpr std::uint32_t kGoldenFileCrc = 0x2144df1cu;

std::vector<std::uint8_t> slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

bool same_values(const TrajectoryDataset& a, const TrajectoryDataset& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t n = 0; n < a.size(); ++n) {
    const auto &x = a.trajectories[n], &y = b.trajectories[n];
    if (x.values.size() != y.values.size() || x.mask != y.mask) return false;
    if (std::memcmp(x.values.data(), y.values.data(), x.values.size() * sizeof(double)) != 0) return false;
  }
  return true;
}

}  // namespace

std::string format_result(const CheckResult& r) {
  return fmt::format("{} [{}] {} ({:.2f} s / {:.0f} s): {}", r.passed ? "PASS" : "FAIL", r.id, r.name, r.seconds,
                     r.budget_seconds, r.detail);
}

CheckResult check_grad_fidelity() {
  constexpr double kTol = 1e-4;
  return guarded(1, "grad-fidelity", 120.0, [&](const Stopwatch& sw) {
    // The nano model at its native 32x32, 10-frame setting: every parameter
    // tensor, 48 evenly strided entries each.
    const GradCheckResult a = grad_check_model(ModelConfig::nano(3, 2), PdeKind::DiffusionReaction, 11, 48);
    // Nano widths on a 16x16, 4-frame grid: every entry of every parameter.
    ModelConfig reduced = ModelConfig::nano(2, 1);
    reduced.H = 16;
    reduced.T_ctx = 4;
    const GradCheckResult b = grad_check_model(reduced, PdeKind::Heat, 12, 0);
    const double worst = std::max(a.max_relative_error, b.max_relative_error);
    return finish(1, "grad-fidelity", worst <= kTol,
                  fmt::format("max rel err {:.2e} over {} strided nano entries, {:.2e} over all {} entries at 16x16 "
                              "({} entries refined; tol {:.0e})",
                              a.max_relative_error, a.entries, b.max_relative_error, b.entries,
                              a.refined + b.refined, kTol),
                  sw, 120.0);
  });
}

CheckResult check_fft() {
  constexpr double kTol = 1e-10;
  return guarded(2, "fft", 10.0, [&](const Stopwatch& sw) {
    std::mt19937_64 rng(2);
    double oracle = 0, unitary = 0, linear = 0, round = 0, tensor = 0;
    for (std::size_t n : {8, 32}) {
      const auto x = randc(n * n, rng), y = randc(n * n, rng);
      const auto X = fwd(x, n), Y = fwd(y, n);
      oracle = std::max(oracle, max_abs_diff(X, direct_dft(x, n)));
      // Norm and inner product preservation.
      unitary = std::max(unitary, std::abs(norm2(X) - norm2(x)) / norm2(x));
      cplx ip_x{0, 0}, ip_X{0, 0};
      for (std::size_t i = 0; i < x.size(); ++i) {
        ip_x += x[i] * std::conj(y[i]);
        ip_X += X[i] * std::conj(Y[i]);
      }
      unitary = std::max(unitary, std::abs(ip_X - ip_x) / (norm2(x) * norm2(y)));
      const cplx a{0.7, -1.3}, b{-2.1, 0.4};
      std::vector<cplx> comb(x.size()), expect(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) {
        comb[i] = a * x[i] + b * y[i];
        expect[i] = a * X[i] + b * Y[i];
      }
      linear = std::max(linear, max_abs_diff(fwd(comb, n), expect));
      auto back = X;
      fft::unitary_2d(back, n, n, fft::Direction::Inverse);
      round = std::max(round, max_abs_diff(back, x));
      // The autodiff op agrees with the kernel.
      std::vector<double> re(n * n);
      for (std::size_t i = 0; i < re.size(); ++i) re[i] = x[i].real();
      const auto T = fft2(Tensor::from_vector({n, n}, re)).to_vector();
      std::vector<cplx> Tc(n * n);
      for (std::size_t i = 0; i < Tc.size(); ++i) Tc[i] = {T[2 * i], T[2 * i + 1]};
      std::vector<cplx> rc(re.begin(), re.end());
      tensor = std::max(tensor, max_abs_diff(Tc, fwd(rc, n)));
    }
    const double worst = std::max({oracle, unitary, linear, round, tensor});
    return finish(2, "fft", worst <= kTol,
                  fmt::format("8x8 and 32x32: oracle {:.1e}, unitarity {:.1e}, linearity {:.1e}, round trip {:.1e}, "
                              "tensor op {:.1e} (tol {:.0e})",
                              oracle, unitary, linear, round, tensor, kTol),
                  sw, 10.0);
  });
}

CheckResult check_pooling_lemma() {
  constexpr double kTol = 1e-10;
  return guarded(3, "pooling-lemma", 1.0, [&](const Stopwatch& sw) {
    const ModelConfig c = ModelConfig::nano(3, 2);
    const DpotModel m(c, 3);
    const std::size_t B = 2, g = c.tokens_per_side(), n = g * g, d = c.d_z;
    std::mt19937_64 rng(3);
    const auto z = randn(B * n * d, rng, 3.0);
    MixerOptions opt;
    opt.identity_map = true;
    opt.mode_mask.assign(n, 0.0);
    opt.mode_mask[0] = 1.0;
    const auto out = m.mixer(0, Tensor::from_vector({B, g, g, d}, z), &opt).to_vector();
    double worst = 0.0;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t k = 0; k < d; ++k) {
        double mean = 0.0;
        for (std::size_t p = 0; p < n; ++p) mean += z[(b * n + p) * d + k];
        mean /= static_cast<double>(n);
        for (std::size_t p = 0; p < n; ++p) worst = std::max(worst, std::abs(out[(b * n + p) * d + k] - mean));
      }
    return finish(3, "pooling-lemma", worst <= kTol,
                  fmt::format("zero-mode mixing vs spatial mean on {}x{} tokens, d={}: max diff {:.1e} (tol {:.0e})",
                              g, g, d, worst, kTol),
                  sw, 1.0);
  });
}

CheckResult check_head_equivalence() {
  constexpr double kTol = 1e-10;
  return guarded(4, "head-equivalence", 10.0, [&](const Stopwatch& sw) {
    std::string detail;
    double worst = 0.0;
    for (std::size_t h : {2, 4}) {
      ModelConfig ch = ModelConfig::nano(3, 2);
      ch.heads = h;
      ModelConfig c1 = ch;
      c1.heads = 1;
      DpotModel mh(ch, 40 + h);
      DpotModel m1(c1, 50 + h);
      const std::size_t d = ch.d_z, dh = d / h;
      for (const auto& [name, t] : mh.parameters()) {
        const auto src = t.to_vector();
        auto dst = m1.param(name).mutable_data();
        const bool block = name.find("mixer.w") != std::string::npos;
        if (!block) {
          std::copy(src.begin(), src.end(), dst.begin());
          continue;
        }
        std::fill(dst.begin(), dst.end(), 0.0);
        for (std::size_t g = 0; g < h; ++g)
          for (std::size_t r = 0; r < dh; ++r)
            for (std::size_t s = 0; s < dh; ++s) dst[(g * dh + r) * d + g * dh + s] = src[(g * dh + r) * dh + s];
      }
      std::mt19937_64 rng(h);
      const std::size_t gt = ch.tokens_per_side();
      const Tensor z = Tensor::from_vector({2, gt, gt, d}, randn(2 * gt * gt * d, rng));
      const double mix = max_abs_diff(m1.mixer(0, z).to_vector(), mh.mixer(0, z).to_vector());
      const Tensor x = Tensor::from_vector({1, ch.T_ctx, ch.H, ch.H, ch.C_in},
                                           randn(ch.T_ctx * ch.H * ch.H * ch.C_in, rng));
      const double full = max_abs_diff(m1.forward(x).to_vector(), mh.forward(x).to_vector());
      worst = std::max({worst, mix, full});
      detail += fmt::format("h={}: mixer {:.1e}, forward {:.1e}; ", h, mix, full);
    }
    return finish(4, "head-equivalence", worst <= kTol, detail + fmt::format("tol {:.0e}", kTol), sw, 10.0);
  });
}

CheckResult check_solver_analytics() {
  return guarded(5, "solver-analytics", 120.0, [&](const Stopwatch& sw) {
    auto sample = [](std::size_t H, auto f) {
      std::vector<double> v(H * H);
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < H; ++j)
          v[i * H + j] = f(2 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(H),
                           2 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(H));
      return v;
    };
    auto spec = [](PdeKind k, std::size_t H, double dt, std::size_t steps) {
      SolverSpec s = default_spec(k);
      s.H = H;
      s.solve_H = 0;
      s.dt = dt;
      s.n_steps = steps;
      s.save_every = steps;
      s.forcing_amp = 0.0;
      return s;
    };

    // Heat: sin x sin y decays as exp(-2 nu t).
    const auto h0 = sample(32, [](double x, double y) { return std::sin(x) * std::sin(y); });
    const auto heat = solve_heat(h0, 0.1, spec(PdeKind::Heat, 32, 0.05, 20));
    double heat_err = 0.0;
    for (std::size_t p = 0; p < h0.size(); ++p) {
      const double exact = std::exp(-0.2) * h0[p];
      if (std::abs(exact) > 1e-3) heat_err = std::max(heat_err, std::abs(heat.frame(1)[p] - exact) / std::abs(exact));
    }

    // Taylor-Green vorticity 2 cos x cos y: the nonlinear term vanishes.
    const auto w0 = sample(64, [](double x, double y) { return 2.0 * std::cos(x) * std::cos(y); });
    const auto tg = solve_ns_vorticity(w0, 0.05, 0.0, spec(PdeKind::NsVorticity, 64, 1e-3, 500));
    std::vector<double> exact(w0.size());
    for (std::size_t p = 0; p < w0.size(); ++p) exact[p] = std::exp(-2.0 * 0.05 * 0.5) * w0[p];
    const double tg_err = rel_l2(tg.frame(1), exact.data(), exact.size());

    // Inviscid: energy and enstrophy conserved over 100 steps.
    const auto inv = solve_ns_vorticity(gaussian_random_field(64, 21), 0.0, 0.0,
                                        spec(PdeKind::NsVorticity, 64, 1e-3, 100));
    const std::size_t n = 64 * 64;
    const double e0 = kinetic_energy({inv.frame(0), n}, 64), e1 = kinetic_energy({inv.frame(1), n}, 64);
    const double z0 = enstrophy({inv.frame(0), n}, 64), z1 = enstrophy({inv.frame(1), n}, 64);
    const double drift = std::max(std::abs(e1 - e0) / e0, std::abs(z1 - z0) / z0);
    const double moved = rel_l2(inv.frame(1), inv.frame(0), n);

    const bool ok = heat_err <= 1e-10 && tg_err <= 1e-4 && drift <= 1e-3 && moved > 1e-3;
    return finish(5, "solver-analytics", ok,
                  fmt::format("heat decay {:.1e} (tol 1e-10), Taylor-Green {:.1e} (tol 1e-4), inviscid drift {:.1e} "
                              "(tol 1e-3, field moved {:.1e})",
                              heat_err, tg_err, drift, moved),
                  sw, 120.0);
  });
}

CheckResult check_sampler() {
  // Two-sided 99% normal quantile.
  constexpr double kZ99 = 2.5758293035489004;
  return guarded(6, "balanced-sampler", 30.0, [&](const Stopwatch& sw) {
    const std::size_t n = 100000;
    bool ok = true;
    std::string detail;
    for (const auto& w : {std::vector<double>{1, 1}, std::vector<double>{3, 1}}) {
      BalancedSampler s({{500, 21}, {50, 21}}, w, 6, 10);
      std::size_t first = 0;
      for (std::size_t i = 0; i < n; ++i) first += s.next().dataset == 0;
      const double q = w[0] / (w[0] + w[1]);
      const double freq = static_cast<double>(first) / static_cast<double>(n);
      const double bound = kZ99 * std::sqrt(q * (1 - q) / static_cast<double>(n));
      ok = ok && std::abs(freq - q) <= bound;
      detail += fmt::format("w=({:g},{:g}): freq {:.4f} vs q {:.4f}, |diff| {:.4f} <= {:.4f}; ", w[0], w[1], freq, q,
                            std::abs(freq - q), bound);
    }
    return finish(6, "balanced-sampler", ok, detail + "1e5 draws each", sw, 30.0);
  });
}

CheckResult check_persistence(const std::string& golden_path) {
  return guarded(11, "persistence", 30.0, [&](const Stopwatch& sw) {
    std::vector<std::string> failures;
    const fs::path dir = fs::temp_directory_path() / fmt::format("dpot_verify_{}", std::random_device{}());
    fs::create_directories(dir);

    SolverSpec s = default_spec(PdeKind::DiffusionReaction);
    s.H = 16;
    s.n_steps = 40;
    s.save_every = 10;
    const TrajectoryDataset ds = generate_dataset(s, 3, 5);
    const std::string path = (dir / "d.dpot").string();
    write_dataset(ds, path);
    const TrajectoryDataset back = read_dataset(path);
    if (!same_values(ds, back)) failures.emplace_back("dataset values differ after round trip");
    if (encode_dataset(back) != slurp(path)) failures.emplace_back("dataset re-encode differs from file");

    ModelConfig c = ModelConfig::nano(3, 2);
    c.H = 16;
    c.T_ctx = 4;
    const DpotModel m(c, 7);
    save_checkpoint(make_checkpoint(m), (dir / "ck1").string());
    const Checkpoint ck = load_checkpoint((dir / "ck1").string());
    const DpotModel loaded = model_from_checkpoint(ck);
    std::mt19937_64 rng(8);
    const Tensor x = Tensor::from_vector({1, 4, 16, 16, 3}, randn(4 * 16 * 16 * 3, rng));
    const auto p1 = m.forward(x).to_vector(), p2 = loaded.forward(x).to_vector();
    if (std::memcmp(p1.data(), p2.data(), p1.size() * sizeof(double)) != 0)
      failures.emplace_back("predictions differ after checkpoint load");
    save_checkpoint(ck, (dir / "ck2").string());
    if (read_blob((dir / "ck1").string()) != read_blob((dir / "ck2").string()))
      failures.emplace_back("save-load-save blob differs");
    if (slurp(dir / "ck1" / "manifest.json") != slurp(dir / "ck2" / "manifest.json"))
      failures.emplace_back("save-load-save manifest differs");

    const auto golden = encode_dataset(golden_dataset());
    const auto crc = static_cast<std::uint32_t>(crc32(0L, golden.data(), static_cast<uInt>(golden.size())));
    if (golden.size() != kGoldenBytes || crc != kGoldenFileCrc)
      failures.push_back(fmt::format("golden layout changed: {} bytes, crc {:08x}", golden.size(), crc));
    std::string golden_note = "pinned length and CRC";
    if (!golden_path.empty()) {
      const auto file = slurp(golden_path);
      if (file != golden) failures.push_back("golden file " + golden_path + " differs from the encoder output");
      golden_note += " plus committed file";
    }
    fs::remove_all(dir);

    std::string detail = failures.empty()
                             ? "dataset and checkpoint round trips bitwise, predictions identical, golden " + golden_note
                             : "";
    for (const auto& f : failures) detail += (detail.empty() ? "" : "; ") + f;
    return finish(11, "persistence", failures.empty(), detail, sw, 30.0);
  });
}

std::vector<CheckResult> run_fast_checks(const std::string& golden_path,
                                         const std::function<void(const CheckResult&)>& on_result) {
  std::vector<CheckResult> out;
  auto add = [&](CheckResult r) {
    if (on_result) on_result(r);
    out.push_back(std::move(r));
  };
  add(check_grad_fidelity());
  add(check_fft());
  add(check_pooling_lemma());
  add(check_head_equivalence());
  add(check_solver_analytics());
  add(check_sampler());
  add(check_persistence(golden_path));
  return out;
}

}  // namespace dpot::verify
