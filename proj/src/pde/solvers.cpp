#include "dpot/pde/solvers.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "dpot/error.hpp"
#include "dpot/tensor/fft.hpp"
#include "dpot/tensor/resample.hpp"
#include "dpot/util/hash.hpp"

namespace dpot {

using fft::cplx;

namespace {

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// Wavenumber tables for an H x H periodic grid on [0, 2*pi]^2.
struct Grid {
  std::size_t n = 0;
  std::size_t N = 0;
  std::vector<double> kx, ky;    // signed modes, used for |k|^2
  std::vector<double> dkx, dky;  // derivative multipliers, Nyquist zeroed
  std::vector<double> k2;
  std::vector<double> dealias;

  explicit Grid(std::size_t h) : n(h), N(h * h), kx(N), ky(N), dkx(N), dky(N), k2(N), dealias(N) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t p = i * n + j;
        const double a = static_cast<double>(fft::signed_mode(i, n));
        const double b = static_cast<double>(fft::signed_mode(j, n));
        kx[p] = a;
        ky[p] = b;
        dkx[p] = 2 * i == n ? 0.0 : a;
        dky[p] = 2 * j == n ? 0.0 : b;
        k2[p] = a * a + b * b;
        const double cut = static_cast<double>(n) / 3.0;
        dealias[p] = (std::abs(a) <= cut && std::abs(b) <= cut) ? 1.0 : 0.0;
      }
    }
  }

  std::vector<cplx> forward(std::span<const double> u) const {
    std::vector<cplx> z(u.begin(), u.end());
    fft::transform_2d(z, n, n, fft::Direction::Forward);
    return z;
  }

  void inverse(std::vector<cplx> z, std::span<double> out) const {
    fft::transform_2d(z, n, n, fft::Direction::Inverse);
    const double s = 1.0 / static_cast<double>(N);
    for (std::size_t p = 0; p < N; ++p) out[p] = z[p].real() * s;
  }
};

void require_grid(std::size_t expected, std::size_t got, const char* what) {
  if (expected != got) {
    throw ShapeError(std::string(what) + ": init has " + std::to_string(got) + " values, expected " +
                     std::to_string(expected));
  }
}

void require_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw SolverError(std::string(what) + ": non-finite initial condition");
  }
}

Trajectory make_traj(const SolverSpec& spec, std::size_t C, const char* name) {
  Trajectory tr(spec.n_saves(), spec.H, spec.H, C);
  tr.dt_save = spec.dt * static_cast<double>(spec.save_every);
  tr.pde = name;
  return tr;
}

}  // namespace

std::string pde_name(PdeKind kind) {
  switch (kind) {
    case PdeKind::Heat: return "heat";
    case PdeKind::NsVorticity: return "ns_vorticity";
    case PdeKind::DiffusionReaction: return "diffusion_reaction";
  }
  return "unknown";
}

PdeKind parse_pde(const std::string& name) {
  if (name == "heat") return PdeKind::Heat;
  if (name == "ns_vorticity" || name == "ns") return PdeKind::NsVorticity;
  if (name == "diffusion_reaction" || name == "dr") return PdeKind::DiffusionReaction;
  throw ConfigError("unknown pde '" + name + "' (expected heat, ns_vorticity, diffusion_reaction)");
}

void SolverSpec::validate() const {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("dt must be positive, got " + std::to_string(dt));
  if (!is_pow2(H) || H < 4) throw ConfigError("H must be a power of two (>= 4), got " + std::to_string(H));
  if (save_every == 0 || n_steps % save_every != 0) {
    throw ConfigError("save_every (" + std::to_string(save_every) + ") must divide n_steps (" +
                      std::to_string(n_steps) + ")");
  }
  if (solve_H != 0 && (!is_pow2(solve_H) || solve_H < H)) {
    throw ConfigError("solve_H must be a power of two >= H, got " + std::to_string(solve_H));
  }
  if (solve_H != 0 && solve_H != H && mask) throw ConfigError("mask sub-domains require solve_H == H");
  if (nu < 0.0 || Du < 0.0 || Dv < 0.0) throw ConfigError("diffusion coefficients must be >= 0");
  if (mask) {
    if (pde != PdeKind::Heat) throw ConfigError("mask sub-domains are only supported for heat");
    if (mask->i0 >= mask->i1 || mask->j0 >= mask->j1 || mask->i1 > H || mask->j1 > H) {
      throw ConfigError("mask rectangle must be non-empty and inside the grid");
    }
  }
}

SolverSpec default_spec(PdeKind kind) {
  SolverSpec s;
  s.pde = kind;
  s.H = 32;
  s.dt = 0.01;
  s.n_steps = 400;
  s.save_every = 20;
  s.init_band = 8;
  switch (kind) {
    case PdeKind::Heat:
      s.nu = 0.05;
      break;
    case PdeKind::NsVorticity:
      s.nu = 1e-3;
      s.forcing_amp = 0.1;
      s.solve_H = 64;
      break;
    case PdeKind::DiffusionReaction:
      s.init_rms = 0.5;
      break;
  }
  return s;
}

nlohmann::json spec_to_json(const SolverSpec& s) {
  nlohmann::json j{{"pde", pde_name(s.pde)}, {"H", s.H}, {"solve_H", s.solve_H},         {"dt", s.dt},
                   {"n_steps", s.n_steps},   {"save_every", s.save_every},
                   {"nu", s.nu},             {"Du", s.Du},       {"Dv", s.Dv},
                   {"k", s.k},               {"reaction", s.reaction},
                   {"forcing_amp", s.forcing_amp}, {"init_rms", s.init_rms}, {"init_band", s.init_band}, {"seed", s.seed}};
  if (s.mask) j["mask"] = {s.mask->i0, s.mask->i1, s.mask->j0, s.mask->j1};
  return j;
}

SolverSpec spec_from_json(const nlohmann::json& j) {
  SolverSpec s;
  if (j.contains("pde")) s.pde = parse_pde(j.at("pde").get<std::string>());
  s.H = j.value("H", s.H);
  s.solve_H = j.value("solve_H", s.solve_H);
  s.dt = j.value("dt", s.dt);
  s.n_steps = j.value("n_steps", s.n_steps);
  s.save_every = j.value("save_every", s.save_every);
  s.nu = j.value("nu", s.nu);
  s.Du = j.value("Du", s.Du);
  s.Dv = j.value("Dv", s.Dv);
  s.k = j.value("k", s.k);
  s.reaction = j.value("reaction", s.reaction);
  s.forcing_amp = j.value("forcing_amp", s.forcing_amp);
  s.init_rms = j.value("init_rms", s.init_rms);
  s.init_band = j.value("init_band", s.init_band);
  s.seed = j.value("seed", s.seed);
  if (j.contains("mask")) {
    auto m = j.at("mask").get<std::vector<std::size_t>>();
    if (m.size() != 4) throw ConfigError("mask must be [i0, i1, j0, j1]");
    s.mask = MaskRect{m[0], m[1], m[2], m[3]};
  }
  return s;
}

Trajectory solve_heat(std::span<const double> init, double nu, const SolverSpec& spec) {
  spec.validate();
  if (nu < 0.0) throw ConfigError("heat: nu must be >= 0");
  const Grid g(spec.H);
  require_grid(g.N, init.size(), "solve_heat");
  require_finite(init, "solve_heat");
  Trajectory tr = make_traj(spec, 1, "heat");
  tr.channels = {"u"};

  if (!spec.mask) {
    const auto u0 = g.forward(init);
    std::vector<cplx> z(g.N);
    for (std::size_t s = 0; s < tr.T; ++s) {
      const double t = static_cast<double>(s * spec.save_every) * spec.dt;
      for (std::size_t p = 0; p < g.N; ++p) z[p] = u0[p] * std::exp(-nu * g.k2[p] * t);
      g.inverse(z, {tr.frame(s), g.N});
    }
    return tr;
  }

  const MaskRect r = *spec.mask;
  for (std::size_t i = 0; i < g.n; ++i) {
    for (std::size_t j = 0; j < g.n; ++j) {
      tr.mask[i * g.n + j] = (i >= r.i0 && i < r.i1 && j >= r.j0 && j < r.j1) ? 1 : 0;
    }
  }
  std::vector<double> u(init.begin(), init.end());
  for (std::size_t p = 0; p < g.N; ++p) u[p] *= tr.mask[p];
  std::vector<double> decay(g.N);
  for (std::size_t p = 0; p < g.N; ++p) decay[p] = std::exp(-nu * g.k2[p] * spec.dt);
  std::copy(u.begin(), u.end(), tr.frame(0));
  for (std::size_t step = 1; step <= spec.n_steps; ++step) {
    auto z = g.forward(u);
    for (std::size_t p = 0; p < g.N; ++p) z[p] *= decay[p];
    g.inverse(std::move(z), u);
    for (std::size_t p = 0; p < g.N; ++p) u[p] *= tr.mask[p];
    if (step % spec.save_every == 0) std::copy(u.begin(), u.end(), tr.frame(step / spec.save_every));
  }
  return tr;
}

double enstrophy(std::span<const double> w, std::size_t H) {
  double acc = 0.0;
  for (double v : w) acc += v * v;
  return 0.5 * acc / static_cast<double>(H * H);
}

double kinetic_energy(std::span<const double> w, std::size_t H) {
  const Grid g(H);
  auto wh = g.forward(w);
  // By Parseval, mean |u|^2 = sum_k |k|^2 |psi_k|^2 / N^2 with psi_k = w_k / |k|^2.
  double acc = 0.0;
  for (std::size_t p = 1; p < g.N; ++p) acc += std::norm(wh[p]) / g.k2[p];
  return 0.5 * acc / static_cast<double>(g.N * g.N);
}

Trajectory solve_ns_vorticity(std::span<const double> init_w, double nu, double forcing_amp,
                              const SolverSpec& spec, NsDiagnostics* diag) {
  spec.validate();
  if (nu < 0.0) throw ConfigError("ns: nu must be >= 0");
  const Grid g(spec.H);
  require_grid(g.N, init_w.size(), "solve_ns_vorticity");
  require_finite(init_w, "solve_ns_vorticity");
  Trajectory tr = make_traj(spec, 1, "ns_vorticity");
  tr.channels = {"w"};

  const double two_pi = 2.0 * std::numbers::pi;
  const double dx = two_pi / static_cast<double>(g.n);
  const double dt = spec.dt;

  std::vector<double> f(g.N);
  for (std::size_t i = 0; i < g.n; ++i) {
    for (std::size_t j = 0; j < g.n; ++j) {
      const double x = dx * static_cast<double>(i), y = dx * static_cast<double>(j);
      f[i * g.n + j] = forcing_amp * (std::sin(x + y) + std::cos(x + y));
    }
  }
  const auto fh = g.forward(f);

  auto wh = g.forward(init_w);
  wh[0] = 0.0;

  std::vector<cplx> qh(g.N), vh(g.N), wxh(g.N), wyh(g.N);
  std::vector<double> q(g.N), v(g.N), wx(g.N), wy(g.N), nl(g.N);
  double max_cfl = 0.0;
  const cplx I{0.0, 1.0};

  // F = -dealias(u . grad w) in spectral space; records the CFL number of w.
  auto advection = [&](const std::vector<cplx>& w_hat, std::vector<cplx>& F) {
    for (std::size_t p = 0; p < g.N; ++p) {
      const cplx psi = p == 0 ? cplx{} : w_hat[p] / g.k2[p];
      qh[p] = I * g.dky[p] * psi;
      vh[p] = -I * g.dkx[p] * psi;
      wxh[p] = I * g.dkx[p] * w_hat[p];
      wyh[p] = I * g.dky[p] * w_hat[p];
    }
    g.inverse(qh, q);
    g.inverse(vh, v);
    g.inverse(wxh, wx);
    g.inverse(wyh, wy);
    double umax = 0.0;
    for (std::size_t p = 0; p < g.N; ++p) {
      nl[p] = q[p] * wx[p] + v[p] * wy[p];
      umax = std::max(umax, std::hypot(q[p], v[p]));
    }
    const double cfl = umax * dt / dx;
    max_cfl = std::max(max_cfl, cfl);
    if (!std::isfinite(cfl) || cfl > 0.5) {
      throw SolverError("ns_vorticity: CFL condition violated, measured CFL = " + std::to_string(cfl) +
                        " (limit 0.5)");
    }
    F = g.forward(nl);
    for (std::size_t p = 0; p < g.N; ++p) F[p] = -F[p] * g.dealias[p];
  };

  std::vector<cplx> F1(g.N), F2(g.N), w_tilde(g.N);
  g.inverse(wh, {tr.frame(0), g.N});
  for (std::size_t step = 1; step <= spec.n_steps; ++step) {
    advection(wh, F1);
    for (std::size_t p = 0; p < g.N; ++p) {
      const double lap = -g.k2[p];
      w_tilde[p] = (wh[p] + dt * (F1[p] + fh[p] + 0.5 * nu * lap * wh[p])) / (1.0 - 0.5 * nu * dt * lap);
    }
    w_tilde[0] = 0.0;
    advection(w_tilde, F2);
    for (std::size_t p = 0; p < g.N; ++p) {
      const double lap = -g.k2[p];
      wh[p] = (wh[p] + dt * (0.5 * (F1[p] + F2[p]) + fh[p] + 0.5 * nu * lap * wh[p])) /
              (1.0 - 0.5 * nu * dt * lap);
    }
    wh[0] = 0.0;
    if (step % spec.save_every == 0) g.inverse(wh, {tr.frame(step / spec.save_every), g.N});
  }
  if (diag) diag->max_cfl = max_cfl;
  tr.check_finite();
  return tr;
}

Trajectory solve_diffusion_reaction(std::span<const double> init, double Du, double Dv, double k,
                                    const SolverSpec& spec) {
  spec.validate();
  if (Du < 0.0 || Dv < 0.0) throw ConfigError("diffusion_reaction: Du, Dv must be >= 0");
  const Grid g(spec.H);
  require_grid(2 * g.N, init.size(), "solve_diffusion_reaction");
  require_finite(init, "solve_diffusion_reaction");
  Trajectory tr = make_traj(spec, 2, "diffusion_reaction");
  tr.channels = {"u", "v"};

  std::vector<double> u(g.N), v(g.N);
  for (std::size_t p = 0; p < g.N; ++p) {
    u[p] = init[2 * p];
    v[p] = init[2 * p + 1];
  }
  const double dt = spec.dt;
  const double r = spec.reaction;
  std::vector<double> half_u(g.N), half_v(g.N);
  for (std::size_t p = 0; p < g.N; ++p) {
    half_u[p] = std::exp(-Du * g.k2[p] * 0.5 * dt);
    half_v[p] = std::exp(-Dv * g.k2[p] * 0.5 * dt);
  }
  auto diffuse = [&](std::vector<double>& field, const std::vector<double>& factor) {
    auto z = g.forward(field);
    for (std::size_t p = 0; p < g.N; ++p) z[p] *= factor[p];
    g.inverse(std::move(z), field);
  };
  auto store = [&](std::size_t s) {
    double* out = tr.frame(s);
    for (std::size_t p = 0; p < g.N; ++p) {
      out[2 * p] = u[p];
      out[2 * p + 1] = v[p];
    }
  };

  store(0);
  for (std::size_t step = 1; step <= spec.n_steps; ++step) {
    diffuse(u, half_u);
    diffuse(v, half_v);
    double umax = 0.0;
    for (std::size_t p = 0; p < g.N; ++p) {
      const double a = u[p], b = v[p];
      u[p] = a + dt * r * (a - a * a * a - k - b);
      v[p] = b + dt * r * (a - b);
      umax = std::max(umax, std::abs(u[p]));
    }
    if (!(umax <= 1e3)) {
      throw SolverError("diffusion_reaction: blow-up at step " + std::to_string(step) +
                        ", max|u| = " + std::to_string(umax));
    }
    diffuse(u, half_u);
    diffuse(v, half_v);
    if (step % spec.save_every == 0) store(step / spec.save_every);
  }
  tr.check_finite();
  return tr;
}

namespace {

// Wavenumbers are measured in cycles per unit length of the normalized domain,
// so |k|^2 enters as 4 pi^2 (kx^2 + ky^2).
double grf_power(double k2, double alpha, double tau) {
  return std::pow(4.0 * std::numbers::pi * std::numbers::pi * k2 + tau * tau, -alpha);
}

// Sum of the power spectrum over the whole integer lattice (minus k = 0),
// used to normalize the field RMS independently of the grid.
double grf_total_power(double alpha, double tau) {
  const long cut = 512;
  double acc = 0.0;
  for (long a = -cut; a <= cut; ++a) {
    for (long b = -cut; b <= cut; ++b) {
      if (a == 0 && b == 0) continue;
      acc += grf_power(static_cast<double>(a * a + b * b), alpha, tau);
    }
  }
  return acc;
}

}  // namespace

std::vector<double> gaussian_random_field(std::size_t H, std::uint64_t seed, double rms, std::size_t band,
                                          double alpha, double tau) {
  if (!is_pow2(H)) throw ConfigError("H must be a power of two, got " + std::to_string(H));
  static thread_local double cached_alpha = -1.0, cached_tau = -1.0, cached_total = 0.0;
  if (alpha != cached_alpha || tau != cached_tau) {
    cached_total = grf_total_power(alpha, tau);
    cached_alpha = alpha;
    cached_tau = tau;
  }
  const double scale = rms / std::sqrt(cached_total);
  const Grid g(H);
  std::vector<cplx> z(g.N, cplx{});
  const long half = static_cast<long>(H / 2);
  for (std::size_t p = 0; p < g.N; ++p) {
    const long a = static_cast<long>(g.kx[p]);
    const long b = static_cast<long>(g.ky[p]);
    if (std::abs(a) >= half || std::abs(b) >= half) continue;  // Nyquist rows/cols stay zero
    if (band > 0 && (std::abs(a) > static_cast<long>(band) || std::abs(b) > static_cast<long>(band))) continue;
    if (a < 0 || (a == 0 && b <= 0)) continue;                  // filled by conjugate symmetry
    std::mt19937_64 rng(hash_combine(seed, static_cast<std::uint64_t>(a + (1L << 20)),
                                     static_cast<std::uint64_t>(b + (1L << 20))));
    std::normal_distribution<double> normal;
    const double re = normal(rng), im = normal(rng);
    const double sigma = std::sqrt(grf_power(g.k2[p], alpha, tau)) * scale;
    const cplx c = sigma * cplx{re, im} / std::numbers::sqrt2;
    z[p] = c;
    const std::size_t i = static_cast<std::size_t>((H - static_cast<std::size_t>(a)) % H);
    const std::size_t j = static_cast<std::size_t>((static_cast<long>(H) - b) % static_cast<long>(H));
    z[i * H + j] = std::conj(c);
  }
  fft::transform_2d(z, H, H, fft::Direction::Inverse);
  std::vector<double> u(g.N);
  for (std::size_t p = 0; p < g.N; ++p) u[p] = z[p].real();
  return u;
}

namespace {

Trajectory solve_from_seed(const SolverSpec& spec, std::uint64_t seed) {
  const std::size_t H = spec.H;
  switch (spec.pde) {
    case PdeKind::Heat:
      return solve_heat(gaussian_random_field(H, hash_combine(seed, 0), spec.init_rms, spec.init_band), spec.nu,
                        spec);
    case PdeKind::NsVorticity:
      return solve_ns_vorticity(gaussian_random_field(H, hash_combine(seed, 0), spec.init_rms, spec.init_band),
                                spec.nu, spec.forcing_amp, spec);
    case PdeKind::DiffusionReaction: {
      const auto u = gaussian_random_field(H, hash_combine(seed, 0), spec.init_rms, spec.init_band);
      const auto v = gaussian_random_field(H, hash_combine(seed, 1), spec.init_rms, spec.init_band);
      std::vector<double> init(2 * u.size());
      for (std::size_t p = 0; p < u.size(); ++p) {
        init[2 * p] = u[p];
        init[2 * p + 1] = v[p];
      }
      return solve_diffusion_reaction(init, spec.Du, spec.Dv, spec.k, spec);
    }
  }
  throw ConfigError("unknown pde kind");
}

}  // namespace

Trajectory generate_trajectory(const SolverSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (spec.solver_grid() == spec.H) return solve_from_seed(spec, seed);
  SolverSpec fine = spec;
  fine.H = spec.solver_grid();
  fine.solve_H = 0;
  const Trajectory full = solve_from_seed(fine, seed);
  Trajectory tr(full.T, spec.H, spec.H, full.C);
  tr.dt_save = full.dt_save;
  tr.pde = full.pde;
  tr.channels = full.channels;
  for (std::size_t t = 0; t < full.T; ++t) {
    const auto coarse = fourier_resample({full.frame(t), full.frame_size()}, fine.H, fine.H, full.C, spec.H, spec.H);
    std::copy(coarse.begin(), coarse.end(), tr.frame(t));
  }
  return tr;
}

TrajectoryDataset generate_dataset(const SolverSpec& spec, std::size_t n_traj, std::uint64_t seed) {
  if (n_traj < 1) throw ConfigError("n_traj must be >= 1");
  spec.validate();
  TrajectoryDataset ds;
  ds.trajectories.reserve(n_traj);
  for (std::size_t i = 0; i < n_traj; ++i) {
    try {
      Trajectory tr = generate_trajectory(spec, seed ^ static_cast<std::uint64_t>(i));
      tr.round_to_storage();
      tr.check_finite();
      ds.trajectories.push_back(std::move(tr));
    } catch (const Error& e) {
      throw SolverError("trajectory " + std::to_string(i) + " failed: " + e.what());
    }
  }
  const ChannelStats st = ds.compute_stats();
  const Trajectory& first = ds.trajectories.front();
  ds.metadata = {{"pde", first.pde},
                 {"dt_save", first.dt_save},
                 {"channels", first.channels},
                 {"channel_mean", st.mean},
                 {"channel_std", st.std},
                 {"seed", seed},
                 {"spec", spec_to_json(spec)}};
  return ds;
}

}  // namespace dpot
