#pragma once

// Pseudo-spectral solvers on the periodic square [0, 2*pi]^2. Grid point
// (i, j) sits at x = 2*pi*i/H, y = 2*pi*j/W.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dpot/pde/trajectory.hpp"

namespace dpot {

enum class PdeKind { Heat, NsVorticity, DiffusionReaction };

std::string pde_name(PdeKind kind);
PdeKind parse_pde(const std::string& name);

/// Rectangular interior [i0, i1) x [j0, j1); values outside are held at 0.
struct MaskRect {
  std::size_t i0 = 0, i1 = 0, j0 = 0, j1 = 0;
};

struct SolverSpec {
  PdeKind pde = PdeKind::Heat;
  std::size_t H = 32;
  std::size_t solve_H = 0;  // internal solver grid (0 = H); saved frames are truncated to H
  double dt = 0.01;
  std::size_t n_steps = 400;
  std::size_t save_every = 20;

  double nu = 0.01;  // heat and NS viscosity
  double Du = 1e-3;
  double Dv = 5e-3;
  double k = 5e-3;            // FitzHugh-Nagumo offset
  double reaction = 1.0;      // scales both reaction terms; 0 disables them
  double forcing_amp = 0.0;   // NS forcing a*(sin(x+y) + cos(x+y))
  double init_rms = 1.0;      // amplitude of the random initial fields
  std::size_t init_band = 0;  // if > 0, random initial fields keep only |kx|, |ky| <= init_band
  std::optional<MaskRect> mask;  // heat only
  std::uint64_t seed = 0;

  std::size_t n_saves() const { return n_steps / save_every + 1; }
  std::size_t solver_grid() const { return solve_H == 0 ? H : solve_H; }
  /// Throws ConfigError on dt <= 0, non power-of-two H, save_every not dividing n_steps.
  void validate() const;
};

/// Desk-scale defaults per PDE family: 32^2 grid, 21 saves every 0.2 time units,
/// initial fields band-limited to |k| <= 8 so they sit inside the dealiased band.
/// NS is solved on a 64^2 grid because its cascade outruns a 32^2 grid at nu = 1e-3.
SolverSpec default_spec(PdeKind kind);

nlohmann::json spec_to_json(const SolverSpec& spec);
SolverSpec spec_from_json(const nlohmann::json& j);

/// Exact per-mode heat decay u_k(t) = u_k(0) exp(-nu |k|^2 t). With a mask the
/// field is advanced one dt at a time and zeroed outside the rectangle.
Trajectory solve_heat(std::span<const double> init, double nu, const SolverSpec& spec);

struct NsDiagnostics {
  double max_cfl = 0.0;
};

/// Vorticity form w_t + u.grad(w) = nu lap(w) + f, with lap(psi) = -w and
/// u = (d_y psi, -d_x psi). Crank-Nicolson diffusion, Heun advection, 2/3 dealiasing.
Trajectory solve_ns_vorticity(std::span<const double> init_w, double nu, double forcing_amp,
                              const SolverSpec& spec, NsDiagnostics* diag = nullptr);

/// FitzHugh-Nagumo: u_t = Du lap(u) + r*(u - u^3 - k - v), v_t = Dv lap(v) + r*(u - v).
/// Strang split: exact diffusion half-step, explicit Euler reaction, diffusion half-step.
/// init is [H, W, 2].
Trajectory solve_diffusion_reaction(std::span<const double> init, double Du, double Dv, double k,
                                    const SolverSpec& spec);

/// Enstrophy 0.5 * mean(w^2) and kinetic energy 0.5 * mean(|u|^2) of a vorticity field.
double enstrophy(std::span<const double> w, std::size_t H);
double kinetic_energy(std::span<const double> w, std::size_t H);

/// Gaussian random field with power spectrum proportional to (|k|^2 + tau^2)^-alpha,
/// |k| measured on the unit-normalized domain (4 pi^2 times the integer mode norm).
/// Each mode's coefficient depends only on (seed, kx, ky), so the same seed at
/// different resolutions yields the same field restricted to the shared modes.
/// The zero mode and Nyquist modes are zero; the expected RMS is `rms`.
/// `band` > 0 additionally zeroes modes with |kx| or |ky| above it.
std::vector<double> gaussian_random_field(std::size_t H, std::uint64_t seed, double rms = 1.0,
                                          std::size_t band = 0, double alpha = 2.5, double tau = 7.0);

/// One trajectory of the spec's PDE from a seeded random initial condition,
/// solved on solver_grid() and spectrally truncated to H.
Trajectory generate_trajectory(const SolverSpec& spec, std::uint64_t seed);

/// n_traj trajectories with per-trajectory seeds seed ^ index. Values are
/// rounded to real32 and per-channel stats are stored in the metadata.
/// A failing trajectory aborts with its index in the message.
TrajectoryDataset generate_dataset(const SolverSpec& spec, std::size_t n_traj, std::uint64_t seed);

}  // namespace dpot
