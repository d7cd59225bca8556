#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "dpot/pde/solvers.hpp"
#include "dpot/train/trainer.hpp"
#include "dpot/verify/checks.hpp"

namespace dpot::verify {

namespace {

// Trajectory seeds are seed ^ index, so train and test use seeds whose low
// bits cannot collide.
constexpr std::uint64_t kTrainSeed = 1;
constexpr std::uint64_t kTestSeed = 1ull << 40;
constexpr std::uint64_t kAuxSeed = 1ull << 41;

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

CheckResult finish(int id, std::string name, bool ok, std::string detail, double seconds, double budget) {
  CheckResult r{id, std::move(name), ok && seconds <= budget, std::move(detail), seconds, budget};
  if (ok && !r.passed) r.detail += fmt::format("; over time budget ({:.0f} s > {:.0f} s)", seconds, budget);
  return r;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? NAN : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += fmt::format("{}{:.4f}", s.empty() ? "" : " ", x);
  return s;
}

void write_lines(const ExperimentOptions& opt, const std::string& file, const std::vector<std::string>& lines) {
  if (opt.out_dir.empty()) return;
  std::filesystem::create_directories(opt.out_dir);
  std::ofstream f(std::filesystem::path(opt.out_dir) / file);
  for (const auto& l : lines) f << l << "\n";
}

/// Mean one-step L2RE of predicting the last context frame, over the same
/// windows `evaluate` scores, in destandardized units.
double last_frame_baseline(const PreparedDataset& ds, std::size_t T_ctx) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& tr : ds.trajectories) {
    const std::size_t pixels = tr.H * tr.W;
    for (std::size_t t = T_ctx; t < tr.T; ++t) {
      double num = 0.0, den = 0.0;
      for (std::size_t p = 0; p < pixels; ++p) {
        if (tr.values[(t * pixels + p) * tr.C + tr.C - 1] == 0.0) continue;
        for (std::size_t c = 0; c + 1 < tr.C; ++c) {
          if (!tr.is_physical(c)) continue;
          const double sd = ds.stats.std[c], mu = ds.stats.mean[c];
          const double prev = tr.frame(t - 1)[p * tr.C + c] * sd + mu;
          const double cur = tr.frame(t)[p * tr.C + c] * sd + mu;
          num += (prev - cur) * (prev - cur);
          den += cur * cur;
        }
      }
      if (den > 0.0) {
        sum += std::sqrt(num / den);
        ++n;
      }
    }
  }
  return sum / static_cast<double>(n);
}

SolverSpec heat_spec(std::size_t H) {
  SolverSpec s = default_spec(PdeKind::Heat);
  s.H = H;
  s.nu = 0.2;
  return s;
}

}  // namespace

std::vector<CheckResult> experiment_heat(const ExperimentOptions& opt) {
  constexpr double kOneStepTol = 0.05;
  constexpr double kDegradationTol = 0.5;
  const Stopwatch sw;
  std::vector<CheckResult> out;
  try {
    spdlog::info("heat experiment: generating 500 train and 50 test trajectories");
    const PreparedDataset train = prepare_dataset(generate_dataset(heat_spec(32), 500, kTrainSeed), 32, 1, "heat");
    const PreparedDataset test =
        prepare_dataset(generate_dataset(heat_spec(32), 50, kTestSeed), 32, 1, "heat", train.stats);

    const ModelConfig mc = ModelConfig::nano(2, 1);
    DpotModel model(mc, 7);
    TrainConfig tc;
    tc.epochs = 20;
    tc.steps_per_epoch = 100;
    tc.batch_size = 8;
    tc.peak_lr = 1e-3;
    tc.seed = 7;
    tc.rollout_steps = 10;
    Trainer trainer(model, {train}, tc);
    trainer.run();
    const EvalResult ev = evaluate(model, test, 10);
    const double baseline = last_frame_baseline(test, mc.T_ctx);
    const double train_seconds = sw.seconds();
    out.push_back(finish(7, "desk-training", ev.one_step <= kOneStepTol && baseline > ev.one_step,
                         fmt::format("nano on 500 heat trajectories (nu=0.2, 32x32, T_ctx=10), {} steps: one-step L2RE "
                                     "{:.4f} on 50 held-out (tol {:.2f}); last-frame baseline {:.4f}; rollout-10 {:.4f}",
                                     tc.total_steps(), ev.one_step, kOneStepTol, baseline, ev.rollout),
                         train_seconds, 1200.0));

    // Resolution generalization of the same model. Test fields are generated
    // at 64x64 (same per-mode initial conditions) and Fourier-resampled to 48.
    const Stopwatch sw9;
    const TrajectoryDataset hi = generate_dataset(heat_spec(64), 50, kTestSeed);
    std::vector<std::string> lines{"resolution,onestep,rollout"};
    lines.push_back(fmt::format("32,{},{}", ev.one_step, ev.rollout));
    std::string detail = fmt::format("32: {:.4f}", ev.one_step);
    double worst = 0.0;
    for (std::size_t H : {48, 64}) {
      const PreparedDataset ds = prepare_dataset(hi, H, 1, "heat", train.stats);
      const EvalResult e = evaluate(model, ds, 10);
      const double degr = (e.one_step - ev.one_step) / ev.one_step;
      worst = std::max(worst, degr);
      detail += fmt::format(", {}: {:.4f} ({:+.1f}%)", H, e.one_step, 100.0 * degr);
      lines.push_back(fmt::format("{},{},{}", H, e.one_step, e.rollout));
    }
    write_lines(opt, "resolution.csv", lines);
    out.push_back(finish(9, "resolution-generalization", worst <= kDegradationTol,
                         "one-step L2RE " + detail + fmt::format(" (max degradation tol {:.0f}%)", 100 * kDegradationTol),
                         sw9.seconds(), 600.0));
  } catch (const std::exception& e) {
    if (out.empty()) out.push_back(finish(7, "desk-training", false, std::string("exception: ") + e.what(), sw.seconds(), 1200.0));
    out.push_back(finish(9, "resolution-generalization", false, std::string("exception: ") + e.what(), 0.0, 600.0));
  }
  return out;
}

CheckResult experiment_noise(const ExperimentOptions& opt) {
  const Stopwatch sw;
  try {
    spdlog::info("noise experiment: generating 200 train and 20 test NS trajectories");
    const SolverSpec ns = default_spec(PdeKind::NsVorticity);
    const PreparedDataset train = prepare_dataset(generate_dataset(ns, 200, kTrainSeed), 32, 1, "ns");
    const PreparedDataset test = prepare_dataset(generate_dataset(ns, 20, kTestSeed), 32, 1, "ns", train.stats);

    const std::vector<double> grid{0.0, 5e-5, 5e-4, 5e-2};
    std::vector<std::vector<double>> rollout(grid.size());
    std::vector<std::string> lines{"eps,seed,onestep,rollout"};
    for (std::size_t s = 0; s < opt.seeds; ++s) {
      for (std::size_t g = 0; g < grid.size(); ++g) {
        DpotModel model(ModelConfig::nano(2, 1), 100 + s);
        TrainConfig tc;
        tc.epochs = 10;
        tc.steps_per_epoch = 100;
        tc.batch_size = 8;
        tc.seed = 100 + s;
        tc.noise_eps = grid[g];
        Trainer trainer(model, {train}, tc);
        trainer.run();
        const EvalResult ev = evaluate(model, test, 10);
        rollout[g].push_back(ev.rollout);
        lines.push_back(fmt::format("{},{},{},{}", grid[g], s, ev.one_step, ev.rollout));
        spdlog::info("noise eps {:g} seed {}: one-step {:.4f} rollout {:.4f}", grid[g], s, ev.one_step, ev.rollout);
      }
    }
    write_lines(opt, "noise.csv", lines);
    std::vector<double> means;
    for (const auto& r : rollout) means.push_back(mean_of(r));
    const double best_small = std::min(means[1], means[2]);
    const bool ok = best_small <= means[0] && means[3] > means[0];
    std::string detail = fmt::format("mean 10-step rollout L2RE over {} seeds on NS:", opt.seeds);
    for (std::size_t g = 0; g < grid.size(); ++g) detail += fmt::format(" eps={:g}: {:.4f} [{}];", grid[g], means[g], join(rollout[g]));
    detail += fmt::format(" best small-eps {:.4f} vs eps=0 {:.4f}", best_small, means[0]);
    return finish(8, "noise-trend", ok && opt.seeds >= 5, detail, sw.seconds(), 7200.0);
  } catch (const std::exception& e) {
    return finish(8, "noise-trend", false, std::string("exception: ") + e.what(), sw.seconds(), 7200.0);
  }
}

CheckResult experiment_transfer(const ExperimentOptions& opt) {
  const Stopwatch sw;
  try {
    spdlog::info("transfer experiment: generating heat, diffusion-reaction and NS data");
    const std::size_t C_max = 2;
    const ModelConfig mc = ModelConfig::nano(C_max + 1, C_max);
    const PreparedDataset heat =
        prepare_dataset(generate_dataset(heat_spec(32), 300, kAuxSeed), 32, C_max, "heat");
    const PreparedDataset dr = prepare_dataset(
        generate_dataset(default_spec(PdeKind::DiffusionReaction), 300, kAuxSeed), 32, C_max, "dr");
    const SolverSpec ns = default_spec(PdeKind::NsVorticity);
    const PreparedDataset ns_train = prepare_dataset(generate_dataset(ns, 64, kTrainSeed), 32, C_max, "ns");
    const PreparedDataset ns_test =
        prepare_dataset(generate_dataset(ns, 20, kTestSeed), 32, C_max, "ns", ns_train.stats);

    DpotModel pretrained(mc, 1000);
    TrainConfig pc;
    pc.epochs = 20;
    pc.steps_per_epoch = 100;
    pc.batch_size = 8;
    pc.seed = 1000;
    Trainer(pretrained, {heat, dr}, pc).run();
    const StateDict pre_state = pretrained.state_dict();

    TrainConfig fc;
    fc.epochs = 4;
    fc.steps_per_epoch = 100;
    fc.batch_size = 8;
    std::vector<double> fine, scratch;
    std::vector<std::string> lines{"seed,finetuned_rollout,scratch_rollout,finetuned_onestep,scratch_onestep"};
    std::size_t wins = 0;
    for (std::size_t s = 0; s < opt.seeds; ++s) {
      fc.seed = 2000 + s;
      DpotModel a(mc, 3000 + s);
      a.load_state_dict(pre_state);
      Trainer(a, {ns_train}, fc).run();
      const EvalResult ea = evaluate(a, ns_test, 10);
      DpotModel b(mc, 3000 + s);
      Trainer(b, {ns_train}, fc).run();
      const EvalResult eb = evaluate(b, ns_test, 10);
      fine.push_back(ea.rollout);
      scratch.push_back(eb.rollout);
      wins += ea.rollout <= eb.rollout;
      lines.push_back(fmt::format("{},{},{},{},{}", s, ea.rollout, eb.rollout, ea.one_step, eb.one_step));
      spdlog::info("transfer seed {}: fine-tuned {:.4f} scratch {:.4f}", s, ea.rollout, eb.rollout);
    }
    write_lines(opt, "transfer.csv", lines);
    const std::size_t need = opt.seeds >= 5 ? opt.seeds - 1 : opt.seeds;
    return finish(10, "transfer-utility", wins >= need && opt.seeds >= 5,
                  fmt::format("10-step rollout L2RE on NS after {} fine-tuning steps: pretrained [{}] vs scratch [{}]; "
                              "pretrained wins {}/{} (need {})",
                              fc.total_steps(), join(fine), join(scratch), wins, opt.seeds, need),
                  sw.seconds(), 7200.0);
  } catch (const std::exception& e) {
    return finish(10, "transfer-utility", false, std::string("exception: ") + e.what(), sw.seconds(), 7200.0);
  }
}

std::vector<CheckResult> run_experiments(const ExperimentOptions& opt,
                                         const std::function<void(const CheckResult&)>& on_result) {
  std::vector<CheckResult> out;
  auto add = [&](CheckResult r) {
    if (on_result) on_result(r);
    out.push_back(std::move(r));
  };
  for (auto& r : experiment_heat(opt)) add(std::move(r));
  add(experiment_noise(opt));
  add(experiment_transfer(opt));
  std::sort(out.begin(), out.end(), [](const CheckResult& a, const CheckResult& b) { return a.id < b.id; });
  return out;
}

}  // namespace dpot::verify
