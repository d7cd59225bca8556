#include "dpot/train/ablation.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "dpot/error.hpp"

namespace dpot {

std::string ablation_name(AblationKind kind) {
  switch (kind) {
    case AblationKind::Heads: return "heads";
    case AblationKind::Patch: return "patch";
    case AblationKind::Noise: return "noise";
    case AblationKind::Resolution: return "resolution";
  }
  return "unknown";
}

AblationKind parse_ablation(const std::string& name) {
  for (auto k : {AblationKind::Heads, AblationKind::Patch, AblationKind::Noise, AblationKind::Resolution})
    if (ablation_name(k) == name) return k;
  throw ConfigError("unknown ablation '" + name + "' (heads|patch|noise|resolution)");
}

namespace {

std::size_t as_count(double v, const char* what) {
  if (!(v >= 1.0) || v != std::floor(v)) throw ConfigError(std::string("ablation: ") + what + " must be a positive integer");
  return static_cast<std::size_t>(v);
}

PreparedDataset resampled(const PreparedDataset& d, std::size_t H) {
  PreparedDataset out;
  out.name = d.name;
  out.stats = d.stats;
  for (const auto& tr : d.trajectories) out.trajectories.push_back(tr.H == H ? tr : resample_trajectory(tr, H));
  return out;
}

void fill_eval(AblationRow& row, const DpotModel& model, const std::vector<PreparedDataset>& sets,
               std::size_t rollout_steps) {
  for (const auto& d : sets) {
    const EvalResult r = evaluate(model, d, rollout_steps);
    row.one_step[d.name] = r.one_step;
    row.rollout[d.name] = r.rollout;
  }
}

}  // namespace

std::vector<AblationRow> run_ablation(AblationKind kind, const std::vector<double>& grid, const AblationSetup& setup) {
  if (grid.empty()) throw ConfigError("ablation: empty grid");
  std::vector<AblationRow> rows;

  if (kind == AblationKind::Resolution) {
    DpotModel model(setup.model, setup.model_seed);
    Trainer trainer(model, setup.train_sets, setup.train);
    trainer.run();
    for (double v : grid) {
      const std::size_t H = as_count(v, "resolution");
      AblationRow row{ablation_name(kind), v, false, trainer.metrics().back().loss, {}, {}};
      std::vector<PreparedDataset> sets;
      if (auto it = setup.eval_by_resolution.find(H); it != setup.eval_by_resolution.end()) {
        sets = it->second;
      } else {
        for (const auto& d : setup.eval_sets) sets.push_back(resampled(d, H));
      }
      fill_eval(row, model, sets, setup.rollout_steps);
      rows.push_back(std::move(row));
    }
    return rows;
  }

  for (double v : grid) {
    ModelConfig mc = setup.model;
    TrainConfig tc = setup.train;
    if (kind == AblationKind::Heads) mc.heads = as_count(v, "heads");
    if (kind == AblationKind::Patch) mc.P = as_count(v, "patch");
    if (kind == AblationKind::Noise) {
      if (!(v >= 0.0)) throw ConfigError("ablation: noise level must be >= 0");
      tc.noise_eps = v;
    }
    mc.validate();
    DpotModel model(mc, setup.model_seed);
    Trainer trainer(model, setup.train_sets, tc);
    trainer.run();
    AblationRow row{ablation_name(kind), v, true, trainer.metrics().back().loss, {}, {}};
    fill_eval(row, model, setup.eval_sets, setup.rollout_steps);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError(IoError::Kind::Open, "cannot write " + path);
  f.precision(17);
  std::set<std::string> names;
  for (const auto& r : rows)
    for (const auto& [k, v] : r.one_step) names.insert(k);
  f << "kind,value,trained,final_loss";
  for (const auto& n : names) f << ",onestep_" << n;
  for (const auto& n : names) f << ",rollout_" << n;
  f << "\n";
  for (const auto& r : rows) {
    f << r.kind << "," << r.value << "," << (r.trained ? 1 : 0) << "," << r.final_loss;
    for (const auto* m : {&r.one_step, &r.rollout})
      for (const auto& n : names) {
        f << ",";
        if (auto it = m->find(n); it != m->end()) f << it->second;
      }
    f << "\n";
  }
}

}  // namespace dpot
