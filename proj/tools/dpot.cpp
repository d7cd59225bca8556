// Command-line front end: data generation, training, evaluation, rollout,
// ablations and the verification suite.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "dpot/error.hpp"
#include "dpot/io/persistence.hpp"
#include "dpot/pde/solvers.hpp"
#include "dpot/train/ablation.hpp"
#include "dpot/train/trainer.hpp"
#include "dpot/verify/checks.hpp"
#include "json.hpp"

using namespace dpot;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json read_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError(IoError::Kind::Open, "cannot open " + path);
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("DPOT_SEED");
  if (s == nullptr || *s == '\0') return std::nullopt;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used != std::string(s).size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(std::string("DPOT_SEED must be an unsigned integer, got '") + s + "'");
  }
}

void log_config(const std::string& what, const json& cfg) { spdlog::info("{} config: {}", what, cfg.dump()); }

json stats_to_json(const ChannelStats& s) { return {{"mean", s.mean}, {"std", s.std}}; }
ChannelStats stats_from_json(const json& j) {
  return {j.at("mean").get<std::vector<double>>(), j.at("std").get<std::vector<double>>()};
}

std::string dataset_name(const TrajectoryDataset& ds, const std::string& path) {
  if (ds.metadata.contains("pde") && ds.metadata["pde"].is_string()) return ds.metadata["pde"].get<std::string>();
  return fs::path(path).stem().string();
}

struct LoadedData {
  std::vector<TrajectoryDataset> raw;
  std::vector<std::string> names;
};

LoadedData load_all(const std::vector<std::string>& paths) {
  LoadedData d;
  for (const auto& p : paths) {
    d.raw.push_back(read_dataset(p));
    d.names.push_back(dataset_name(d.raw.back(), p));
  }
  return d;
}

std::size_t max_channels(const LoadedData& d) {
  std::size_t c = 0;
  for (const auto& ds : d.raw) c = std::max(c, ds.C());
  return c;
}

/// Training stats per dataset name, as stored in a checkpoint's extra block.
std::map<std::string, ChannelStats> stored_stats(const Checkpoint& ck) {
  std::map<std::string, ChannelStats> out;
  if (ck.extra.contains("datasets"))
    for (const auto& d : ck.extra["datasets"]) out[d.at("name").get<std::string>()] = stats_from_json(d.at("stats"));
  return out;
}

PreparedDataset prepare_for(const ModelConfig& mc, const TrajectoryDataset& raw, const std::string& name,
                            const std::map<std::string, ChannelStats>& stats) {
  if (raw.C() > mc.C_in - 1)
    throw ConfigError(name + " has " + std::to_string(raw.C()) + " channels, model accepts " +
                      std::to_string(mc.C_in - 1));
  std::optional<ChannelStats> s;
  if (auto it = stats.find(name); it != stats.end()) s = it->second;
  return prepare_dataset(raw, mc.H, mc.C_in - 1, name, s);
}

struct TrainJob {
  ModelConfig model;
  TrainConfig train;
  std::uint64_t model_seed = 0;
};

/// A training config file holds {"model": {...}, "train": {...}, "model_seed": n}
/// or just the training fields at top level.
TrainJob parse_train_file(const std::string& path, std::size_t C_max) {
  TrainJob job;
  job.model = ModelConfig::nano(C_max + 1, C_max);
  if (path.empty()) return job;
  const json j = read_json(path);
  if (j.contains("model")) job.model = config_from_json(j["model"]);
  job.train = train_config_from_json(j.contains("train") ? j["train"] : j);
  job.model_seed = j.value("model_seed", job.train.seed);
  return job;
}

void apply_env_seed(TrainJob& job) {
  if (auto s = env_seed()) {
    job.train.seed = *s;
    job.model_seed = *s;
  }
}

json job_json(const TrainJob& job) {
  return {{"model", config_to_json(job.model)}, {"train", train_config_to_json(job.train)}, {"model_seed", job.model_seed}};
}

json datasets_extra(const std::vector<PreparedDataset>& sets) {
  json arr = json::array();
  for (const auto& d : sets) arr.push_back({{"name", d.name}, {"stats", stats_to_json(d.stats)}});
  return arr;
}

void log_final(const Trainer& t) {
  if (t.metrics().empty()) return;
  const auto& r = t.metrics().back();
  spdlog::info("final epoch {} step {} loss {:.6g}", r.epoch, r.step, r.loss);
  for (const auto& [k, v] : r.one_step) spdlog::info("  one-step L2RE {}: {:.6g}", k, v);
  for (const auto& [k, v] : r.rollout) spdlog::info("  rollout L2RE {}: {:.6g}", k, v);
}

// ------------------------------------------------------------ subcommands

struct GenerateArgs {
  std::string spec, out;
  std::optional<std::size_t> n;
  std::optional<std::uint64_t> seed;
};

int cmd_generate(const GenerateArgs& a) {
  const json j = read_json(a.spec);
  SolverSpec spec = spec_from_json(j);
  std::size_t n = a.n.value_or(j.value("n_traj", std::size_t{8}));
  if (a.seed) spec.seed = *a.seed;
  if (auto s = env_seed()) spec.seed = *s;
  spec.validate();
  if (n == 0) throw ConfigError("n_traj must be >= 1");
  json resolved = spec_to_json(spec);
  resolved["n_traj"] = n;
  log_config("generate", resolved);
  const TrajectoryDataset ds = generate_dataset(spec, n, spec.seed);
  write_dataset(ds, a.out);
  spdlog::info("wrote {} trajectories [T={}, H={}, C={}] to {}", ds.size(), ds.T(), ds.H(), ds.C(), a.out);
  return 0;
}

struct TrainArgs {
  std::vector<std::string> data, eval;
  std::vector<double> weights;
  std::string config, out, from, metrics;
  bool attention_only = false;
};

int run_training(const TrainArgs& a, TrainJob job, std::optional<DpotModel> start, const std::string& what,
                 const std::map<std::string, ChannelStats>& stats) {
  if (!a.weights.empty()) job.train.weights = a.weights;
  apply_env_seed(job);
  job.model.validate();
  job.train.validate();
  json resolved = job_json(job);
  resolved["data"] = a.data;
  resolved["eval"] = a.eval;
  if (!a.from.empty()) resolved["from"] = a.from;
  log_config(what, resolved);

  const LoadedData train_raw = load_all(a.data);
  std::vector<PreparedDataset> train;
  for (std::size_t k = 0; k < train_raw.raw.size(); ++k)
    train.push_back(prepare_for(job.model, train_raw.raw[k], train_raw.names[k], stats));
  std::map<std::string, ChannelStats> all_stats = stats;
  for (const auto& d : train) all_stats[d.name] = d.stats;
  const LoadedData eval_raw = load_all(a.eval);
  std::vector<PreparedDataset> eval;
  for (std::size_t k = 0; k < eval_raw.raw.size(); ++k)
    eval.push_back(prepare_for(job.model, eval_raw.raw[k], eval_raw.names[k], all_stats));

  DpotModel model = start ? std::move(*start) : DpotModel(job.model, job.model_seed);
  Trainer trainer(model, train, job.train, eval);
  trainer.run();
  log_final(trainer);
  json extra{{"datasets", datasets_extra(train)}, {"resolved_config", resolved}};
  save_checkpoint(make_checkpoint(model, &trainer, extra), a.out);
  if (!a.metrics.empty()) trainer.metrics().write_csv(a.metrics);
  spdlog::info("checkpoint written to {}", a.out);
  return 0;
}

int cmd_pretrain(const TrainArgs& a) {
  const LoadedData probe = load_all(a.data);
  return run_training(a, parse_train_file(a.config, max_channels(probe)), std::nullopt, "pretrain", {});
}

int cmd_finetune(const TrainArgs& a) {
  const Checkpoint ck = load_checkpoint(a.from);
  TrainJob job;
  job.model = ck.config;
  if (ck.train_config) job.train = *ck.train_config;
  job.model_seed = job.train.seed;
  if (!a.config.empty()) {
    const json j = read_json(a.config);
    if (j.contains("model")) job.model = config_from_json(j["model"]);
    job.train = train_config_from_json(j.contains("train") ? j["train"] : j);
    job.model_seed = j.value("model_seed", job.train.seed);
  }
  apply_env_seed(job);
  DpotModel model(job.model, job.model_seed);
  if (a.attention_only) {
    const auto keys = load_attention_only(model, ck);
    spdlog::info("copied {} Fourier-attention tensors; other parameters freshly initialized", keys.size());
  } else if (config_str(job.model) == config_str(ck.config)) {
    load_into(model, ck);
  } else {
    TransferResult t = transfer_weights(ck.config, ck.params, job.model, job.model_seed);
    spdlog::info("transferred {} tensors, reinitialized {}", t.copied.size(), t.reinitialized.size());
    model = std::move(t.model);
  }
  return run_training(a, job, std::move(model), "finetune", stored_stats(ck));
}

struct EvalArgs {
  std::string ckpt, data, mode = "onestep", csv;
  std::size_t steps = 10, max_traj = 0;
};

int cmd_evaluate(const EvalArgs& a) {
  if (a.mode != "onestep" && a.mode != "rollout") throw ConfigError("--mode must be onestep or rollout");
  log_config("evaluate", {{"ckpt", a.ckpt}, {"data", a.data}, {"mode", a.mode}, {"steps", a.steps},
                          {"max_traj", a.max_traj}, {"csv", a.csv}});
  const Checkpoint ck = load_checkpoint(a.ckpt);
  const DpotModel model = model_from_checkpoint(ck);
  const TrajectoryDataset raw = read_dataset(a.data);
  const PreparedDataset ds = prepare_for(ck.config, raw, dataset_name(raw, a.data), stored_stats(ck));
  const EvalResult r = evaluate(model, ds, a.mode == "rollout" ? a.steps : 0, a.max_traj);
  std::ostringstream csv;
  csv.precision(17);
  if (a.mode == "onestep") {
    csv << "dataset,samples,excluded,l2re\n" << ds.name << "," << r.samples << "," << r.excluded << "," << r.one_step << "\n";
    spdlog::info("one-step L2RE {}: {:.6g} over {} windows", ds.name, r.one_step, r.samples);
  } else {
    csv << "step,l2re\n";
    for (std::size_t s = 0; s < r.rollout_per_step.size(); ++s) csv << s + 1 << "," << r.rollout_per_step[s] << "\n";
    spdlog::info("rollout L2RE {} over {} steps: {:.6g}", ds.name, r.rollout_per_step.size(), r.rollout);
    if (r.rollout_per_step.size() < a.steps)
      spdlog::warn("trajectories allow only {} rollout steps", r.rollout_per_step.size());
  }
  if (a.csv.empty()) {
    std::cout << csv.str();
  } else {
    std::ofstream f(a.csv);
    if (!f) throw IoError(IoError::Kind::Open, "cannot write " + a.csv);
    f << csv.str();
  }
  return 0;
}

struct RolloutArgs {
  std::string ckpt, data, out;
  std::size_t traj = 0, steps = 10;
};

int cmd_rollout(const RolloutArgs& a) {
  log_config("rollout", {{"ckpt", a.ckpt}, {"data", a.data}, {"traj", a.traj}, {"steps", a.steps}, {"out", a.out}});
  const Checkpoint ck = load_checkpoint(a.ckpt);
  const DpotModel model = model_from_checkpoint(ck);
  const TrajectoryDataset raw = read_dataset(a.data);
  if (a.traj >= raw.size()) throw ConfigError("--traj out of range (dataset has " + std::to_string(raw.size()) + ")");
  const PreparedDataset ds = prepare_for(ck.config, raw, dataset_name(raw, a.data), stored_stats(ck));
  const Trajectory& tr = ds.trajectories[a.traj];
  const std::size_t T_ctx = ck.config.T_ctx;
  if (tr.T < T_ctx) throw ConfigError("trajectory shorter than the context length");
  const RolloutResult rr =
      rollout(model, {tr.values.data(), T_ctx * tr.frame_size()}, tr.H, tr.W, tr.C, tr.channel_valid, a.steps);
  if (rr.diverged) spdlog::warn("rollout diverged after {} steps", rr.completed);

  // Context plus predictions, back in physical units at the model grid.
  const Trajectory& orig = raw.trajectories[a.traj];
  Trajectory out(T_ctx + rr.completed, tr.H, tr.W, orig.C);
  const std::size_t pixels = tr.H * tr.W;
  for (std::size_t t = 0; t < out.T; ++t) {
    const double* src = t < T_ctx ? tr.frame(t) : rr.frames.data() + (t - T_ctx) * tr.frame_size();
    for (std::size_t p = 0; p < pixels; ++p)
      for (std::size_t c = 0; c < orig.C; ++c) out.frame(t)[p * orig.C + c] = src[p * tr.C + c];
  }
  destandardize(out, ds.stats);
  for (std::size_t p = 0; p < pixels; ++p) out.mask[p] = tr.values[p * tr.C + tr.C - 1] != 0.0;
  out.pde = orig.pde;
  out.dt_save = orig.dt_save;
  out.channels = orig.channels;
  TrajectoryDataset result;
  result.trajectories.push_back(std::move(out));
  result.metadata = raw.metadata;
  result.metadata["rollout"] = {{"context", T_ctx}, {"steps", rr.completed}, {"diverged", rr.diverged}};
  write_dataset(result, a.out);
  spdlog::info("wrote {} context + {} predicted frames to {}", T_ctx, rr.completed, a.out);
  return 0;
}

struct AblateArgs {
  std::string kind, config, csv;
  std::vector<double> grid, weights;
  std::vector<std::string> data, eval;
  std::size_t steps = 10;
};

int cmd_ablate(const AblateArgs& a) {
  const AblationKind kind = parse_ablation(a.kind);
  const LoadedData train_raw = load_all(a.data);
  TrainJob job = parse_train_file(a.config, max_channels(train_raw));
  if (!a.weights.empty()) job.train.weights = a.weights;
  apply_env_seed(job);
  json resolved = job_json(job);
  resolved["kind"] = a.kind;
  resolved["grid"] = a.grid;
  resolved["data"] = a.data;
  resolved["eval"] = a.eval;
  log_config("ablate", resolved);

  AblationSetup setup;
  setup.model = job.model;
  setup.train = job.train;
  setup.model_seed = job.model_seed;
  setup.rollout_steps = a.steps;
  std::map<std::string, ChannelStats> stats;
  for (std::size_t k = 0; k < train_raw.raw.size(); ++k) {
    setup.train_sets.push_back(prepare_for(job.model, train_raw.raw[k], train_raw.names[k], {}));
    stats[train_raw.names[k]] = setup.train_sets.back().stats;
  }
  const LoadedData eval_raw = load_all(a.eval.empty() ? a.data : a.eval);
  for (std::size_t k = 0; k < eval_raw.raw.size(); ++k)
    setup.eval_sets.push_back(prepare_for(job.model, eval_raw.raw[k], eval_raw.names[k], stats));
  const auto rows = run_ablation(kind, a.grid, setup);
  for (const auto& r : rows)
    for (const auto& [name, v] : r.one_step)
      spdlog::info("{}={:g}: {} one-step {:.6g} rollout {:.6g}", r.kind, r.value, name, v, r.rollout.at(name));
  if (!a.csv.empty()) write_ablation_csv(rows, a.csv);
  return 0;
}

struct VerifyArgs {
  bool experiments = false, skip_fast = false;
  std::string golden, out_dir;
  std::size_t seeds = 5;
};

int cmd_verify(const VerifyArgs& a) {
  log_config("verify", {{"experiments", a.experiments}, {"skip_fast", a.skip_fast}, {"golden", a.golden},
                        {"seeds", a.seeds}, {"out_dir", a.out_dir}});
  bool ok = true;
  auto print = [&](const verify::CheckResult& r) {
    ok = ok && r.passed;
    std::cout << verify::format_result(r) << std::endl;
  };
  if (!a.skip_fast) verify::run_fast_checks(a.golden, print);
  if (a.experiments) verify::run_experiments({a.seeds, a.out_dir}, print);
  std::cout << (ok ? "ALL PASS" : "SOME CHECKS FAILED") << std::endl;
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DPOT: Fourier-attention neural operator with auto-regressive denoising pre-training"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error")->capture_default_str();

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Solve a PDE family into a dataset file");
  g->add_option("--spec", gen.spec, "Solver spec JSON (pde, H, dt, n_steps, save_every, coefficients, n_traj, seed)")
      ->required();
  g->add_option("--out", gen.out, "Output .dpot file")->required();
  g->add_option("--n", gen.n, "Number of trajectories (overrides n_traj)");
  g->add_option("--seed", gen.seed, "Generator seed (DPOT_SEED takes precedence)");

  TrainArgs pre;
  auto* p = app.add_subcommand("pretrain", "Train on one or more datasets with balanced sampling");
  p->add_option("--data", pre.data, "Comma-separated training datasets")->required()->delimiter(',');
  p->add_option("--weights", pre.weights, "Comma-separated dataset weights")->delimiter(',');
  p->add_option("--config", pre.config, "Training config JSON");
  p->add_option("--eval", pre.eval, "Comma-separated evaluation datasets")->delimiter(',');
  p->add_option("--metrics", pre.metrics, "Metrics CSV path");
  p->add_option("--out", pre.out, "Checkpoint directory")->required();

  TrainArgs fine;
  auto* f = app.add_subcommand("finetune", "Continue training from a checkpoint");
  f->add_option("--from", fine.from, "Source checkpoint directory")->required();
  f->add_option("--data", fine.data, "Comma-separated training datasets")->required()->delimiter(',');
  f->add_option("--weights", fine.weights, "Comma-separated dataset weights")->delimiter(',');
  f->add_option("--config", fine.config, "Training config JSON (may change the model config)");
  f->add_option("--eval", fine.eval, "Comma-separated evaluation datasets")->delimiter(',');
  f->add_option("--metrics", fine.metrics, "Metrics CSV path");
  f->add_flag("--attention-only", fine.attention_only, "Copy only the Fourier-attention tensors");
  f->add_option("--out", fine.out, "Checkpoint directory")->default_val("finetuned");

  EvalArgs ev;
  auto* e = app.add_subcommand("evaluate", "One-step or rollout L2RE of a checkpoint on a dataset");
  e->add_option("--ckpt", ev.ckpt, "Checkpoint directory")->required();
  e->add_option("--data", ev.data, "Dataset file")->required();
  e->add_option("--mode", ev.mode, "onestep|rollout")->check(CLI::IsMember({"onestep", "rollout"}))->capture_default_str();
  e->add_option("--steps", ev.steps, "Rollout steps")->capture_default_str();
  e->add_option("--max-traj", ev.max_traj, "Evaluate at most this many trajectories (0 = all)");
  e->add_option("--csv", ev.csv, "Output CSV (default stdout)");

  RolloutArgs ro;
  auto* r = app.add_subcommand("rollout", "Auto-regressive prediction of one trajectory into a dataset file");
  r->add_option("--ckpt", ro.ckpt, "Checkpoint directory")->required();
  r->add_option("--data", ro.data, "Dataset file providing the context")->required();
  r->add_option("--traj", ro.traj, "Trajectory index")->capture_default_str();
  r->add_option("--steps", ro.steps, "Predicted frames")->capture_default_str();
  r->add_option("--out", ro.out, "Output .dpot file")->required();

  AblateArgs ab;
  auto* a = app.add_subcommand("ablate", "Sweep heads, patch size, noise level or evaluation resolution");
  a->add_option("--kind", ab.kind, "heads|patch|noise|resolution")->required();
  a->add_option("--grid", ab.grid, "Comma-separated grid values")->required()->delimiter(',');
  a->add_option("--data", ab.data, "Comma-separated training datasets")->required()->delimiter(',');
  a->add_option("--weights", ab.weights, "Comma-separated dataset weights")->delimiter(',');
  a->add_option("--eval", ab.eval, "Comma-separated evaluation datasets (default: training data)")->delimiter(',');
  a->add_option("--config", ab.config, "Training config JSON");
  a->add_option("--steps", ab.steps, "Rollout steps")->capture_default_str();
  a->add_option("--csv", ab.csv, "Output CSV");

  VerifyArgs ve;
  auto* v = app.add_subcommand("verify", "Run the invariant suite; exit 0 iff every check passes");
  v->add_flag("--experiments", ve.experiments, "Also run the desk-scale training experiments (slow)");
  v->add_flag("--skip-fast", ve.skip_fast, "Skip the fast invariant checks");
  v->add_option("--golden", ve.golden, "Golden dataset file to compare byte for byte");
  v->add_option("--seeds", ve.seeds, "Seeds per experiment")->capture_default_str();
  v->add_option("--out-dir", ve.out_dir, "Directory for experiment CSVs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    std::cerr << "error: " << err.what() << "\n\n" << app.help();
    return 2;
  }

  spdlog::set_level(spdlog::level::from_str(log_level));
  try {
    if (*g) return cmd_generate(gen);
    if (*p) return cmd_pretrain(pre);
    if (*f) return cmd_finetune(fine);
    if (*e) return cmd_evaluate(ev);
    if (*r) return cmd_rollout(ro);
    if (*a) return cmd_ablate(ab);
    if (*v) return cmd_verify(ve);
  } catch (const std::exception& ex) {
    spdlog::error("{}", ex.what());
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 1;
}
