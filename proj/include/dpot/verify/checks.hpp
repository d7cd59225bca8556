#pragma once

// Invariant checks and desk-scale experiments shared by `dpot verify` and the
// acceptance binary. Every check carries its own tolerance and time budget;
// a check passes only if both hold.

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace dpot::verify {

struct CheckResult {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
  double budget_seconds = 0.0;
};

/// "PASS [3] pooling-lemma (0.01 s / 1 s): ..." style line.
std::string format_result(const CheckResult& r);

CheckResult check_grad_fidelity();    // 1
CheckResult check_fft();              // 2
CheckResult check_pooling_lemma();    // 3
CheckResult check_head_equivalence(); // 4
CheckResult check_solver_analytics(); // 5
CheckResult check_sampler();          // 6
/// `golden_path` (optional) is compared byte for byte in addition to the pinned length and CRC.
CheckResult check_persistence(const std::string& golden_path = ""); // 11

/// Criteria 1-6 and 11 in order; `on_result` is called as each finishes.
std::vector<CheckResult> run_fast_checks(const std::string& golden_path = "",
                                         const std::function<void(const CheckResult&)>& on_result = {});

struct ExperimentOptions {
  std::size_t seeds = 5;
  /// Optional directory for per-experiment CSV summaries.
  std::string out_dir;
};

/// Criteria 7 and 9 share one trained heat model.
std::vector<CheckResult> experiment_heat(const ExperimentOptions& opt);  // 7, 9
CheckResult experiment_noise(const ExperimentOptions& opt);              // 8
CheckResult experiment_transfer(const ExperimentOptions& opt);           // 10

std::vector<CheckResult> run_experiments(const ExperimentOptions& opt,
                                         const std::function<void(const CheckResult&)>& on_result = {});

}  // namespace dpot::verify
