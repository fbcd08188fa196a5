// SPDX-License-Identifier: Apache-2.0
//
// Executable verification harness for the framework's mathematical claims:
// zero-sum weights, partition cancellation, three-form gradient
// equivalence, the optimal-policy theorems, stationarity at the optimum,
// and the regularization-ablation fixed-point probes.
//
// Every check is deterministic under a fixed seed and reports a
// CheckResult with passed == (measured <= threshold). Checks that bundle
// several assertions with different tolerances report measured as the
// worst constraint ratio against threshold 1.0 and carry the raw numbers
// in details.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "gvpolab/taskenv.hpp"
#include "gvpolab/trainer.hpp"

namespace gvpolab {

struct CheckResult {
    std::string name;
    bool passed = false;
    double measured = 0.0;
    double threshold = 0.0;
    std::string details;
};

nlohmann::json check_result_to_json(const CheckResult& r);

// All harness tolerances in one place; tightening any value can only flip
// results from passed to failed.
struct VerifyThresholds {
    double zero_sum = 1e-12;
    double cancellation = 1e-10;
    double three_forms_pair = 1e-12;     // assembled vs frozen-weight NLL gradient
    double three_forms_fd = 1e-5;        // relative, with 1e-8 absolute floor
    double three_forms_decomp = 1e-6;    // decomposed vs MSE FD gradients (beta=1)
    double theorem1_kl = 1e-6;
    double theorem1_loss = 1e-10;
    double theorem2_kl = 1e-5;
    double theorem2_pointwise = 1e-4;
    double stationary_loss = 1e-12;
    double stationary_grad = 1e-8;
    double ablation_min_grad = 1e-3;     // ablated objectives must move at pi*
    double ablation_control_grad = 1e-8; // full objective must not
    double ablation_kl_factor = 10.0;    // drop-both final KL vs full GVPO
};

CheckResult check_zero_sum(int num_trials, std::uint64_t seed,
                           const VerifyThresholds& thresholds = {});
CheckResult check_partition_cancellation(int num_trials, std::uint64_t seed,
                                         const VerifyThresholds& thresholds = {});
CheckResult check_three_forms(int num_trials, std::uint64_t seed,
                              const VerifyThresholds& thresholds = {});
CheckResult check_theorem1(const TaskSpec& task, double beta, int steps, double lr,
                           PolicyKind kind = PolicyKind::Flat,
                           const VerifyThresholds& thresholds = {});
CheckResult check_theorem2(const TaskSpec& task, double beta,
                           const std::vector<SamplerSpec>& samplers, int steps, double lr,
                           const VerifyThresholds& thresholds = {});
// Runs at each beta; theta is placed at log pi* directly.
CheckResult check_stationary_at_optimum(const TaskSpec& task,
                                        const std::vector<double>& betas,
                                        const PolicyParams& reference,
                                        const VerifyThresholds& thresholds = {});
// Gradient-norm separation at pi* for each ablated objective, plus full
// training runs of every ablation with final KL recorded; the drop-both run
// must end at >= ablation_kl_factor times the full-GVPO final KL or abort.
CheckResult check_ablation_fixed_points(const TaskSpec& task,
                                        const PolicyParams& reference, int steps,
                                        double lr, std::uint64_t seed,
                                        const VerifyThresholds& thresholds = {});

// The full suite on default desk-scale instances.
std::vector<CheckResult> run_all_checks(std::uint64_t seed,
                                        const VerifyThresholds& thresholds = {});
// One of: zero_sum, cancellation, three_forms, theorem1, theorem2,
// stationary, ablation, all.
std::vector<CheckResult> run_checks_by_name(const std::string& selector, std::uint64_t seed,
                                            const VerifyThresholds& thresholds = {});
std::vector<std::string> check_selectors();

// Default verification instance: 8-prompt x 16-response bandit with
// U[0,1) rewards.
TaskSpec default_check_task(std::uint64_t seed);
// Rewards resampled until every within-prompt pairwise gap is >= 1e-3
// (excludes degenerate instances whose ablated fixed points coincide).
TaskSpec generic_rewards_task(int num_prompts, int num_responses, std::uint64_t seed);

}  // namespace gvpolab
