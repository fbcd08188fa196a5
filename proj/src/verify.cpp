// SPDX-License-Identifier: Apache-2.0

#include "gvpolab/verify.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "gvpolab/oracle.hpp"
#include "gvpolab/schemes.hpp"

namespace gvpolab {

namespace {

// Random group over a throwaway single-prompt policy pair.
struct RandomGroupSetup {
    TaskSpec task;
    PolicyParams theta;
    PolicyParams aux;
    GroupBatch group;
    double beta = 1.0;
};

PolicyParams random_flat_policy(int num_prompts, int num_responses, double logit_lo,
                                double logit_hi, Rng& rng) {
    std::vector<std::vector<double>> logits(
        static_cast<std::size_t>(num_prompts),
        std::vector<double>(static_cast<std::size_t>(num_responses), 0.0));
    for (auto& row : logits) {
        for (double& v : row) {
            v = rng.uniform(logit_lo, logit_hi);
        }
    }
    return PolicyParams::from_flat_logits(std::move(logits));
}

RandomGroupSetup random_group(Rng& rng, int min_k, int max_k, double reward_scale,
                              double logit_range) {
    RandomGroupSetup setup;
    const int k = min_k + static_cast<int>(rng.next_below(
                              static_cast<std::uint64_t>(max_k - min_k + 1)));
    const int n = std::max(k, 3) + static_cast<int>(rng.next_below(8));
    std::vector<std::vector<double>> rewards(1, std::vector<double>(
                                                    static_cast<std::size_t>(n), 0.0));
    for (double& v : rewards[0]) {
        v = rng.uniform(-reward_scale, reward_scale);
    }
    setup.task = make_bandit(1, n, RewardGenSpec::explicit_table(rewards), 0);
    setup.theta = random_flat_policy(1, n, -logit_range, logit_range, rng);
    setup.aux = random_flat_policy(1, n, -logit_range, logit_range, rng);
    setup.beta = 0.1 + rng.next_double() * 1.9;

    setup.group.prompt = 0;
    for (int i = 0; i < k; ++i) {
        const int y = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n)));
        setup.group.responses.push_back(y);
        setup.group.rewards.push_back(setup.task.reward(0, y));
        setup.group.logp_theta.push_back(setup.theta.log_prob(0, y));
        setup.group.logp_aux.push_back(setup.aux.log_prob(0, y));
        setup.group.logp_old.push_back(setup.aux.log_prob(0, y));
    }
    setup.group.weights_source = "synthetic";
    return setup;
}

std::string ratio_details(const std::vector<std::pair<std::string, double>>& entries) {
    std::ostringstream out;
    bool first = true;
    for (const auto& [name, value] : entries) {
        if (!first) {
            out << "; ";
        }
        out << name << "=" << value;
        first = false;
    }
    return out.str();
}

CheckResult make_result(std::string name, double measured, double threshold,
                        std::string details) {
    CheckResult r;
    r.name = std::move(name);
    r.measured = measured;
    r.threshold = threshold;
    r.passed = measured <= threshold;
    r.details = std::move(details);
    return r;
}

PolicyParams policy_at_optimum(const OptimalPolicySolution& sol) {
    return PolicyParams::from_distributions(sol.pi_star);
}

TrainConfig exact_gvpo_config(double beta, int steps, double lr, PolicyKind kind) {
    TrainConfig config;
    config.scheme = Scheme::Gvpo;
    config.beta = beta;
    config.learning_rate = lr;
    config.steps = steps;
    config.sampler = SamplerSpec::reference();
    config.gradient_mode = GradientMode::Exact;
    config.aux_policy_mode = AuxPolicyMode::FixedReference;
    config.policy_kind = kind;
    return config;
}

}  // namespace

nlohmann::json check_result_to_json(const CheckResult& r) {
    return nlohmann::json{{"name", r.name},
                          {"passed", r.passed},
                          {"measured", r.measured},
                          {"threshold", r.threshold},
                          {"details", r.details}};
}

TaskSpec default_check_task(std::uint64_t seed) {
    return make_bandit(8, 16, RewardGenSpec::uniform(0.0, 1.0), seed);
}

TaskSpec generic_rewards_task(int num_prompts, int num_responses, std::uint64_t seed) {
    Rng rng = Rng(seed).split(0x93e2);
    std::vector<std::vector<double>> rewards(
        static_cast<std::size_t>(num_prompts),
        std::vector<double>(static_cast<std::size_t>(num_responses), 0.0));
    for (auto& row : rewards) {
        for (int attempt = 0; attempt < 10000; ++attempt) {
            for (double& v : row) {
                v = rng.next_double();
            }
            std::vector<double> sorted = row;
            std::sort(sorted.begin(), sorted.end());
            double min_gap = 1.0;
            for (std::size_t i = 1; i < sorted.size(); ++i) {
                min_gap = std::min(min_gap, sorted[i] - sorted[i - 1]);
            }
            if (min_gap >= 1e-3) {
                break;
            }
        }
    }
    return make_bandit(num_prompts, num_responses, RewardGenSpec::explicit_table(rewards), 0);
}

CheckResult check_zero_sum(int num_trials, std::uint64_t seed,
                           const VerifyThresholds& thresholds) {
    Rng rng = Rng(seed).split(0x25a0);
    double worst = 0.0;
    for (int t = 0; t < num_trials; ++t) {
        const RandomGroupSetup setup = random_group(rng, 2, 16, 10.0, 10.0);
        const WeightVector w = gvpo_weights(setup.group, GvpoConfig{setup.beta});
        double sum = 0.0;
        for (double wi : w.weights) {
            sum += wi;
        }
        worst = std::max(worst, std::abs(sum));
    }
    return make_result("zero_sum", worst, thresholds.zero_sum,
                       ratio_details({{"trials", static_cast<double>(num_trials)},
                                      {"max_abs_weight_sum", worst}}));
}

CheckResult check_partition_cancellation(int num_trials, std::uint64_t seed,
                                         const VerifyThresholds& thresholds) {
    Rng rng = Rng(seed).split(0xca9c);
    double worst = 0.0;
    for (int t = 0; t < num_trials; ++t) {
        const RandomGroupSetup setup = random_group(rng, 2, 16, 10.0, 10.0);
        const double c = rng.uniform(-20.0, 20.0);
        const WeightVector base = gvpo_weights(setup.group, GvpoConfig{setup.beta});

        // A per-prompt constant on every log-ratio stands in for beta log Z.
        GroupBatch shifted = setup.group;
        for (double& lp : shifted.logp_theta) {
            lp += c;
        }
        const WeightVector moved = gvpo_weights(shifted, GvpoConfig{setup.beta});
        for (std::size_t i = 0; i < base.weights.size(); ++i) {
            worst = std::max(worst, std::abs(base.weights[i] - moved.weights[i]));
        }

        // The weighted sum of implicit rewards must ignore the constant.
        double with_c = 0.0, without_c = 0.0;
        for (std::size_t i = 0; i < base.weights.size(); ++i) {
            const double l = setup.group.logp_theta[i] - setup.group.logp_aux[i];
            without_c += base.weights[i] * setup.beta * l;
            with_c += base.weights[i] * setup.beta * (l + c);
        }
        worst = std::max(worst, std::abs(with_c - without_c));
    }
    return make_result("cancellation", worst, thresholds.cancellation,
                       ratio_details({{"trials", static_cast<double>(num_trials)},
                                      {"max_abs_change", worst}}));
}

CheckResult check_three_forms(int num_trials, std::uint64_t seed,
                              const VerifyThresholds& thresholds) {
    Rng rng = Rng(seed).split(0x3f09);
    double worst_pair = 0.0;   // assembled vs frozen-weight NLL gradient
    double worst_fd = 0.0;     // vs finite differences of the MSE form (normalized)
    double worst_decomp = 0.0; // decomposed vs MSE FD gradients at beta = 1

    for (int t = 0; t < num_trials; ++t) {
        const RandomGroupSetup setup = random_group(rng, 2, 5, 2.0, 3.0);
        const GvpoConfig config{setup.beta};

        const std::vector<GroupBatch> groups{setup.group};
        const std::vector<WeightVector> weights{gvpo_weights(setup.group, config)};
        const Gradient assembled = assemble_gradient(setup.theta, groups, weights);
        const Gradient nll_grad = gvpo_nll_form_gradient(setup.theta, setup.group, config);
        for (std::size_t j = 0; j < assembled.values.size(); ++j) {
            worst_pair = std::max(worst_pair,
                                  std::abs(assembled.values[j] - nll_grad.values[j]));
        }

        const Gradient fd = finite_diff_grad(
            [&](const PolicyParams& p) { return gvpo_loss_mse_form_at(p, setup.group, config); },
            setup.theta);
        for (std::size_t j = 0; j < fd.values.size(); ++j) {
            const double denom = std::max(std::abs(fd.values[j]), 1e-3);
            worst_fd = std::max(worst_fd,
                                std::abs(assembled.values[j] - fd.values[j]) / denom);
        }

        // Exact-expectation route at beta = 1: the decomposed objective and
        // the squared-difference objective differ only by theta-independent
        // terms, so their finite-difference gradients must agree.
        const int n = setup.task.num_responses;
        std::vector<Distribution> sampling{Distribution{}};
        sampling[0].probs.assign(static_cast<std::size_t>(n),
                                 1.0 / static_cast<double>(n));
        const Gradient fd_mse = finite_diff_grad(
            [&](const PolicyParams& p) {
                return exact_gvpo_loss(p, setup.aux, sampling, setup.task, 1.0);
            },
            setup.theta);
        const Gradient fd_dec = finite_diff_grad(
            [&](const PolicyParams& p) {
                return gvpo_loss_decomposed(p, setup.aux, sampling, setup.task, 1.0).combined;
            },
            setup.theta);
        for (std::size_t j = 0; j < fd_mse.values.size(); ++j) {
            worst_decomp = std::max(worst_decomp,
                                    std::abs(fd_mse.values[j] - fd_dec.values[j]));
        }
    }

    const double measured = std::max({worst_pair / thresholds.three_forms_pair,
                                      worst_fd / thresholds.three_forms_fd,
                                      worst_decomp / thresholds.three_forms_decomp});
    return make_result("three_forms", measured, 1.0,
                       ratio_details({{"assembled_vs_nll", worst_pair},
                                      {"fd_vs_assembled_rel", worst_fd},
                                      {"decomposed_vs_mse_fd", worst_decomp}}));
}

CheckResult check_theorem1(const TaskSpec& task, double beta, int steps, double lr,
                           PolicyKind kind, const VerifyThresholds& thresholds) {
    const PolicyParams init = init_uniform(task, kind);
    auto [final_policy, report] = train(task, init, exact_gvpo_config(beta, steps, lr, kind));
    if (report.summary.aborted) {
        return make_result("theorem1", std::numeric_limits<double>::infinity(), 1.0,
                           "training aborted: " + report.summary.abort_reason);
    }
    const double final_kl = report.summary.final_metrics.kl_to_optimal;
    const double final_loss =
        exact_gvpo_loss(final_policy, init, init, task, beta);
    const double measured = std::max(final_kl / thresholds.theorem1_kl,
                                     final_loss / thresholds.theorem1_loss);
    return make_result("theorem1", measured, 1.0,
                       ratio_details({{"final_kl_to_optimal", final_kl},
                                      {"final_exact_loss", final_loss},
                                      {"steps", static_cast<double>(steps)}}));
}

CheckResult check_theorem2(const TaskSpec& task, double beta,
                           const std::vector<SamplerSpec>& samplers, int steps, double lr,
                           const VerifyThresholds& thresholds) {
    std::vector<PolicyParams> finals;
    double max_kl = 0.0;
    for (const SamplerSpec& spec : samplers) {
        TrainConfig config = exact_gvpo_config(beta, steps, lr, PolicyKind::Flat);
        config.sampler = spec;
        const PolicyParams init = init_uniform(task, PolicyKind::Flat);
        try {
            auto [final_policy, report] = train(task, init, config);
            if (report.summary.aborted) {
                return make_result("theorem2", std::numeric_limits<double>::infinity(), 1.0,
                                   "training aborted: " + report.summary.abort_reason);
            }
            max_kl = std::max(max_kl, report.summary.final_metrics.kl_to_optimal);
            finals.push_back(final_policy);
        } catch (const SupportViolation& e) {
            return make_result("theorem2", std::numeric_limits<double>::infinity(), 1.0,
                               std::string("support violation: ") + e.what());
        }
    }
    double max_pointwise = 0.0;
    for (std::size_t a = 0; a < finals.size(); ++a) {
        for (std::size_t b = a + 1; b < finals.size(); ++b) {
            for (int x = 0; x < task.num_prompts; ++x) {
                const Distribution da = finals[a].distribution(x);
                const Distribution db = finals[b].distribution(x);
                for (std::size_t y = 0; y < da.probs.size(); ++y) {
                    max_pointwise =
                        std::max(max_pointwise, std::abs(da.probs[y] - db.probs[y]));
                }
            }
        }
    }
    const double measured = std::max(max_kl / thresholds.theorem2_kl,
                                     max_pointwise / thresholds.theorem2_pointwise);
    return make_result("theorem2", measured, 1.0,
                       ratio_details({{"max_final_kl", max_kl},
                                      {"max_pointwise_gap", max_pointwise},
                                      {"samplers", static_cast<double>(samplers.size())}}));
}

CheckResult check_stationary_at_optimum(const TaskSpec& task,
                                        const std::vector<double>& betas,
                                        const PolicyParams& reference,
                                        const VerifyThresholds& thresholds) {
    double measured = 0.0;
    std::vector<std::pair<std::string, double>> details;
    for (double beta : betas) {
        const OptimalPolicySolution sol = optimal_policy(reference, task, beta);
        const PolicyParams theta = policy_at_optimum(sol);
        const std::vector<Distribution> sampling = all_distributions(reference);

        const double loss = exact_gvpo_loss(theta, reference, sampling, task, beta);
        // Sum-over-prompts convention, matching the trainer's update gradient.
        const double grad_norm =
            exact_gvpo_gradient(theta, reference, sampling, task, beta).norm() *
            static_cast<double>(task.num_prompts);

        measured = std::max({measured, loss / thresholds.stationary_loss,
                             grad_norm / thresholds.stationary_grad});
        details.emplace_back("loss[beta=" + std::to_string(beta) + "]", loss);
        details.emplace_back("grad_norm[beta=" + std::to_string(beta) + "]", grad_norm);
    }
    return make_result("stationary", measured, 1.0, ratio_details(details));
}

CheckResult check_ablation_fixed_points(const TaskSpec& task,
                                        const PolicyParams& reference, int steps,
                                        double lr, std::uint64_t seed,
                                        const VerifyThresholds& thresholds) {
    (void)seed;
    const double beta = 1.0;
    const OptimalPolicySolution sol = optimal_policy(reference, task, beta);
    const PolicyParams at_optimum = policy_at_optimum(sol);
    const std::vector<Distribution> sampling = all_distributions(reference);

    const std::vector<std::pair<std::string, AblationSpec>> ablations = {
        {"drop_var", {true, false, 0.0}},
        {"drop_cov", {false, true, 0.0}},
        {"drop_both", {true, true, 0.0}},
        {"entropy_0.01", {false, false, 0.01}},
        {"entropy_0.1", {false, false, 0.1}},
        {"entropy_1.0", {false, false, 1.0}},
    };

    std::vector<std::pair<std::string, double>> details;
    double measured = 0.0;

    // Control: the full objective is stationary at pi*. Norms use the
    // sum-over-prompts convention of the trainer's update gradient.
    const double prompt_count = static_cast<double>(task.num_prompts);
    Gradient control;
    ablated_decomposed_loss(at_optimum, reference, sampling, task, beta, AblationSpec{},
                            &control);
    const double control_norm = control.norm() * prompt_count;
    measured = std::max(measured, control_norm / thresholds.ablation_control_grad);
    details.emplace_back("full_grad_norm", control_norm);

    // Each ablated objective must have a different fixed point.
    for (const auto& [name, spec] : ablations) {
        Gradient g;
        ablated_decomposed_loss(at_optimum, reference, sampling, task, beta, spec, &g);
        const double norm = g.norm() * prompt_count;
        measured = std::max(measured, thresholds.ablation_min_grad / std::max(norm, 1e-300));
        details.emplace_back("grad_norm[" + name + "]", norm);
    }

    // Full-budget runs: record final KL for every ablation; drop-both must
    // end at >= ablation_kl_factor times the full run's final KL or abort.
    auto run_with = [&](const AblationFlags& flags) {
        TrainConfig config = exact_gvpo_config(beta, steps, lr, PolicyKind::Flat);
        config.ablation = flags;
        return train(task, init_uniform(task, PolicyKind::Flat), config);
    };

    const auto [full_policy, full_report] = run_with(AblationFlags{});
    const double full_kl = full_report.summary.final_metrics.kl_to_optimal;
    details.emplace_back("final_kl[full]", full_kl);

    const std::vector<std::pair<std::string, AblationFlags>> runs = {
        {"drop_var", {true, false, 0.0}},
        {"drop_cov", {false, true, 0.0}},
        {"drop_both", {true, true, 0.0}},
        {"entropy_0.1", {false, false, 0.1}},
    };
    double drop_both_kl = 0.0;
    bool drop_both_aborted = false;
    for (const auto& [name, flags] : runs) {
        const auto [policy, report] = run_with(flags);
        const double final_kl = report.summary.aborted
                                    ? std::numeric_limits<double>::infinity()
                                    : report.summary.final_metrics.kl_to_optimal;
        details.emplace_back("final_kl[" + name + "]",
                             report.summary.aborted ? -1.0 : final_kl);
        if (name == "drop_both") {
            drop_both_kl = final_kl;
            drop_both_aborted = report.summary.aborted;
        }
    }
    if (!drop_both_aborted) {
        measured = std::max(measured,
                            thresholds.ablation_kl_factor * full_kl /
                                std::max(drop_both_kl, 1e-300));
    }

    return make_result("ablation", measured, 1.0, ratio_details(details));
}

std::vector<CheckResult> run_all_checks(std::uint64_t seed,
                                        const VerifyThresholds& thresholds) {
    std::vector<CheckResult> results;
    results.push_back(check_zero_sum(1000, seed, thresholds));
    results.push_back(check_partition_cancellation(1000, seed + 1, thresholds));
    results.push_back(check_three_forms(100, seed + 2, thresholds));

    const TaskSpec task = default_check_task(1234);
    results.push_back(check_theorem1(task, 1.0, 5000, 0.5, PolicyKind::Flat, thresholds));
    results.push_back(check_theorem2(
        task, 1.0,
        {SamplerSpec::reference(), SamplerSpec::uniform(), SamplerSpec::skew(seed + 3)}, 8000,
        0.5, thresholds));

    Rng rng = Rng(seed + 4).split(0xb0b);
    const PolicyParams reference = random_flat_policy(task.num_prompts, task.num_responses,
                                                      -1.0, 1.0, rng);
    results.push_back(check_stationary_at_optimum(task, {0.1, 1.0},
                                                  init_uniform(task, PolicyKind::Flat),
                                                  thresholds));
    const TaskSpec generic = generic_rewards_task(8, 16, seed + 5);
    results.push_back(
        check_ablation_fixed_points(generic, reference, 3000, 0.5, seed + 6, thresholds));
    return results;
}

std::vector<std::string> check_selectors() {
    return {"zero_sum", "cancellation", "three_forms", "theorem1",
            "theorem2", "stationary",   "ablation",    "all"};
}

std::vector<CheckResult> run_checks_by_name(const std::string& selector, std::uint64_t seed,
                                            const VerifyThresholds& thresholds) {
    if (selector == "all") {
        return run_all_checks(seed, thresholds);
    }
    if (selector == "zero_sum") {
        return {check_zero_sum(1000, seed, thresholds)};
    }
    if (selector == "cancellation") {
        return {check_partition_cancellation(1000, seed + 1, thresholds)};
    }
    if (selector == "three_forms") {
        return {check_three_forms(100, seed + 2, thresholds)};
    }
    const TaskSpec task = default_check_task(1234);
    if (selector == "theorem1") {
        return {check_theorem1(task, 1.0, 5000, 0.5, PolicyKind::Flat, thresholds)};
    }
    if (selector == "theorem2") {
        return {check_theorem2(
            task, 1.0,
            {SamplerSpec::reference(), SamplerSpec::uniform(), SamplerSpec::skew(seed + 3)},
            8000, 0.5, thresholds)};
    }
    if (selector == "stationary") {
        return {check_stationary_at_optimum(task, {0.1, 1.0},
                                            init_uniform(task, PolicyKind::Flat), thresholds)};
    }
    if (selector == "ablation") {
        Rng rng = Rng(seed + 4).split(0xb0b);
        const PolicyParams reference = random_flat_policy(
            task.num_prompts, task.num_responses, -1.0, 1.0, rng);
        const TaskSpec generic = generic_rewards_task(8, 16, seed + 5);
        return {check_ablation_fixed_points(generic, reference, 3000, 0.5, seed + 6,
                                            thresholds)};
    }
    throw std::invalid_argument("unknown check selector: " + selector);
}

}  // namespace gvpolab
