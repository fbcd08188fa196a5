// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <nlohmann/json.hpp>

#include "gvpolab/verify.hpp"

using namespace gvpolab;

TEST_CASE("zero-sum check passes and is deterministic") {
    const CheckResult a = check_zero_sum(200, 42);
    const CheckResult b = check_zero_sum(200, 42);
    CHECK(a.passed);
    CHECK(a.measured == b.measured);
    CHECK(a.measured <= a.threshold);
}

TEST_CASE("zero-sum degrades gracefully under adversarial reward scales") {
    // |R| up to 1e6 inflates float error; the algebraic identity still holds
    // to a scaled tolerance.
    Rng rng(7);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const int k = 2 + static_cast<int>(rng.next_below(15));
        GroupBatch g;
        g.prompt = 0;
        for (int i = 0; i < k; ++i) {
            g.responses.push_back(i);
            g.rewards.push_back(rng.uniform(-1e6, 1e6));
            g.logp_theta.push_back(rng.uniform(-10.0, 0.0));
            g.logp_aux.push_back(rng.uniform(-10.0, 0.0));
            g.logp_old.push_back(0.0);
        }
        double sum = 0.0;
        for (double w : gvpo_weights(g, GvpoConfig{1.0}).weights) {
            sum += w;
        }
        worst = std::max(worst, std::abs(sum));
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("cancellation check passes") {
    const CheckResult r = check_partition_cancellation(200, 43);
    CHECK(r.passed);
}

TEST_CASE("three-form check passes") {
    const CheckResult r = check_three_forms(25, 44);
    CHECK(r.passed);
}

TEST_CASE("theorem 1 on a small bandit") {
    const TaskSpec task = make_bandit(2, 6, RewardGenSpec::uniform(0.0, 1.0), 51);
    const CheckResult r = check_theorem1(task, 1.0, 3000, 0.5);
    CHECK(r.passed);
}

TEST_CASE("theorem 1 on a sequence task with beta below one") {
    const TaskSpec task = make_sequence_task(4, 5, SequenceRewardRule::random_table(), 52);
    const CheckResult r = check_theorem1(task, 0.5, 12000, 2.0, PolicyKind::Autoregressive);
    CHECK(r.passed);
}

TEST_CASE("theorem 2 samplers share the fixed point and holes are reported") {
    const TaskSpec task = make_bandit(2, 6, RewardGenSpec::uniform(0.0, 1.0), 53);
    const CheckResult r = check_theorem2(
        task, 1.0, {SamplerSpec::reference(), SamplerSpec::uniform(), SamplerSpec::skew(5)},
        6000, 0.5);
    CHECK(r.passed);

    std::vector<Distribution> holey(2, Distribution{{0.5, 0.25, 0.25, 0.0, 0.0, 0.0}});
    const CheckResult violated = check_theorem2(
        task, 1.0, {SamplerSpec::explicit_table(holey)}, 100, 0.5);
    CHECK_FALSE(violated.passed);
    CHECK(violated.details.find("support violation") != std::string::npos);
}

TEST_CASE("stationarity holds at the optimum") {
    const TaskSpec task = make_bandit(3, 8, RewardGenSpec::uniform(0.0, 1.0), 54);
    const CheckResult r = check_stationary_at_optimum(
        task, {0.1, 1.0}, init_uniform(task, PolicyKind::Flat));
    CHECK(r.passed);
}

TEST_CASE("stationarity survives a per-prompt constant logit shift") {
    const TaskSpec task = make_bandit(2, 5, RewardGenSpec::uniform(0.0, 1.0), 55);
    const PolicyParams ref = init_uniform(task, PolicyKind::Flat);
    const OptimalPolicySolution sol = optimal_policy(ref, task, 1.0);
    PolicyParams shifted = PolicyParams::from_distributions(sol.pi_star);
    for (std::size_t j = 0; j < shifted.param_count(); ++j) {
        shifted.at(j) += (j < shifted.prompt_block_size() ? 3.0 : -1.5);
    }
    const std::vector<Distribution> sampling = all_distributions(ref);
    CHECK(exact_gvpo_loss(shifted, ref, sampling, task, 1.0) < 1e-12);
    CHECK(exact_gvpo_gradient(shifted, ref, sampling, task, 1.0).norm() < 1e-8);
}

TEST_CASE("ablated objectives move away from the optimum") {
    const TaskSpec task = generic_rewards_task(4, 8, 56);
    Rng rng(57);
    std::vector<std::vector<double>> ref_logits(4, std::vector<double>(8, 0.0));
    for (auto& row : ref_logits) {
        for (double& v : row) {
            v = rng.uniform(-1.0, 1.0);
        }
    }
    const PolicyParams reference = PolicyParams::from_flat_logits(ref_logits);
    const CheckResult r = check_ablation_fixed_points(task, reference, 1500, 0.5, 58);
    CHECK(r.passed);
}

TEST_CASE("check results serialize and the selector list is stable") {
    const CheckResult r = check_zero_sum(10, 1);
    const nlohmann::json j = check_result_to_json(r);
    CHECK(j.at("name") == "zero_sum");
    CHECK(j.at("passed").is_boolean());
    CHECK(j.at("measured").is_number());

    const auto selectors = check_selectors();
    CHECK(std::find(selectors.begin(), selectors.end(), "all") != selectors.end());
    CHECK_THROWS_AS(run_checks_by_name("bogus", 1), std::invalid_argument);
}

TEST_CASE("generic rewards keep pairwise gaps") {
    const TaskSpec task = generic_rewards_task(3, 10, 60);
    for (int x = 0; x < task.num_prompts; ++x) {
        for (int a = 0; a < task.num_responses; ++a) {
            for (int b = a + 1; b < task.num_responses; ++b) {
                CHECK(std::abs(task.reward(x, a) - task.reward(x, b)) >= 1e-3);
            }
        }
    }
}
