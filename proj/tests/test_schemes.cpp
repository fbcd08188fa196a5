// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "gvpolab/schemes.hpp"
#include "gvpolab/rng.hpp"

using namespace gvpolab;

namespace {

PolicyParams random_policy(int prompts, int responses, double range, Rng& rng) {
    std::vector<std::vector<double>> logits(prompts, std::vector<double>(responses, 0.0));
    for (auto& row : logits) {
        for (double& v : row) {
            v = rng.uniform(-range, range);
        }
    }
    return PolicyParams::from_flat_logits(std::move(logits));
}

GroupBatch group_from(const PolicyParams& theta, const PolicyParams& aux,
                      const TaskSpec& task, int prompt, std::vector<int> ids) {
    GroupBatch g;
    g.prompt = prompt;
    g.responses = std::move(ids);
    for (int y : g.responses) {
        g.rewards.push_back(task.reward(prompt, y));
        g.logp_theta.push_back(theta.log_prob(prompt, y));
        g.logp_aux.push_back(aux.log_prob(prompt, y));
        g.logp_old.push_back(aux.log_prob(prompt, y));
    }
    g.weights_source = "test";
    return g;
}

GroupBatch random_group(Rng& rng, int k, double reward_scale, double logit_range,
                        TaskSpec* task_out = nullptr, PolicyParams* theta_out = nullptr,
                        PolicyParams* aux_out = nullptr) {
    const int n = std::max(k, 3) + static_cast<int>(rng.next_below(6));
    std::vector<std::vector<double>> rewards(1, std::vector<double>(n, 0.0));
    for (double& v : rewards[0]) {
        v = rng.uniform(-reward_scale, reward_scale);
    }
    const TaskSpec task = make_bandit(1, n, RewardGenSpec::explicit_table(rewards), 0);
    const PolicyParams theta = random_policy(1, n, logit_range, rng);
    const PolicyParams aux = random_policy(1, n, logit_range, rng);
    std::vector<int> ids;
    for (int i = 0; i < k; ++i) {
        ids.push_back(static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n))));
    }
    if (task_out) *task_out = task;
    if (theta_out) *theta_out = theta;
    if (aux_out) *aux_out = aux;
    return group_from(theta, aux, task, 0, ids);
}

}  // namespace

TEST_CASE("gvpo weights from zero log-ratios reduce to centered rewards") {
    const TaskSpec task =
        make_bandit(1, 3, RewardGenSpec::explicit_table({{1.0, 0.0, 0.0}}), 0);
    const PolicyParams uniform = init_uniform(task, PolicyKind::Flat);
    const GroupBatch g = group_from(uniform, uniform, task, 0, {0, 1, 2});

    const WeightVector w = gvpo_weights(g, GvpoConfig{1.0});
    CHECK(w.zero_sum);
    CHECK(w.weights[0] == doctest::Approx(2.0 / 3).epsilon(1e-14));
    CHECK(w.weights[1] == doctest::Approx(-1.0 / 3).epsilon(1e-14));
    CHECK(w.weights[2] == doctest::Approx(-1.0 / 3).epsilon(1e-14));
}

TEST_CASE("gvpo weights vanish when rewards are flat and theta equals aux") {
    const TaskSpec task =
        make_bandit(1, 4, RewardGenSpec::explicit_table({{2.0, 2.0, 2.0, 2.0}}), 0);
    const PolicyParams uniform = init_uniform(task, PolicyKind::Flat);
    const GroupBatch g = group_from(uniform, uniform, task, 0, {0, 1, 2, 3});
    for (double w : gvpo_weights(g, GvpoConfig{1.0}).weights) {
        CHECK(w == 0.0);
    }
}

TEST_CASE("gvpo weights ignore reward shifts") {
    Rng rng(3);
    GroupBatch g = random_group(rng, 5, 3.0, 4.0);
    const WeightVector base = gvpo_weights(g, GvpoConfig{0.8});
    GroupBatch shifted = g;
    for (double& r : shifted.rewards) {
        r += 5.0;
    }
    const WeightVector moved = gvpo_weights(shifted, GvpoConfig{0.8});
    for (std::size_t i = 0; i < base.weights.size(); ++i) {
        CHECK(std::abs(base.weights[i] - moved.weights[i]) <= 1e-12);
    }
}

TEST_CASE("gvpo weights sum to zero across random groups") {
    Rng rng(5);
    for (int trial = 0; trial < 300; ++trial) {
        const int k = 2 + static_cast<int>(rng.next_below(15));
        const GroupBatch g = random_group(rng, k, 10.0, 10.0);
        const double beta = 0.1 + rng.next_double() * 1.9;
        double sum = 0.0;
        for (double w : gvpo_weights(g, GvpoConfig{beta}).weights) {
            sum += w;
        }
        CHECK(std::abs(sum) <= 1e-12);
    }
}

TEST_CASE("adding a group constant to the log-ratios leaves weights unchanged") {
    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        const GroupBatch g = random_group(rng, 4, 5.0, 5.0);
        const double beta = 0.1 + rng.next_double() * 1.9;
        const WeightVector base = gvpo_weights(g, GvpoConfig{beta});
        GroupBatch shifted = g;
        const double c = rng.uniform(-20.0, 20.0);
        for (double& lp : shifted.logp_theta) {
            lp += c;
        }
        const WeightVector moved = gvpo_weights(shifted, GvpoConfig{beta});
        for (std::size_t i = 0; i < base.weights.size(); ++i) {
            CHECK(std::abs(base.weights[i] - moved.weights[i]) <= 1e-10);
        }
    }
}

TEST_CASE("group size below two is rejected") {
    Rng rng(9);
    GroupBatch g = random_group(rng, 2, 1.0, 1.0);
    g.responses.resize(1);
    g.rewards.resize(1);
    g.logp_theta.resize(1);
    g.logp_aux.resize(1);
    g.logp_old.resize(1);
    CHECK_THROWS_AS(gvpo_weights(g, GvpoConfig{1.0}), std::invalid_argument);
    CHECK_THROWS_AS(gvpo_loss_mse_form(g, GvpoConfig{1.0}), std::invalid_argument);
}

TEST_CASE("mse form equals the hand-computed value on the canonical group") {
    const TaskSpec task =
        make_bandit(1, 3, RewardGenSpec::explicit_table({{1.0, 0.0, 0.0}}), 0);
    const PolicyParams uniform = init_uniform(task, PolicyKind::Flat);
    const GroupBatch g = group_from(uniform, uniform, task, 0, {0, 1, 2});
    CHECK(gvpo_loss_mse_form(g, GvpoConfig{1.0}) ==
          doctest::Approx(1.0 / 3).epsilon(1e-12));
    // Weights sum to zero, so a constant log-prob contributes nothing.
    CHECK(gvpo_loss_nll_form(g, GvpoConfig{1.0}) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("groups drawn at the optimum carry zero residual") {
    // At theta = pi* the centered implicit rewards equal the centered actual
    // rewards inside every group, not just in expectation: the sampled MSE
    // loss and the weights vanish per group.
    Rng rng(10);
    const TaskSpec task = make_bandit(1, 8, RewardGenSpec::uniform(0.0, 1.0), 61);
    const PolicyParams ref = random_policy(1, 8, 1.0, rng);
    for (double beta : {0.5, 1.0}) {
        const OptimalPolicySolution sol = optimal_policy(ref, task, beta);
        const PolicyParams at_opt = PolicyParams::from_distributions(sol.pi_star);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<int> ids;
            for (int i = 0; i < 4; ++i) {
                ids.push_back(static_cast<int>(rng.next_below(8)));
            }
            const GroupBatch g = group_from(at_opt, ref, task, 0, ids);
            CHECK(gvpo_loss_mse_form(g, GvpoConfig{beta}) <= 1e-12);
            for (double w : gvpo_weights(g, GvpoConfig{beta}).weights) {
                CHECK(std::abs(w) <= 1e-8);
            }
        }
    }
}

TEST_CASE("mse and variance forms agree") {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const int k = 2 + static_cast<int>(rng.next_below(8));
        const GroupBatch g = random_group(rng, k, 4.0, 6.0);
        const double beta = 0.1 + rng.next_double() * 1.9;
        CHECK(std::abs(gvpo_loss_mse_form(g, GvpoConfig{beta}) -
                       gvpo_loss_variance_form(g, GvpoConfig{beta})) <= 1e-12);
    }
}

TEST_CASE("nll-form gradient equals the assembled weighted gradient") {
    Rng rng(13);
    for (int trial = 0; trial < 50; ++trial) {
        TaskSpec task;
        PolicyParams theta, aux;
        const GroupBatch g = random_group(rng, 4, 2.0, 3.0, &task, &theta, &aux);
        const GvpoConfig config{0.5 + rng.next_double()};

        const std::vector<GroupBatch> groups{g};
        const std::vector<WeightVector> weights{gvpo_weights(g, config)};
        const Gradient assembled = assemble_gradient(theta, groups, weights);
        const Gradient nll = gvpo_nll_form_gradient(theta, g, config);
        for (std::size_t j = 0; j < assembled.values.size(); ++j) {
            CHECK(std::abs(assembled.values[j] - nll.values[j]) <= 1e-12);
        }
    }
}

TEST_CASE("mse-form finite differences match the assembled gradient") {
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        TaskSpec task;
        PolicyParams theta, aux;
        const GroupBatch g = random_group(rng, 3, 2.0, 2.0, &task, &theta, &aux);
        const GvpoConfig config{trial % 2 == 0 ? 1.0 : 0.1};

        const std::vector<GroupBatch> groups{g};
        const std::vector<WeightVector> weights{gvpo_weights(g, config)};
        const Gradient assembled = assemble_gradient(theta, groups, weights);
        const Gradient fd = finite_diff_grad(
            [&](const PolicyParams& p) { return gvpo_loss_mse_form_at(p, g, config); }, theta);
        for (std::size_t j = 0; j < assembled.values.size(); ++j) {
            const double denom = std::max(std::abs(fd.values[j]), 1e-3);
            CHECK(std::abs(assembled.values[j] - fd.values[j]) / denom <= 1e-5);
        }
    }
}

TEST_CASE("decomposition basics") {
    const TaskSpec task = make_bandit(1, 5, RewardGenSpec::uniform(0.0, 1.0), 21);
    Rng rng(19);
    const PolicyParams theta = random_policy(1, 5, 2.0, rng);
    const PolicyParams uniform = init_uniform(task, PolicyKind::Flat);

    // Covariance of a variable with itself is its variance.
    const DecompositionTerms self =
        gvpo_loss_decomposed(theta, theta, all_distributions(uniform), task, 1.0);
    CHECK(self.covariance == doctest::Approx(self.variance).epsilon(1e-12));

    // A uniform policy has constant log-probs, hence zero variance.
    const DecompositionTerms flat =
        gvpo_loss_decomposed(uniform, theta, all_distributions(theta), task, 1.0);
    CHECK(std::abs(flat.variance) <= 1e-24);

    CHECK_THROWS_AS(
        gvpo_loss_decomposed(theta, theta, all_distributions(uniform), task, 0.5),
        std::invalid_argument);
}

TEST_CASE("five-outcome example: zeroed tokens add no variance penalty") {
    const TaskSpec task = make_bandit(1, 5, RewardGenSpec::uniform(0.0, 1.0), 23);
    const PolicyParams theta =
        PolicyParams::from_flat_logits({{-50.0, -50.0, 0.0, 0.0, 0.0}});
    const DecompositionTerms terms =
        gvpo_loss_decomposed(theta, theta, all_distributions(theta), task, 1.0);
    CHECK(terms.variance < 1e-6);
}

TEST_CASE("grpo weights standardize rewards on policy") {
    const TaskSpec task =
        make_bandit(1, 4, RewardGenSpec::explicit_table({{1.0, 0.0, 1.0, 0.0}}), 0);
    const PolicyParams uniform = init_uniform(task, PolicyKind::Flat);
    const GroupBatch g = group_from(uniform, uniform, task, 0, {0, 1, 2, 3});
    GrpoConfig config;
    const WeightVector w = grpo_weights(g, config);
    CHECK(w.weights[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(w.weights[1] == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(w.weights[2] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(w.weights[3] == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("grpo equal rewards produce zero weights") {
    const TaskSpec task =
        make_bandit(1, 3, RewardGenSpec::explicit_table({{0.5, 0.5, 0.5}}), 0);
    const PolicyParams uniform = init_uniform(task, PolicyKind::Flat);
    const GroupBatch g = group_from(uniform, uniform, task, 0, {0, 1, 2});
    for (double w : grpo_weights(g, GrpoConfig{}).weights) {
        CHECK(w == 0.0);
    }
}

TEST_CASE("grpo ratios are clamped") {
    const TaskSpec task =
        make_bandit(1, 2, RewardGenSpec::explicit_table({{1.0, 0.0}}), 0);
    GroupBatch g;
    g.prompt = 0;
    g.responses = {0, 1};
    g.rewards = {1.0, 0.0};
    // ratio exp(logp_theta - logp_old) = 10 on the first response.
    g.logp_theta = {std::log(0.5), std::log(0.5)};
    g.logp_aux = {std::log(0.5), std::log(0.5)};
    g.logp_old = {std::log(0.05), std::log(0.5)};
    GrpoConfig config;
    config.clip_epsilon = 0.2;
    const WeightVector w = grpo_weights(g, config);
    // advantage = (1 - 0.5)/0.5 = 1, multiplier clipped to 1.2
    CHECK(w.weights[0] == doctest::Approx(1.2).epsilon(1e-12));

    config.use_std_normalization = false;
    const WeightVector raw = grpo_weights(g, config);
    CHECK(raw.weights[0] == doctest::Approx(1.2 * 0.5).epsilon(1e-12));

    config.use_std_normalization = true;
    config.use_ppo_min_form = true;
    const WeightVector ppo = grpo_weights(g, config);
    CHECK(ppo.weights[0] == doctest::Approx(1.2).epsilon(1e-12));  // positive advantage clips
}

TEST_CASE("reward scaling: grpo standardized weights are scale free, gvpo scales linearly") {
    Rng rng(59);
    GroupBatch g = random_group(rng, 5, 2.0, 2.0);
    const double a = 3.75;
    GroupBatch scaled = g;
    for (double& r : scaled.rewards) {
        r *= a;
    }

    const WeightVector grpo_base = grpo_weights(g, GrpoConfig{});
    const WeightVector grpo_scaled = grpo_weights(scaled, GrpoConfig{});
    for (std::size_t i = 0; i < grpo_base.weights.size(); ++i) {
        CHECK(std::abs(grpo_base.weights[i] - grpo_scaled.weights[i]) <= 1e-12);
    }

    // Both schemes ignore a constant reward shift.
    GroupBatch shifted = g;
    for (double& r : shifted.rewards) {
        r += 7.25;
    }
    const WeightVector grpo_shifted = grpo_weights(shifted, GrpoConfig{});
    const WeightVector gvpo_base_shift = gvpo_weights(g, GvpoConfig{1.0});
    const WeightVector gvpo_shifted = gvpo_weights(shifted, GvpoConfig{1.0});
    for (std::size_t i = 0; i < grpo_base.weights.size(); ++i) {
        CHECK(std::abs(grpo_base.weights[i] - grpo_shifted.weights[i]) <= 1e-10);
        CHECK(std::abs(gvpo_base_shift.weights[i] - gvpo_shifted.weights[i]) <= 1e-12);
    }

    // With theta == aux the log-ratio part vanishes, so GVPO weights scale
    // exactly by a (the argmax weight is unchanged).
    GroupBatch on_ref = g;
    on_ref.logp_theta = on_ref.logp_aux;
    GroupBatch on_ref_scaled = scaled;
    on_ref_scaled.logp_theta = on_ref_scaled.logp_aux;
    const WeightVector gvpo_base = gvpo_weights(on_ref, GvpoConfig{1.0});
    const WeightVector gvpo_scaled = gvpo_weights(on_ref_scaled, GvpoConfig{1.0});
    std::size_t argmax_base = 0, argmax_scaled = 0;
    for (std::size_t i = 0; i < gvpo_base.weights.size(); ++i) {
        CHECK(std::abs(gvpo_scaled.weights[i] - a * gvpo_base.weights[i]) <= 1e-12);
        if (gvpo_base.weights[i] > gvpo_base.weights[argmax_base]) argmax_base = i;
        if (gvpo_scaled.weights[i] > gvpo_scaled.weights[argmax_scaled]) argmax_scaled = i;
    }
    CHECK(argmax_base == argmax_scaled);
}

TEST_CASE("grpo kl penalty gradient matches finite differences") {
    Rng rng(29);
    const TaskSpec task = make_bandit(2, 4, RewardGenSpec::uniform(0.0, 1.0), 31);
    const PolicyParams ref = random_policy(2, 4, 1.0, rng);
    const PolicyParams theta = random_policy(2, 4, 1.0, rng);
    const double coeff = 0.7;

    const Gradient analytic = grpo_kl_penalty_gradient(theta, ref, coeff);
    const Gradient fd = finite_diff_grad(
        [&](const PolicyParams& p) {
            double total = 0.0;
            for (int x = 0; x < task.num_prompts; ++x) {
                total += kl(p.distribution(x), ref.distribution(x));
            }
            return coeff * total / task.num_prompts;
        },
        theta);
    for (std::size_t j = 0; j < analytic.values.size(); ++j) {
        CHECK(std::abs(analytic.values[j] - fd.values[j]) <= 1e-7);
    }
}

TEST_CASE("dpo weights and antisymmetry") {
    const TaskSpec task =
        make_bandit(1, 3, RewardGenSpec::explicit_table({{1.0, 0.5, 0.0}}), 0);
    const PolicyParams ref = init_uniform(task, PolicyKind::Flat);

    // theta == ref gives sigmoid(0) on both sides.
    const DpoPairResult r = dpo_weights(ref, ref, 0, 0, 2, 1.0);
    CHECK(r.w_w == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(r.w_l == doctest::Approx(-0.5).epsilon(1e-14));

    const DpoPairResult arith = dpo_weights_from_logps(0.2, 0.0, -0.3, 0.0, 1.0);
    CHECK(arith.w_w == doctest::Approx(0.3775407).epsilon(1e-6));
    CHECK(arith.w_l == doctest::Approx(-arith.w_w).epsilon(1e-15));

    // A winner that is already strongly preferred gets vanishing weight.
    const DpoPairResult saturated = dpo_weights_from_logps(30.0, 0.0, -30.0, 0.0, 1.0);
    CHECK(saturated.w_w < 1e-12);

    // Swapping the pair complements the sigmoid argument; at theta == ref the
    // per-response weights are exactly negated.
    Rng rng(33);
    const PolicyParams theta = random_policy(1, 3, 2.0, rng);
    const DpoPairResult fwd = dpo_weights(theta, ref, 0, 0, 2, 1.0);
    const DpoPairResult rev = dpo_weights(theta, ref, 0, 2, 0, 1.0);
    CHECK(rev.w_w == doctest::Approx(1.0 - fwd.w_w).epsilon(1e-12));
    const DpoPairResult at_ref_fwd = dpo_weights(ref, ref, 0, 0, 2, 1.0);
    const DpoPairResult at_ref_rev = dpo_weights(ref, ref, 0, 2, 0, 1.0);
    // weight on y0: +0.5 forward, -0.5 reversed
    CHECK(at_ref_fwd.w_w == doctest::Approx(-at_ref_rev.w_l).epsilon(1e-15));

    CHECK_THROWS_AS(dpo_weights(theta, ref, 0, 1, 1, 1.0), std::invalid_argument);
}

TEST_CASE("dpo pairs are oriented by strictly higher reward") {
    const TaskSpec task =
        make_bandit(1, 4, RewardGenSpec::explicit_table({{1.0, 0.5, 0.5, 0.0}}), 0);
    const PolicyParams uniform = init_uniform(task, PolicyKind::Flat);
    const GroupBatch g = group_from(uniform, uniform, task, 0, {0, 1, 2, 3});
    const std::vector<DpoPair> pairs = dpo_pairs(g, 1.0);
    // (0,1), (0,2), (0,3), (1,3), (2,3); the 1-2 tie is skipped.
    CHECK(pairs.size() == 5);
    for (const DpoPair& pair : pairs) {
        CHECK(g.rewards[static_cast<std::size_t>(pair.winner_index)] >
              g.rewards[static_cast<std::size_t>(pair.loser_index)]);
    }
}

TEST_CASE("sft picks the argmax reward with lowest-id tie break") {
    const TaskSpec task =
        make_bandit(1, 4, RewardGenSpec::explicit_table({{0.2, 0.9, 0.9, 0.1}}), 0);
    const PolicyParams uniform = init_uniform(task, PolicyKind::Flat);

    const GroupBatch g = group_from(uniform, uniform, task, 0, {3, 2, 1, 0});
    const WeightVector w = sft_weights(g);
    double sum = 0.0;
    for (std::size_t i = 0; i < w.weights.size(); ++i) {
        sum += w.weights[i];
        if (w.weights[i] == 1.0) {
            CHECK(g.responses[i] == 1);  // id 1 beats id 2 on the tie
        }
    }
    CHECK(sum == 1.0);

    // Assembled gradient of a single unit weight is minus grad log prob.
    const std::vector<GroupBatch> groups{g};
    const std::vector<WeightVector> weights{w};
    const Gradient assembled = assemble_gradient(uniform, groups, weights);
    const Gradient direct = uniform.grad_log_prob(0, 1);
    for (std::size_t j = 0; j < assembled.values.size(); ++j) {
        CHECK(assembled.values[j] == doctest::Approx(-direct.values[j]).epsilon(1e-15));
    }
}

TEST_CASE("assemble_gradient is linear and checks dimensions") {
    Rng rng(37);
    TaskSpec task;
    PolicyParams theta, aux;
    const GroupBatch g = random_group(rng, 4, 2.0, 2.0, &task, &theta, &aux);
    WeightVector w = gvpo_weights(g, GvpoConfig{1.0});

    const std::vector<GroupBatch> groups{g};
    std::vector<WeightVector> weights{w};
    const Gradient base = assemble_gradient(theta, groups, weights);
    for (double& wi : weights[0].weights) {
        wi *= 2.0;
    }
    const Gradient doubled = assemble_gradient(theta, groups, weights);
    for (std::size_t j = 0; j < base.values.size(); ++j) {
        CHECK(std::abs(doubled.values[j] - 2.0 * base.values[j]) <= 1e-12);
    }

    // All-zero weights assemble to a zero gradient.
    std::vector<WeightVector> zeros{w};
    std::fill(zeros[0].weights.begin(), zeros[0].weights.end(), 0.0);
    for (double v : assemble_gradient(theta, groups, zeros).values) {
        CHECK(v == 0.0);
    }

    // The literal form rejects mismatched shapes.
    std::vector<std::vector<Gradient>> grads(1);
    grads[0].push_back(theta.grad_log_prob(0, g.responses[0]));
    CHECK_THROWS_AS(assemble_gradient(weights, grads), std::invalid_argument);
}

TEST_CASE("literal assemble form matches the policy-path form") {
    Rng rng(41);
    TaskSpec task;
    PolicyParams theta, aux;
    const GroupBatch g = random_group(rng, 3, 1.0, 2.0, &task, &theta, &aux);
    const WeightVector w = gvpo_weights(g, GvpoConfig{1.0});

    std::vector<std::vector<Gradient>> grads(1);
    for (int y : g.responses) {
        grads[0].push_back(theta.grad_log_prob(0, y));
    }
    const std::vector<GroupBatch> groups{g};
    const std::vector<WeightVector> weights{w};
    const Gradient a = assemble_gradient(weights, grads);
    const Gradient b = assemble_gradient(theta, groups, weights);
    for (std::size_t j = 0; j < a.values.size(); ++j) {
        CHECK(std::abs(a.values[j] - b.values[j]) <= 1e-12);
    }
}
