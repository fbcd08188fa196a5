// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <vector>

#include <nlohmann/json.hpp>

#include "gvpolab/policy.hpp"
#include "gvpolab/rng.hpp"
#include "gvpolab/taskenv.hpp"

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

}  // namespace

TEST_CASE("rng streams are reproducible and splittable") {
    Rng a(123);
    Rng b(123);
    for (int i = 0; i < 100; ++i) {
        CHECK(a.next_u64() == b.next_u64());
    }
    Rng parent(7);
    Rng s0 = parent.split(0);
    Rng s1 = parent.split(1);
    CHECK(s0.next_u64() != s1.next_u64());
    CHECK(parent.split(0).next_u64() == parent.split(0).next_u64());
}

TEST_CASE("uniform init gives uniform distributions") {
    const TaskSpec bandit = make_bandit(1, 3, RewardGenSpec::uniform(0.0, 1.0), 1);
    const PolicyParams p = init_uniform(bandit, PolicyKind::Flat);
    const Distribution d = p.distribution(0);
    for (double v : d.probs) {
        CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-14));
    }
    CHECK(p.log_prob(0, 1) == doctest::Approx(-std::log(3.0)).epsilon(1e-14));

    const TaskSpec seq = make_sequence_task(2, 3, SequenceRewardRule::random_table(), 1);
    const PolicyParams ar = init_uniform(seq, PolicyKind::Autoregressive);
    const Distribution ad = ar.distribution(0);
    CHECK(ad.probs.size() == 8);
    for (double v : ad.probs) {
        CHECK(v == doctest::Approx(0.125).epsilon(1e-14));
    }
    CHECK(ar.log_prob(0, 5) == doctest::Approx(-std::log(8.0)).epsilon(1e-14));
}

TEST_CASE("log_prob matches direct log-sum-exp arithmetic") {
    const PolicyParams p = PolicyParams::from_flat_logits({{1.0, 0.0, 0.0}});
    const double expected = 1.0 - std::log(std::exp(1.0) + 2.0);
    CHECK(p.log_prob(0, 0) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(expected == doctest::Approx(-0.5514447).epsilon(1e-6));
}

TEST_CASE("distribution matches softmax arithmetic and sums to one") {
    const PolicyParams p = PolicyParams::from_flat_logits({{std::log(2.0), 0.0, 0.0}});
    const Distribution d = p.distribution(0);
    CHECK(d.probs[0] == doctest::Approx(0.5).epsilon(1e-13));
    CHECK(d.probs[1] == doctest::Approx(0.25).epsilon(1e-13));
    CHECK(d.probs[2] == doctest::Approx(0.25).epsilon(1e-13));

    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const PolicyParams q = random_policy(2, 17, 10.0, rng);
        for (int x = 0; x < 2; ++x) {
            const Distribution dist = q.distribution(x);
            double sum = 0.0;
            for (double v : dist.probs) {
                CHECK(v >= 0.0);
                sum += v;
            }
            CHECK(std::abs(sum - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("softmax shift invariance") {
    Rng rng(11);
    const PolicyParams p = random_policy(1, 9, 5.0, rng);
    PolicyParams shifted = p;
    for (double& v : shifted.raw()) {
        v += 17.25;
    }
    const Distribution a = p.distribution(0);
    const Distribution b = shifted.distribution(0);
    for (std::size_t y = 0; y < a.probs.size(); ++y) {
        CHECK(std::abs(a.probs[y] - b.probs[y]) <= 1e-12);
    }
}

TEST_CASE("autoregressive log-probs agree with the flat conversion") {
    const TaskSpec seq = make_sequence_task(2, 2, SequenceRewardRule::random_table(), 2);
    PolicyParams ar = init_uniform(seq, PolicyKind::Autoregressive);
    Rng rng(3);
    for (double& v : ar.raw()) {
        v = rng.uniform(-2.0, 2.0);
    }
    const PolicyParams flat = ar.to_flat();
    for (int y = 0; y < seq.num_responses; ++y) {
        CHECK(std::abs(ar.log_prob(0, y) - flat.log_prob(0, y)) <= 1e-12);
    }

    // Response probability equals the product of its token conditionals.
    const TaskSpec seq3 = make_sequence_task(3, 3, SequenceRewardRule::random_table(), 2);
    PolicyParams ar3 = init_uniform(seq3, PolicyKind::Autoregressive);
    for (double& v : ar3.raw()) {
        v = rng.uniform(-2.0, 2.0);
    }
    const std::vector<double> row = ar3.log_prob_row(0);
    double total = 0.0;
    for (double lp : row) {
        total += std::exp(lp);
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    for (int y = 0; y < seq3.num_responses; ++y) {
        CHECK(std::abs(row[static_cast<std::size_t>(y)] - ar3.log_prob(0, y)) <= 1e-12);
    }

    // Agreement holds up to the 256-response enumeration (V=4, T=4).
    const TaskSpec seq256 = make_sequence_task(4, 4, SequenceRewardRule::random_table(), 8);
    PolicyParams ar256 = init_uniform(seq256, PolicyKind::Autoregressive);
    for (double& v : ar256.raw()) {
        v = rng.uniform(-1.5, 1.5);
    }
    const PolicyParams flat256 = ar256.to_flat();
    for (int y = 0; y < seq256.num_responses; ++y) {
        CHECK(std::abs(ar256.log_prob(0, y) - flat256.log_prob(0, y)) <= 1e-12);
    }
}

TEST_CASE("sampling is deterministic and respects point masses") {
    const PolicyParams peaked = PolicyParams::from_flat_logits({{50.0, 0.0, 0.0}});
    Rng rng(9);
    for (int id : peaked.sample_k(0, 32, rng)) {
        CHECK(id == 0);
    }

    const PolicyParams p = PolicyParams::from_flat_logits({{std::log(2.0), 0.0, 0.0}});
    Rng r1(42);
    Rng r2(42);
    CHECK(p.sample_k(0, 100, r1) == p.sample_k(0, 100, r2));
}

TEST_CASE("sampling frequencies track probabilities") {
    const PolicyParams p = PolicyParams::from_flat_logits({{std::log(2.0), 0.0, 0.0}});
    Rng rng(7);
    const int n = 1000000;
    std::vector<int> counts(3, 0);
    for (int id : p.sample_k(0, n, rng)) {
        counts[static_cast<std::size_t>(id)]++;
    }
    CHECK(std::abs(counts[0] / double(n) - 0.5) < 0.01);
    CHECK(std::abs(counts[1] / double(n) - 0.25) < 0.01);
    CHECK(std::abs(counts[2] / double(n) - 0.25) < 0.01);
}

TEST_CASE("flat gradient is indicator minus distribution") {
    const TaskSpec bandit = make_bandit(1, 3, RewardGenSpec::uniform(0.0, 1.0), 1);
    const PolicyParams p = init_uniform(bandit, PolicyKind::Flat);
    const Gradient g = p.grad_log_prob(0, 0);
    CHECK(g.values[0] == doctest::Approx(2.0 / 3).epsilon(1e-14));
    CHECK(g.values[1] == doctest::Approx(-1.0 / 3).epsilon(1e-14));
    CHECK(g.values[2] == doctest::Approx(-1.0 / 3).epsilon(1e-14));
}

TEST_CASE("gradient entries sum to zero per prompt block") {
    Rng rng(21);
    const PolicyParams p = random_policy(3, 7, 8.0, rng);
    for (int x = 0; x < 3; ++x) {
        const Gradient g = p.grad_log_prob(x, 2);
        double block_sum = 0.0;
        for (std::size_t j = 0; j < g.values.size(); ++j) {
            block_sum += g.values[j];
        }
        CHECK(std::abs(block_sum) <= 1e-12);
    }
}

TEST_CASE("analytic gradients match central finite differences") {
    Rng rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        const PolicyParams p = random_policy(1, 5, 10.0, rng);
        const int y = static_cast<int>(rng.next_below(5));
        const Gradient g = p.grad_log_prob(0, y);
        const double h = 1e-5;
        PolicyParams probe = p;
        for (std::size_t j = 0; j < p.param_count(); ++j) {
            const double original = probe.at(j);
            probe.at(j) = original + h;
            const double up = probe.log_prob(0, y);
            probe.at(j) = original - h;
            const double down = probe.log_prob(0, y);
            probe.at(j) = original;
            CHECK(std::abs(g.values[j] - (up - down) / (2 * h)) <= 1e-7);
        }
    }

    // Same check through the autoregressive parameterization.
    const TaskSpec seq = make_sequence_task(2, 3, SequenceRewardRule::random_table(), 5);
    PolicyParams ar = init_uniform(seq, PolicyKind::Autoregressive);
    for (double& v : ar.raw()) {
        v = rng.uniform(-3.0, 3.0);
    }
    const int y = 5;
    const Gradient g = ar.grad_log_prob(0, y);
    const double h = 1e-5;
    PolicyParams probe = ar;
    for (std::size_t j = 0; j < ar.param_count(); ++j) {
        const double original = probe.at(j);
        probe.at(j) = original + h;
        const double up = probe.log_prob(0, y);
        probe.at(j) = original - h;
        const double down = probe.log_prob(0, y);
        probe.at(j) = original;
        CHECK(std::abs(g.values[j] - (up - down) / (2 * h)) <= 1e-7);
    }
}

TEST_CASE("sensitivity accumulation matches the per-response sum") {
    Rng rng(41);
    const PolicyParams p = random_policy(1, 6, 4.0, rng);
    std::vector<double> sens(6);
    for (double& v : sens) {
        v = rng.uniform(-1.0, 1.0);
    }
    std::vector<double> fast(p.param_count(), 0.0);
    p.accumulate_from_logprob_sensitivities(0, sens, fast);

    std::vector<double> slow(p.param_count(), 0.0);
    for (int y = 0; y < 6; ++y) {
        p.accumulate_grad_log_prob(0, y, sens[static_cast<std::size_t>(y)], slow);
    }
    for (std::size_t j = 0; j < fast.size(); ++j) {
        CHECK(std::abs(fast[j] - slow[j]) <= 1e-12);
    }
}

TEST_CASE("policy JSON round trip is bit exact") {
    Rng rng(51);
    const PolicyParams p = random_policy(2, 5, 10.0, rng);
    const std::string dumped = policy_to_json(p).dump();
    const PolicyParams q = policy_from_json(nlohmann::json::parse(dumped));
    REQUIRE(q.param_count() == p.param_count());
    for (std::size_t j = 0; j < p.param_count(); ++j) {
        CHECK(q.raw()[j] == p.raw()[j]);
    }

    const TaskSpec seq = make_sequence_task(2, 2, SequenceRewardRule::random_table(), 1);
    PolicyParams ar = init_uniform(seq, PolicyKind::Autoregressive);
    for (double& v : ar.raw()) {
        v = rng.uniform(-7.0, 7.0);
    }
    const PolicyParams ar2 =
        policy_from_json(nlohmann::json::parse(policy_to_json(ar).dump()));
    for (std::size_t j = 0; j < ar.param_count(); ++j) {
        CHECK(ar2.raw()[j] == ar.raw()[j]);
    }
}

TEST_CASE("autoregressive init requires a sequence task") {
    const TaskSpec bandit = make_bandit(1, 4, RewardGenSpec::uniform(0.0, 1.0), 1);
    CHECK_THROWS_AS(init_uniform(bandit, PolicyKind::Autoregressive), std::invalid_argument);
}
