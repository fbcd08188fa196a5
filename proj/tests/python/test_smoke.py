"""Smoke tests for the python bindings."""

import json
import math

import pytest

import gvpolab


@pytest.fixture()
def bandit():
    return gvpolab.make_bandit(1, 3, '{"kind":"explicit","values":[[1.0,0.0,0.0]]}', 0)


def test_task_rewards_and_json_round_trip(bandit):
    assert bandit.num_prompts == 1
    assert bandit.num_responses == 3
    assert bandit.reward(0, 0) == 1.0
    assert bandit.reward(0, 2) == 0.0
    again = gvpolab.TaskSpec.from_json(bandit.to_json())
    assert again.reward(0, 0) == 1.0


def test_sequence_task_ids():
    task = gvpolab.make_sequence_task(2, 3, '{"kind":"match_target","target":"101"}')
    assert task.num_responses == 8
    assert task.reward(0, task.response_id("101")) == 1.0
    assert task.response_string(5) == "101"


def test_uniform_policy_and_sampling(bandit):
    policy = gvpolab.init_uniform(bandit)
    probs = policy.distribution(0)
    assert all(abs(p - 1.0 / 3) < 1e-12 for p in probs)
    assert abs(policy.log_prob(0, 1) + math.log(3.0)) < 1e-12

    rng = gvpolab.Rng(7)
    draws = policy.sample_k(0, 1000, rng)
    assert set(draws) <= {0, 1, 2}


def test_optimal_policy_matches_closed_form(bandit):
    ref = gvpolab.init_uniform(bandit)
    sol = gvpolab.optimal_policy(ref, bandit, 1.0)
    e = math.exp(1.0)
    assert abs(sol.pi_star[0][0] - e / (e + 2)) < 1e-12
    assert abs(sum(sol.pi_star[0]) - 1.0) < 1e-12
    assert abs(sol.log_partition[0] - math.log((e + 2) / 3)) < 1e-12


def test_gvpo_weights_zero_sum(bandit):
    policy = gvpolab.init_uniform(bandit)
    lp = [policy.log_prob(0, y) for y in range(3)]
    group = gvpolab.GroupBatch(
        prompt=0,
        responses=[0, 1, 2],
        rewards=[1.0, 0.0, 0.0],
        logp_theta=lp,
        logp_aux=lp,
        logp_old=lp,
    )
    weights = gvpolab.gvpo_weights(group, 1.0)
    assert abs(sum(weights)) < 1e-12
    assert abs(weights[0] - 2.0 / 3) < 1e-12
    assert abs(gvpolab.gvpo_loss_mse_form(group, 1.0) - 1.0 / 3) < 1e-12


def test_training_run_improves_kl(bandit):
    config = {
        "scheme": "gvpo",
        "beta": 1.0,
        "learning_rate": 0.5,
        "steps": 500,
        "gradient_mode": "exact",
        "sampler": {"kind": "reference"},
        "seed": 3,
    }
    outcome = gvpolab.train_from_config(bandit, json.dumps(config))
    summary = json.loads(outcome.summary_json)
    assert summary["aborted"] is False
    assert summary["final_metrics"]["kl_to_optimal"] < 1e-8
    assert outcome.rows[0]["kl_to_optimal"] > summary["final_metrics"]["kl_to_optimal"]


def test_exact_loss_at_optimum(bandit):
    ref = gvpolab.init_uniform(bandit)
    sol = gvpolab.optimal_policy(ref, bandit, 1.0)
    at_opt = gvpolab.PolicyParams.from_flat_logits(
        [[math.log(p) for p in sol.pi_star[0]]]
    )
    assert gvpolab.exact_gvpo_loss(at_opt, ref, ref, bandit, 1.0) < 1e-12
    for y in range(3):
        r = gvpolab.implicit_reward(at_opt, ref, 1.0, 0, y, sol.log_partition[0])
        assert abs(r - bandit.reward(0, y)) < 1e-10


def test_verify_check_runs():
    results = gvpolab.run_check("zero_sum", 42)
    assert len(results) == 1
    assert results[0].passed
    assert results[0].measured <= results[0].threshold


def test_support_violation_is_exposed():
    task = gvpolab.make_bandit(1, 3, '{"kind":"uniform","lo":0,"hi":1}', 1)
    with pytest.raises(gvpolab._core.SupportViolationError):
        gvpolab.kl([0.5, 0.5, 0.0], [0.5, 0.0, 0.5])
