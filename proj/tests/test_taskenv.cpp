// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <nlohmann/json.hpp>

#include "gvpolab/taskenv.hpp"

using namespace gvpolab;

TEST_CASE("explicit bandit table passes through") {
    const TaskSpec task =
        make_bandit(1, 3, RewardGenSpec::explicit_table({{1.0, 0.0, 0.0}}), 99);
    CHECK(task.reward(0, 0) == 1.0);
    CHECK(task.reward(0, 1) == 0.0);
    CHECK(task.reward(0, 2) == 0.0);
}

TEST_CASE("uniform rewards are deterministic under a fixed seed") {
    const TaskSpec a = make_bandit(2, 4, RewardGenSpec::uniform(0.0, 1.0), 7);
    const TaskSpec b = make_bandit(2, 4, RewardGenSpec::uniform(0.0, 1.0), 7);
    for (int x = 0; x < 2; ++x) {
        for (int y = 0; y < 4; ++y) {
            CHECK(a.reward(x, y) == b.reward(x, y));
            CHECK(a.reward(x, y) >= 0.0);
            CHECK(a.reward(x, y) < 1.0);
        }
    }
    const TaskSpec c = make_bandit(2, 4, RewardGenSpec::uniform(0.0, 1.0), 8);
    bool any_different = false;
    for (int y = 0; y < 4; ++y) {
        any_different = any_different || a.reward(0, y) != c.reward(0, y);
    }
    CHECK(any_different);
}

TEST_CASE("one-hot rewards mark exactly the correct response") {
    const TaskSpec task = make_bandit(1, 16, RewardGenSpec::one_hot(5), 0);
    for (int y = 0; y < 16; ++y) {
        CHECK(task.reward(0, y) == (y == 5 ? 1.0 : 0.0));
    }
}

TEST_CASE("bandit construction rejects bad arguments") {
    CHECK_THROWS_AS(make_bandit(1, 1, RewardGenSpec::uniform(0.0, 1.0), 0),
                    std::invalid_argument);
    CHECK_THROWS_AS(make_bandit(0, 3, RewardGenSpec::uniform(0.0, 1.0), 0),
                    std::invalid_argument);
    CHECK_THROWS_AS(
        make_bandit(1, 3, RewardGenSpec::uniform(0.0, std::numeric_limits<double>::infinity()), 0),
        std::invalid_argument);
    CHECK_THROWS_AS(make_bandit(1, 3, RewardGenSpec::one_hot(3), 0), std::invalid_argument);
}

TEST_CASE("match-target sequence rewards only the target string") {
    const TaskSpec task = make_sequence_task(2, 3, SequenceRewardRule::match_target("101"), 0);
    CHECK(task.num_responses == 8);
    for (int y = 0; y < 8; ++y) {
        CHECK(task.reward(0, y) == (task.response_string(y) == "101" ? 1.0 : 0.0));
    }
    CHECK(task.reward(0, task.response_id("101")) == 1.0);
    CHECK(task.reward(0, task.response_id("011")) == 0.0);
}

TEST_CASE("count-matching scores positional agreement") {
    const TaskSpec task = make_sequence_task(3, 2, SequenceRewardRule::count_matching("12"), 0);
    CHECK(task.reward(0, task.response_id("12")) == 2.0);
    CHECK(task.reward(0, task.response_id("10")) == 1.0);
    CHECK(task.reward(0, task.response_id("01")) == 0.0);
}

TEST_CASE("random sequence tables are deterministic") {
    const TaskSpec a = make_sequence_task(4, 5, SequenceRewardRule::random_table(), 3);
    const TaskSpec b = make_sequence_task(4, 5, SequenceRewardRule::random_table(), 3);
    CHECK(a.num_responses == 1024);
    for (int y = 0; y < a.num_responses; ++y) {
        CHECK(a.reward(0, y) == b.reward(0, y));
    }
}

TEST_CASE("enumeration bound is enforced") {
    CHECK_THROWS_AS(make_sequence_task(2, 17, SequenceRewardRule::random_table(), 0),
                    std::invalid_argument);
    // 2^16 = 65536 sits exactly on the bound.
    const TaskSpec task = make_sequence_task(2, 16, SequenceRewardRule::random_table(), 0);
    CHECK(task.num_responses == 65536);
}

TEST_CASE("id and string round trip lexicographically") {
    const TaskSpec task = make_sequence_task(3, 4, SequenceRewardRule::random_table(), 0);
    CHECK(task.response_string(0) == "0000");
    CHECK(task.response_string(task.num_responses - 1) == "2222");
    std::string previous;
    for (int y = 0; y < task.num_responses; ++y) {
        const std::string s = task.response_string(y);
        CHECK(task.response_id(s) == y);
        if (y > 0) {
            CHECK(previous < s);
        }
        previous = s;
    }
}

TEST_CASE("out-of-range lookups are rejected") {
    const TaskSpec task = make_bandit(2, 3, RewardGenSpec::uniform(0.0, 1.0), 0);
    CHECK_THROWS_AS(task.reward(2, 0), std::out_of_range);
    CHECK_THROWS_AS(task.reward(0, 3), std::out_of_range);
    CHECK_THROWS_AS(task.reward(-1, 0), std::out_of_range);
}

TEST_CASE("task JSON round trip is lossless") {
    const TaskSpec bandit = make_bandit(3, 5, RewardGenSpec::uniform(-2.0, 2.0), 11);
    const TaskSpec bandit2 = task_from_json(task_to_json(bandit));
    CHECK(bandit2.num_prompts == bandit.num_prompts);
    CHECK(bandit2.num_responses == bandit.num_responses);
    for (int x = 0; x < bandit.num_prompts; ++x) {
        for (int y = 0; y < bandit.num_responses; ++y) {
            CHECK(bandit2.reward(x, y) == bandit.reward(x, y));
        }
    }

    const TaskSpec seq = make_sequence_task(2, 3, SequenceRewardRule::match_target("101"), 0);
    const std::string dumped = task_to_json(seq).dump();
    const TaskSpec seq2 = task_from_json(nlohmann::json::parse(dumped));
    CHECK(seq2.kind == TaskKind::Sequence);
    CHECK(seq2.vocab == 2);
    CHECK(seq2.length == 3);
    for (int y = 0; y < seq.num_responses; ++y) {
        CHECK(seq2.reward(0, y) == seq.reward(0, y));
    }
}
