// SPDX-License-Identifier: Apache-2.0
//
// Exactly enumerable post-training tasks: opaque prompt ids, a finite
// response space per prompt, and a total reward table. Everything here is
// deterministic and enumeration-friendly; no sampling happens inside.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace gvpolab {

enum class TaskKind { Bandit, Sequence };

// Dense reward lookup, one finite value per (prompt, response).
struct RewardTable {
    std::vector<std::vector<double>> values;  // [prompt][response]
};

struct TaskSpec {
    TaskKind kind = TaskKind::Bandit;
    int num_prompts = 0;
    int num_responses = 0;  // sequence tasks: vocab^length
    int vocab = 0;          // sequence only
    int length = 0;         // sequence only
    RewardTable rewards;

    double reward(int x, int y) const;

    // Sequence tasks identify responses both by integer id and by token
    // string. The mapping is lexicographic: position 0 is the most
    // significant base-`vocab` digit. Tokens render as 0-9a-z (vocab <= 36).
    std::string response_string(int y) const;
    int response_id(const std::string& tokens) const;

    void validate() const;
};

struct RewardGenSpec {
    enum class Kind { Explicit, Uniform, OneHot };
    Kind kind = Kind::Uniform;
    std::vector<std::vector<double>> table;  // Explicit
    double lo = 0.0, hi = 1.0;               // Uniform [lo, hi)
    int correct_index = 0;                   // OneHot

    static RewardGenSpec explicit_table(std::vector<std::vector<double>> t);
    static RewardGenSpec uniform(double lo, double hi);
    static RewardGenSpec one_hot(int correct_index);
};

struct SequenceRewardRule {
    enum class Kind { MatchTarget, CountMatching, RandomTable };
    Kind kind = Kind::RandomTable;
    std::string target;  // MatchTarget / CountMatching

    static SequenceRewardRule match_target(std::string t);
    static SequenceRewardRule count_matching(std::string t);
    static SequenceRewardRule random_table();
};

TaskSpec make_bandit(int num_prompts, int num_responses, const RewardGenSpec& gen,
                     std::uint64_t seed);

// Enumerates all vocab^length token strings; rejects vocab^length > 65536.
TaskSpec make_sequence_task(int vocab, int length, const SequenceRewardRule& rule,
                            std::uint64_t seed);

double reward(const TaskSpec& task, int x, int y);

nlohmann::json task_to_json(const TaskSpec& task);
TaskSpec task_from_json(const nlohmann::json& j);

}  // namespace gvpolab
