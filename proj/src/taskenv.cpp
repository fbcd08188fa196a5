// SPDX-License-Identifier: Apache-2.0

#include "gvpolab/taskenv.hpp"

#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "gvpolab/rng.hpp"

namespace gvpolab {

namespace {

constexpr int kEnumerationLimit = 65536;

const char kTokenChars[] = "0123456789abcdefghijklmnopqrstuvwxyz";

int token_char_to_index(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'z') return c - 'a' + 10;
    throw std::invalid_argument("unknown token character: " + std::string(1, c));
}

void check_finite_table(const RewardTable& rewards) {
    for (const auto& row : rewards.values) {
        for (double v : row) {
            if (!std::isfinite(v)) {
                throw std::invalid_argument("reward table contains a non-finite value");
            }
        }
    }
}

}  // namespace

double TaskSpec::reward(int x, int y) const {
    if (x < 0 || x >= num_prompts) {
        throw std::out_of_range("prompt id out of range");
    }
    if (y < 0 || y >= num_responses) {
        throw std::out_of_range("response id out of range");
    }
    return rewards.values[static_cast<std::size_t>(x)][static_cast<std::size_t>(y)];
}

std::string TaskSpec::response_string(int y) const {
    if (kind != TaskKind::Sequence) {
        throw std::invalid_argument("response_string is only defined for sequence tasks");
    }
    if (y < 0 || y >= num_responses) {
        throw std::out_of_range("response id out of range");
    }
    if (vocab > 36) {
        throw std::invalid_argument("token strings require vocab <= 36");
    }
    std::string out(static_cast<std::size_t>(length), '0');
    int rem = y;
    for (int t = length - 1; t >= 0; --t) {
        out[static_cast<std::size_t>(t)] = kTokenChars[rem % vocab];
        rem /= vocab;
    }
    return out;
}

int TaskSpec::response_id(const std::string& tokens) const {
    if (kind != TaskKind::Sequence) {
        throw std::invalid_argument("response_id is only defined for sequence tasks");
    }
    if (static_cast<int>(tokens.size()) != length) {
        throw std::invalid_argument("token string has the wrong length");
    }
    int id = 0;
    for (char c : tokens) {
        const int tok = token_char_to_index(c);
        if (tok >= vocab) {
            throw std::invalid_argument("token outside the task vocabulary");
        }
        id = id * vocab + tok;
    }
    return id;
}

void TaskSpec::validate() const {
    if (num_prompts < 1) {
        throw std::invalid_argument("a task needs at least one prompt");
    }
    if (num_responses < 2) {
        throw std::invalid_argument("every prompt needs at least 2 responses");
    }
    if (kind == TaskKind::Sequence) {
        if (vocab < 1 || length < 1) {
            throw std::invalid_argument("sequence tasks need positive vocab and length");
        }
        long long space = 1;
        for (int t = 0; t < length; ++t) {
            space *= vocab;
            if (space > kEnumerationLimit) {
                throw std::invalid_argument("vocab^length exceeds the enumeration limit 65536");
            }
        }
        if (static_cast<int>(space) != num_responses) {
            throw std::invalid_argument("num_responses does not match vocab^length");
        }
    }
    if (static_cast<int>(rewards.values.size()) != num_prompts) {
        throw std::invalid_argument("reward table prompt dimension mismatch");
    }
    for (const auto& row : rewards.values) {
        if (static_cast<int>(row.size()) != num_responses) {
            throw std::invalid_argument("reward table response dimension mismatch");
        }
    }
    check_finite_table(rewards);
}

RewardGenSpec RewardGenSpec::explicit_table(std::vector<std::vector<double>> t) {
    RewardGenSpec spec;
    spec.kind = Kind::Explicit;
    spec.table = std::move(t);
    return spec;
}

RewardGenSpec RewardGenSpec::uniform(double lo, double hi) {
    RewardGenSpec spec;
    spec.kind = Kind::Uniform;
    spec.lo = lo;
    spec.hi = hi;
    return spec;
}

RewardGenSpec RewardGenSpec::one_hot(int correct_index) {
    RewardGenSpec spec;
    spec.kind = Kind::OneHot;
    spec.correct_index = correct_index;
    return spec;
}

SequenceRewardRule SequenceRewardRule::match_target(std::string t) {
    SequenceRewardRule rule;
    rule.kind = Kind::MatchTarget;
    rule.target = std::move(t);
    return rule;
}

SequenceRewardRule SequenceRewardRule::count_matching(std::string t) {
    SequenceRewardRule rule;
    rule.kind = Kind::CountMatching;
    rule.target = std::move(t);
    return rule;
}

SequenceRewardRule SequenceRewardRule::random_table() {
    SequenceRewardRule rule;
    rule.kind = Kind::RandomTable;
    return rule;
}

TaskSpec make_bandit(int num_prompts, int num_responses, const RewardGenSpec& gen,
                     std::uint64_t seed) {
    if (num_prompts < 1) {
        throw std::invalid_argument("num_prompts must be positive");
    }
    if (num_responses < 2) {
        throw std::invalid_argument("num_responses must be at least 2");
    }

    TaskSpec task;
    task.kind = TaskKind::Bandit;
    task.num_prompts = num_prompts;
    task.num_responses = num_responses;
    task.rewards.values.assign(static_cast<std::size_t>(num_prompts),
                               std::vector<double>(static_cast<std::size_t>(num_responses), 0.0));

    switch (gen.kind) {
        case RewardGenSpec::Kind::Explicit: {
            if (static_cast<int>(gen.table.size()) != num_prompts) {
                throw std::invalid_argument("explicit reward table prompt dimension mismatch");
            }
            for (const auto& row : gen.table) {
                if (static_cast<int>(row.size()) != num_responses) {
                    throw std::invalid_argument("explicit reward table response dimension mismatch");
                }
            }
            task.rewards.values = gen.table;
            break;
        }
        case RewardGenSpec::Kind::Uniform: {
            if (!std::isfinite(gen.lo) || !std::isfinite(gen.hi)) {
                throw std::invalid_argument("uniform reward bounds must be finite");
            }
            if (gen.hi <= gen.lo) {
                throw std::invalid_argument("uniform reward range must be non-empty");
            }
            Rng rng = Rng(seed).split(0x7a5b);
            for (auto& row : task.rewards.values) {
                for (double& v : row) {
                    v = rng.uniform(gen.lo, gen.hi);
                }
            }
            break;
        }
        case RewardGenSpec::Kind::OneHot: {
            if (gen.correct_index < 0 || gen.correct_index >= num_responses) {
                throw std::invalid_argument("one-hot correct index out of range");
            }
            for (auto& row : task.rewards.values) {
                row[static_cast<std::size_t>(gen.correct_index)] = 1.0;
            }
            break;
        }
    }

    task.validate();
    return task;
}

TaskSpec make_sequence_task(int vocab, int length, const SequenceRewardRule& rule,
                            std::uint64_t seed) {
    if (vocab < 1 || length < 1) {
        throw std::invalid_argument("vocab and length must be positive");
    }
    long long space = 1;
    for (int t = 0; t < length; ++t) {
        space *= vocab;
        if (space > kEnumerationLimit) {
            throw std::invalid_argument("vocab^length exceeds the enumeration limit 65536");
        }
    }

    TaskSpec task;
    task.kind = TaskKind::Sequence;
    task.num_prompts = 1;
    task.num_responses = static_cast<int>(space);
    task.vocab = vocab;
    task.length = length;
    task.rewards.values.assign(1, std::vector<double>(static_cast<std::size_t>(space), 0.0));

    auto& row = task.rewards.values[0];
    switch (rule.kind) {
        case SequenceRewardRule::Kind::MatchTarget: {
            const int target = task.response_id(rule.target);
            row[static_cast<std::size_t>(target)] = 1.0;
            break;
        }
        case SequenceRewardRule::Kind::CountMatching: {
            if (static_cast<int>(rule.target.size()) != length) {
                throw std::invalid_argument("count-matching target has the wrong length");
            }
            for (int y = 0; y < task.num_responses; ++y) {
                const std::string s = task.response_string(y);
                int matches = 0;
                for (int t = 0; t < length; ++t) {
                    if (s[static_cast<std::size_t>(t)] == rule.target[static_cast<std::size_t>(t)]) {
                        ++matches;
                    }
                }
                row[static_cast<std::size_t>(y)] = static_cast<double>(matches);
            }
            break;
        }
        case SequenceRewardRule::Kind::RandomTable: {
            Rng rng = Rng(seed).split(0x53eb);
            for (double& v : row) {
                v = rng.next_double();
            }
            break;
        }
    }

    task.validate();
    return task;
}

double reward(const TaskSpec& task, int x, int y) { return task.reward(x, y); }

nlohmann::json task_to_json(const TaskSpec& task) {
    nlohmann::json j;
    j["kind"] = task.kind == TaskKind::Bandit ? "bandit" : "sequence";
    j["num_prompts"] = task.num_prompts;
    if (task.kind == TaskKind::Bandit) {
        j["num_responses"] = task.num_responses;
    } else {
        j["vocab"] = task.vocab;
        j["length"] = task.length;
    }
    j["rewards"] = task.rewards.values;
    return j;
}

TaskSpec task_from_json(const nlohmann::json& j) {
    TaskSpec task;
    const std::string kind = j.at("kind").get<std::string>();
    task.num_prompts = j.at("num_prompts").get<int>();
    if (kind == "bandit") {
        task.kind = TaskKind::Bandit;
        task.num_responses = j.at("num_responses").get<int>();
    } else if (kind == "sequence") {
        task.kind = TaskKind::Sequence;
        task.vocab = j.at("vocab").get<int>();
        task.length = j.at("length").get<int>();
        long long space = 1;
        for (int t = 0; t < task.length; ++t) {
            space *= task.vocab;
            if (space > kEnumerationLimit) {
                throw std::invalid_argument("vocab^length exceeds the enumeration limit 65536");
            }
        }
        task.num_responses = static_cast<int>(space);
    } else {
        throw std::invalid_argument("unknown task kind: " + kind);
    }
    task.rewards.values = j.at("rewards").get<std::vector<std::vector<double>>>();
    task.validate();
    return task;
}

}  // namespace gvpolab
