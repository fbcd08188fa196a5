// SPDX-License-Identifier: Apache-2.0
//
// Softmax policies over enumerable response spaces with exact
// log-probabilities, seeded sampling, and analytic log-probability
// gradients. Two parameterizations share one interface:
//
//   Flat            one logit per (prompt, response)
//   Autoregressive  tabular token conditionals, one logit row per
//                   (prompt, position, prefix state); response probability
//                   is the product of its token conditionals
//
// All normalization is log-sum-exp with max subtraction. Parameters live in
// one flat vector (concatenated per-prompt blocks) so gradients and updates
// are plain dense vector ops.

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "gvpolab/rng.hpp"
#include "gvpolab/taskenv.hpp"

namespace gvpolab {

enum class PolicyKind { Flat, Autoregressive };

struct Distribution {
    std::vector<double> probs;
};

struct Gradient {
    std::vector<double> values;

    double norm() const;
    double max_abs() const;
};

class PolicyParams {
public:
    PolicyParams() = default;

    static PolicyParams uniform_flat(int num_prompts, int num_responses);
    static PolicyParams uniform_autoregressive(int num_prompts, int vocab, int length);
    static PolicyParams from_flat_logits(std::vector<std::vector<double>> logits);
    // Flat policy realizing the given per-prompt distributions (logits = log p).
    static PolicyParams from_distributions(const std::vector<Distribution>& dists);

    PolicyKind kind() const { return kind_; }
    int num_prompts() const { return num_prompts_; }
    int num_responses() const { return num_responses_; }
    int vocab() const { return vocab_; }
    int length() const { return length_; }
    std::size_t param_count() const { return params_.size(); }
    std::size_t prompt_block_size() const { return block_size_; }

    std::span<double> raw() { return params_; }
    std::span<const double> raw() const { return params_; }
    double& at(std::size_t i) { return params_[i]; }

    // log pi(y|x); exact via log-sum-exp (autoregressive: sum over positions).
    double log_prob(int x, int y) const;
    // All log pi(y|x) for one prompt; cheaper than per-response calls.
    std::vector<double> log_prob_row(int x) const;
    Distribution distribution(int x) const;
    // k i.i.d. draws with replacement via inverse CDF; deterministic in rng.
    std::vector<int> sample_k(int x, int k, Rng& rng) const;

    Gradient grad_log_prob(int x, int y) const;
    // out += coeff * grad log pi(y|x); `out` spans the full parameter vector.
    void accumulate_grad_log_prob(int x, int y, double coeff, std::span<double> out) const;
    // out += sum_y g[y] * grad log pi(y|x) for one prompt. `g` is a
    // sensitivity vector over the full response space; this is the chain
    // rule through the log-probability vector and works for both kinds.
    void accumulate_from_logprob_sensitivities(int x, std::span<const double> g,
                                               std::span<double> out) const;

    // params += alpha * g
    void axpy(double alpha, const Gradient& g);

    // Flat policy with the same induced distributions (autoregressive input).
    PolicyParams to_flat() const;

    bool same_shape(const PolicyParams& other) const;

private:
    void check_prompt(int x) const;
    void check_response(int y) const;
    // Autoregressive layout helpers.
    std::size_t ar_row_offset(int position, int context) const;

    PolicyKind kind_ = PolicyKind::Flat;
    int num_prompts_ = 0;
    int num_responses_ = 0;
    int vocab_ = 0;
    int length_ = 0;
    std::size_t block_size_ = 0;  // parameters per prompt
    std::vector<double> params_;
};

// Zero-logit policy matching the task's response space.
PolicyParams init_uniform(const TaskSpec& task, PolicyKind kind);

double log_prob(const PolicyParams& params, int x, int y);
Distribution distribution(const PolicyParams& params, int x);
std::vector<int> sample_k(const PolicyParams& params, int x, int k, Rng& rng);
Gradient grad_log_prob(const PolicyParams& params, int x, int y);

std::vector<Distribution> all_distributions(const PolicyParams& params);

double logsumexp(std::span<const double> values);

nlohmann::json policy_to_json(const PolicyParams& params);
PolicyParams policy_from_json(const nlohmann::json& j);

}  // namespace gvpolab
