// SPDX-License-Identifier: Apache-2.0

#include "gvpolab/oracle.hpp"

#include <algorithm>
#include <cmath>

namespace gvpolab {

namespace {

void check_beta(double beta) {
    if (!(beta > 0.0) || !std::isfinite(beta)) {
        throw std::invalid_argument("beta must be a positive finite real");
    }
}

void check_same_space(const PolicyParams& a, const TaskSpec& task, const char* what) {
    if (a.num_prompts() != task.num_prompts || a.num_responses() != task.num_responses) {
        throw std::invalid_argument(std::string(what) + " does not match the task's space");
    }
}

}  // namespace

double log_partition(const PolicyParams& ref, const TaskSpec& task, double beta, int x) {
    check_beta(beta);
    check_same_space(ref, task, "reference policy");
    const std::vector<double> logp = ref.log_prob_row(x);
    std::vector<double> tilted(logp.size());
    for (std::size_t y = 0; y < logp.size(); ++y) {
        tilted[y] = logp[y] + task.reward(x, static_cast<int>(y)) / beta;
    }
    return logsumexp(tilted);
}

OptimalPolicySolution optimal_policy(const PolicyParams& ref, const TaskSpec& task,
                                     double beta) {
    check_beta(beta);
    check_same_space(ref, task, "reference policy");
    OptimalPolicySolution sol;
    sol.beta = beta;
    sol.log_partition.reserve(static_cast<std::size_t>(task.num_prompts));
    sol.pi_star.reserve(static_cast<std::size_t>(task.num_prompts));
    for (int x = 0; x < task.num_prompts; ++x) {
        const std::vector<double> logp = ref.log_prob_row(x);
        std::vector<double> tilted(logp.size());
        for (std::size_t y = 0; y < logp.size(); ++y) {
            tilted[y] = logp[y] + task.reward(x, static_cast<int>(y)) / beta;
        }
        const double log_z = logsumexp(tilted);
        Distribution d;
        d.probs.resize(tilted.size());
        for (std::size_t y = 0; y < tilted.size(); ++y) {
            d.probs[y] = std::exp(tilted[y] - log_z);
        }
        sol.log_partition.push_back(log_z);
        sol.pi_star.push_back(std::move(d));
    }
    return sol;
}

double implicit_reward(const PolicyParams& theta, const PolicyParams& aux, double beta,
                       int x, int y, double log_partition) {
    check_beta(beta);
    return beta * (theta.log_prob(x, y) - aux.log_prob(x, y)) + beta * log_partition;
}

double kl(const Distribution& p, const Distribution& q) {
    if (p.probs.size() != q.probs.size()) {
        throw std::invalid_argument("KL requires distributions over the same space");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < p.probs.size(); ++i) {
        const double pi = p.probs[i];
        if (pi == 0.0) {
            continue;
        }
        if (q.probs[i] <= 0.0) {
            throw SupportViolation("KL support violation: p(y) > 0 where q(y) = 0");
        }
        sum += pi * (std::log(pi) - std::log(q.probs[i]));
    }
    return std::max(sum, 0.0);
}

double exact_gvpo_loss(const PolicyParams& theta, const PolicyParams& aux,
                       const std::vector<Distribution>& sampling, const TaskSpec& task,
                       double beta) {
    check_beta(beta);
    check_same_space(theta, task, "theta");
    check_same_space(aux, task, "auxiliary policy");
    if (static_cast<int>(sampling.size()) != task.num_prompts) {
        throw std::invalid_argument("sampling distributions must cover every prompt");
    }

    double total = 0.0;
    for (int x = 0; x < task.num_prompts; ++x) {
        const std::vector<double>& s = sampling[static_cast<std::size_t>(x)].probs;
        if (static_cast<int>(s.size()) != task.num_responses) {
            throw std::invalid_argument("sampling distribution size mismatch");
        }
        const std::vector<double> lp_theta = theta.log_prob_row(x);
        const std::vector<double> lp_aux = aux.log_prob_row(x);

        double mean_l = 0.0, mean_r = 0.0;
        for (int y = 0; y < task.num_responses; ++y) {
            const double aux_prob = std::exp(lp_aux[static_cast<std::size_t>(y)]);
            if (aux_prob > 0.0 && s[static_cast<std::size_t>(y)] <= 0.0) {
                throw SupportViolation(
                    "sampling distribution leaves auxiliary-policy support uncovered");
            }
            const double l = lp_theta[static_cast<std::size_t>(y)] -
                             lp_aux[static_cast<std::size_t>(y)];
            mean_l += s[static_cast<std::size_t>(y)] * l;
            mean_r += s[static_cast<std::size_t>(y)] * task.reward(x, y);
        }
        double loss = 0.0;
        for (int y = 0; y < task.num_responses; ++y) {
            const double l = lp_theta[static_cast<std::size_t>(y)] -
                             lp_aux[static_cast<std::size_t>(y)];
            const double d = beta * (l - mean_l) - (task.reward(x, y) - mean_r);
            loss += s[static_cast<std::size_t>(y)] * d * d;
        }
        total += loss;
    }
    return total / static_cast<double>(task.num_prompts);
}

double exact_gvpo_loss(const PolicyParams& theta, const PolicyParams& aux,
                       const PolicyParams& sampling_policy, const TaskSpec& task,
                       double beta) {
    return exact_gvpo_loss(theta, aux, all_distributions(sampling_policy), task, beta);
}

Gradient exact_gvpo_gradient(const PolicyParams& theta, const PolicyParams& aux,
                             const std::vector<Distribution>& sampling,
                             const TaskSpec& task, double beta) {
    check_beta(beta);
    check_same_space(theta, task, "theta");
    check_same_space(aux, task, "auxiliary policy");
    Gradient g;
    g.values.assign(theta.param_count(), 0.0);
    const double scale = 1.0 / static_cast<double>(task.num_prompts);
    for (int x = 0; x < task.num_prompts; ++x) {
        const std::vector<double>& s = sampling[static_cast<std::size_t>(x)].probs;
        const std::vector<double> lp_theta = theta.log_prob_row(x);
        const std::vector<double> lp_aux = aux.log_prob_row(x);

        double mean_l = 0.0, mean_r = 0.0;
        for (int y = 0; y < task.num_responses; ++y) {
            const double aux_prob = std::exp(lp_aux[static_cast<std::size_t>(y)]);
            if (aux_prob > 0.0 && s[static_cast<std::size_t>(y)] <= 0.0) {
                throw SupportViolation(
                    "sampling distribution leaves auxiliary-policy support uncovered");
            }
            const double l = lp_theta[static_cast<std::size_t>(y)] -
                             lp_aux[static_cast<std::size_t>(y)];
            mean_l += s[static_cast<std::size_t>(y)] * l;
            mean_r += s[static_cast<std::size_t>(y)] * task.reward(x, y);
        }
        std::vector<double> sens(static_cast<std::size_t>(task.num_responses), 0.0);
        for (int y = 0; y < task.num_responses; ++y) {
            const double l = lp_theta[static_cast<std::size_t>(y)] -
                             lp_aux[static_cast<std::size_t>(y)];
            const double d = beta * (l - mean_l) - (task.reward(x, y) - mean_r);
            sens[static_cast<std::size_t>(y)] =
                2.0 * beta * s[static_cast<std::size_t>(y)] * d * scale;
        }
        theta.accumulate_from_logprob_sensitivities(x, sens, g.values);
    }
    return g;
}

Gradient finite_diff_grad(const std::function<double(const PolicyParams&)>& loss_fn,
                          const PolicyParams& params, double h) {
    if (!(h >= 1e-8 && h <= 1e-3)) {
        throw std::invalid_argument("finite-difference step h must lie in [1e-8, 1e-3]");
    }
    Gradient g;
    g.values.assign(params.param_count(), 0.0);
    PolicyParams probe = params;
    for (std::size_t j = 0; j < params.param_count(); ++j) {
        const double original = probe.at(j);
        probe.at(j) = original + h;
        const double up = loss_fn(probe);
        probe.at(j) = original - h;
        const double down = loss_fn(probe);
        probe.at(j) = original;
        g.values[j] = (up - down) / (2.0 * h);
    }
    return g;
}

}  // namespace gvpolab
