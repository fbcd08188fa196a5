// SPDX-License-Identifier: Apache-2.0

#include "gvpolab/schemes.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gvpolab {

namespace {

double mean(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) {
        s += x;
    }
    return s / static_cast<double>(v.size());
}

double population_std(std::span<const double> v, double m) {
    double s = 0.0;
    for (double x : v) {
        s += (x - m) * (x - m);
    }
    return std::sqrt(s / static_cast<double>(v.size()));
}

double sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

void require_group_size(const GroupBatch& group, int minimum) {
    if (group.k() < minimum) {
        throw std::invalid_argument("group needs at least " + std::to_string(minimum) +
                                    " responses");
    }
}

std::vector<double> log_ratios(const GroupBatch& group) {
    std::vector<double> l(group.logp_theta.size());
    for (std::size_t i = 0; i < l.size(); ++i) {
        l[i] = group.logp_theta[i] - group.logp_aux[i];
    }
    return l;
}

void check_beta(double beta) {
    if (!(beta > 0.0) || !std::isfinite(beta)) {
        throw std::invalid_argument("beta must be a positive finite real");
    }
}

}  // namespace

std::string scheme_name(Scheme s) {
    switch (s) {
        case Scheme::Sft: return "sft";
        case Scheme::Grpo: return "grpo";
        case Scheme::Dpo: return "dpo";
        case Scheme::Gvpo: return "gvpo";
    }
    return "unknown";
}

Scheme scheme_from_name(const std::string& name) {
    if (name == "sft") return Scheme::Sft;
    if (name == "grpo") return Scheme::Grpo;
    if (name == "dpo") return Scheme::Dpo;
    if (name == "gvpo") return Scheme::Gvpo;
    throw std::invalid_argument("unknown scheme: " + name);
}

void GroupBatch::validate() const {
    const std::size_t n = responses.size();
    if (rewards.size() != n || logp_theta.size() != n || logp_aux.size() != n ||
        (!logp_old.empty() && logp_old.size() != n)) {
        throw std::invalid_argument("group fields must align index-wise with responses");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(rewards[i]) || !std::isfinite(logp_theta[i]) ||
            !std::isfinite(logp_aux[i])) {
            throw std::invalid_argument("group contains non-finite entries");
        }
    }
}

WeightVector gvpo_weights(const GroupBatch& group, const GvpoConfig& config) {
    require_group_size(group, 2);
    check_beta(config.beta);
    group.validate();

    const std::vector<double> l = log_ratios(group);
    const double mean_r = mean(group.rewards);
    const double mean_l = mean(l);

    WeightVector w;
    w.scheme = Scheme::Gvpo;
    w.zero_sum = true;
    w.weights.resize(l.size());
    for (std::size_t i = 0; i < l.size(); ++i) {
        w.weights[i] =
            config.beta * ((group.rewards[i] - mean_r) - config.beta * (l[i] - mean_l));
    }
    return w;
}

double gvpo_loss_nll_form(const GroupBatch& group, const GvpoConfig& config) {
    const WeightVector w = gvpo_weights(group, config);
    double loss = 0.0;
    for (std::size_t i = 0; i < w.weights.size(); ++i) {
        loss -= w.weights[i] * group.logp_theta[i];
    }
    return loss;
}

Gradient gvpo_nll_form_gradient(const PolicyParams& theta, const GroupBatch& group,
                                const GvpoConfig& config) {
    const WeightVector w = gvpo_weights(group, config);
    Gradient g;
    g.values.assign(theta.param_count(), 0.0);
    for (std::size_t i = 0; i < w.weights.size(); ++i) {
        const Gradient gi = theta.grad_log_prob(group.prompt, group.responses[i]);
        for (std::size_t j = 0; j < g.values.size(); ++j) {
            g.values[j] -= w.weights[i] * gi.values[j];
        }
    }
    return g;
}

double gvpo_loss_mse_form(const GroupBatch& group, const GvpoConfig& config) {
    require_group_size(group, 2);
    check_beta(config.beta);
    group.validate();
    const std::vector<double> l = log_ratios(group);
    const double mean_r = mean(group.rewards);
    const double mean_l = mean(l);
    double loss = 0.0;
    for (std::size_t i = 0; i < l.size(); ++i) {
        const double d = config.beta * (l[i] - mean_l) - (group.rewards[i] - mean_r);
        loss += d * d;
    }
    return 0.5 * loss;
}

double gvpo_loss_variance_form(const GroupBatch& group, const GvpoConfig& config) {
    require_group_size(group, 2);
    check_beta(config.beta);
    group.validate();
    const std::vector<double> l = log_ratios(group);
    std::vector<double> residual(l.size());
    for (std::size_t i = 0; i < l.size(); ++i) {
        residual[i] = config.beta * l[i] - group.rewards[i];
    }
    const double m = mean(residual);
    double loss = 0.0;
    for (double r : residual) {
        loss += (r - m) * (r - m);
    }
    return 0.5 * loss;
}

double gvpo_loss_mse_form_at(const PolicyParams& theta, const GroupBatch& group,
                             const GvpoConfig& config) {
    GroupBatch probe = group;
    for (std::size_t i = 0; i < probe.responses.size(); ++i) {
        probe.logp_theta[i] = theta.log_prob(probe.prompt, probe.responses[i]);
    }
    return gvpo_loss_mse_form(probe, config);
}

DecompositionTerms gvpo_loss_decomposed(const PolicyParams& theta, const PolicyParams& aux,
                                        const std::vector<Distribution>& sampling,
                                        const TaskSpec& task, double beta) {
    if (beta != 1.0) {
        throw std::invalid_argument("the decomposed form is defined at beta = 1");
    }
    DecompositionTerms terms;
    const double num_prompts = static_cast<double>(task.num_prompts);
    for (int x = 0; x < task.num_prompts; ++x) {
        const std::vector<double>& s = sampling[static_cast<std::size_t>(x)].probs;
        const std::vector<double> lp_theta = theta.log_prob_row(x);
        const std::vector<double> lp_aux = aux.log_prob_row(x);

        double mean_r = 0.0, mean_lt = 0.0, mean_la = 0.0;
        for (int y = 0; y < task.num_responses; ++y) {
            const double aux_prob = std::exp(lp_aux[static_cast<std::size_t>(y)]);
            if (aux_prob > 0.0 && s[static_cast<std::size_t>(y)] <= 0.0) {
                throw SupportViolation(
                    "sampling distribution leaves auxiliary-policy support uncovered");
            }
            mean_r += s[static_cast<std::size_t>(y)] * task.reward(x, y);
            mean_lt += s[static_cast<std::size_t>(y)] * lp_theta[static_cast<std::size_t>(y)];
            mean_la += s[static_cast<std::size_t>(y)] * lp_aux[static_cast<std::size_t>(y)];
        }
        for (int y = 0; y < task.num_responses; ++y) {
            const double sy = s[static_cast<std::size_t>(y)];
            const double ct = lp_theta[static_cast<std::size_t>(y)] - mean_lt;
            const double ca = lp_aux[static_cast<std::size_t>(y)] - mean_la;
            terms.advantage += sy * (task.reward(x, y) - mean_r) *
                               lp_theta[static_cast<std::size_t>(y)] / num_prompts;
            terms.covariance += sy * ct * ca / num_prompts;
            terms.variance += sy * ct * ct / num_prompts;
        }
    }
    terms.combined = -2.0 * (terms.advantage + terms.covariance - 0.5 * terms.variance);
    return terms;
}

double ablated_decomposed_loss(const PolicyParams& theta, const PolicyParams& aux,
                               const std::vector<Distribution>& sampling,
                               const TaskSpec& task, double beta,
                               const AblationSpec& ablation, Gradient* grad_out) {
    if (beta != 1.0) {
        throw std::invalid_argument("regularization ablations are defined at beta = 1");
    }
    if (grad_out != nullptr) {
        grad_out->values.assign(theta.param_count(), 0.0);
    }
    const bool keep_var = !ablation.drop_var && ablation.entropy_coeff <= 0.0;
    const bool keep_cov = !ablation.drop_cov;

    double loss = 0.0;
    for (int x = 0; x < task.num_prompts; ++x) {
        const std::vector<double>& s = sampling[static_cast<std::size_t>(x)].probs;
        const std::vector<double> lp_theta = theta.log_prob_row(x);
        const std::vector<double> lp_aux = aux.log_prob_row(x);

        double mean_r = 0.0, mean_lt = 0.0, mean_la = 0.0;
        for (int y = 0; y < task.num_responses; ++y) {
            const double aux_prob = std::exp(lp_aux[static_cast<std::size_t>(y)]);
            if (aux_prob > 0.0 && s[static_cast<std::size_t>(y)] <= 0.0) {
                throw SupportViolation(
                    "sampling distribution leaves auxiliary-policy support uncovered");
            }
            mean_r += s[static_cast<std::size_t>(y)] * task.reward(x, y);
            mean_lt += s[static_cast<std::size_t>(y)] * lp_theta[static_cast<std::size_t>(y)];
            mean_la += s[static_cast<std::size_t>(y)] * lp_aux[static_cast<std::size_t>(y)];
        }

        double adv = 0.0, cov = 0.0, var = 0.0, ent = 0.0;
        for (int y = 0; y < task.num_responses; ++y) {
            const double sy = s[static_cast<std::size_t>(y)];
            const double ct = lp_theta[static_cast<std::size_t>(y)] - mean_lt;
            const double ca = lp_aux[static_cast<std::size_t>(y)] - mean_la;
            adv += sy * (task.reward(x, y) - mean_r) * lp_theta[static_cast<std::size_t>(y)];
            cov += sy * ct * ca;
            var += sy * ct * ct;
            ent += sy * lp_theta[static_cast<std::size_t>(y)];
        }
        loss += -2.0 * adv - (keep_cov ? 2.0 * cov : 0.0) + (keep_var ? var : 0.0) +
                ablation.entropy_coeff * ent;

        if (grad_out != nullptr) {
            // Sensitivities dL/d(log pi_theta(y|x)); centered terms have zero
            // derivative through their own means. Scaled to match the
            // mean-over-prompts loss below.
            const double scale = 1.0 / static_cast<double>(task.num_prompts);
            std::vector<double> g(static_cast<std::size_t>(task.num_responses), 0.0);
            for (int y = 0; y < task.num_responses; ++y) {
                const double sy = s[static_cast<std::size_t>(y)];
                const double ct = lp_theta[static_cast<std::size_t>(y)] - mean_lt;
                const double ca = lp_aux[static_cast<std::size_t>(y)] - mean_la;
                double gy = -2.0 * sy * (task.reward(x, y) - mean_r);
                if (keep_cov) {
                    gy -= 2.0 * sy * ca;
                }
                if (keep_var) {
                    gy += 2.0 * sy * ct;
                }
                gy += ablation.entropy_coeff * sy;
                g[static_cast<std::size_t>(y)] = gy * scale;
            }
            theta.accumulate_from_logprob_sensitivities(x, g, grad_out->values);
        }
    }
    return loss / static_cast<double>(task.num_prompts);
}

WeightVector grpo_weights(const GroupBatch& group, const GrpoConfig& config) {
    require_group_size(group, 2);
    group.validate();
    if (group.logp_old.size() != group.responses.size()) {
        throw std::invalid_argument("GRPO needs log-probabilities under the old policy");
    }
    if (!(config.clip_epsilon > 0.0 && config.clip_epsilon <= 1.0)) {
        throw std::invalid_argument("clip_epsilon must lie in (0, 1]");
    }
    if (!(config.std_floor > 0.0)) {
        throw std::invalid_argument("std_floor must be positive");
    }

    const double mean_r = mean(group.rewards);
    const double divisor =
        config.use_std_normalization
            ? std::max(population_std(group.rewards, mean_r), config.std_floor)
            : 1.0;

    WeightVector w;
    w.scheme = Scheme::Grpo;
    w.zero_sum = false;
    w.weights.resize(group.responses.size());
    for (std::size_t i = 0; i < w.weights.size(); ++i) {
        const double ratio = std::exp(group.logp_theta[i] - group.logp_old[i]);
        const double clipped =
            std::clamp(ratio, 1.0 - config.clip_epsilon, 1.0 + config.clip_epsilon);
        const double advantage = (group.rewards[i] - mean_r) / divisor;
        if (config.use_ppo_min_form) {
            w.weights[i] = std::min(ratio * advantage, clipped * advantage);
        } else {
            w.weights[i] = clipped * advantage;
        }
    }
    return w;
}

Gradient grpo_kl_penalty_gradient(const PolicyParams& theta, const PolicyParams& ref,
                                  double kl_coefficient) {
    if (kl_coefficient < 0.0) {
        throw std::invalid_argument("kl_coefficient must be nonnegative");
    }
    Gradient g;
    g.values.assign(theta.param_count(), 0.0);
    if (kl_coefficient == 0.0) {
        return g;
    }
    const double scale = kl_coefficient / static_cast<double>(theta.num_prompts());
    for (int x = 0; x < theta.num_prompts(); ++x) {
        const std::vector<double> lp_theta = theta.log_prob_row(x);
        const std::vector<double> lp_ref = ref.log_prob_row(x);
        // d/d(log pi(y)) of sum_y e^{log pi(y)} (log pi(y) - log ref(y))
        std::vector<double> sens(lp_theta.size());
        for (std::size_t y = 0; y < lp_theta.size(); ++y) {
            const double p = std::exp(lp_theta[y]);
            sens[y] = scale * p * (lp_theta[y] - lp_ref[y] + 1.0);
        }
        theta.accumulate_from_logprob_sensitivities(x, sens, g.values);
    }
    return g;
}

DpoPairResult dpo_weights_from_logps(double logp_theta_w, double logp_ref_w,
                                     double logp_theta_l, double logp_ref_l, double beta) {
    check_beta(beta);
    const double lw = logp_theta_w - logp_ref_w;
    const double ll = logp_theta_l - logp_ref_l;
    DpoPairResult r;
    r.w_w = sigmoid(beta * (ll - lw));
    r.w_l = -r.w_w;
    // -log sigmoid(z) evaluated stably as log(1 + e^{-z}).
    const double z = beta * (lw - ll);
    r.loss = z > 0.0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
    return r;
}

DpoPairResult dpo_weights(const PolicyParams& theta, const PolicyParams& ref, int x,
                          int y_w, int y_l, double beta) {
    if (y_w == y_l) {
        throw std::invalid_argument("a preference pair needs two distinct responses");
    }
    return dpo_weights_from_logps(theta.log_prob(x, y_w), ref.log_prob(x, y_w),
                                  theta.log_prob(x, y_l), ref.log_prob(x, y_l), beta);
}

std::vector<DpoPair> dpo_pairs(const GroupBatch& group, double beta) {
    check_beta(beta);
    group.validate();
    std::vector<DpoPair> pairs;
    const int k = group.k();
    for (int i = 0; i < k; ++i) {
        for (int j = i + 1; j < k; ++j) {
            if (group.rewards[static_cast<std::size_t>(i)] ==
                group.rewards[static_cast<std::size_t>(j)]) {
                continue;  // ties carry no preference
            }
            const bool i_wins = group.rewards[static_cast<std::size_t>(i)] >
                                group.rewards[static_cast<std::size_t>(j)];
            DpoPair pair;
            pair.winner_index = i_wins ? i : j;
            pair.loser_index = i_wins ? j : i;
            pair.result = dpo_weights_from_logps(
                group.logp_theta[static_cast<std::size_t>(pair.winner_index)],
                group.logp_aux[static_cast<std::size_t>(pair.winner_index)],
                group.logp_theta[static_cast<std::size_t>(pair.loser_index)],
                group.logp_aux[static_cast<std::size_t>(pair.loser_index)], beta);
            pairs.push_back(pair);
        }
    }
    return pairs;
}

WeightVector sft_weights(const GroupBatch& group) {
    require_group_size(group, 1);
    group.validate();
    std::size_t best = 0;
    for (std::size_t i = 1; i < group.rewards.size(); ++i) {
        if (group.rewards[i] > group.rewards[best]) {
            best = i;
        }
    }
    // Lowest response id wins ties, independent of group order.
    for (std::size_t i = 0; i < group.rewards.size(); ++i) {
        if (group.rewards[i] == group.rewards[best] &&
            group.responses[i] < group.responses[best]) {
            best = i;
        }
    }
    WeightVector w;
    w.scheme = Scheme::Sft;
    w.zero_sum = false;
    w.weights.assign(group.responses.size(), 0.0);
    w.weights[best] = 1.0;
    return w;
}

Gradient assemble_gradient(const PolicyParams& theta, std::span<const GroupBatch> groups,
                           std::span<const WeightVector> weights) {
    if (groups.size() != weights.size()) {
        throw std::invalid_argument("one weight vector per group is required");
    }
    Gradient g;
    g.values.assign(theta.param_count(), 0.0);
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const GroupBatch& group = groups[gi];
        const WeightVector& w = weights[gi];
        if (w.weights.size() != group.responses.size()) {
            throw std::invalid_argument("weights must align with group responses");
        }
        for (std::size_t i = 0; i < w.weights.size(); ++i) {
            if (w.weights[i] != 0.0) {
                theta.accumulate_grad_log_prob(group.prompt, group.responses[i],
                                               -w.weights[i], g.values);
            }
        }
    }
    return g;
}

Gradient assemble_gradient(std::span<const WeightVector> weights,
                           std::span<const std::vector<Gradient>> grads) {
    if (weights.size() != grads.size()) {
        throw std::invalid_argument("one gradient list per weight vector is required");
    }
    Gradient out;
    for (std::size_t gi = 0; gi < weights.size(); ++gi) {
        if (weights[gi].weights.size() != grads[gi].size()) {
            throw std::invalid_argument("weights must align with per-response gradients");
        }
        for (std::size_t i = 0; i < grads[gi].size(); ++i) {
            if (out.values.empty()) {
                out.values.assign(grads[gi][i].values.size(), 0.0);
            }
            if (grads[gi][i].values.size() != out.values.size()) {
                throw std::invalid_argument("per-response gradient dimension mismatch");
            }
            for (std::size_t j = 0; j < out.values.size(); ++j) {
                out.values[j] -= weights[gi].weights[i] * grads[gi][i].values[j];
            }
        }
    }
    return out;
}

}  // namespace gvpolab
