// SPDX-License-Identifier: Apache-2.0
//
// The unified post-training framework: every scheme's gradient has the form
//
//   grad L = - sum_groups sum_i w_i * grad log pi_theta(y_i|x)
//
// and schemes differ only in the per-response weights w_i. This module
// computes the weights and loss values for SFT, GRPO, DPO and GVPO, the
// three equivalent GVPO loss forms, and GVPO's advantage / covariance /
// variance decomposition at beta = 1 (with its ablated variants).

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gvpolab/oracle.hpp"
#include "gvpolab/policy.hpp"
#include "gvpolab/taskenv.hpp"

namespace gvpolab {

enum class Scheme { Sft, Grpo, Dpo, Gvpo };

std::string scheme_name(Scheme s);
Scheme scheme_from_name(const std::string& name);

// One prompt with k sampled responses and their log-probabilities under the
// policies playing the current / auxiliary / old roles.
struct GroupBatch {
    int prompt = 0;
    std::vector<int> responses;
    std::vector<double> rewards;
    std::vector<double> logp_theta;  // under pi_theta
    std::vector<double> logp_aux;    // under pi_theta' (reference/old role)
    std::vector<double> logp_old;    // under pi_old (GRPO ratios)
    std::string weights_source;      // tag identifying the sampling policy

    int k() const { return static_cast<int>(responses.size()); }
    void validate() const;
};

struct WeightVector {
    std::vector<double> weights;
    Scheme scheme = Scheme::Gvpo;
    bool zero_sum = false;  // asserts sum(weights) == 0 up to float error
};

struct GvpoConfig {
    double beta = 1.0;
};

struct GrpoConfig {
    double clip_epsilon = 0.2;     // symmetric clamp to [1-eps, 1+eps]
    double kl_coefficient = 1.0;   // coefficient on KL(pi_theta || pi_ref)
    double std_floor = 1e-6;
    bool use_std_normalization = true;  // false = no sigma(R) divisor
    bool use_ppo_min_form = false;      // min(r*A, clip(r)*A) instead of clip(r)*A
};

// w_i = beta * [(R_i - mean R) - beta * (l_i - mean l)], l = logp_theta - logp_aux.
// The weights sum to zero by construction (the partition-cancellation condition).
WeightVector gvpo_weights(const GroupBatch& group, const GvpoConfig& config);

// -sum_i w_i * logp_theta_i with the weights frozen at the current theta.
double gvpo_loss_nll_form(const GroupBatch& group, const GvpoConfig& config);
// Frozen-weight gradient of the NLL form, computed independently of
// assemble_gradient (per-response dense gradients, then the weighted sum).
Gradient gvpo_nll_form_gradient(const PolicyParams& theta, const GroupBatch& group,
                                const GvpoConfig& config);

// 0.5 * sum_i [(beta*l_i - beta*mean l) - (R_i - mean R)]^2.
double gvpo_loss_mse_form(const GroupBatch& group, const GvpoConfig& config);
// 0.5 * sum_i [(beta*l_i - R_i) - mean(beta*l - R)]^2; algebraically equal
// to the MSE form.
double gvpo_loss_variance_form(const GroupBatch& group, const GvpoConfig& config);
// MSE form re-evaluated at a candidate policy (same group responses); used
// for finite-difference checks of the gradient contract.
double gvpo_loss_mse_form_at(const PolicyParams& theta, const GroupBatch& group,
                             const GvpoConfig& config);

// GVPO's exact-expectation decomposition at beta = 1 under y ~ pi_s:
//   combined = -2 * (advantage + covariance - 0.5 * variance)
// where advantage = E[(R - E R) log pi_theta],
// covariance = E[(log pi_theta - E log pi_theta)(log pi_aux - E log pi_aux)],
// variance = E[(log pi_theta - E log pi_theta)^2], all means over prompts.
// combined differs from the exact MSE loss only by theta-independent terms,
// so their gradients agree.
struct DecompositionTerms {
    double advantage = 0.0;
    double covariance = 0.0;
    double variance = 0.0;
    double combined = 0.0;
};

DecompositionTerms gvpo_loss_decomposed(const PolicyParams& theta, const PolicyParams& aux,
                                        const std::vector<Distribution>& sampling,
                                        const TaskSpec& task, double beta);

// Regularization ablations of the decomposed objective. entropy_coeff > 0
// replaces the variance term with c * E_s[log pi_theta] (an entropy
// surrogate pushing the policy toward spread instead of the variance
// penalty).
struct AblationSpec {
    bool drop_var = false;
    bool drop_cov = false;
    double entropy_coeff = 0.0;

    bool any() const { return drop_var || drop_cov || entropy_coeff > 0.0; }
};

// Loss value of the (possibly ablated) decomposed objective; when grad_out
// is non-null also accumulates its exact gradient. beta must be 1.
double ablated_decomposed_loss(const PolicyParams& theta, const PolicyParams& aux,
                               const std::vector<Distribution>& sampling,
                               const TaskSpec& task, double beta,
                               const AblationSpec& ablation,
                               Gradient* grad_out = nullptr);

// w_i = clamp(exp(logp_theta_i - logp_old_i), 1-eps, 1+eps) * A_i with
// A_i = (R_i - mean R) / max(sigma(R), std_floor) (population sigma);
// divisor 1 when use_std_normalization is false.
WeightVector grpo_weights(const GroupBatch& group, const GrpoConfig& config);

// Exact tabular gradient of kl_coefficient * mean_x KL(pi_theta || pi_ref).
Gradient grpo_kl_penalty_gradient(const PolicyParams& theta, const PolicyParams& ref,
                                  double kl_coefficient);

struct DpoPairResult {
    double w_w = 0.0;  // weight on the winner
    double w_l = 0.0;  // = -w_w
    double loss = 0.0; // -log sigmoid(beta * (l_w - l_l))
};

// l = log pi_theta - log pi_ref per response; w_w = sigmoid(beta*(l_l - l_w)).
DpoPairResult dpo_weights(const PolicyParams& theta, const PolicyParams& ref, int x,
                          int y_w, int y_l, double beta);
DpoPairResult dpo_weights_from_logps(double logp_theta_w, double logp_ref_w,
                                     double logp_theta_l, double logp_ref_l, double beta);

struct DpoPair {
    int winner_index = 0;  // indices into the group
    int loser_index = 0;
    DpoPairResult result;
};

// Every index pair with strictly distinct rewards, oriented winner-first;
// ties contribute no pair. Uses the group's cached log-probabilities (theta
// in logp_theta, the reference role in logp_aux).
std::vector<DpoPair> dpo_pairs(const GroupBatch& group, double beta);

// Weight 1 on the group's highest-reward response (lowest index tie-break).
WeightVector sft_weights(const GroupBatch& group);

// -sum_groups sum_i w_i * grad log pi_theta(y_i | x).
Gradient assemble_gradient(const PolicyParams& theta, std::span<const GroupBatch> groups,
                           std::span<const WeightVector> weights);
// Literal form over precomputed per-response gradients.
Gradient assemble_gradient(std::span<const WeightVector> weights,
                           std::span<const std::vector<Gradient>> grads);

}  // namespace gvpolab
