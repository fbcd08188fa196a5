// SPDX-License-Identifier: Apache-2.0
//
// Brute-force ground truth by full enumeration: the partition function
// Z(x) = sum_y pi'(y|x) e^{R(x,y)/beta}, the closed-form optimal policy
// pi*(y|x) = pi'(y|x) e^{R(x,y)/beta} / Z(x), the implicit reward
// R_theta = beta log(pi_theta/pi') + beta log Z, KL divergences, the exact
// expectation form of the GVPO loss, and a central-difference gradient
// oracle. All arithmetic stays in the log domain with max subtraction.

#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "gvpolab/policy.hpp"
#include "gvpolab/taskenv.hpp"

namespace gvpolab {

// Raised when a distribution places probability on responses its
// counterpart cannot produce (the sampling-support precondition).
class SupportViolation : public std::runtime_error {
public:
    explicit SupportViolation(const std::string& what) : std::runtime_error(what) {}
};

struct OptimalPolicySolution {
    double beta = 1.0;
    std::vector<double> log_partition;     // log Z(x) per prompt
    std::vector<Distribution> pi_star;     // pi*(.|x) per prompt
};

// log Z(x) = logsumexp_y(log pi'(y|x) + R(x,y)/beta); exact enumeration.
double log_partition(const PolicyParams& ref, const TaskSpec& task, double beta, int x);

OptimalPolicySolution optimal_policy(const PolicyParams& ref, const TaskSpec& task,
                                     double beta);

// beta * (log pi_theta(y|x) - log pi_aux(y|x)) + beta * log_partition.
double implicit_reward(const PolicyParams& theta, const PolicyParams& aux, double beta,
                       int x, int y, double log_partition);

// sum_y p(y) log(p(y)/q(y)) with 0 log 0 = 0; throws SupportViolation when
// p(y) > 0 and q(y) = 0.
double kl(const Distribution& p, const Distribution& q);

// Mean over prompts of sum_y pi_s(y|x) * D(x,y)^2 where
//   D = beta*(l - E_s l) - (R - E_s R),  l = log pi_theta - log pi_aux.
// The beta log Z inside the implicit reward cancels under centering and is
// omitted by construction; that equivalence is itself a tested property.
double exact_gvpo_loss(const PolicyParams& theta, const PolicyParams& aux,
                       const std::vector<Distribution>& sampling, const TaskSpec& task,
                       double beta);
double exact_gvpo_loss(const PolicyParams& theta, const PolicyParams& aux,
                       const PolicyParams& sampling_policy, const TaskSpec& task,
                       double beta);

// Analytic gradient of exact_gvpo_loss with respect to theta's parameters:
// per prompt the sensitivity to log pi_theta(y|x) is 2 beta s_y D_y / P.
Gradient exact_gvpo_gradient(const PolicyParams& theta, const PolicyParams& aux,
                             const std::vector<Distribution>& sampling,
                             const TaskSpec& task, double beta);

// Central differences coordinatewise: (f(p + h e_j) - f(p - h e_j)) / 2h.
// h must lie in [1e-8, 1e-3].
Gradient finite_diff_grad(const std::function<double(const PolicyParams&)>& loss_fn,
                          const PolicyParams& params, double h = 1e-5);

}  // namespace gvpolab
