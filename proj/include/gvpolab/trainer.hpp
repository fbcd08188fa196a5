// SPDX-License-Identifier: Apache-2.0
//
// The optimization loop: sampling distributions (on-policy, reference,
// uniform, replay mixtures, fixed skews), exact-expectation or Monte-Carlo
// gradients, plain gradient-descent updates, and convergence metrics
// against the enumeration oracle.
//
// Gradient scale conventions. Per-prompt parameter blocks are disjoint, so
// the update gradient is the sum of per-prompt gradients (each prompt
// trains at the configured learning rate independently of prompt count);
// reported losses are means over prompts. In Monte-Carlo mode the GVPO
// per-group gradient carries a 2/(k-1) factor, which makes it an unbiased
// estimator of the exact-expectation gradient (the group-centered sum of
// squares is the Bessel-corrected sample variance of R - beta*l).

#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gvpolab/oracle.hpp"
#include "gvpolab/policy.hpp"
#include "gvpolab/rng.hpp"
#include "gvpolab/schemes.hpp"
#include "gvpolab/taskenv.hpp"

namespace gvpolab {

enum class SamplerKind { OldPolicy, Reference, Uniform, ReplayMixture, Skew, Explicit };

struct SamplerSpec {
    SamplerKind kind = SamplerKind::OldPolicy;
    int historical = 0;        // ReplayMixture: ids drawn from the buffer
    int fresh = 0;             // ReplayMixture: ids drawn from pi_old
    int buffer_capacity = 64;  // per-prompt ring buffer
    std::uint64_t skew_seed = 0;
    std::vector<Distribution> explicit_dists;  // Explicit: fixed tables

    static SamplerSpec old_policy();
    static SamplerSpec reference();
    static SamplerSpec uniform();
    static SamplerSpec replay_mixture(int historical, int fresh, int buffer_capacity = 64);
    static SamplerSpec skew(std::uint64_t seed);
    static SamplerSpec explicit_table(std::vector<Distribution> dists);
};

enum class GradientMode { Exact, MonteCarlo };
enum class AuxPolicyMode { FixedReference, RefreshEachStep };

struct AblationFlags {
    bool drop_var = false;
    bool drop_cov = false;
    double entropy_substitute = 0.0;  // > 0 replaces the variance term

    bool any() const { return drop_var || drop_cov || entropy_substitute > 0.0; }
    AblationSpec to_spec() const { return {drop_var, drop_cov, entropy_substitute}; }
};

struct TrainConfig {
    Scheme scheme = Scheme::Gvpo;
    double beta = 1.0;
    double learning_rate = 0.5;
    int steps = 1000;
    int k = 8;
    SamplerSpec sampler = SamplerSpec::reference();
    GradientMode gradient_mode = GradientMode::Exact;
    AuxPolicyMode aux_policy_mode = AuxPolicyMode::FixedReference;
    std::uint64_t seed = 0;
    AblationFlags ablation;
    GrpoConfig grpo;
    int old_refresh_interval = 1;  // steps between pi_old snapshots
    double momentum = 0.0;         // optional heavy-ball coefficient
    PolicyKind policy_kind = PolicyKind::Flat;

    void validate(const TaskSpec& task) const;
};

struct StepRow {
    int step = 0;
    double loss = 0.0;
    double grad_norm = 0.0;
    double mean_reward = 0.0;
    double kl_to_optimal = 0.0;
    double kl_to_aux = 0.0;
    // Populated only for exact-mode GVPO at beta = 1.
    double adv_term = 0.0;
    double cov_term = 0.0;
    double var_term = 0.0;
    bool has_decomposition = false;
};

struct ConvergenceMetrics {
    double kl_to_optimal = 0.0;
    double kl_to_aux = 0.0;
    double mean_reward = 0.0;
};

struct TrainSummary {
    nlohmann::json config_echo;
    ConvergenceMetrics final_metrics;
    double final_loss = 0.0;
    double wall_clock_ms = 0.0;
    bool aborted = false;
    std::string abort_reason;
    nlohmann::json diagnostic;  // state dump when aborted
};

struct TrainReport {
    std::vector<StepRow> rows;
    TrainSummary summary;
};

// kl_to_optimal = mean_x KL(pi*(.|x), pi_theta(.|x)) with pi* derived from
// aux; kl_to_aux = mean_x KL(pi_theta(.|x), pi_aux(.|x)); mean_reward is the
// exact expectation of R under pi_theta.
ConvergenceMetrics convergence_metrics(const PolicyParams& theta, const TaskSpec& task,
                                       double beta, const PolicyParams& aux);

// Yields k response ids per prompt per step (Monte-Carlo) or the sampling
// distribution itself (exact mode). Owns the replay buffers.
class Sampler {
public:
    Sampler(SamplerSpec spec, const TaskSpec& task);

    std::vector<int> draw_group(int x, int k, const PolicyParams& old_policy,
                                const PolicyParams& aux, Rng& rng);
    Distribution exact_distribution(int x, const PolicyParams& old_policy,
                                    const PolicyParams& aux) const;
    bool supports_exact() const;
    std::string source_tag() const;
    const SamplerSpec& spec() const { return spec_; }

private:
    SamplerSpec spec_;
    int num_responses_ = 0;
    std::vector<Distribution> skew_dists_;
    std::vector<std::vector<int>> buffers_;  // per-prompt replay ring
    std::vector<std::size_t> buffer_next_;
};

std::unique_ptr<Sampler> make_sampler(const SamplerSpec& spec, const TaskSpec& task);

using RowCallback = std::function<void(const StepRow&)>;

class Trainer {
public:
    // The reference role defaults to a snapshot of the initial policy.
    Trainer(TaskSpec task, PolicyParams init, TrainConfig config);
    Trainer(TaskSpec task, PolicyParams init, PolicyParams reference, TrainConfig config);

    // One sample / weight / assemble / update cycle.
    StepRow step();
    void run(const RowCallback& on_row = {});

    const PolicyParams& policy() const { return theta_; }
    const PolicyParams& reference() const { return reference_; }
    const TrainReport& report() const { return report_; }
    TrainReport take_report() { return std::move(report_); }
    bool aborted() const { return report_.summary.aborted; }

    // Gradient of the configured objective at the current parameters,
    // without updating them (used by verification and estimator checks).
    Gradient current_gradient();

private:
    struct StepComputation {
        double loss = 0.0;
        Gradient grad;
        bool has_decomposition = false;
        double adv = 0.0, cov = 0.0, var = 0.0;
    };
    StepComputation compute_loss_and_gradient();
    StepComputation exact_gvpo(const PolicyParams& aux);
    StepComputation exact_sft(const PolicyParams& aux);
    StepComputation monte_carlo(const PolicyParams& aux);
    const PolicyParams& aux_policy() const;
    void finalize_summary(double wall_ms);
    void abort_run(const std::string& reason, const StepComputation* state);

    TaskSpec task_;
    TrainConfig config_;
    PolicyParams theta_;
    PolicyParams reference_;
    PolicyParams old_;
    std::unique_ptr<Sampler> sampler_;
    Rng rng_;
    int step_count_ = 0;
    std::vector<double> momentum_buf_;
    std::optional<OptimalPolicySolution> cached_optimum_;  // FixedReference only
    TrainReport report_;
};

std::pair<PolicyParams, TrainReport> train(const TaskSpec& task, const PolicyParams& init,
                                           const TrainConfig& config,
                                           const RowCallback& on_row = {});

// CSV row emission per the report header contract.
std::string train_report_csv_header();
std::string step_row_csv(const StepRow& row);

nlohmann::json train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json summary_to_json(const TrainSummary& summary);

}  // namespace gvpolab
