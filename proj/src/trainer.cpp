// SPDX-License-Identifier: Apache-2.0

#include "gvpolab/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <sstream>

namespace gvpolab {

namespace {

constexpr double kGradNormGuard = 1e6;

std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

Distribution uniform_distribution(int n) {
    Distribution d;
    d.probs.assign(static_cast<std::size_t>(n), 1.0 / static_cast<double>(n));
    return d;
}

}  // namespace

SamplerSpec SamplerSpec::old_policy() { return SamplerSpec{SamplerKind::OldPolicy, 0, 0, 64, 0, {}}; }
SamplerSpec SamplerSpec::reference() { return SamplerSpec{SamplerKind::Reference, 0, 0, 64, 0, {}}; }
SamplerSpec SamplerSpec::uniform() { return SamplerSpec{SamplerKind::Uniform, 0, 0, 64, 0, {}}; }

SamplerSpec SamplerSpec::replay_mixture(int historical, int fresh, int buffer_capacity) {
    return SamplerSpec{SamplerKind::ReplayMixture, historical, fresh, buffer_capacity, 0, {}};
}

SamplerSpec SamplerSpec::skew(std::uint64_t seed) {
    return SamplerSpec{SamplerKind::Skew, 0, 0, 64, seed, {}};
}

SamplerSpec SamplerSpec::explicit_table(std::vector<Distribution> dists) {
    return SamplerSpec{SamplerKind::Explicit, 0, 0, 64, 0, std::move(dists)};
}

Sampler::Sampler(SamplerSpec spec, const TaskSpec& task)
    : spec_(std::move(spec)), num_responses_(task.num_responses) {
    switch (spec_.kind) {
        case SamplerKind::ReplayMixture: {
            if (spec_.historical < 0 || spec_.fresh < 0 || spec_.historical + spec_.fresh < 1) {
                throw std::invalid_argument("replay mixture counts must be nonnegative");
            }
            if (spec_.buffer_capacity < 1) {
                throw std::invalid_argument("replay buffer capacity must be positive");
            }
            buffers_.assign(static_cast<std::size_t>(task.num_prompts), {});
            buffer_next_.assign(static_cast<std::size_t>(task.num_prompts), 0);
            break;
        }
        case SamplerKind::Skew: {
            // Fixed full-support distribution per prompt: softmax of seeded
            // logits in [-1, 1].
            Rng rng = Rng(spec_.skew_seed).split(0x5c3);
            skew_dists_.reserve(static_cast<std::size_t>(task.num_prompts));
            for (int x = 0; x < task.num_prompts; ++x) {
                std::vector<double> logits(static_cast<std::size_t>(num_responses_));
                for (double& v : logits) {
                    v = rng.uniform(-1.0, 1.0);
                }
                const double lse = logsumexp(logits);
                Distribution d;
                d.probs.resize(logits.size());
                for (std::size_t y = 0; y < logits.size(); ++y) {
                    d.probs[y] = std::exp(logits[y] - lse);
                }
                skew_dists_.push_back(std::move(d));
            }
            break;
        }
        case SamplerKind::Explicit: {
            if (static_cast<int>(spec_.explicit_dists.size()) != task.num_prompts) {
                throw std::invalid_argument("explicit sampler needs one table per prompt");
            }
            for (const auto& d : spec_.explicit_dists) {
                if (static_cast<int>(d.probs.size()) != num_responses_) {
                    throw std::invalid_argument("explicit sampler table size mismatch");
                }
            }
            break;
        }
        default:
            break;
    }
}

std::vector<int> Sampler::draw_group(int x, int k, const PolicyParams& old_policy,
                                     const PolicyParams& aux, Rng& rng) {
    switch (spec_.kind) {
        case SamplerKind::OldPolicy:
            return old_policy.sample_k(x, k, rng);
        case SamplerKind::Reference:
        case SamplerKind::Uniform:
        case SamplerKind::Skew:
        case SamplerKind::Explicit: {
            const Distribution d = exact_distribution(x, old_policy, aux);
            std::vector<int> out;
            out.reserve(static_cast<std::size_t>(k));
            for (int i = 0; i < k; ++i) {
                out.push_back(static_cast<int>(rng.sample_index(d.probs)));
            }
            return out;
        }
        case SamplerKind::ReplayMixture: {
            auto& buffer = buffers_[static_cast<std::size_t>(x)];
            // Historical draws come uniformly from the buffer; any shortfall
            // (including an empty buffer) falls back to fresh draws.
            const int from_buffer =
                std::min(spec_.historical, static_cast<int>(buffer.size()));
            const int fresh = k - from_buffer;
            std::vector<int> out;
            out.reserve(static_cast<std::size_t>(k));
            for (int i = 0; i < from_buffer; ++i) {
                out.push_back(buffer[static_cast<std::size_t>(rng.next_below(buffer.size()))]);
            }
            const std::vector<int> fresh_ids =
                fresh > 0 ? old_policy.sample_k(x, fresh, rng) : std::vector<int>{};
            for (int id : fresh_ids) {
                out.push_back(id);
                if (static_cast<int>(buffer.size()) < spec_.buffer_capacity) {
                    buffer.push_back(id);
                } else {
                    buffer[buffer_next_[static_cast<std::size_t>(x)]] = id;
                    buffer_next_[static_cast<std::size_t>(x)] =
                        (buffer_next_[static_cast<std::size_t>(x)] + 1) %
                        static_cast<std::size_t>(spec_.buffer_capacity);
                }
            }
            return out;
        }
    }
    throw std::logic_error("unreachable sampler kind");
}

Distribution Sampler::exact_distribution(int x, const PolicyParams& old_policy,
                                         const PolicyParams& aux) const {
    switch (spec_.kind) {
        case SamplerKind::OldPolicy:
            return old_policy.distribution(x);
        case SamplerKind::Reference:
            return aux.distribution(x);
        case SamplerKind::Uniform:
            return uniform_distribution(num_responses_);
        case SamplerKind::Skew:
            return skew_dists_[static_cast<std::size_t>(x)];
        case SamplerKind::Explicit:
            return spec_.explicit_dists[static_cast<std::size_t>(x)];
        case SamplerKind::ReplayMixture:
            throw std::invalid_argument(
                "replay mixtures have no closed-form sampling distribution");
    }
    throw std::logic_error("unreachable sampler kind");
}

bool Sampler::supports_exact() const { return spec_.kind != SamplerKind::ReplayMixture; }

std::string Sampler::source_tag() const {
    switch (spec_.kind) {
        case SamplerKind::OldPolicy: return "old_policy";
        case SamplerKind::Reference: return "reference";
        case SamplerKind::Uniform: return "uniform";
        case SamplerKind::ReplayMixture: return "replay_mixture";
        case SamplerKind::Skew: return "skew";
        case SamplerKind::Explicit: return "explicit";
    }
    return "unknown";
}

std::unique_ptr<Sampler> make_sampler(const SamplerSpec& spec, const TaskSpec& task) {
    return std::make_unique<Sampler>(spec, task);
}

void TrainConfig::validate(const TaskSpec& task) const {
    if (!(beta > 0.0) || !std::isfinite(beta)) {
        throw std::invalid_argument("train.beta must be positive");
    }
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw std::invalid_argument("train.learning_rate must be positive");
    }
    if (steps < 1) {
        throw std::invalid_argument("train.steps must be at least 1");
    }
    if (k < 2) {
        throw std::invalid_argument("train.k must be at least 2");
    }
    if (old_refresh_interval < 1) {
        throw std::invalid_argument("train.old_refresh_interval must be at least 1");
    }
    if (momentum < 0.0 || momentum >= 1.0) {
        throw std::invalid_argument("train.momentum must lie in [0, 1)");
    }
    if (ablation.any()) {
        if (scheme != Scheme::Gvpo || gradient_mode != GradientMode::Exact || beta != 1.0) {
            throw std::invalid_argument(
                "train.ablation is only valid for exact-mode GVPO at beta = 1");
        }
    }
    if (gradient_mode == GradientMode::Exact) {
        if (scheme == Scheme::Grpo || scheme == Scheme::Dpo) {
            throw std::invalid_argument(
                "train.gradient_mode: exact mode supports only GVPO and SFT");
        }
        if (sampler.kind == SamplerKind::ReplayMixture) {
            throw std::invalid_argument(
                "train.sampler: replay mixtures require monte_carlo mode");
        }
    }
    if (sampler.kind == SamplerKind::ReplayMixture && sampler.historical + sampler.fresh != k) {
        throw std::invalid_argument(
            "train.sampler: historical + fresh must equal the group size k");
    }
    if (policy_kind == PolicyKind::Autoregressive && task.kind != TaskKind::Sequence) {
        throw std::invalid_argument(
            "train.policy_kind: autoregressive policies require a sequence task");
    }
}

namespace {

// Metric-grade KL: +infinity when the argument's support breaks (a policy
// driven to underflow), rather than the oracle's precondition error.
double metric_kl(const Distribution& p, const Distribution& q) {
    double sum = 0.0;
    for (std::size_t i = 0; i < p.probs.size(); ++i) {
        if (p.probs[i] == 0.0) {
            continue;
        }
        if (q.probs[i] <= 0.0) {
            return std::numeric_limits<double>::infinity();
        }
        sum += p.probs[i] * (std::log(p.probs[i]) - std::log(q.probs[i]));
    }
    return std::max(sum, 0.0);
}

}  // namespace

ConvergenceMetrics convergence_metrics(const PolicyParams& theta, const TaskSpec& task,
                                       double beta, const PolicyParams& aux) {
    const OptimalPolicySolution sol = optimal_policy(aux, task, beta);
    ConvergenceMetrics m;
    for (int x = 0; x < task.num_prompts; ++x) {
        const Distribution d = theta.distribution(x);
        m.kl_to_optimal += metric_kl(sol.pi_star[static_cast<std::size_t>(x)], d);
        m.kl_to_aux += metric_kl(d, aux.distribution(x));
        double expected = 0.0;
        for (int y = 0; y < task.num_responses; ++y) {
            expected += d.probs[static_cast<std::size_t>(y)] * task.reward(x, y);
        }
        m.mean_reward += expected;
    }
    const double p = static_cast<double>(task.num_prompts);
    m.kl_to_optimal /= p;
    m.kl_to_aux /= p;
    m.mean_reward /= p;
    return m;
}

Trainer::Trainer(TaskSpec task, PolicyParams init, TrainConfig config)
    : Trainer(std::move(task), init, init, std::move(config)) {}

Trainer::Trainer(TaskSpec task, PolicyParams init, PolicyParams reference, TrainConfig config)
    : task_(std::move(task)),
      config_(std::move(config)),
      theta_(std::move(init)),
      reference_(std::move(reference)),
      old_(theta_),
      rng_(Rng(config_.seed).split(0x7a11)) {
    task_.validate();
    config_.validate(task_);
    if (theta_.num_prompts() != task_.num_prompts ||
        theta_.num_responses() != task_.num_responses) {
        throw std::invalid_argument("initial policy does not match the task's space");
    }
    if (reference_.num_prompts() != task_.num_prompts ||
        reference_.num_responses() != task_.num_responses) {
        throw std::invalid_argument("reference policy does not match the task's space");
    }
    sampler_ = make_sampler(config_.sampler, task_);
    if (config_.gradient_mode == GradientMode::Exact && !sampler_->supports_exact()) {
        throw std::invalid_argument("sampler has no closed-form distribution for exact mode");
    }
    if (config_.momentum > 0.0) {
        momentum_buf_.assign(theta_.param_count(), 0.0);
    }
    if (config_.aux_policy_mode == AuxPolicyMode::FixedReference) {
        cached_optimum_ = optimal_policy(reference_, task_, config_.beta);
    }
    report_.summary.config_echo = train_config_to_json(config_);
}

const PolicyParams& Trainer::aux_policy() const {
    return config_.aux_policy_mode == AuxPolicyMode::FixedReference ? reference_ : old_;
}

Trainer::StepComputation Trainer::exact_gvpo(const PolicyParams& aux) {
    StepComputation out;

    std::vector<Distribution> sampling;
    sampling.reserve(static_cast<std::size_t>(task_.num_prompts));
    for (int x = 0; x < task_.num_prompts; ++x) {
        sampling.push_back(sampler_->exact_distribution(x, old_, aux));
    }

    const double prompt_count = static_cast<double>(task_.num_prompts);
    if (config_.ablation.any()) {
        out.loss = ablated_decomposed_loss(theta_, aux, sampling, task_, config_.beta,
                                           config_.ablation.to_spec(), &out.grad);
    } else {
        out.loss = exact_gvpo_loss(theta_, aux, sampling, task_, config_.beta);
        out.grad = exact_gvpo_gradient(theta_, aux, sampling, task_, config_.beta);
    }
    // Per-prompt blocks are disjoint; update with the sum over prompts so the
    // learning rate acts per prompt regardless of prompt count.
    for (double& v : out.grad.values) {
        v *= prompt_count;
    }

    if (config_.beta == 1.0) {
        const DecompositionTerms terms =
            gvpo_loss_decomposed(theta_, aux, sampling, task_, 1.0);
        out.has_decomposition = true;
        out.adv = terms.advantage;
        out.cov = terms.covariance;
        out.var = terms.variance;
    }
    return out;
}

Trainer::StepComputation Trainer::exact_sft(const PolicyParams& aux) {
    (void)aux;
    StepComputation out;
    out.grad.values.assign(theta_.param_count(), 0.0);
    double loss = 0.0;
    for (int x = 0; x < task_.num_prompts; ++x) {
        int target = 0;
        for (int y = 1; y < task_.num_responses; ++y) {
            if (task_.reward(x, y) > task_.reward(x, target)) {
                target = y;
            }
        }
        loss -= theta_.log_prob(x, target);
        theta_.accumulate_grad_log_prob(x, target, -1.0, out.grad.values);
    }
    out.loss = loss / static_cast<double>(task_.num_prompts);
    return out;
}

Trainer::StepComputation Trainer::monte_carlo(const PolicyParams& aux) {
    StepComputation out;
    out.grad.values.assign(theta_.param_count(), 0.0);
    double loss_total = 0.0;

    if (config_.sampler.kind == SamplerKind::Explicit) {
        // Only explicit tables can carry zeros; softmax-induced samplers
        // always cover the auxiliary policy's support.
        for (int x = 0; x < task_.num_prompts; ++x) {
            const Distribution aux_dist = aux.distribution(x);
            const Distribution& s = config_.sampler.explicit_dists[static_cast<std::size_t>(x)];
            for (std::size_t y = 0; y < aux_dist.probs.size(); ++y) {
                if (aux_dist.probs[y] > 0.0 && s.probs[y] <= 0.0) {
                    throw SupportViolation(
                        "sampling distribution leaves auxiliary-policy support uncovered");
                }
            }
        }
    }

    for (int x = 0; x < task_.num_prompts; ++x) {
        const std::vector<int> ids = sampler_->draw_group(x, config_.k, old_, aux, rng_);
        GroupBatch group;
        group.prompt = x;
        group.responses = ids;
        group.weights_source = sampler_->source_tag();
        group.rewards.reserve(ids.size());
        group.logp_theta.reserve(ids.size());
        group.logp_aux.reserve(ids.size());
        group.logp_old.reserve(ids.size());
        for (int y : ids) {
            group.rewards.push_back(task_.reward(x, y));
            group.logp_theta.push_back(theta_.log_prob(x, y));
            group.logp_aux.push_back(aux.log_prob(x, y));
            group.logp_old.push_back(old_.log_prob(x, y));
        }

        switch (config_.scheme) {
            case Scheme::Gvpo: {
                // 2/(k-1) debiases the group estimate against the
                // exact-expectation gradient and loss.
                const double scale = 2.0 / static_cast<double>(config_.k - 1);
                WeightVector w = gvpo_weights(group, GvpoConfig{config_.beta});
                for (double& wi : w.weights) {
                    wi *= scale;
                }
                for (std::size_t i = 0; i < w.weights.size(); ++i) {
                    if (w.weights[i] != 0.0) {
                        theta_.accumulate_grad_log_prob(x, group.responses[i], -w.weights[i],
                                                        out.grad.values);
                    }
                }
                loss_total += scale * gvpo_loss_mse_form(group, GvpoConfig{config_.beta});
                break;
            }
            case Scheme::Grpo: {
                const WeightVector w = grpo_weights(group, config_.grpo);
                double surrogate = 0.0;
                for (std::size_t i = 0; i < w.weights.size(); ++i) {
                    surrogate -= w.weights[i] * group.logp_theta[i];
                    if (w.weights[i] != 0.0) {
                        theta_.accumulate_grad_log_prob(x, group.responses[i], -w.weights[i],
                                                        out.grad.values);
                    }
                }
                loss_total += surrogate;
                break;
            }
            case Scheme::Dpo: {
                const std::vector<DpoPair> pairs = dpo_pairs(group, config_.beta);
                if (pairs.empty()) {
                    break;  // all rewards tied; no preference signal
                }
                const double scale = 1.0 / static_cast<double>(pairs.size());
                double pair_loss = 0.0;
                for (const DpoPair& pair : pairs) {
                    pair_loss += pair.result.loss;
                    theta_.accumulate_grad_log_prob(
                        x, group.responses[static_cast<std::size_t>(pair.winner_index)],
                        -scale * pair.result.w_w, out.grad.values);
                    theta_.accumulate_grad_log_prob(
                        x, group.responses[static_cast<std::size_t>(pair.loser_index)],
                        -scale * pair.result.w_l, out.grad.values);
                }
                loss_total += pair_loss * scale;
                break;
            }
            case Scheme::Sft: {
                const WeightVector w = sft_weights(group);
                for (std::size_t i = 0; i < w.weights.size(); ++i) {
                    if (w.weights[i] != 0.0) {
                        loss_total -= w.weights[i] * group.logp_theta[i];
                        theta_.accumulate_grad_log_prob(x, group.responses[i], -w.weights[i],
                                                        out.grad.values);
                    }
                }
                break;
            }
        }
    }

    if (config_.scheme == Scheme::Grpo && config_.grpo.kl_coefficient > 0.0) {
        // Exact tabular KL penalty; the mean-over-prompts gradient is scaled
        // back to the per-prompt convention used for the update.
        const Gradient klg = grpo_kl_penalty_gradient(theta_, reference_,
                                                      config_.grpo.kl_coefficient);
        double kl_value = 0.0;
        for (int x = 0; x < task_.num_prompts; ++x) {
            kl_value += kl(theta_.distribution(x), reference_.distribution(x));
        }
        kl_value /= static_cast<double>(task_.num_prompts);
        loss_total += config_.grpo.kl_coefficient * kl_value *
                      static_cast<double>(task_.num_prompts);
        const double scale = static_cast<double>(task_.num_prompts);
        for (std::size_t j = 0; j < out.grad.values.size(); ++j) {
            out.grad.values[j] += scale * klg.values[j];
        }
    }

    out.loss = loss_total / static_cast<double>(task_.num_prompts);
    return out;
}

Trainer::StepComputation Trainer::compute_loss_and_gradient() {
    const PolicyParams& aux = aux_policy();
    if (config_.gradient_mode == GradientMode::Exact) {
        if (config_.scheme == Scheme::Gvpo) {
            return exact_gvpo(aux);
        }
        return exact_sft(aux);
    }
    return monte_carlo(aux);
}

Gradient Trainer::current_gradient() { return compute_loss_and_gradient().grad; }

StepRow Trainer::step() {
    if (report_.summary.aborted) {
        throw std::logic_error("trainer already aborted");
    }
    if (step_count_ % config_.old_refresh_interval == 0) {
        old_ = theta_;
    }

    const PolicyParams& aux = aux_policy();
    StepComputation comp = compute_loss_and_gradient();

    StepRow row;
    row.step = step_count_;
    row.loss = comp.loss;
    row.grad_norm = comp.grad.norm();
    row.has_decomposition = comp.has_decomposition;
    row.adv_term = comp.adv;
    row.cov_term = comp.cov;
    row.var_term = comp.var;

    ConvergenceMetrics metrics;
    if (config_.aux_policy_mode == AuxPolicyMode::FixedReference && cached_optimum_) {
        // Reuse the cached pi*.
        for (int x = 0; x < task_.num_prompts; ++x) {
            const Distribution d = theta_.distribution(x);
            metrics.kl_to_optimal +=
                metric_kl(cached_optimum_->pi_star[static_cast<std::size_t>(x)], d);
            metrics.kl_to_aux += metric_kl(d, reference_.distribution(x));
            double expected = 0.0;
            for (int y = 0; y < task_.num_responses; ++y) {
                expected += d.probs[static_cast<std::size_t>(y)] * task_.reward(x, y);
            }
            metrics.mean_reward += expected;
        }
        const double p = static_cast<double>(task_.num_prompts);
        metrics.kl_to_optimal /= p;
        metrics.kl_to_aux /= p;
        metrics.mean_reward /= p;
    } else {
        metrics = convergence_metrics(theta_, task_, config_.beta, aux);
    }
    row.mean_reward = metrics.mean_reward;
    row.kl_to_optimal = metrics.kl_to_optimal;
    row.kl_to_aux = metrics.kl_to_aux;

    if (!std::isfinite(comp.loss) || !std::isfinite(row.grad_norm) ||
        row.grad_norm > kGradNormGuard) {
        report_.rows.push_back(row);
        abort_run(!std::isfinite(comp.loss)
                      ? "non-finite loss"
                      : (!std::isfinite(row.grad_norm) ? "non-finite gradient"
                                                       : "gradient norm exceeded guard"),
                  &comp);
        return row;
    }

    if (config_.momentum > 0.0) {
        for (std::size_t j = 0; j < momentum_buf_.size(); ++j) {
            momentum_buf_[j] = config_.momentum * momentum_buf_[j] + comp.grad.values[j];
        }
        Gradient update;
        update.values = momentum_buf_;
        theta_.axpy(-config_.learning_rate, update);
    } else {
        theta_.axpy(-config_.learning_rate, comp.grad);
    }

    ++step_count_;
    report_.rows.push_back(row);
    return row;
}

void Trainer::abort_run(const std::string& reason, const StepComputation* state) {
    report_.summary.aborted = true;
    report_.summary.abort_reason = reason;
    nlohmann::json dump;
    dump["step"] = step_count_;
    if (state != nullptr) {
        dump["loss"] = state->loss;
        dump["grad_norm"] = state->grad.norm();
    }
    if (theta_.param_count() <= 8192) {
        dump["theta"] = std::vector<double>(theta_.raw().begin(), theta_.raw().end());
    }
    report_.summary.diagnostic = std::move(dump);
}

void Trainer::finalize_summary(double wall_ms) {
    report_.summary.wall_clock_ms = wall_ms;
    report_.summary.final_metrics =
        convergence_metrics(theta_, task_, config_.beta, aux_policy());
    report_.summary.final_loss = report_.rows.empty() ? 0.0 : report_.rows.back().loss;
}

void Trainer::run(const RowCallback& on_row) {
    const auto start = std::chrono::steady_clock::now();
    for (int s = 0; s < config_.steps && !report_.summary.aborted; ++s) {
        const StepRow row = step();
        if (on_row) {
            on_row(row);
        }
    }
    const auto end = std::chrono::steady_clock::now();
    finalize_summary(std::chrono::duration<double, std::milli>(end - start).count());
}

std::pair<PolicyParams, TrainReport> train(const TaskSpec& task, const PolicyParams& init,
                                           const TrainConfig& config,
                                           const RowCallback& on_row) {
    Trainer trainer(task, init, config);
    trainer.run(on_row);
    return {trainer.policy(), trainer.take_report()};
}

std::string train_report_csv_header() {
    return "step,loss,grad_norm,mean_reward,kl_to_optimal,kl_to_aux,adv_term,cov_term,var_term";
}

std::string step_row_csv(const StepRow& row) {
    std::ostringstream out;
    out << row.step << ',' << format_double(row.loss) << ',' << format_double(row.grad_norm)
        << ',' << format_double(row.mean_reward) << ',' << format_double(row.kl_to_optimal)
        << ',' << format_double(row.kl_to_aux) << ',';
    if (row.has_decomposition) {
        out << format_double(row.adv_term) << ',' << format_double(row.cov_term) << ','
            << format_double(row.var_term);
    } else {
        out << ",,";
    }
    return out.str();
}

namespace {

std::string sampler_kind_name(SamplerKind kind) {
    switch (kind) {
        case SamplerKind::OldPolicy: return "old_policy";
        case SamplerKind::Reference: return "reference";
        case SamplerKind::Uniform: return "uniform";
        case SamplerKind::ReplayMixture: return "replay_mixture";
        case SamplerKind::Skew: return "skew";
        case SamplerKind::Explicit: return "explicit";
    }
    return "unknown";
}

SamplerKind sampler_kind_from_name(const std::string& name) {
    if (name == "old_policy") return SamplerKind::OldPolicy;
    if (name == "reference") return SamplerKind::Reference;
    if (name == "uniform") return SamplerKind::Uniform;
    if (name == "replay_mixture") return SamplerKind::ReplayMixture;
    if (name == "skew") return SamplerKind::Skew;
    if (name == "explicit") return SamplerKind::Explicit;
    throw std::invalid_argument("unknown sampler kind: " + name);
}

}  // namespace

nlohmann::json train_config_to_json(const TrainConfig& config) {
    nlohmann::json j;
    j["scheme"] = scheme_name(config.scheme);
    j["beta"] = config.beta;
    j["learning_rate"] = config.learning_rate;
    j["steps"] = config.steps;
    j["k"] = config.k;
    j["gradient_mode"] =
        config.gradient_mode == GradientMode::Exact ? "exact" : "monte_carlo";
    j["aux_policy_mode"] = config.aux_policy_mode == AuxPolicyMode::FixedReference
                               ? "fixed_reference"
                               : "refresh_each_step";
    j["seed"] = config.seed;
    j["old_refresh_interval"] = config.old_refresh_interval;
    j["momentum"] = config.momentum;
    j["policy_kind"] = config.policy_kind == PolicyKind::Flat ? "flat" : "autoregressive";

    nlohmann::json sampler;
    sampler["kind"] = sampler_kind_name(config.sampler.kind);
    if (config.sampler.kind == SamplerKind::ReplayMixture) {
        sampler["historical"] = config.sampler.historical;
        sampler["fresh"] = config.sampler.fresh;
        sampler["buffer_capacity"] = config.sampler.buffer_capacity;
    }
    if (config.sampler.kind == SamplerKind::Skew) {
        sampler["seed"] = config.sampler.skew_seed;
    }
    if (config.sampler.kind == SamplerKind::Explicit) {
        nlohmann::json tables = nlohmann::json::array();
        for (const auto& d : config.sampler.explicit_dists) {
            tables.push_back(d.probs);
        }
        sampler["probs"] = tables;
    }
    j["sampler"] = sampler;

    j["ablation"] = {{"drop_var", config.ablation.drop_var},
                     {"drop_cov", config.ablation.drop_cov},
                     {"entropy_substitute", config.ablation.entropy_substitute}};
    j["grpo"] = {{"clip_epsilon", config.grpo.clip_epsilon},
                 {"kl_coefficient", config.grpo.kl_coefficient},
                 {"std_floor", config.grpo.std_floor},
                 {"use_std_normalization", config.grpo.use_std_normalization},
                 {"use_ppo_min_form", config.grpo.use_ppo_min_form}};
    return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig config;
    if (j.contains("scheme")) config.scheme = scheme_from_name(j.at("scheme").get<std::string>());
    if (j.contains("beta")) config.beta = j.at("beta").get<double>();
    if (j.contains("learning_rate")) config.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("steps")) config.steps = j.at("steps").get<int>();
    if (j.contains("k")) config.k = j.at("k").get<int>();
    if (j.contains("gradient_mode")) {
        const std::string mode = j.at("gradient_mode").get<std::string>();
        if (mode == "exact") {
            config.gradient_mode = GradientMode::Exact;
        } else if (mode == "monte_carlo") {
            config.gradient_mode = GradientMode::MonteCarlo;
        } else {
            throw std::invalid_argument("unknown gradient_mode: " + mode);
        }
    }
    if (j.contains("aux_policy_mode")) {
        const std::string mode = j.at("aux_policy_mode").get<std::string>();
        if (mode == "fixed_reference") {
            config.aux_policy_mode = AuxPolicyMode::FixedReference;
        } else if (mode == "refresh_each_step") {
            config.aux_policy_mode = AuxPolicyMode::RefreshEachStep;
        } else {
            throw std::invalid_argument("unknown aux_policy_mode: " + mode);
        }
    }
    if (j.contains("seed")) config.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("old_refresh_interval")) {
        config.old_refresh_interval = j.at("old_refresh_interval").get<int>();
    }
    if (j.contains("momentum")) config.momentum = j.at("momentum").get<double>();
    if (j.contains("policy_kind")) {
        const std::string kind = j.at("policy_kind").get<std::string>();
        if (kind == "flat") {
            config.policy_kind = PolicyKind::Flat;
        } else if (kind == "autoregressive") {
            config.policy_kind = PolicyKind::Autoregressive;
        } else {
            throw std::invalid_argument("unknown policy_kind: " + kind);
        }
    }
    if (j.contains("sampler")) {
        const auto& s = j.at("sampler");
        config.sampler.kind = sampler_kind_from_name(s.at("kind").get<std::string>());
        if (config.sampler.kind == SamplerKind::ReplayMixture) {
            config.sampler.historical = s.at("historical").get<int>();
            config.sampler.fresh = s.at("fresh").get<int>();
            if (s.contains("buffer_capacity")) {
                config.sampler.buffer_capacity = s.at("buffer_capacity").get<int>();
            }
        }
        if (config.sampler.kind == SamplerKind::Skew) {
            config.sampler.skew_seed = s.value("seed", std::uint64_t{0});
        }
        if (config.sampler.kind == SamplerKind::Explicit) {
            for (const auto& row : s.at("probs")) {
                Distribution d;
                d.probs = row.get<std::vector<double>>();
                config.sampler.explicit_dists.push_back(std::move(d));
            }
        }
    }
    if (j.contains("ablation")) {
        const auto& a = j.at("ablation");
        config.ablation.drop_var = a.value("drop_var", false);
        config.ablation.drop_cov = a.value("drop_cov", false);
        config.ablation.entropy_substitute = a.value("entropy_substitute", 0.0);
    }
    if (j.contains("grpo")) {
        const auto& g = j.at("grpo");
        config.grpo.clip_epsilon = g.value("clip_epsilon", config.grpo.clip_epsilon);
        config.grpo.kl_coefficient = g.value("kl_coefficient", config.grpo.kl_coefficient);
        config.grpo.std_floor = g.value("std_floor", config.grpo.std_floor);
        config.grpo.use_std_normalization =
            g.value("use_std_normalization", config.grpo.use_std_normalization);
        config.grpo.use_ppo_min_form = g.value("use_ppo_min_form", config.grpo.use_ppo_min_form);
    }
    return config;
}

nlohmann::json summary_to_json(const TrainSummary& summary) {
    nlohmann::json j;
    j["config"] = summary.config_echo;
    j["final_metrics"] = {{"kl_to_optimal", summary.final_metrics.kl_to_optimal},
                          {"kl_to_aux", summary.final_metrics.kl_to_aux},
                          {"mean_reward", summary.final_metrics.mean_reward}};
    j["final_loss"] = summary.final_loss;
    j["wall_clock_ms"] = summary.wall_clock_ms;
    j["aborted"] = summary.aborted;
    j["abort_reason"] = summary.abort_reason;
    if (!summary.diagnostic.is_null()) {
        j["diagnostic"] = summary.diagnostic;
    }
    return j;
}

}  // namespace gvpolab
