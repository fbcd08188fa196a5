// SPDX-License-Identifier: Apache-2.0

#include "gvpolab/policy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace gvpolab {

namespace {

// Compensated accumulation keeps distribution sums within 1e-12 of one even
// on 65536-wide response spaces.
double kahan_sum(std::span<const double> values) {
    double sum = 0.0, c = 0.0;
    for (double v : values) {
        const double y = v - c;
        const double t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    return sum;
}

void check_finite(std::span<const double> values, const char* what) {
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw std::invalid_argument(std::string(what) + " must be finite");
        }
    }
}

}  // namespace

double logsumexp(std::span<const double> values) {
    if (values.empty()) {
        return -std::numeric_limits<double>::infinity();
    }
    const double m = *std::max_element(values.begin(), values.end());
    if (!std::isfinite(m)) {
        return m;
    }
    double sum = 0.0;
    for (double v : values) {
        sum += std::exp(v - m);
    }
    return m + std::log(sum);
}

double Gradient::norm() const {
    double s = 0.0;
    for (double v : values) {
        s += v * v;
    }
    return std::sqrt(s);
}

double Gradient::max_abs() const {
    double m = 0.0;
    for (double v : values) {
        m = std::max(m, std::abs(v));
    }
    return m;
}

PolicyParams PolicyParams::uniform_flat(int num_prompts, int num_responses) {
    if (num_prompts < 1 || num_responses < 2) {
        throw std::invalid_argument("flat policy needs >= 1 prompt and >= 2 responses");
    }
    PolicyParams p;
    p.kind_ = PolicyKind::Flat;
    p.num_prompts_ = num_prompts;
    p.num_responses_ = num_responses;
    p.block_size_ = static_cast<std::size_t>(num_responses);
    p.params_.assign(static_cast<std::size_t>(num_prompts) * p.block_size_, 0.0);
    return p;
}

PolicyParams PolicyParams::uniform_autoregressive(int num_prompts, int vocab, int length) {
    if (num_prompts < 1 || vocab < 2 || length < 1) {
        throw std::invalid_argument("autoregressive policy needs vocab >= 2 and length >= 1");
    }
    long long responses = 1;
    std::size_t block = 0;
    long long contexts = 1;
    for (int t = 0; t < length; ++t) {
        block += static_cast<std::size_t>(contexts) * static_cast<std::size_t>(vocab);
        contexts *= vocab;
        responses *= vocab;
        if (responses > 65536) {
            throw std::invalid_argument("vocab^length exceeds the enumeration limit 65536");
        }
    }
    PolicyParams p;
    p.kind_ = PolicyKind::Autoregressive;
    p.num_prompts_ = num_prompts;
    p.num_responses_ = static_cast<int>(responses);
    p.vocab_ = vocab;
    p.length_ = length;
    p.block_size_ = block;
    p.params_.assign(static_cast<std::size_t>(num_prompts) * block, 0.0);
    return p;
}

PolicyParams PolicyParams::from_flat_logits(std::vector<std::vector<double>> logits) {
    if (logits.empty() || logits[0].size() < 2) {
        throw std::invalid_argument("flat logits need >= 1 prompt and >= 2 responses");
    }
    PolicyParams p = uniform_flat(static_cast<int>(logits.size()),
                                  static_cast<int>(logits[0].size()));
    std::size_t idx = 0;
    for (const auto& row : logits) {
        if (row.size() != p.block_size_) {
            throw std::invalid_argument("flat logit rows must have equal length");
        }
        check_finite(row, "logits");
        for (double v : row) {
            p.params_[idx++] = v;
        }
    }
    return p;
}

PolicyParams PolicyParams::from_distributions(const std::vector<Distribution>& dists) {
    if (dists.empty()) {
        throw std::invalid_argument("need at least one distribution");
    }
    std::vector<std::vector<double>> logits;
    logits.reserve(dists.size());
    for (const auto& d : dists) {
        std::vector<double> row;
        row.reserve(d.probs.size());
        for (double v : d.probs) {
            if (!(v > 0.0)) {
                throw std::invalid_argument(
                    "from_distributions requires strictly positive probabilities");
            }
            row.push_back(std::log(v));
        }
        logits.push_back(std::move(row));
    }
    return from_flat_logits(std::move(logits));
}

void PolicyParams::check_prompt(int x) const {
    if (x < 0 || x >= num_prompts_) {
        throw std::out_of_range("prompt id out of range");
    }
}

void PolicyParams::check_response(int y) const {
    if (y < 0 || y >= num_responses_) {
        throw std::out_of_range("response id out of range");
    }
}

std::size_t PolicyParams::ar_row_offset(int position, int context) const {
    // Rows are laid out position-major: all vocab^t prefix rows of position
    // t precede those of position t+1.
    std::size_t off = 0;
    long long contexts = 1;
    for (int t = 0; t < position; ++t) {
        off += static_cast<std::size_t>(contexts) * static_cast<std::size_t>(vocab_);
        contexts *= vocab_;
    }
    return off + static_cast<std::size_t>(context) * static_cast<std::size_t>(vocab_);
}

double PolicyParams::log_prob(int x, int y) const {
    check_prompt(x);
    check_response(y);
    const std::size_t base = static_cast<std::size_t>(x) * block_size_;
    if (kind_ == PolicyKind::Flat) {
        std::span<const double> row(params_.data() + base, block_size_);
        return row[static_cast<std::size_t>(y)] - logsumexp(row);
    }
    double lp = 0.0;
    long long pow = 1;
    for (int t = 1; t < length_; ++t) {
        pow *= vocab_;
    }
    int rem = y;
    int context = 0;
    for (int t = 0; t < length_; ++t) {
        const int token = static_cast<int>(rem / pow);
        rem = static_cast<int>(rem % pow);
        pow /= vocab_;
        std::span<const double> row(params_.data() + base + ar_row_offset(t, context),
                                    static_cast<std::size_t>(vocab_));
        lp += row[static_cast<std::size_t>(token)] - logsumexp(row);
        context = context * vocab_ + token;
        if (pow == 0) {
            break;
        }
    }
    return lp;
}

std::vector<double> PolicyParams::log_prob_row(int x) const {
    check_prompt(x);
    const std::size_t base = static_cast<std::size_t>(x) * block_size_;
    std::vector<double> out(static_cast<std::size_t>(num_responses_), 0.0);
    if (kind_ == PolicyKind::Flat) {
        std::span<const double> row(params_.data() + base, block_size_);
        const double lse = logsumexp(row);
        for (int y = 0; y < num_responses_; ++y) {
            out[static_cast<std::size_t>(y)] = row[static_cast<std::size_t>(y)] - lse;
        }
        return out;
    }
    // Normalize every conditional row once, then accumulate token log-probs
    // along each response's prefix path.
    std::vector<double> row_lse(block_size_ / static_cast<std::size_t>(vocab_), 0.0);
    for (std::size_t r = 0; r < row_lse.size(); ++r) {
        std::span<const double> row(params_.data() + base + r * static_cast<std::size_t>(vocab_),
                                    static_cast<std::size_t>(vocab_));
        row_lse[r] = logsumexp(row);
    }
    for (int y = 0; y < num_responses_; ++y) {
        double lp = 0.0;
        long long pow = 1;
        for (int t = 1; t < length_; ++t) {
            pow *= vocab_;
        }
        int rem = y;
        int context = 0;
        std::size_t row_index = 0;  // running index of (t, context) rows
        long long contexts_before = 0;
        long long contexts_at_level = 1;
        for (int t = 0; t < length_; ++t) {
            const int token = static_cast<int>(rem / pow);
            rem = static_cast<int>(rem % pow);
            if (pow > 1) {
                pow /= vocab_;
            }
            row_index = static_cast<std::size_t>(contexts_before + context);
            lp += params_[base + row_index * static_cast<std::size_t>(vocab_) +
                          static_cast<std::size_t>(token)] -
                  row_lse[row_index];
            contexts_before += contexts_at_level;
            contexts_at_level *= vocab_;
            context = context * vocab_ + token;
        }
        out[static_cast<std::size_t>(y)] = lp;
    }
    return out;
}

Distribution PolicyParams::distribution(int x) const {
    const std::vector<double> lps = log_prob_row(x);
    Distribution d;
    d.probs.resize(lps.size());
    for (std::size_t i = 0; i < lps.size(); ++i) {
        d.probs[i] = std::exp(lps[i]);
    }
    // Renormalize the tiny drift of exp(logsumexp-normalized) values.
    const double total = kahan_sum(d.probs);
    if (total > 0.0) {
        for (double& p : d.probs) {
            p /= total;
        }
    }
    return d;
}

std::vector<int> PolicyParams::sample_k(int x, int k, Rng& rng) const {
    if (k < 1) {
        throw std::invalid_argument("k must be at least 1");
    }
    const Distribution d = distribution(x);
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        out.push_back(static_cast<int>(rng.sample_index(d.probs)));
    }
    return out;
}

Gradient PolicyParams::grad_log_prob(int x, int y) const {
    Gradient g;
    g.values.assign(params_.size(), 0.0);
    accumulate_grad_log_prob(x, y, 1.0, g.values);
    return g;
}

void PolicyParams::accumulate_grad_log_prob(int x, int y, double coeff,
                                            std::span<double> out) const {
    check_prompt(x);
    check_response(y);
    if (out.size() != params_.size()) {
        throw std::invalid_argument("gradient buffer size mismatch");
    }
    const std::size_t base = static_cast<std::size_t>(x) * block_size_;
    if (kind_ == PolicyKind::Flat) {
        std::span<const double> row(params_.data() + base, block_size_);
        const double lse = logsumexp(row);
        for (int j = 0; j < num_responses_; ++j) {
            const double pj = std::exp(row[static_cast<std::size_t>(j)] - lse);
            out[base + static_cast<std::size_t>(j)] += coeff * ((j == y ? 1.0 : 0.0) - pj);
        }
        return;
    }
    long long pow = 1;
    for (int t = 1; t < length_; ++t) {
        pow *= vocab_;
    }
    int rem = y;
    int context = 0;
    for (int t = 0; t < length_; ++t) {
        const int token = static_cast<int>(rem / pow);
        rem = static_cast<int>(rem % pow);
        if (pow > 1) {
            pow /= vocab_;
        }
        const std::size_t row_off = base + ar_row_offset(t, context);
        std::span<const double> row(params_.data() + row_off, static_cast<std::size_t>(vocab_));
        const double lse = logsumexp(row);
        for (int j = 0; j < vocab_; ++j) {
            const double pj = std::exp(row[static_cast<std::size_t>(j)] - lse);
            out[row_off + static_cast<std::size_t>(j)] += coeff * ((j == token ? 1.0 : 0.0) - pj);
        }
        context = context * vocab_ + token;
    }
}

void PolicyParams::accumulate_from_logprob_sensitivities(int x, std::span<const double> g,
                                                         std::span<double> out) const {
    check_prompt(x);
    if (static_cast<int>(g.size()) != num_responses_) {
        throw std::invalid_argument("sensitivity vector size mismatch");
    }
    if (out.size() != params_.size()) {
        throw std::invalid_argument("gradient buffer size mismatch");
    }
    const std::size_t base = static_cast<std::size_t>(x) * block_size_;
    if (kind_ == PolicyKind::Flat) {
        // sum_y g_y (e_y - pi) = g - pi * sum(g)
        std::span<const double> row(params_.data() + base, block_size_);
        const double lse = logsumexp(row);
        const double gsum = kahan_sum(g);
        for (int j = 0; j < num_responses_; ++j) {
            const double pj = std::exp(row[static_cast<std::size_t>(j)] - lse);
            out[base + static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(j)] - pj * gsum;
        }
        return;
    }
    for (int y = 0; y < num_responses_; ++y) {
        const double gy = g[static_cast<std::size_t>(y)];
        if (gy != 0.0) {
            accumulate_grad_log_prob(x, y, gy, out);
        }
    }
}

void PolicyParams::axpy(double alpha, const Gradient& g) {
    if (g.values.size() != params_.size()) {
        throw std::invalid_argument("gradient size mismatch");
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
        params_[i] += alpha * g.values[i];
    }
}

PolicyParams PolicyParams::to_flat() const {
    if (kind_ == PolicyKind::Flat) {
        return *this;
    }
    std::vector<std::vector<double>> logits;
    logits.reserve(static_cast<std::size_t>(num_prompts_));
    for (int x = 0; x < num_prompts_; ++x) {
        logits.push_back(log_prob_row(x));
    }
    return from_flat_logits(std::move(logits));
}

bool PolicyParams::same_shape(const PolicyParams& other) const {
    return kind_ == other.kind_ && num_prompts_ == other.num_prompts_ &&
           num_responses_ == other.num_responses_ && vocab_ == other.vocab_ &&
           length_ == other.length_;
}

PolicyParams init_uniform(const TaskSpec& task, PolicyKind kind) {
    if (kind == PolicyKind::Flat) {
        return PolicyParams::uniform_flat(task.num_prompts, task.num_responses);
    }
    if (task.kind != TaskKind::Sequence) {
        throw std::invalid_argument("autoregressive policies require a sequence task");
    }
    return PolicyParams::uniform_autoregressive(task.num_prompts, task.vocab, task.length);
}

double log_prob(const PolicyParams& params, int x, int y) { return params.log_prob(x, y); }

Distribution distribution(const PolicyParams& params, int x) { return params.distribution(x); }

std::vector<int> sample_k(const PolicyParams& params, int x, int k, Rng& rng) {
    return params.sample_k(x, k, rng);
}

Gradient grad_log_prob(const PolicyParams& params, int x, int y) {
    return params.grad_log_prob(x, y);
}

std::vector<Distribution> all_distributions(const PolicyParams& params) {
    std::vector<Distribution> out;
    out.reserve(static_cast<std::size_t>(params.num_prompts()));
    for (int x = 0; x < params.num_prompts(); ++x) {
        out.push_back(params.distribution(x));
    }
    return out;
}

nlohmann::json policy_to_json(const PolicyParams& params) {
    nlohmann::json j;
    j["kind"] = params.kind() == PolicyKind::Flat ? "flat" : "autoregressive";
    j["num_prompts"] = params.num_prompts();
    if (params.kind() == PolicyKind::Flat) {
        j["num_responses"] = params.num_responses();
    } else {
        j["vocab"] = params.vocab();
        j["length"] = params.length();
    }
    j["logits"] = std::vector<double>(params.raw().begin(), params.raw().end());
    return j;
}

PolicyParams policy_from_json(const nlohmann::json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    const int num_prompts = j.at("num_prompts").get<int>();
    PolicyParams p;
    if (kind == "flat") {
        p = PolicyParams::uniform_flat(num_prompts, j.at("num_responses").get<int>());
    } else if (kind == "autoregressive") {
        p = PolicyParams::uniform_autoregressive(num_prompts, j.at("vocab").get<int>(),
                                                 j.at("length").get<int>());
    } else {
        throw std::invalid_argument("unknown policy kind: " + kind);
    }
    const auto logits = j.at("logits").get<std::vector<double>>();
    if (logits.size() != p.param_count()) {
        throw std::invalid_argument("logit vector size mismatch");
    }
    check_finite(logits, "logits");
    std::copy(logits.begin(), logits.end(), p.raw().begin());
    return p;
}

}  // namespace gvpolab
