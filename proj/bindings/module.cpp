// SPDX-License-Identifier: Apache-2.0
//
// pybind11 surface over the core: task construction, policies, the
// enumeration oracle, scheme weights and losses, training, and the
// verification checks. Configs cross the boundary as JSON strings so the
// python side shares one schema with the CLI.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "gvpolab/experiment.hpp"
#include "gvpolab/oracle.hpp"
#include "gvpolab/policy.hpp"
#include "gvpolab/schemes.hpp"
#include "gvpolab/taskenv.hpp"
#include "gvpolab/trainer.hpp"
#include "gvpolab/verify.hpp"

namespace py = pybind11;
using namespace gvpolab;

namespace {

struct TrainOutcome {
    PolicyParams policy;
    std::string summary_json;
    std::vector<StepRow> rows;
};

GroupBatch make_group(int prompt, std::vector<int> responses, std::vector<double> rewards,
                      std::vector<double> logp_theta, std::vector<double> logp_aux,
                      std::vector<double> logp_old) {
    GroupBatch g;
    g.prompt = prompt;
    g.responses = std::move(responses);
    g.rewards = std::move(rewards);
    g.logp_theta = std::move(logp_theta);
    g.logp_aux = std::move(logp_aux);
    g.logp_old = std::move(logp_old);
    g.validate();
    return g;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Group-based policy post-training on exactly enumerable tasks";

    py::register_exception<SupportViolation>(m, "SupportViolationError");

    py::class_<TaskSpec>(m, "TaskSpec")
        .def_readonly("num_prompts", &TaskSpec::num_prompts)
        .def_readonly("num_responses", &TaskSpec::num_responses)
        .def("reward", &TaskSpec::reward, py::arg("x"), py::arg("y"))
        .def("response_string", &TaskSpec::response_string, py::arg("y"))
        .def("response_id", &TaskSpec::response_id, py::arg("tokens"))
        .def("to_json", [](const TaskSpec& t) { return task_to_json(t).dump(); })
        .def_static("from_json", [](const std::string& s) {
            return task_from_json(nlohmann::json::parse(s));
        });

    py::class_<Distribution>(m, "Distribution")
        .def_readonly("probs", &Distribution::probs);

    py::class_<Rng>(m, "Rng")
        .def(py::init<std::uint64_t>(), py::arg("seed"))
        .def("split", &Rng::split, py::arg("stream"))
        .def("next_double", &Rng::next_double);

    py::class_<PolicyParams>(m, "PolicyParams")
        .def_property_readonly("num_prompts", &PolicyParams::num_prompts)
        .def_property_readonly("num_responses", &PolicyParams::num_responses)
        .def_property_readonly("param_count", &PolicyParams::param_count)
        .def("log_prob", &PolicyParams::log_prob, py::arg("x"), py::arg("y"))
        .def("distribution",
             [](const PolicyParams& p, int x) { return p.distribution(x).probs; },
             py::arg("x"))
        .def("sample_k", &PolicyParams::sample_k, py::arg("x"), py::arg("k"), py::arg("rng"))
        .def("grad_log_prob",
             [](const PolicyParams& p, int x, int y) { return p.grad_log_prob(x, y).values; },
             py::arg("x"), py::arg("y"))
        .def("to_json", [](const PolicyParams& p) { return policy_to_json(p).dump(); })
        .def_static("from_json", [](const std::string& s) {
            return policy_from_json(nlohmann::json::parse(s));
        })
        .def_static("from_flat_logits", &PolicyParams::from_flat_logits, py::arg("logits"));

    py::class_<OptimalPolicySolution>(m, "OptimalPolicySolution")
        .def_readonly("beta", &OptimalPolicySolution::beta)
        .def_readonly("log_partition", &OptimalPolicySolution::log_partition)
        .def_property_readonly("pi_star", [](const OptimalPolicySolution& s) {
            std::vector<std::vector<double>> out;
            for (const auto& d : s.pi_star) {
                out.push_back(d.probs);
            }
            return out;
        });

    py::class_<GroupBatch>(m, "GroupBatch")
        .def(py::init(&make_group), py::arg("prompt"), py::arg("responses"),
             py::arg("rewards"), py::arg("logp_theta"), py::arg("logp_aux"),
             py::arg("logp_old") = std::vector<double>{})
        .def_readonly("responses", &GroupBatch::responses)
        .def_readonly("rewards", &GroupBatch::rewards);

    py::class_<CheckResult>(m, "CheckResult")
        .def_readonly("name", &CheckResult::name)
        .def_readonly("passed", &CheckResult::passed)
        .def_readonly("measured", &CheckResult::measured)
        .def_readonly("threshold", &CheckResult::threshold)
        .def_readonly("details", &CheckResult::details);

    py::class_<TrainOutcome>(m, "TrainOutcome")
        .def_readonly("policy", &TrainOutcome::policy)
        .def_readonly("summary_json", &TrainOutcome::summary_json)
        .def_property_readonly("rows", [](const TrainOutcome& o) {
            std::vector<py::dict> rows;
            for (const auto& r : o.rows) {
                py::dict d;
                d["step"] = r.step;
                d["loss"] = r.loss;
                d["grad_norm"] = r.grad_norm;
                d["mean_reward"] = r.mean_reward;
                d["kl_to_optimal"] = r.kl_to_optimal;
                d["kl_to_aux"] = r.kl_to_aux;
                if (r.has_decomposition) {
                    d["adv_term"] = r.adv_term;
                    d["cov_term"] = r.cov_term;
                    d["var_term"] = r.var_term;
                }
                rows.push_back(std::move(d));
            }
            return rows;
        });

    // taskenv
    m.def(
        "make_bandit",
        [](int num_prompts, int num_responses, const std::string& reward_gen_json,
           std::uint64_t seed) {
            const auto j = nlohmann::json::parse(reward_gen_json);
            const std::string kind = j.at("kind").get<std::string>();
            RewardGenSpec gen = RewardGenSpec::uniform(0.0, 1.0);
            if (kind == "explicit") {
                gen = RewardGenSpec::explicit_table(
                    j.at("values").get<std::vector<std::vector<double>>>());
            } else if (kind == "uniform") {
                gen = RewardGenSpec::uniform(j.value("lo", 0.0), j.value("hi", 1.0));
            } else if (kind == "one_hot") {
                gen = RewardGenSpec::one_hot(j.at("correct_index").get<int>());
            } else {
                throw std::invalid_argument("unknown reward generator: " + kind);
            }
            return make_bandit(num_prompts, num_responses, gen, seed);
        },
        py::arg("num_prompts"), py::arg("num_responses"),
        py::arg("reward_gen") = std::string(R"({"kind":"uniform","lo":0,"hi":1})"),
        py::arg("seed") = 0);
    m.def(
        "make_sequence_task",
        [](int vocab, int length, const std::string& rule_json, std::uint64_t seed) {
            const auto j = nlohmann::json::parse(rule_json);
            const std::string kind = j.at("kind").get<std::string>();
            SequenceRewardRule rule = SequenceRewardRule::random_table();
            if (kind == "match_target") {
                rule = SequenceRewardRule::match_target(j.at("target").get<std::string>());
            } else if (kind == "count_matching") {
                rule = SequenceRewardRule::count_matching(j.at("target").get<std::string>());
            } else if (kind != "random_table") {
                throw std::invalid_argument("unknown reward rule: " + kind);
            }
            return make_sequence_task(vocab, length, rule, seed);
        },
        py::arg("vocab"), py::arg("length"),
        py::arg("reward_rule") = std::string(R"({"kind":"random_table"})"),
        py::arg("seed") = 0);

    // policy
    m.def(
        "init_uniform",
        [](const TaskSpec& task, const std::string& kind) {
            return init_uniform(task,
                                kind == "flat" ? PolicyKind::Flat : PolicyKind::Autoregressive);
        },
        py::arg("task"), py::arg("kind") = "flat");

    // oracle
    m.def("log_partition", &log_partition, py::arg("ref"), py::arg("task"), py::arg("beta"),
          py::arg("x"));
    m.def("optimal_policy", &optimal_policy, py::arg("ref"), py::arg("task"), py::arg("beta"));
    m.def("implicit_reward", &implicit_reward, py::arg("theta"), py::arg("aux"),
          py::arg("beta"), py::arg("x"), py::arg("y"), py::arg("log_partition"));
    m.def(
        "kl",
        [](const std::vector<double>& p, const std::vector<double>& q) {
            return kl(Distribution{p}, Distribution{q});
        },
        py::arg("p"), py::arg("q"));
    m.def(
        "exact_gvpo_loss",
        [](const PolicyParams& theta, const PolicyParams& aux, const PolicyParams& sampling,
           const TaskSpec& task, double beta) {
            return exact_gvpo_loss(theta, aux, sampling, task, beta);
        },
        py::arg("theta"), py::arg("aux"), py::arg("sampling"), py::arg("task"),
        py::arg("beta"));
    m.def(
        "finite_diff_grad",
        [](const std::function<double(const PolicyParams&)>& f, const PolicyParams& p,
           double h) { return finite_diff_grad(f, p, h).values; },
        py::arg("loss_fn"), py::arg("params"), py::arg("h") = 1e-5);

    // schemes
    m.def(
        "gvpo_weights",
        [](const GroupBatch& g, double beta) {
            return gvpo_weights(g, GvpoConfig{beta}).weights;
        },
        py::arg("group"), py::arg("beta") = 1.0);
    m.def(
        "gvpo_loss_nll_form",
        [](const GroupBatch& g, double beta) { return gvpo_loss_nll_form(g, GvpoConfig{beta}); },
        py::arg("group"), py::arg("beta") = 1.0);
    m.def(
        "gvpo_loss_mse_form",
        [](const GroupBatch& g, double beta) { return gvpo_loss_mse_form(g, GvpoConfig{beta}); },
        py::arg("group"), py::arg("beta") = 1.0);
    m.def(
        "gvpo_loss_decomposed",
        [](const PolicyParams& theta, const PolicyParams& aux, const PolicyParams& sampling,
           const TaskSpec& task) {
            const DecompositionTerms t =
                gvpo_loss_decomposed(theta, aux, all_distributions(sampling), task, 1.0);
            py::dict d;
            d["advantage"] = t.advantage;
            d["covariance"] = t.covariance;
            d["variance"] = t.variance;
            d["combined"] = t.combined;
            return d;
        },
        py::arg("theta"), py::arg("aux"), py::arg("sampling"), py::arg("task"));
    m.def(
        "grpo_weights",
        [](const GroupBatch& g, double clip_epsilon, double kl_coefficient, double std_floor,
           bool use_std_normalization) {
            GrpoConfig config;
            config.clip_epsilon = clip_epsilon;
            config.kl_coefficient = kl_coefficient;
            config.std_floor = std_floor;
            config.use_std_normalization = use_std_normalization;
            return grpo_weights(g, config).weights;
        },
        py::arg("group"), py::arg("clip_epsilon") = 0.2, py::arg("kl_coefficient") = 1.0,
        py::arg("std_floor") = 1e-6, py::arg("use_std_normalization") = true);
    m.def(
        "dpo_weights",
        [](const PolicyParams& theta, const PolicyParams& ref, int x, int y_w, int y_l,
           double beta) {
            const DpoPairResult r = dpo_weights(theta, ref, x, y_w, y_l, beta);
            return py::make_tuple(r.w_w, r.w_l, r.loss);
        },
        py::arg("theta"), py::arg("ref"), py::arg("x"), py::arg("y_w"), py::arg("y_l"),
        py::arg("beta") = 1.0);
    m.def(
        "sft_weights",
        [](const GroupBatch& g) { return sft_weights(g).weights; }, py::arg("group"));
    m.def(
        "assemble_gradient_norm",
        [](const PolicyParams& theta, const GroupBatch& group, const std::vector<double>& w) {
            WeightVector wv;
            wv.weights = w;
            const std::vector<GroupBatch> groups{group};
            const std::vector<WeightVector> weights{wv};
            return assemble_gradient(theta, groups, weights).norm();
        },
        py::arg("theta"), py::arg("group"), py::arg("weights"));

    // trainer
    m.def(
        "train_from_config",
        [](const TaskSpec& task, const std::string& train_config_json) {
            const TrainConfig config =
                train_config_from_json(nlohmann::json::parse(train_config_json));
            const PolicyParams init = init_uniform(task, config.policy_kind);
            auto [policy, report] = train(task, init, config);
            TrainOutcome out;
            out.policy = policy;
            out.summary_json = summary_to_json(report.summary).dump();
            out.rows = report.rows;
            return out;
        },
        py::arg("task"), py::arg("train_config"));

    // verify
    m.def(
        "run_check",
        [](const std::string& selector, std::uint64_t seed) {
            return run_checks_by_name(selector, seed);
        },
        py::arg("selector"), py::arg("seed") = 42);
}
