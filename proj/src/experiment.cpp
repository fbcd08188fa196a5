// SPDX-License-Identifier: Apache-2.0

#include "gvpolab/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <thread>

namespace gvpolab {

namespace {

std::string json_scalar_string(const nlohmann::json& v) {
    if (v.is_string()) {
        return v.get<std::string>();
    }
    return v.dump();
}

// RFC-4180 quoting for fields that may carry commas or quotes.
std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) {
        return s;
    }
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') {
            out += '"';
        }
        out += c;
    }
    out += '"';
    return out;
}

// Compact readable slug for an axis value; objects flatten to key-value
// pairs so cell directories stay legible.
std::string json_value_slug(const nlohmann::json& v) {
    if (v.is_object()) {
        std::string out;
        for (const auto& [key, value] : v.items()) {
            if (!out.empty()) {
                out += '_';
            }
            out += key + "-" + json_scalar_string(value);
        }
        return out;
    }
    return json_scalar_string(v);
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << content;
}

nlohmann::json* navigate(nlohmann::json& doc, const std::string& dotted_path) {
    nlohmann::json* node = &doc;
    std::size_t start = 0;
    while (start <= dotted_path.size()) {
        const std::size_t dot = dotted_path.find('.', start);
        const std::string key = dotted_path.substr(
            start, dot == std::string::npos ? std::string::npos : dot - start);
        if (!node->is_object() || !node->contains(key)) {
            return nullptr;
        }
        node = &(*node)[key];
        if (dot == std::string::npos) {
            return node;
        }
        start = dot + 1;
    }
    return nullptr;
}

std::string format_metric(double v) {
    std::ostringstream out;
    out.precision(17);
    out << v;
    return out.str();
}

// Cell directory names stay filesystem-friendly even for object-valued axes.
std::string sanitize_component(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                        (c >= '0' && c <= '9') || c == '=' || c == '.' || c == '-' ||
                        c == '+' || c == ',' || c == '_';
        out.push_back(ok ? c : '_');
    }
    return out;
}

}  // namespace

TaskSpec task_from_config(const nlohmann::json& j) {
    if (!j.is_object()) {
        throw ConfigError("task", "must be an object");
    }
    if (j.contains("rewards")) {
        // Literal serialized TaskSpec.
        try {
            return task_from_json(j);
        } catch (const std::exception& e) {
            throw ConfigError("task", e.what());
        }
    }
    const std::string kind = j.value("kind", std::string("bandit"));
    const std::uint64_t seed = j.value("seed", std::uint64_t{0});
    try {
        if (kind == "bandit") {
            const int num_prompts = j.value("num_prompts", 1);
            const int num_responses = j.value("num_responses", 0);
            RewardGenSpec gen = RewardGenSpec::uniform(0.0, 1.0);
            if (j.contains("reward_gen")) {
                const auto& g = j.at("reward_gen");
                const std::string gkind = g.at("kind").get<std::string>();
                if (gkind == "explicit") {
                    gen = RewardGenSpec::explicit_table(
                        g.at("values").get<std::vector<std::vector<double>>>());
                } else if (gkind == "uniform") {
                    gen = RewardGenSpec::uniform(g.value("lo", 0.0), g.value("hi", 1.0));
                } else if (gkind == "one_hot") {
                    gen = RewardGenSpec::one_hot(g.at("correct_index").get<int>());
                } else {
                    throw ConfigError("task.reward_gen.kind", "unknown generator: " + gkind);
                }
            }
            return make_bandit(num_prompts, num_responses, gen, seed);
        }
        if (kind == "sequence") {
            const int vocab = j.at("vocab").get<int>();
            const int length = j.at("length").get<int>();
            SequenceRewardRule rule = SequenceRewardRule::random_table();
            if (j.contains("reward_rule")) {
                const auto& r = j.at("reward_rule");
                const std::string rkind = r.at("kind").get<std::string>();
                if (rkind == "match_target") {
                    rule = SequenceRewardRule::match_target(r.at("target").get<std::string>());
                } else if (rkind == "count_matching") {
                    rule =
                        SequenceRewardRule::count_matching(r.at("target").get<std::string>());
                } else if (rkind == "random_table") {
                    rule = SequenceRewardRule::random_table();
                } else {
                    throw ConfigError("task.reward_rule.kind", "unknown rule: " + rkind);
                }
            }
            return make_sequence_task(vocab, length, rule, seed);
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError("task", e.what());
    }
    throw ConfigError("task.kind", "unknown task kind: " + kind);
}

ExperimentConfig parse_experiment_config(const nlohmann::json& doc) {
    if (!doc.is_object()) {
        throw ConfigError("config", "document must be a JSON object");
    }
    ExperimentConfig config;
    config.raw = doc;
    if (!doc.contains("task")) {
        throw ConfigError("task", "missing");
    }
    config.task = task_from_config(doc.at("task"));

    try {
        config.train = train_config_from_json(doc.value("train", nlohmann::json::object()));
    } catch (const std::exception& e) {
        throw ConfigError("train", e.what());
    }
    try {
        config.train.validate(config.task);
    } catch (const std::exception& e) {
        throw ConfigError("train", e.what());
    }

    if (doc.contains("sweep")) {
        for (const auto& axis : doc.at("sweep")) {
            SweepAxis a;
            a.path = axis.at("path").get<std::string>();
            for (const auto& v : axis.at("values")) {
                a.values.push_back(v);
            }
            if (a.values.empty()) {
                throw ConfigError("sweep", "axis " + a.path + " has an empty value list");
            }
            nlohmann::json probe = doc;
            if (navigate(probe, a.path) == nullptr) {
                throw ConfigError("sweep", "axis path not present in the config: " + a.path);
            }
            config.sweep.push_back(std::move(a));
        }
    }

    config.output_dir = doc.value("output_dir", std::string("out"));
    if (doc.contains("emit")) {
        config.emit_csv = doc.at("emit").value("csv", true);
        config.emit_json = doc.at("emit").value("json", true);
    }

    if (doc.contains("schemes")) {
        for (const auto& s : doc.at("schemes")) {
            try {
                config.compare_schemes.push_back(scheme_from_name(s.get<std::string>()));
            } catch (const std::exception& e) {
                throw ConfigError("schemes", e.what());
            }
        }
    }
    if (doc.contains("seeds")) {
        for (const auto& s : doc.at("seeds")) {
            config.compare_seeds.push_back(s.get<std::uint64_t>());
        }
    }
    return config;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) {
        throw ConfigError("config", "cannot open " + file.string());
    }
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const std::exception& e) {
        throw ConfigError("config", std::string("parse error: ") + e.what());
    }
    return parse_experiment_config(doc);
}

std::filesystem::path resolve_output_dir(const std::string& config_output_dir,
                                         const std::string& cli_override) {
    if (!cli_override.empty()) {
        return cli_override;
    }
    std::filesystem::path dir = config_output_dir;
    if (dir.is_relative()) {
        if (const char* root = std::getenv("GVPOLAB_OUTPUT_ROOT")) {
            dir = std::filesystem::path(root) / dir;
        }
    }
    return dir;
}

RunResult run_experiment(const ExperimentConfig& config,
                         const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    RunResult result;
    result.metrics_csv = out_dir / "metrics.csv";
    result.summary_json = out_dir / "summary.json";

    std::ofstream csv;
    if (config.emit_csv) {
        csv.open(result.metrics_csv);
        if (!csv) {
            throw std::runtime_error("cannot write " + result.metrics_csv.string());
        }
        csv << train_report_csv_header() << '\n';
    }

    const PolicyParams init = init_uniform(config.task, config.train.policy_kind);
    Trainer trainer(config.task, init, config.train);
    trainer.run([&](const StepRow& row) {
        if (csv.is_open()) {
            csv << step_row_csv(row) << '\n';
        }
    });
    result.report = trainer.take_report();

    if (csv.is_open()) {
        csv.close();
    }
    if (config.emit_json) {
        nlohmann::json summary = summary_to_json(result.report.summary);
        summary["config"]["task"] = task_to_json(config.task);
        write_text_file(result.summary_json, summary.dump(2) + "\n");
    }
    return result;
}

SweepResult run_sweep(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                      int parallelism) {
    if (config.sweep.empty()) {
        throw ConfigError("sweep", "missing sweep axes");
    }
    std::filesystem::create_directories(out_dir);

    // Cartesian product of the axis values, in declaration order.
    std::size_t total = 1;
    for (const auto& axis : config.sweep) {
        total *= axis.values.size();
    }
    std::vector<nlohmann::json> cell_docs;
    std::vector<std::string> cell_names;
    for (std::size_t cell = 0; cell < total; ++cell) {
        nlohmann::json doc = config.raw;
        std::string name;
        std::size_t rem = cell;
        for (const auto& axis : config.sweep) {
            const std::size_t idx = rem % axis.values.size();
            rem /= axis.values.size();
            nlohmann::json* node = navigate(doc, axis.path);
            *node = axis.values[idx];
            const std::string leaf = axis.path.substr(axis.path.rfind('.') + 1);
            if (!name.empty()) {
                name += ",";
            }
            name += sanitize_component(leaf + "=" + json_value_slug(axis.values[idx]));
        }
        doc.erase("sweep");
        cell_docs.push_back(std::move(doc));
        cell_names.push_back(std::move(name));
    }

    SweepResult result;
    result.cells.resize(total);

    auto run_cell = [&](std::size_t cell) {
        SweepCell& out = result.cells[cell];
        out.name = cell_names[cell];
        nlohmann::json axis_values = nlohmann::json::object();
        std::size_t rem = cell;
        for (const auto& axis : config.sweep) {
            const std::size_t idx = rem % axis.values.size();
            rem /= axis.values.size();
            axis_values[axis.path] = axis.values[idx];
        }
        out.axis_values = std::move(axis_values);
        try {
            const ExperimentConfig cell_config = parse_experiment_config(cell_docs[cell]);
            const RunResult run = run_experiment(cell_config, out_dir / out.name);
            out.summary = run.report.summary;
        } catch (const std::exception& e) {
            out.summary.aborted = true;
            out.summary.abort_reason = e.what();
        }
    };

    if (parallelism <= 1) {
        for (std::size_t cell = 0; cell < total; ++cell) {
            run_cell(cell);
        }
    } else {
        std::vector<std::thread> pool;
        std::atomic<std::size_t> next{0};
        const int workers = std::min<int>(parallelism, static_cast<int>(total));
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&]() {
                while (true) {
                    const std::size_t cell = next.fetch_add(1);
                    if (cell >= total) {
                        return;
                    }
                    run_cell(cell);
                }
            });
        }
        for (auto& t : pool) {
            t.join();
        }
    }

    // Aggregate table, one row per cell in deterministic cell order.
    result.sweep_csv = out_dir / "sweep.csv";
    std::ostringstream csv;
    csv << "cell";
    for (const auto& axis : config.sweep) {
        csv << ',' << axis.path;
    }
    csv << ",loss,mean_reward,kl_to_optimal,kl_to_aux,aborted\n";
    for (const auto& cell : result.cells) {
        csv << csv_escape(cell.name);
        for (const auto& axis : config.sweep) {
            csv << ',' << csv_escape(json_scalar_string(cell.axis_values.at(axis.path)));
        }
        const auto& m = cell.summary.final_metrics;
        csv << ',' << format_metric(cell.summary.final_loss) << ','
            << format_metric(m.mean_reward) << ',' << format_metric(m.kl_to_optimal) << ','
            << format_metric(m.kl_to_aux) << ',' << (cell.summary.aborted ? "true" : "false")
            << '\n';
    }
    write_text_file(result.sweep_csv, csv.str());
    return result;
}

CompareResult run_compare(const ExperimentConfig& config,
                          const std::filesystem::path& out_dir) {
    if (config.compare_schemes.size() < 2) {
        throw ConfigError("schemes", "a comparison needs at least two schemes");
    }
    std::filesystem::create_directories(out_dir);

    std::vector<std::uint64_t> seeds = config.compare_seeds;
    if (seeds.empty()) {
        seeds.push_back(config.train.seed);
    }

    CompareResult result;
    for (Scheme scheme : config.compare_schemes) {
        for (std::uint64_t seed : seeds) {
            TrainConfig train_config = config.train;
            train_config.scheme = scheme;
            train_config.seed = seed;
            train_config.validate(config.task);

            CompareRow row;
            row.scheme = scheme;
            row.seed = seed;

            const PolicyParams init = init_uniform(config.task, train_config.policy_kind);
            auto [policy, report] = train(config.task, init, train_config);
            row.aborted = report.summary.aborted;
            if (!row.aborted) {
                row.final_mean_reward = report.summary.final_metrics.mean_reward;
                row.final_kl_to_optimal = report.summary.final_metrics.kl_to_optimal;
                row.objective = report.summary.final_metrics.mean_reward -
                                train_config.beta * report.summary.final_metrics.kl_to_aux;
                for (const StepRow& step : report.rows) {
                    if (step.kl_to_optimal < 1e-3) {
                        row.steps_to_kl_1e3 = step.step;
                        break;
                    }
                }
            }
            result.rows.push_back(row);
        }
    }

    // Rank schemes by mean objective, best first.
    std::vector<std::pair<Scheme, double>> means;
    for (Scheme scheme : config.compare_schemes) {
        double sum = 0.0;
        int count = 0;
        for (const auto& row : result.rows) {
            if (row.scheme == scheme && !row.aborted) {
                sum += row.objective;
                ++count;
            }
        }
        means.emplace_back(scheme, count > 0 ? sum / count
                                             : -std::numeric_limits<double>::infinity());
    }
    std::sort(means.begin(), means.end(),
              [](const auto& a, const auto& b) { return a.second > b.second; });
    for (const auto& entry : means) {
        result.ranking.push_back(entry.first);
    }

    result.compare_csv = out_dir / "compare.csv";
    std::ostringstream csv;
    csv << "scheme,seed,final_mean_reward,final_kl_to_optimal,objective,steps_to_kl_1e-3,aborted\n";
    for (const auto& row : result.rows) {
        csv << scheme_name(row.scheme) << ',' << row.seed << ','
            << format_metric(row.final_mean_reward) << ','
            << format_metric(row.final_kl_to_optimal) << ',' << format_metric(row.objective)
            << ',';
        if (row.steps_to_kl_1e3) {
            csv << *row.steps_to_kl_1e3;
        } else {
            csv << "n/a";
        }
        csv << ',' << (row.aborted ? "true" : "false") << '\n';
    }
    write_text_file(result.compare_csv, csv.str());
    return result;
}

int cmd_run(const std::string& config_path, const std::string& output_override,
            std::optional<std::uint64_t> seed_override) {
    ExperimentConfig config;
    try {
        config = load_experiment_config(config_path);
        if (seed_override) {
            config.train.seed = *seed_override;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    }
    try {
        const auto out_dir = resolve_output_dir(config.output_dir, output_override);
        const RunResult result = run_experiment(config, out_dir);
        const auto& m = result.report.summary.final_metrics;
        if (result.report.summary.aborted) {
            std::cerr << "training aborted: " << result.report.summary.abort_reason << "\n";
            return 3;
        }
        std::cout << "final: loss=" << result.report.summary.final_loss
                  << " mean_reward=" << m.mean_reward << " kl_to_optimal=" << m.kl_to_optimal
                  << " kl_to_aux=" << m.kl_to_aux << "\n"
                  << "wrote " << result.metrics_csv.string() << " and "
                  << result.summary_json.string() << "\n";
        return 0;
    } catch (const SupportViolation& e) {
        std::cerr << "training aborted: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}

int cmd_sweep(const std::string& config_path, const std::string& output_override,
              std::optional<std::uint64_t> seed_override, int parallelism) {
    ExperimentConfig config;
    try {
        config = load_experiment_config(config_path);
        if (seed_override) {
            config.train.seed = *seed_override;
            config.raw["train"]["seed"] = *seed_override;
        }
        if (config.sweep.empty()) {
            throw ConfigError("sweep", "missing sweep axes");
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    }
    try {
        const auto out_dir = resolve_output_dir(config.output_dir, output_override);
        const SweepResult result = run_sweep(config, out_dir, parallelism);
        int aborted = 0;
        for (const auto& cell : result.cells) {
            if (cell.summary.aborted) {
                ++aborted;
            }
        }
        std::cout << result.cells.size() << " cells, " << aborted << " aborted; wrote "
                  << result.sweep_csv.string() << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}

int cmd_compare(const std::string& config_path, const std::string& output_override,
                std::optional<std::uint64_t> seed_override) {
    ExperimentConfig config;
    try {
        config = load_experiment_config(config_path);
        if (seed_override) {
            config.train.seed = *seed_override;
        }
        if (config.compare_schemes.size() < 2) {
            throw ConfigError("schemes", "a comparison needs at least two schemes");
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    }
    try {
        const auto out_dir = resolve_output_dir(config.output_dir, output_override);
        const CompareResult result = run_compare(config, out_dir);
        std::cout << "ranking by objective (mean over seeds):";
        for (Scheme s : result.ranking) {
            std::cout << ' ' << scheme_name(s);
        }
        std::cout << "\nwrote " << result.compare_csv.string() << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}

int cmd_verify(const std::string& selector, std::uint64_t seed,
               const std::string& output_file) {
    std::vector<CheckResult> results;
    try {
        results = run_checks_by_name(selector, seed);
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage: verify <";
        const auto selectors = check_selectors();
        for (std::size_t i = 0; i < selectors.size(); ++i) {
            std::cerr << (i > 0 ? "|" : "") << selectors[i];
        }
        std::cerr << "> (" << e.what() << ")\n";
        return 2;
    }

    nlohmann::json doc = nlohmann::json::array();
    bool all_passed = true;
    for (const auto& r : results) {
        doc.push_back(check_result_to_json(r));
        all_passed = all_passed && r.passed;
    }
    for (const auto& r : results) {
        std::cout << (r.passed ? "PASS" : "FAIL") << "  " << r.name
                  << "  measured=" << r.measured << " threshold=" << r.threshold << "\n";
    }
    if (!output_file.empty()) {
        write_text_file(output_file, doc.dump(2) + "\n");
    } else {
        std::cout << doc.dump(2) << "\n";
    }
    return all_passed ? 0 : 1;
}

}  // namespace gvpolab
