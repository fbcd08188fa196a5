// SPDX-License-Identifier: Apache-2.0
//
// Config-driven experiment front end shared by the CLI and the bindings:
// single runs, Cartesian parameter sweeps, scheme comparisons, and the
// verification suite, all emitting CSV metrics and JSON summaries.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gvpolab/taskenv.hpp"
#include "gvpolab/trainer.hpp"
#include "gvpolab/verify.hpp"

namespace gvpolab {

// Configuration problem; `field` names the offending entry.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string field, const std::string& message)
        : std::runtime_error(message.rfind(field, 0) == 0 ? message
                                                          : field + ": " + message),
          field_(std::move(field)) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

struct SweepAxis {
    std::string path;  // dotted path into the config document, e.g. "train.beta"
    std::vector<nlohmann::json> values;
};

struct ExperimentConfig {
    TaskSpec task;
    TrainConfig train;
    std::vector<SweepAxis> sweep;
    std::string output_dir = "out";
    bool emit_csv = true;
    bool emit_json = true;
    // Comparison runs: schemes trained under identical task/seed/k.
    std::vector<Scheme> compare_schemes;
    std::vector<std::uint64_t> compare_seeds;

    nlohmann::json raw;  // the parsed document (defaults applied)
};

ExperimentConfig parse_experiment_config(const nlohmann::json& doc);
ExperimentConfig load_experiment_config(const std::filesystem::path& file);

// Task described either literally (serialized TaskSpec) or by generator.
TaskSpec task_from_config(const nlohmann::json& j);

struct RunResult {
    TrainReport report;
    std::filesystem::path metrics_csv;
    std::filesystem::path summary_json;
};

// Executes one training run; writes metrics.csv (streamed row by row) and
// summary.json under out_dir when emission is enabled.
RunResult run_experiment(const ExperimentConfig& config,
                         const std::filesystem::path& out_dir);

struct SweepCell {
    std::string name;  // axis=value pairs
    nlohmann::json axis_values;
    TrainSummary summary;
};

struct SweepResult {
    std::vector<SweepCell> cells;
    std::filesystem::path sweep_csv;
};

// Cartesian product over the sweep axes; one sub-directory per cell and an
// aggregate sweep.csv. Failed cells are recorded (aborted=true) and do not
// stop the sweep. parallelism <= 1 runs sequentially.
SweepResult run_sweep(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                      int parallelism = 1);

struct CompareRow {
    Scheme scheme;
    std::uint64_t seed = 0;
    double final_mean_reward = 0.0;
    double final_kl_to_optimal = 0.0;
    double objective = 0.0;  // mean_reward - beta * KL(pi_theta, pi_ref)
    std::optional<int> steps_to_kl_1e3;
    bool aborted = false;
};

struct CompareResult {
    std::vector<CompareRow> rows;
    std::filesystem::path compare_csv;
    std::vector<Scheme> ranking;  // by mean objective, best first
};

CompareResult run_compare(const ExperimentConfig& config,
                          const std::filesystem::path& out_dir);

// Resolves the effective output directory: --output flag, else the config's
// output_dir under $GVPOLAB_OUTPUT_ROOT (or the working directory).
std::filesystem::path resolve_output_dir(const std::string& config_output_dir,
                                         const std::string& cli_override);

// CLI entry points; return process exit codes (0 ok, 1 failed check,
// 2 config error, 3 training abort).
int cmd_run(const std::string& config_path, const std::string& output_override,
            std::optional<std::uint64_t> seed_override);
int cmd_sweep(const std::string& config_path, const std::string& output_override,
              std::optional<std::uint64_t> seed_override, int parallelism);
int cmd_compare(const std::string& config_path, const std::string& output_override,
                std::optional<std::uint64_t> seed_override);
int cmd_verify(const std::string& selector, std::uint64_t seed,
               const std::string& output_file);

}  // namespace gvpolab
