// SPDX-License-Identifier: Apache-2.0
//
// gvpolab command-line front end:
//   gvpolab run     --config <path> [--seed N] [--output <dir>]
//   gvpolab sweep   --config <path> [--seed N] [--output <dir>] [--parallel P]
//   gvpolab compare --config <path> [--seed N] [--output <dir>]
//   gvpolab verify  [selector] [--seed N] [--output <file>]

#include <optional>
#include <string>

#include <CLI11.hpp>

#include "gvpolab/experiment.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Desk-scale lab for group-based policy post-training on enumerable tasks"};
    app.require_subcommand(1);

    std::string config_path;
    std::string output;
    std::string verify_output;
    std::string selector = "all";
    std::uint64_t seed = 42;
    bool seed_given = false;
    int parallel = 1;

    auto add_common = [&](CLI::App* cmd, bool needs_config) {
        if (needs_config) {
            cmd->add_option("--config", config_path, "JSON experiment config")->required();
        }
        cmd->add_option("--seed", seed, "override the training seed")
            ->each([&](const std::string&) { seed_given = true; });
        cmd->add_option("--output", output, "output directory override");
    };

    CLI::App* run = app.add_subcommand("run", "execute one training run");
    add_common(run, true);

    CLI::App* sweep = app.add_subcommand("sweep", "execute a parameter sweep");
    add_common(sweep, true);
    sweep->add_option("--parallel", parallel, "cells run concurrently")->check(CLI::PositiveNumber);

    CLI::App* compare = app.add_subcommand("compare", "train several schemes on one task");
    add_common(compare, true);

    CLI::App* verify = app.add_subcommand("verify", "run the verification suite");
    verify->add_option("selector", selector,
                       "all, zero_sum, cancellation, three_forms, theorem1, theorem2, "
                       "stationary or ablation");
    verify->add_option("--seed", seed, "harness seed");
    verify->add_option("--output", verify_output, "write the JSON results to a file");

    CLI11_PARSE(app, argc, argv);

    const std::optional<std::uint64_t> seed_override =
        seed_given ? std::make_optional(seed) : std::nullopt;

    if (run->parsed()) {
        return gvpolab::cmd_run(config_path, output, seed_override);
    }
    if (sweep->parsed()) {
        return gvpolab::cmd_sweep(config_path, output, seed_override, parallel);
    }
    if (compare->parsed()) {
        return gvpolab::cmd_compare(config_path, output, seed_override);
    }
    return gvpolab::cmd_verify(selector, seed, verify_output);
}
