#ifndef KDF_CLI_PIPELINE_HPP
#define KDF_CLI_PIPELINE_HPP

#include "kdf/cli/config.hpp"
#include "kdf/continual.hpp"
#include "kdf/eval.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace kdf::cli {

struct SeedOutcome {
    std::uint64_t seed = 0;
    continual::ProtocolRun run;
    eval::Evaluation single;
    std::optional<eval::Evaluation> fused; // present whenever the protocol has two or more steps
    bool fusion_headline = false;

    const eval::Evaluation& headline() const { return fusion_headline && fused ? *fused : single; }
    std::string results_json(const std::string& digest) const;
};

// Trains every step for one seed and evaluates in both retrieval modes.
SeedOutcome run_seed(const ExperimentConfig& config, std::span<const continual::PreparedDomain> domains,
                     std::uint64_t seed, const continual::StepCallback& on_step = {});

struct Summary {
    double mean = 0.0;
    double stddev = 0.0; // sample standard deviation; 0 for one seed
};

Summary summarize(std::span<const double> values);

// mean/std across seeds of mean Recall@1 and forgetting, per retrieval mode.
std::string aggregate_json(std::span<const SeedOutcome> outcomes);

// step_<t>.snap, run_log.jsonl, results.json and the recall CSVs under `dir`.
void write_seed_outputs(const std::filesystem::path& dir, const SeedOutcome& outcome, const std::string& digest);

} // namespace kdf::cli

#endif
