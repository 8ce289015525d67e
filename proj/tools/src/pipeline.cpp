#include "kdf/cli/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>

namespace kdf::cli {

namespace {

using Json = nlohmann::ordered_json;

void write_text(const std::filesystem::path& file, const std::string& text) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) {
        throw Error("cannot write " + file.string());
    }
}

Json summary_json(std::span<const SeedOutcome> outcomes, bool fused) {
    std::vector<double> recall;
    std::vector<double> forgetting;
    for (const auto& o : outcomes) {
        const eval::Evaluation* ev = fused ? (o.fused ? &*o.fused : nullptr) : &o.single;
        if (ev == nullptr) {
            return nullptr;
        }
        recall.push_back(ev->mean_recall_at_1);
        if (ev->forgetting) {
            forgetting.push_back(ev->forgetting->score);
        }
    }
    const Summary r = summarize(recall);
    Json j{{"mean_recall_at_1", {{"mean", r.mean}, {"std", r.stddev}, {"values", recall}}}};
    if (forgetting.size() == recall.size()) {
        const Summary f = summarize(forgetting);
        j["forgetting"] = {{"mean", f.mean}, {"std", f.stddev}, {"values", forgetting}};
    } else {
        j["forgetting"] = nullptr;
    }
    return j;
}

} // namespace

std::string SeedOutcome::results_json(const std::string& digest) const {
    eval::RunReport report;
    report.seed = seed;
    report.config_digest = digest;
    report.domains = run.domain_names;
    report.single = single;
    report.fused = fused;
    report.fusion_headline = fusion_headline;
    report.steps = run.steps;
    return eval::results_json(report);
}

SeedOutcome run_seed(const ExperimentConfig& config, std::span<const continual::PreparedDomain> domains,
                     std::uint64_t seed, const continual::StepCallback& on_step) {
    SeedOutcome out;
    out.seed = seed;
    out.fusion_headline = config.fusion;
    out.run = continual::run_protocol(config.protocol, domains, seed, on_step);
    const auto tasks = eval::task_splits(domains);
    out.single = eval::evaluate_protocol(out.run.snapshots, tasks, false, config.forgetting_max);
    if (out.run.snapshots.size() >= 2) {
        out.fused = eval::evaluate_protocol(out.run.snapshots, tasks, true, config.forgetting_max);
    }
    return out;
}

Summary summarize(std::span<const double> values) {
    Summary s;
    if (values.empty()) {
        return s;
    }
    double sum = 0.0;
    for (double v : values) {
        sum += v;
    }
    s.mean = sum / static_cast<double>(values.size());
    if (values.size() > 1) {
        double sq = 0.0;
        for (double v : values) {
            sq += (v - s.mean) * (v - s.mean);
        }
        s.stddev = std::sqrt(sq / static_cast<double>(values.size() - 1));
    }
    return s;
}

std::string aggregate_json(std::span<const SeedOutcome> outcomes) {
    Json seeds = Json::array();
    for (const auto& o : outcomes) {
        seeds.push_back(o.seed);
    }
    Json j{{"seeds", seeds},
           {"mode", !outcomes.empty() && outcomes.front().fusion_headline ? "fused" : "single"},
           {"single", summary_json(outcomes, false)},
           {"fused", summary_json(outcomes, true)}};
    return j.dump(2) + "\n";
}

void write_seed_outputs(const std::filesystem::path& dir, const SeedOutcome& outcome, const std::string& digest) {
    std::filesystem::create_directories(dir);
    for (std::size_t t = 0; t < outcome.run.snapshots.size(); ++t) {
        nn::save_snapshot(outcome.run.snapshots[t], dir / ("step_" + std::to_string(t) + ".snap"));
    }
    write_text(dir / "run_log.jsonl", eval::run_log_jsonl(outcome.run.steps));
    write_text(dir / "results.json", outcome.results_json(digest));
    write_text(dir / "recall_matrix.csv", eval::recall_csv(outcome.single.recall, outcome.run.domain_names));
    if (outcome.fused) {
        write_text(dir / "recall_matrix_fused.csv", eval::recall_csv(outcome.fused->recall, outcome.run.domain_names));
    }
}

} // namespace kdf::cli
