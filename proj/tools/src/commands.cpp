#include "kdf/cli/commands.hpp"

#include "kdf/cli/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>

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

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string scientific(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3e", v);
    return buf;
}

} // namespace

int cmd_run(const RunOptions& options, std::ostream& out, std::ostream& err) {
    ExperimentConfig config;
    std::vector<continual::PreparedDomain> domains;
    try {
        config = load_config(options.config);
        apply_overrides(config, options.overrides);
        domains = continual::prepare_domains(config.protocol);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitUsage;
    }
    const std::string digest = config.digest();

    try {
        std::filesystem::create_directories(config.output_dir);
        write_text(config.output_dir / "config.json", config.to_json());
        std::vector<SeedOutcome> outcomes;
        Json seeds = Json::array();
        for (std::uint64_t seed : config.seeds) {
            const auto progress = [&](const continual::ProtocolRun& run, int step) {
                if (!options.quiet) {
                    const auto& last = run.steps.back().log.back();
                    out << "seed " << seed << " step " << step << " (" << run.domain_names[static_cast<std::size_t>(step)]
                        << ") " << fixed(run.step_seconds.back(), 1) << "s loss_pr " << fixed(last.loss_pr, 4)
                        << " batch " << last.batch_size << "\n"
                        << std::flush;
                }
            };
            SeedOutcome outcome = run_seed(config, domains, seed, progress);
            const std::string dir_name = "seed_" + std::to_string(seed);
            write_seed_outputs(config.output_dir / dir_name, outcome, digest);
            const auto& head = outcome.headline();
            out << "seed " << seed << " mean R@1 " << fixed(head.mean_recall_at_1, 2);
            if (head.forgetting) {
                out << " F " << fixed(head.forgetting->score, 2);
            }
            out << (outcome.fusion_headline ? " (fused)" : "") << "\n";
            seeds.push_back({{"seed", seed},
                             {"results", dir_name + "/results.json"},
                             {"run_log", dir_name + "/run_log.jsonl"},
                             {"step_seconds", outcome.run.step_seconds}});
            outcomes.push_back(std::move(outcome));
        }
        write_text(config.output_dir / "aggregate.json", aggregate_json(outcomes));
        const Json manifest{{"tool_version", kToolVersion},
                            {"config_digest", digest},
                            {"config", "config.json"},
                            {"aggregate", "aggregate.json"},
                            {"seeds", std::move(seeds)}};
        write_text(config.output_dir / "manifest.json", manifest.dump(2) + "\n");
        out << "wrote " << (config.output_dir / "manifest.json").string() << "\n";
    } catch (const TrainingError& e) {
        err << "training aborted: " << e.what() << "\n";
        return kExitTraining;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitIo;
    }
    return kExitOk;
}

int cmd_eval(const EvalOptions& options, std::ostream& out, std::ostream& err) {
    if (options.snapshots.empty()) {
        err << "usage error: at least one --snapshot is required\n";
        return kExitUsage;
    }
    if (options.fusion && options.snapshots.size() != 2) {
        err << "usage error: --fusion on needs exactly two snapshots (got " << options.snapshots.size() << ")\n";
        return kExitUsage;
    }
    if (options.recall_n.empty() || !(options.pos_test > 0.0)) {
        err << "usage error: --n and --pos-test must be positive\n";
        return kExitUsage;
    }
    for (std::size_t n : options.recall_n) {
        if (n < 1) {
            err << "usage error: --n must be >= 1\n";
            return kExitUsage;
        }
    }
    try {
        std::vector<nn::ModelSnapshot> snapshots;
        for (const auto& p : options.snapshots) {
            snapshots.push_back(nn::load_snapshot(p));
        }
        if (options.config) {
            const std::string digest = load_config(*options.config).digest();
            for (std::size_t i = 0; i < snapshots.size(); ++i) {
                if (snapshots[i].config_digest() != digest) {
                    err << "digest mismatch: " << options.snapshots[i].string() << " was trained under "
                        << snapshots[i].config_digest() << ", config digest is " << digest << "\n";
                    return kExitDigest;
                }
            }
        }
        const data::PairPolicy policy{10.0, 50.0, options.pos_test};
        const auto database = data::load_corpus(options.corpus / "database", policy);
        const auto queries = data::load_corpus(options.corpus / "queries", policy);

        std::vector<std::vector<nn::ModelSnapshot>> groups;
        if (options.fusion) {
            groups.push_back(snapshots);
        } else {
            for (const auto& s : snapshots) {
                groups.push_back({s});
            }
        }
        Json reports = Json::array();
        for (std::size_t g = 0; g < groups.size(); ++g) {
            const auto index = eval::build_index(groups[g], database, options.fusion);
            const auto blocks = eval::embed_blocks(groups[g], queries, options.fusion);
            Json recall = Json::object();
            std::size_t evaluated = 0;
            std::size_t excluded = 0;
            for (std::size_t n : options.recall_n) {
                const auto rep = eval::recall_at_n(index, blocks, queries, options.pos_test, n);
                recall[std::to_string(n)] = rep.percent;
                evaluated = rep.evaluated;
                excluded = rep.excluded;
                out << (options.fusion ? "fused" : options.snapshots[g].filename().string()) << " R@" << n << " "
                    << fixed(rep.percent, 2) << " (dim " << index.dim() << ", " << rep.evaluated << " queries, "
                    << rep.excluded << " without positives)"
                    << (n > index.size() ? " [k exceeds database]" : "") << "\n";
            }
            Json names = Json::array();
            for (std::size_t k = 0; k < groups[g].size(); ++k) {
                names.push_back(options.snapshots[options.fusion ? k : g].generic_string());
            }
            reports.push_back({{"snapshots", std::move(names)},
                               {"embedding_dim", index.dim()},
                               {"recall_at_n", std::move(recall)},
                               {"evaluated", evaluated},
                               {"excluded", excluded}});
        }
        const Json result{{"fusion", options.fusion},
                          {"pos_test", options.pos_test},
                          {"database_size", database.size()},
                          {"query_size", queries.size()},
                          {"reports", std::move(reports)}};
        if (options.out) {
            if (options.out->has_parent_path()) {
                std::filesystem::create_directories(options.out->parent_path());
            }
            write_text(*options.out, result.dump(2) + "\n");
        }
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitIo;
    }
    return kExitOk;
}

int cmd_gradcheck(const GradcheckOptions& options, std::ostream& out, std::ostream& err) {
    std::vector<GradcheckRow> rows;
    try {
        rows = run_gradcheck(options);
    } catch (const Error& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    }
    std::vector<std::string> failed;
    for (const auto& r : rows) {
        out << std::left << std::setw(14) << r.component << " max_rel_err " << scientific(r.max_rel_error)
            << " checked " << r.checked << " skipped " << r.skipped << (r.pass ? " ok" : " FAIL") << "\n";
        if (!r.pass) {
            failed.push_back(r.component);
        }
    }
    if (!failed.empty()) {
        err << "gradient check failed:";
        for (const auto& f : failed) {
            err << " " << f;
        }
        err << "\n";
        return kExitGradcheck;
    }
    return kExitOk;
}

int cmd_gen_data(const GenDataOptions& options, std::ostream& out, std::ostream& err) {
    std::vector<continual::PreparedDomain> domains;
    try {
        domains = continual::prepare_domains(load_config(options.config).protocol);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitUsage;
    }
    try {
        for (const auto& d : domains) {
            const auto root = options.out / d.entry.name;
            data::write_corpus(root / "train", d.split.train);
            data::write_corpus(root / "database", d.split.database);
            data::write_corpus(root / "queries", d.split.queries);
            out << d.entry.name << ": " << d.split.train.size() << " train, " << d.split.database.size()
                << " database, " << d.split.queries.size() << " queries -> " << root.string() << "\n";
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitIo;
    }
    return kExitOk;
}

} // namespace kdf::cli
