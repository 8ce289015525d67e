#include "kdf/cli/commands.hpp"
#include "kdf/cli/pipeline.hpp"
#include "kdf/rng.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <sys/wait.h>

using namespace kdf;
using Json = nlohmann::ordered_json;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
    bool pass = true;
    std::vector<std::string> failures;
    Json details = Json::object();

    void expect(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            failures.push_back(what);
        }
    }
};

std::string fmt(double v, int digits = 3) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = scale * rng.normal();
    }
    return m;
}

std::vector<data::PlaceSample> labelled(int domain, std::size_t n) {
    std::vector<data::PlaceSample> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i].domain_id = domain;
        out[i].sample_id = static_cast<std::int64_t>(i);
    }
    return out;
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

// ---------------------------------------------------------------------------

Outcome gradient_suite() {
    Outcome o;
    const auto start = Clock::now();
    const auto rows = cli::run_gradcheck({});
    const double elapsed = seconds_since(start);
    for (const auto& r : rows) {
        o.details[r.component] = {{"max_rel_error", r.max_rel_error}, {"checked", r.checked}, {"skipped", r.skipped}};
        o.expect(r.pass && r.max_rel_error < 1e-4, r.component + " max relative error " + fmt(r.max_rel_error, 8));
        o.expect(r.checked > 0, r.component + " checked no coordinates");
    }
    for (const char* needed : {"encoder", "triplet", "batch_triplet", "soft_rank", "rkd", "dkd_skl", "dkd_kl",
                               "dkd_js"}) {
        o.expect(std::any_of(rows.begin(), rows.end(), [&](const auto& r) { return r.component == needed; }),
                 std::string("missing component ") + needed);
    }
    o.details["seconds"] = elapsed;
    o.expect(elapsed < 60.0, "runtime " + fmt(elapsed, 1) + " s");
    return o;
}

Outcome soft_rank_invariants() {
    Outcome o;
    const auto start = Clock::now();
    Rng rng(2024);
    double worst_sum = 0.0;
    int range_violations = 0;
    for (int draw = 0; draw < 1000; ++draw) {
        const Eigen::Index n = 2 + static_cast<Eigen::Index>(rng.index(15));
        const double tau = std::exp(rng.uniform(std::log(1e-3), std::log(10.0)));
        const Matrix e = random_matrix(rng, n, 8, rng.uniform(0.01, 3.0));
        const Matrix r = loss::soft_rank_matrix(loss::similarity_matrix(e), tau);
        const double nd = static_cast<double>(n);
        for (Eigen::Index q = 0; q < n; ++q) {
            worst_sum = std::max(worst_sum, std::abs(r.row(q).sum() - (nd + nd * (nd - 1) / 2)));
            if (r.row(q).minCoeff() < 1.0 || r.row(q).maxCoeff() > nd) {
                ++range_violations;
            }
        }
    }
    o.expect(worst_sum <= 1e-9, "row-sum deviation " + std::to_string(worst_sum));
    o.expect(range_violations == 0, std::to_string(range_violations) + " rows outside [1, n]");

    // Hard ranks from a sort, on similarities spaced at least 0.1 apart.
    double worst_oracle = 0.0;
    for (int draw = 0; draw < 200; ++draw) {
        const Eigen::Index n = 2 + static_cast<Eigen::Index>(rng.index(15));
        std::vector<double> values(static_cast<std::size_t>(n));
        double v = 0.0;
        for (auto& x : values) {
            x = v;
            v -= 0.1 + rng.uniform(0.0, 0.5);
        }
        rng.shuffle(values);
        RowVector s(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            s(i) = values[static_cast<std::size_t>(i)];
        }
        const RowVector soft = loss::soft_rank_row(s, 0.01);
        for (Eigen::Index i = 0; i < n; ++i) {
            double hard = 1.0;
            for (Eigen::Index j = 0; j < n; ++j) {
                hard += (j != i && s(j) > s(i)) ? 1.0 : 0.0;
            }
            worst_oracle = std::max(worst_oracle, std::abs(soft(i) - hard));
        }
    }
    o.expect(worst_oracle <= 1e-3, "hard-rank disagreement " + std::to_string(worst_oracle));
    const double elapsed = seconds_since(start);
    o.expect(elapsed < 10.0, "runtime " + fmt(elapsed, 1) + " s");
    o.details = {{"max_row_sum_error", worst_sum}, {"max_hard_rank_error", worst_oracle}, {"seconds", elapsed}};
    return o;
}

Outcome divergence_fixtures() {
    Outcome o;
    Vector p(2), q(2);
    p << 0.5, 0.5;
    q << 0.9, 0.1;
    const double skl = loss::skl_divergence(p, q);
    const double kl_pq = loss::kl_divergence(p, q);
    const double kl_qp = loss::kl_divergence(q, p);
    const double js = loss::js_divergence(p, q);
    o.expect(std::abs(skl - 0.43945) <= 1e-4, "SKL " + fmt(skl, 6));
    o.expect(skl == loss::skl_divergence(q, p), "SKL not bit-symmetric");
    o.expect(kl_pq != kl_qp, "KL symmetric on the fixture pair");
    o.expect(js <= std::log(2.0), "JS above ln 2");
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
        const Vector a = loss::to_distribution(random_matrix(rng, 1, 6, 4.0).row(0), 1.0);
        const Vector b = loss::to_distribution(random_matrix(rng, 1, 6, 4.0).row(0), 1.0);
        if (loss::js_divergence(a, b) > std::log(2.0) || loss::skl_divergence(a, b) != loss::skl_divergence(b, a)) {
            o.expect(false, "random pair violates JS bound or SKL symmetry");
            break;
        }
    }
    o.details = {{"skl", skl}, {"kl_pq", kl_pq}, {"kl_qp", kl_qp}, {"js", js}};
    return o;
}

Outcome schedule_fixtures() {
    Outcome o;
    const loss::RelaxationSchedule literal{60.0, loss::LambdaVariant::Literal};
    const loss::RelaxationSchedule incloud{60.0, loss::LambdaVariant::InCloud};
    const double l0 = loss::lambda_at(literal, 0.0);
    const double l60 = loss::lambda_at(literal, 60.0);
    o.expect(l0 == 0.5, "literal lambda(0) = " + fmt(l0, 17));
    o.expect(std::abs(l60 - 4.2e-5) <= 1e-6, "literal lambda(60) = " + std::to_string(l60));
    for (const auto& s : {literal, incloud}) {
        for (int g = 1; g <= 60; ++g) {
            if (!(loss::lambda_at(s, g) < loss::lambda_at(s, g - 1))) {
                o.expect(false, std::string(loss::to_string(s.variant)) + " not decreasing at " + std::to_string(g));
                break;
            }
        }
    }
    o.details = {{"literal_0", l0}, {"literal_60", l60}, {"incloud_0", loss::lambda_at(incloud, 0.0)},
                 {"incloud_60", loss::lambda_at(incloud, 60.0)}};
    return o;
}

Outcome forgetting_fixture() {
    Outcome o;
    const auto r = eval::RecallMatrix::from_rows({{90, 40, 0}, {80, 70, 0}, {75, 65, 60}});
    const double f = eval::forgetting_score(r).score;
    o.expect(f == 10.0, "F = " + fmt(f, 17));
    Rng rng(5);
    double worst = 0.0;
    for (int draw = 0; draw < 200; ++draw) {
        const std::size_t n = 2 + rng.index(6);
        const double shift = rng.uniform(-20.0, 20.0);
        std::vector<std::vector<double>> a(n, std::vector<double>(n));
        auto b = a;
        for (std::size_t l = 0; l < n; ++l) {
            for (std::size_t t = 0; t < n; ++t) {
                a[l][t] = rng.uniform(20.0, 80.0);
                b[l][t] = a[l][t] + shift;
            }
        }
        worst = std::max(worst, std::abs(eval::forgetting_score(eval::RecallMatrix::from_rows(a)).score -
                                         eval::forgetting_score(eval::RecallMatrix::from_rows(b)).score));
    }
    o.expect(worst <= 1e-9, "shift changes F by " + std::to_string(worst));
    o.details = {{"fixture_f", f}, {"max_shift_error", worst}};
    return o;
}

// ---------------------------------------------------------------------------
// End-to-end experiment

struct Variant {
    std::string name;
    std::vector<std::string> toggles;
};

struct VariantRuns {
    std::vector<cli::SeedOutcome> seeds;

    std::vector<double> values(bool fused, bool forgetting) const {
        std::vector<double> out;
        for (const auto& s : seeds) {
            const eval::Evaluation& ev = fused ? *s.fused : s.single;
            out.push_back(forgetting ? ev.forgetting->score : ev.mean_recall_at_1);
        }
        return out;
    }
};

Json summary_json(const std::vector<double>& v) {
    const auto s = cli::summarize(v);
    return {{"mean", s.mean}, {"std", s.stddev}, {"values", v}};
}

struct Experiment {
    cli::ExperimentConfig base_config;
    std::vector<continual::PreparedDomain> domains;
    std::map<std::string, VariantRuns> runs;
    double seconds = 0.0;
};

Experiment run_experiment(const std::filesystem::path& config_path, const std::string& lambda_variant,
                          const std::vector<Variant>& variants) {
    Experiment ex;
    const auto start = Clock::now();
    ex.base_config = cli::load_config(config_path);
    ex.domains = continual::prepare_domains(ex.base_config.protocol);
    for (const auto& v : variants) {
        cli::ExperimentConfig c = ex.base_config;
        cli::Overrides o;
        o.toggles = v.toggles;
        o.lambda_variant = lambda_variant;
        cli::apply_overrides(c, o);
        VariantRuns runs;
        for (std::uint64_t seed : c.seeds) {
            const auto t0 = Clock::now();
            runs.seeds.push_back(cli::run_seed(c, ex.domains, seed));
            const auto& s = runs.seeds.back();
            std::cout << "  [" << lambda_variant << "] " << v.name << " seed " << seed << ": R@1 "
                      << fmt(s.single.mean_recall_at_1, 2) << " F " << fmt(s.single.forgetting->score, 2)
                      << " | fused R@1 " << fmt(s.fused->mean_recall_at_1, 2) << " F "
                      << fmt(s.fused->forgetting->score, 2) << " (" << fmt(seconds_since(t0), 1) << " s)\n"
                      << std::flush;
        }
        ex.runs[v.name] = std::move(runs);
    }
    ex.seconds = seconds_since(start);
    return ex;
}

const std::vector<Variant> kAblation{
    {"finetune", {"pr=on", "rkd=off", "dkd=off", "buffer=off", "fusion=off"}},
    {"base", {"pr=on", "rkd=off", "dkd=off", "buffer=on", "fusion=off"}},
    {"base+rkd", {"pr=on", "rkd=on", "dkd=off", "buffer=on", "fusion=off"}},
    {"base+dkd", {"pr=on", "rkd=off", "dkd=on", "buffer=on", "fusion=off"}},
    {"full", {"pr=on", "rkd=on", "dkd=on", "buffer=on", "fusion=on"}},
};

Outcome comparative(const Experiment& ex, bool with_ablation) {
    Outcome o;
    const auto& ft = ex.runs.at("finetune");
    const auto& full = ex.runs.at("full");
    const auto ft_f = ft.values(false, true);
    const auto ft_r = ft.values(false, false);
    const auto kdf_f = full.values(true, true);
    const auto kdf_r = full.values(true, false);
    const auto sf_ft = cli::summarize(ft_f), sf_kdf = cli::summarize(kdf_f);
    const auto sr_ft = cli::summarize(ft_r), sr_kdf = cli::summarize(kdf_r);
    const double f_margin = std::max(sf_ft.stddev, sf_kdf.stddev);
    const double r_margin = std::max(sr_ft.stddev, sr_kdf.stddev);
    o.expect(sf_ft.mean - sf_kdf.mean > f_margin, "F: KDF " + fmt(sf_kdf.mean, 2) + " vs fine-tuning " +
                                                      fmt(sf_ft.mean, 2) + ", margin needs > " + fmt(f_margin, 2));
    o.expect(sr_kdf.mean - sr_ft.mean > r_margin, "R@1: KDF " + fmt(sr_kdf.mean, 2) + " vs fine-tuning " +
                                                      fmt(sr_ft.mean, 2) + ", margin needs > " + fmt(r_margin, 2));
    o.details["finetune"] = {{"mean_recall_at_1", summary_json(ft_r)}, {"forgetting", summary_json(ft_f)}};
    o.details["kdf"] = {{"mean_recall_at_1", summary_json(kdf_r)}, {"forgetting", summary_json(kdf_f)}};
    o.details["seconds"] = ex.seconds;

    if (with_ablation) {
        // Rows of the ablation: name, variant, fused evaluation.
        const std::vector<std::tuple<std::string, std::string, bool>> rows{{"base", "base", false},
                                                                           {"base+rkd", "base+rkd", false},
                                                                           {"base+dkd", "base+dkd", false},
                                                                           {"base+fusion", "base", true},
                                                                           {"full", "full", true}};
        Json table = Json::object();
        std::map<std::string, double> mean_f, mean_r;
        for (const auto& [name, variant, fused] : rows) {
            const auto f = ex.runs.at(variant).values(fused, true);
            const auto r = ex.runs.at(variant).values(fused, false);
            mean_f[name] = cli::summarize(f).mean;
            mean_r[name] = cli::summarize(r).mean;
            table[name] = {{"mean_recall_at_1", summary_json(r)}, {"forgetting", summary_json(f)}};
        }
        o.details["ablation"] = table;
        bool lowest = true;
        for (const auto& [name, f] : mean_f) {
            if (name != "full" && !(mean_f["full"] < f)) {
                lowest = false;
            }
        }
        const bool beats_base = mean_f["full"] < mean_f["base"] && mean_r["full"] > mean_r["base"];
        o.details["full_has_lowest_forgetting"] = lowest;
        o.details["full_beats_base"] = beats_base;
        if (!lowest && beats_base) {
            o.details["note"] =
                "ablation ordering not strict for intermediate rows; accepted because full beats base on both "
                "metrics";
        }
        o.expect(lowest || beats_base, "full F " + fmt(mean_f["full"], 2) +
                                           " is not the lowest and full does not beat base on both metrics");
    }
    return o;
}

Outcome protocol_invariants(const Experiment& ex) {
    Outcome o;
    // Buffer split fixtures.
    continual::MemoryBuffer buf(256);
    std::vector<std::vector<std::size_t>> counts;
    for (int d = 0; d < 3; ++d) {
        buf = continual::update_buffer(buf, labelled(d, 400), d, 77);
        std::vector<std::size_t> c;
        for (int k = 0; k <= d; ++k) {
            c.push_back(buf.count_for(k));
        }
        counts.push_back(c);
        o.expect(buf.size() <= 256, "buffer size " + std::to_string(buf.size()));
    }
    o.expect(counts[1] == std::vector<std::size_t>{128, 128}, "two-domain split");
    o.expect(counts[2] == std::vector<std::size_t>{86, 85, 85}, "three-domain split");

    // The buffer built from the reference protocol's train splits.
    continual::MemoryBuffer ref(ex.base_config.protocol.buffer_capacity);
    for (std::size_t d = 0; d < ex.domains.size(); ++d) {
        ref = continual::update_buffer(ref, ex.domains[d].split.train, static_cast<int>(d), 1);
        o.expect(ref.size() <= ex.base_config.protocol.buffer_capacity, "reference buffer over capacity");
    }

    std::size_t steps_checked = 0;
    for (const auto& [name, runs] : ex.runs) {
        for (const auto& seed : runs.seeds) {
            for (std::size_t t = 0; t < seed.run.steps.size(); ++t) {
                const auto& step = seed.run.steps[t];
                const auto& plan = seed.run.plans[t];
                const std::string where = name + " seed " + std::to_string(seed.seed) + " step " + std::to_string(t);
                if (t > 0) {
                    o.expect(step.teacher_hash_before && step.teacher_hash_after &&
                                 *step.teacher_hash_before == *step.teacher_hash_after &&
                                 *step.teacher_hash_before == seed.run.snapshots[t - 1].hash(),
                             where + ": teacher hash changed");
                }
                o.expect(static_cast<int>(step.log.size()) == plan.epochs, where + ": epoch count");
                for (std::size_t e = 0; e < step.log.size(); ++e) {
                    const auto& rec = step.log[e];
                    o.expect(rec.lr == plan.lr_at(static_cast<int>(e)), where + ": lr at epoch " + std::to_string(e));
                    const std::size_t expected =
                        e == 0 ? plan.batch_start
                               : continual::maybe_expand_batch(step.log[e - 1].batch_size,
                                                               step.log[e - 1].active_fraction, plan);
                    o.expect(rec.batch_size == expected, where + ": batch size at epoch " + std::to_string(e));
                }
                ++steps_checked;
            }
        }
    }
    o.details = {{"steps_checked", steps_checked}, {"reference_buffer_size", ref.size()}};
    if (o.failures.size() > 5) {
        o.failures.resize(5);
    }
    return o;
}

Outcome fusion_sanity(const Experiment& ex) {
    Outcome o;
    // Identical snapshots on every reference test split.
    const auto snap = ex.runs.at("full").seeds.front().run.snapshots.back();
    const std::vector<nn::ModelSnapshot> one{snap};
    const std::vector<nn::ModelSnapshot> two{snap, snap};
    for (const auto& d : ex.domains) {
        const auto single = eval::build_index(one, d.split.database, false);
        const auto fused = eval::build_index(two, d.split.database, true);
        const double a = eval::recall_at_n(single, d.split.queries, one, d.entry.policy.pos_test, 1).percent;
        const double b = eval::recall_at_n(fused, d.split.queries, two, d.entry.policy.pos_test, 1).percent;
        o.expect(a == b, d.entry.name + ": fused " + fmt(b, 4) + " vs single " + fmt(a, 4));
        o.details["identical_" + d.entry.name] = {{"single", a}, {"fused", b}};
    }
    const auto& full = ex.runs.at("full");
    const double fused = cli::summarize(full.values(true, false)).mean;
    const double single = cli::summarize(full.values(false, false)).mean;
    o.expect(fused >= single - 1.0, "fused mean R@1 " + fmt(fused, 2) + " < new-only " + fmt(single, 2) + " - 1");
    o.details["end_to_end"] = {{"fused_mean_recall_at_1", fused}, {"single_mean_recall_at_1", single}};
    return o;
}

int run_binary(const std::string& args) {
    const std::string cmd = std::string("\"") + KDF_BINARY + "\" " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome determinism(const std::vector<std::filesystem::path>& configs, const std::filesystem::path& work) {
    Outcome o;
    std::filesystem::remove_all(work);
    for (std::size_t i = 0; i < configs.size(); ++i) {
        const auto a = work / (std::to_string(i) + "a");
        const auto b = work / (std::to_string(i) + "b");
        const std::string base = "run --quiet --config \"" + configs[i].string() + "\" --seed 11 --out \"";
        const int ca = run_binary(base + a.string() + "\"");
        const int cb = run_binary(base + b.string() + "\"");
        const std::string name = configs[i].filename().string();
        o.expect(ca == 0 && cb == 0, name + ": run exited " + std::to_string(ca) + "/" + std::to_string(cb));
        const auto ra = read_file(a / "seed_11" / "results.json");
        const auto rb = read_file(b / "seed_11" / "results.json");
        o.expect(!ra.empty() && ra == rb, name + ": results.json differs between invocations");
        o.expect(read_file(a / "seed_11" / "run_log.jsonl") == read_file(b / "seed_11" / "run_log.jsonl"),
                 name + ": run logs differ between invocations");
        o.details[name] = {{"results_bytes", ra.size()}};
    }
    return o;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance suite"};
    std::filesystem::path report_path;
    std::filesystem::path reference = std::filesystem::path(KDF_SOURCE_DIR) / "configs" / "reference.json";
    std::filesystem::path smoke = std::filesystem::path(KDF_SOURCE_DIR) / "configs" / "smoke.json";
    std::filesystem::path work = std::filesystem::temp_directory_path() / "kdf_acceptance";
    app.add_option("--report", report_path, "write a JSON report here");
    app.add_option("--reference", reference, "config of the end-to-end experiment");
    app.add_option("--smoke", smoke, "config used for the determinism check");
    app.add_option("--work", work, "scratch directory");
    CLI11_PARSE(app, argc, argv);

    Json report = Json::object();
    int failed = 0;
    const auto record = [&](const std::string& id, const std::string& key, const std::string& title,
                            const std::function<Outcome()>& fn) {
        const auto start = Clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o.expect(false, std::string("exception: ") + e.what());
        }
        const double elapsed = seconds_since(start);
        std::cout << (o.pass ? "PASS " : "FAIL ") << id << ": " << title << " (" << fmt(elapsed, 1) << " s)";
        for (const auto& f : o.failures) {
            std::cout << "; " << f;
        }
        std::cout << "\n" << std::flush;
        failed += o.pass ? 0 : 1;
        report[key] = {{"title", title}, {"pass", o.pass}, {"seconds", elapsed}, {"failures", o.failures},
                      {"details", o.details}};
    };

    record("1", "1", "gradient suite", gradient_suite);
    record("2", "2", "soft-rank invariants", soft_rank_invariants);
    record("3", "3", "divergence fixtures", divergence_fixtures);
    record("4", "4", "relaxation schedule fixtures", schedule_fixtures);
    record("5", "5", "forgetting fixture", forgetting_fixture);

    std::optional<Experiment> literal;
    std::optional<Experiment> incloud;
    std::string experiment_error;
    try {
        std::cout << "end-to-end experiment, literal schedule\n" << std::flush;
        literal = run_experiment(reference, "literal", kAblation);
        std::cout << "end-to-end experiment, incloud schedule\n" << std::flush;
        incloud = run_experiment(reference, "incloud", {kAblation.front(), kAblation.back()});
    } catch (const std::exception& e) {
        experiment_error = e.what();
    }
    const auto needs = [&](const std::optional<Experiment>& ex, auto fn) {
        return [&, fn]() {
            if (!ex) {
                throw Error("end-to-end experiment failed: " + experiment_error);
            }
            return fn(*ex);
        };
    };

    record("6", "6", "freeze, buffer and protocol invariants",
           needs(literal, [](const Experiment& ex) { return protocol_invariants(ex); }));
    record("7", "7", "end-to-end comparison and ablation (literal schedule)",
           needs(literal, [](const Experiment& ex) { return comparative(ex, true); }));
    record("7", "7-incloud", "end-to-end comparison (incloud schedule)",
           needs(incloud, [](const Experiment& ex) { return comparative(ex, false); }));
    record("8", "8", "fusion sanity", needs(literal, [](const Experiment& ex) { return fusion_sanity(ex); }));
    record("9", "9", "determinism", [&]() { return determinism({smoke, reference}, work); });

    std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << "\n";
    if (!report_path.empty()) {
        std::ofstream(report_path) << report.dump(2) << "\n";
    }
    return failed == 0 ? 0 : 1;
}
