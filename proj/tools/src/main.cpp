#include "kdf/cli/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    using namespace kdf::cli;
    CLI::App app{"Continual place-recognition training with ranking and distribution distillation"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);

    RunOptions run;
    std::vector<std::uint64_t> seeds;
    std::string out_dir;
    std::string lambda_variant;
    std::string divergence;
    std::string fusion;
    auto* run_cmd = app.add_subcommand("run", "train and evaluate the configured protocol");
    run_cmd->add_option("--config", run.config, "experiment config (JSON)")->required();
    run_cmd->add_option("--seed", seeds, "seed(s) replacing the config's list");
    run_cmd->add_option("--out", out_dir, "output directory replacing the config's");
    run_cmd->add_option("--toggle", run.overrides.toggles, "name=on|off for pr, rkd, dkd, buffer, fusion")
        ->expected(1, -1);
    run_cmd->add_option("--lambda-variant", lambda_variant, "literal|incloud");
    run_cmd->add_option("--divergence", divergence, "skl|kl|js");
    run_cmd->add_option("--fusion", fusion, "on|off");
    run_cmd->add_flag("--quiet", run.quiet, "only print per-seed summaries");

    EvalOptions ev;
    std::string eval_fusion = "off";
    auto* eval_cmd = app.add_subcommand("eval", "evaluate snapshots on a corpus");
    eval_cmd->add_option("--snapshot", ev.snapshots, "snapshot file (repeat for fusion)")->required();
    eval_cmd->add_option("--corpus", ev.corpus, "directory with database/ and queries/")->required();
    eval_cmd->add_option("--fusion", eval_fusion, "on|off");
    eval_cmd->add_option("--config", ev.config, "config whose digest the snapshots must carry");
    eval_cmd->add_option("--pos-test", ev.pos_test, "positive radius in metres");
    eval_cmd->add_option("--n", ev.recall_n, "Recall@N cut-offs");
    eval_cmd->add_option("--out", ev.out, "write the report as JSON");

    GradcheckOptions gc;
    auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check of every analytic gradient");
    gc_cmd->add_option("--seed", gc.seed);
    gc_cmd->add_option("--batch", gc.batch);
    gc_cmd->add_option("--dim", gc.dim);
    gc_cmd->add_option("--points", gc.points);
    gc_cmd->add_option("--hidden", gc.hidden);
    gc_cmd->add_option("--epsilon", gc.epsilon);
    gc_cmd->add_option("--tolerance", gc.tolerance);
    gc_cmd->add_option("--corrupt", gc.corrupt, "perturb one component's analytic gradient");

    GenDataOptions gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "write the configured synthetic domains as corpora");
    gen_cmd->add_option("--config", gen.config)->required();
    gen_cmd->add_option("--out", gen.out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    if (*run_cmd) {
        run.overrides.seeds = seeds;
        if (!out_dir.empty()) {
            run.overrides.output_dir = out_dir;
        }
        if (!lambda_variant.empty()) {
            run.overrides.lambda_variant = lambda_variant;
        }
        if (!divergence.empty()) {
            run.overrides.divergence = divergence;
        }
        if (!fusion.empty()) {
            run.overrides.fusion = fusion;
        }
        return cmd_run(run, std::cout, std::cerr);
    }
    if (*eval_cmd) {
        if (eval_fusion != "on" && eval_fusion != "off") {
            std::cerr << "usage error: --fusion must be on|off\n";
            return kExitUsage;
        }
        ev.fusion = eval_fusion == "on";
        return cmd_eval(ev, std::cout, std::cerr);
    }
    if (*gc_cmd) {
        return cmd_gradcheck(gc, std::cout, std::cerr);
    }
    return cmd_gen_data(gen, std::cout, std::cerr);
}
