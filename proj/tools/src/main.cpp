#include <CLI11.hpp>

#include "pipelearn_cli/commands.hpp"

int main(int argc, char** argv) {
    using pipelearn::cli::CommandOptions;

    CLI::App app{"pipelearn: pipelined collaborative learning at desk scale"};
    app.require_subcommand(1);

    CommandOptions options;
    const auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", options.config_path, "JSON config file");
        sub->add_option("--out", options.out_dir, "output directory")
            ->capture_default_str();
        sub->add_option("--seed", options.seed, "seed folded into every random draw")
            ->capture_default_str();
        sub->add_option("--preset", options.network_filter,
                        "restrict to one network preset (4g, 4g+, wifi)");
        sub->add_option("--mode", options.mode_filter,
                        "restrict to one mode (pipelearn, pipelearn-seq, sfl, fl)");
        sub->add_flag("--quiet", options.quiet, "suppress the stdout summary");
    };

    CLI::App* efficiency = app.add_subcommand(
        "efficiency", "epoch time and utilisation across presets and modes");
    add_common(efficiency);
    CLI::App* opt_score = app.add_subcommand(
        "opt-score", "score the parameter selector against an exhaustive sweep");
    add_common(opt_score);
    CLI::App* equivalence = app.add_subcommand(
        "equivalence", "compare split-pipeline training with the local-update reference");
    add_common(equivalence);
    CLI::App* trace = app.add_subcommand(
        "trace", "write the event trace and schedule of one simulated epoch");
    add_common(trace);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? pipelearn::cli::kExitOk : pipelearn::cli::kExitBadConfig;
    }

    if (efficiency->parsed()) return pipelearn::cli::cmd_efficiency(options);
    if (opt_score->parsed()) return pipelearn::cli::cmd_optimizer_score(options);
    if (equivalence->parsed()) return pipelearn::cli::cmd_equivalence(options);
    return pipelearn::cli::cmd_trace(options);
}
