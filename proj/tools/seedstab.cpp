// seedstab: train refit populations of tiny byte-level transformers and
// measure cross-seed attention-head and residual-stream stability.

#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "seedstab/experiment.hpp"

using namespace seedstab;

namespace {

ExperimentConfig load_config(const std::string& config_path,
                             const std::string& out_override, int workers_override) {
    ExperimentConfig cfg = ExperimentConfig::from_file(config_path);
    if (const char* env = std::getenv("SEEDSTAB_OUT")) cfg.out_root = env;
    if (!out_override.empty()) cfg.out_root = out_override;
    if (workers_override > 0) cfg.workers = workers_override;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"seed-stability measurement toolkit for tiny transformers"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_override;
    int workers_override = 0;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "experiment TOML config")->required();
        cmd->add_option("--out", out_override,
                        "output root (overrides config and SEEDSTAB_OUT)");
        cmd->add_option("--workers", workers_override, "parallel refit workers");
    };

    CLI::App* train = app.add_subcommand("train", "train all configured refits");
    add_common(train);

    CLI::App* dump = app.add_subcommand("dump", "dump attention/residual/signature traces");
    add_common(dump);

    CLI::App* analyze = app.add_subcommand("analyze", "run stability analyses");
    add_common(analyze);
    std::vector<std::string> which;
    uint64_t anchor_seed = 0;
    bool anchor_set = false;
    analyze->add_option("--which", which,
                        "subset of analyses (stability, cross_layer, uniqueness, "
                        "cka, ablate, metasne, sweep, norms)")
        ->delimiter(',');
    analyze->add_option("--anchor-seed", anchor_seed, "anchor refit seed")
        ->each([&](const std::string&) { anchor_set = true; });

    CLI::App* report = app.add_subcommand("report", "join analyses into the report");
    add_common(report);

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) {
            const int n = cmd_train(load_config(config_path, out_override, workers_override));
            std::cerr << "trained " << n << " refits\n";
        } else if (dump->parsed()) {
            const int n = cmd_dump(load_config(config_path, out_override, workers_override));
            std::cerr << "dumped " << n << " refits\n";
        } else if (analyze->parsed()) {
            AnalyzeOptions opts;
            opts.which.insert(which.begin(), which.end());
            if (anchor_set) opts.anchor_seed = anchor_seed;
            const int n = cmd_analyze(load_config(config_path, out_override, workers_override), opts);
            std::cerr << "ran " << n << " analyses\n";
        } else if (report->parsed()) {
            cmd_report(load_config(config_path, out_override, workers_override));
            std::cerr << "report written\n";
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
