#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fracvar/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Fractional quasilinear variational solver"};
    app.require_subcommand(1, 1);
    std::string config;
    std::string out;
    int threads = 0;
    for (const char* name : {"verify", "eig", "solve", "mpass", "sweep", "appendix"}) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", config, "JSON run configuration")->required();
        sub->add_option("--out", out, "output directory (overrides output.directory)");
        sub->add_option("--threads", threads, "worker threads (falls back to FRACVAR_THREADS)");
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : fracvar::exit_config_error;
    }
    const std::string command = app.get_subcommands().front()->get_name();
    const auto* sub = app.get_subcommands().front();
    std::optional<std::string> out_dir;
    if (sub->count("--out")) out_dir = out;
    std::optional<int> thread_flag;
    if (sub->count("--threads")) thread_flag = threads;
    return fracvar::run_cli(command, config, out_dir, thread_flag, std::cout, std::cerr);
}
