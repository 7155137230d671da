#include <mlsteer/mlsteer.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"mlsteer: delayed Mittag-Leffler functions, fractional delay systems and steering"};
    std::string command, config, format = "csv", out_dir = ".";
    std::uint64_t seed = 0;
    int threads = 0;
    app.add_option("command", command, "eval-ml | solve | simulate | isometry | grammian | rank | steer | verify-lemma")
        ->required()
        ->check(CLI::IsMember(mlsteer::command_names()));
    app.add_option("--config", config, "JSON run configuration")->required();
    app.add_option("--out-dir", out_dir, "directory for output files");
    auto* seed_opt = app.add_option("--seed", seed, "overrides monte_carlo.seed");
    auto* threads_opt = app.add_option("--threads", threads, "worker thread cap (default: MLSTEER_THREADS, then all cores)")
                            ->check(CLI::PositiveNumber);
    app.add_option("--format", format, "csv writes tables as CSV files; json embeds them in the report")
        ->check(CLI::IsMember({"csv", "json"}));
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : mlsteer::kExitConfig;
    }

    try {
        const auto cfg = mlsteer::parse_config(config, command);
        mlsteer::RunOptions opt;
        opt.out_dir = out_dir;
        opt.format = format;
        if (*seed_opt) opt.seed = seed;
        if (*threads_opt) opt.threads = threads;
        const auto report = mlsteer::run_command(cfg, command, opt);
        for (const auto& f : report.outputs) std::cout << (std::filesystem::path(out_dir) / f).string() << '\n';
        for (const auto& d : report.diagnostics) std::cerr << "warning: " << d << '\n';
        for (const auto& [phase, sec] : report.timing) std::fprintf(stderr, "timing: %s %.3f s\n", phase.c_str(), sec);
        return mlsteer::kExitOk;
    } catch (const std::exception& e) {
        std::cerr << mlsteer::error_diagnostic(e) << '\n';
        return mlsteer::classify_error(e).first;
    }
}
