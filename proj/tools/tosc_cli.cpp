// tosc: batch runner for the time-optimal control solver and verifiers.
//
//   tosc run --config FILE [--out DIR] [--seed N] [--rtol X] [--atol X] [--hit-tol X]
//   tosc run --example NAME ...
//   tosc list-examples
//   tosc example-config NAME
//
// Exit status: 0 when every check passes, 1 when a check fails, 2 on errors.
// TOSC_WORKERS sets the worker count for multi-start solves and sweeps.

#include "tosc/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

int run_command(const std::string& config, const std::string& example, std::string out, const std::optional<std::int64_t>& seed,
                const std::optional<double>& rtol, const std::optional<double>& atol, const std::optional<double>& hit_tol) {
    using namespace tosc::cli;
    const json doc = !config.empty() ? read_json_file(config) : example_config(example);
    RunConfig c = parse_config(doc);
    if (seed) {
        if (*seed < 0) tosc::fail(tosc::ErrorKind::ConfigError, "cli", "--seed must be >= 0");
        c.seed = static_cast<std::uint64_t>(*seed);
        c.solver.seed = c.seed;
    }
    auto positive = [](const std::optional<double>& v, const char* flag, double& dst) {
        if (!v) return;
        if (!(*v > 0.0)) tosc::fail(tosc::ErrorKind::ConfigError, "cli", std::string(flag) + " must be positive");
        dst = *v;
    };
    positive(rtol, "--rtol", c.solver.integrate.rtol);
    positive(atol, "--atol", c.solver.integrate.atol);
    positive(hit_tol, "--hit-tol", c.solver.integrate.hit_tol);
    if (out.empty()) out = !c.out_dir.empty() ? c.out_dir : "out/" + c.name;

    const auto o = run(c, out);
    for (const auto& ch : o.checks)
        std::cout << (ch.pass ? "PASS " : "FAIL ") << ch.name << " value=" << fmt17(ch.value) << " threshold=" << fmt17(ch.threshold)
                  << '\n';
    std::cout << "wrote " << out << "/result.json\n";
    return o.exit_code();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Time-optimal control solver and verifier"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "Execute a run configuration");
    std::string config, example, out;
    std::optional<std::int64_t> seed;
    std::optional<double> rtol, atol, hit_tol;
    auto* cfg_opt = run->add_option("--config,-c", config, "JSON run configuration")->check(CLI::ExistingFile);
    run->add_option("--example,-e", example, "Built-in default configuration")->excludes(cfg_opt);
    run->add_option("--out,-o", out, "Output directory");
    run->add_option("--seed", seed, "Seed override");
    run->add_option("--rtol", rtol, "Integrator relative tolerance override");
    run->add_option("--atol", atol, "Integrator absolute tolerance override");
    run->add_option("--hit-tol", hit_tol, "Target hit tolerance override");

    auto* list = app.add_subcommand("list-examples", "List built-in systems");
    auto* show = app.add_subcommand("example-config", "Print the default configuration of an example");
    std::string show_name;
    show->add_option("name", show_name, "Example name")->required();

    CLI11_PARSE(app, argc, argv);
    try {
        if (*run) {
            if (config.empty() && example.empty()) {
                std::cerr << "run: one of --config or --example is required\n";
                return 2;
            }
            return run_command(config, example, out, seed, rtol, atol, hit_tol);
        }
        if (*list) {
            for (const auto& e : tosc::cli::list_examples()) std::cout << e.name << "\t" << e.description << '\n';
            return 0;
        }
        if (*show) {
            std::cout << tosc::cli::example_config(show_name).dump(2) << '\n';
            return 0;
        }
    } catch (const tosc::Error& e) {
        std::cerr << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
