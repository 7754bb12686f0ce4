#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "frachom/runner.hpp"

namespace {

const char* outcome(frachom::runner::ExitCode code)
{
    switch (code) {
    case frachom::runner::ExitCode::pass: return "pass";
    case frachom::runner::ExitCode::verdict_failed: return "verdict failed";
    case frachom::runner::ExitCode::schema_error: return "schema error";
    case frachom::runner::ExitCode::solver_failure: return "solver failure";
    }
    return "unknown";
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Fractional homogenization experiments driven by JSON configs.\n"
                 "Exit codes: 0 pass, 1 verdict failed, 2 schema error, 3 solver failure."};
    app.require_subcommand(1);

    std::string config;
    std::string out = "frachom_out";
    std::optional<std::uint64_t> seed;

    const std::vector<std::pair<std::string, std::string>> commands{
        {"solve", "single nonlocal Dirichlet solve"},
        {"sweep", "periodic homogenization sweep over eps"},
        {"perforated", "perforated-domain sweep, local comparison and corrector checks"},
        {"extension", "extension solve and Dirichlet-to-Neumann comparison"},
        {"classify", "strange-term criticality of hole radius rules"},
        {"validate", "check a config against the schema without solving"},
    };
    for (const auto& [name, help] : commands) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", config, "JSON config file")->required();
        sub->add_option("--out", out, "output directory")->capture_default_str();
        sub->add_option("--seed", seed, "seed for random probe vectors (overrides the config)");
    }

    try {
        app.parse(argc, argv);
    }
    catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    }
    catch (const CLI::ParseError& e) {
        app.exit(e);
        return static_cast<int>(frachom::runner::ExitCode::schema_error);
    }

    const std::string command = app.get_subcommands().front()->get_name();
    const auto inv = frachom::runner::invoke(command, config, out, seed);
    if (!inv.message.empty()) std::cerr << "frachom " << command << ": " << inv.message << "\n";
    for (const auto& p : inv.written) std::cout << p.string() << "\n";
    std::cout << command << ": " << outcome(inv.code) << "\n";
    return static_cast<int>(inv.code);
}
