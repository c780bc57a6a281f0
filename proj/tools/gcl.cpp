#include <iostream>

#include <CLI11.hpp>

#include "gcl/run.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Concept learning with contrastive and prototype grounding objectives"};
    app.require_subcommand(1, 1);

    gcl::RunOptions options;
    for (auto command : {gcl::Command::train, gcl::Command::eval, gcl::Command::fidelity, gcl::Command::explain,
                         gcl::Command::ablate}) {
        auto* sub = app.add_subcommand(std::string(gcl::to_string(command)));
        sub->add_option("--config", options.config_path, "YAML run config (defaults when omitted)");
        sub->add_option("--set", options.overrides, "override a config value, key.path=value (repeatable)");
        sub->add_option("--out", options.out, "output root directory");
        sub->add_flag("--deterministic", options.deterministic, "force deterministic mode");
        sub->callback([&options, command] { options.command = command; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : gcl::exit_config;
    }

    const auto outcome = gcl::run(options, std::cout);
    if (outcome.exit_code != gcl::exit_ok) std::cerr << "error: " << outcome.error << '\n';
    return outcome.exit_code;
}
