#pragma once

// Command pipeline behind the gcl executable. Every command writes into a
// fresh run directory <root>/<command>-<timestamp>; the root is taken from
// --out, then $GCL_OUTPUT_ROOT, then output.root in the config.

#include <exception>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "gcl/config.hpp"

namespace gcl {

enum class Command { train, eval, fidelity, explain, ablate };

std::string_view to_string(Command c) noexcept;
Command parse_command(std::string_view name);

enum ExitCode : int {
    exit_ok = 0,
    exit_other = 1,
    exit_config = 2,
    exit_data = 3,
    exit_divergence = 4,
    exit_io = 5,
};

int exit_code_for(const std::exception& e) noexcept;

struct RunOptions {
    Command command = Command::train;
    std::string config_path; // empty: built-in defaults
    std::vector<std::string> overrides;
    std::string out;         // empty: environment, then config
    bool deterministic = false;
};

// Resolves the config exactly as run() would (overrides, flags, output root).
RunConfig resolve_config(const RunOptions& options);

struct RunOutcome {
    int exit_code = exit_ok;
    std::optional<std::filesystem::path> run_dir;
    std::string error;
};

// Never throws; failures become a categorized exit code. Progress goes to
// `log`.
RunOutcome run(const RunOptions& options, std::ostream& log);

} // namespace gcl
