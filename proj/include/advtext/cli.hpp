#pragma once

#include <span>
#include <string>

#include "advtext/config.hpp"

namespace advtext::cli {

/// Parses `args` (without the program name): defaults, then the --config
/// file, then flags. Throws config::UsageError.
config::RunConfig parse_and_validate(std::span<const std::string> args);

/// Runs a validated config; returns the process exit status.
int execute(const config::RunConfig& config);

/// Full entry point: parse, report usage errors, execute.
int run(int argc, const char* const* argv);

}  // namespace advtext::cli
