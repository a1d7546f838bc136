#pragma once

#include <iosfwd>

namespace mfals::cli {

enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 1,
    kExitData = 2,
    kExitNumerical = 3,
};

// Entry point behind the `mfals` executable. Subcommands: synth, train, eval,
// bench, rerun. Never throws; errors map to ExitCode values.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mfals::cli
