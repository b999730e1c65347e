#pragma once

#include <ostream>

namespace medusa {

/// Exit statuses of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitIo = 3,
  kExitIncompatible = 4,
};

/// Runs one invocation of the medusa tool (gen-data, pretrain, train, eval,
/// visualize) and returns its exit status.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace medusa
