#pragma once

#include <iosfwd>

namespace heliofit::service {

/// Process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitValidation = 2,  ///< bad arguments, invalid values, or a fit rejected by the zenith cutoff
  kExitIo = 3,          ///< unreadable or unwritable files
  kExitInternal = 4,
};

/// Entry point of the `heliofit` tool. Subcommands: render, fit, transport,
/// relight, metrics, classify, evaluate, serve.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace heliofit::service
