/*
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <iosfwd>

namespace vdg::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kDataError = 2,
  kRuntimeError = 3,
};

/// Entry point for the `vdg` tool. Machine-readable output goes to `out`
/// (or to --out files), progress and diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

}  // namespace vdg::cli
