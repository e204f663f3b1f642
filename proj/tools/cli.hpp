// Copyright (C) 2026 avloc authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <iosfwd>

namespace avloc::cli {

enum ExitCode : int {
    kOk = 0,
    kUsage = 2,
    kConfig = 3,
    kInput = 4,
    kRuntime = 5,
    kSelftestFailed = 6,
};

/// Runs one subcommand (generate, train, predict, eval, selftest) and returns its exit code.
/// Progress goes to `out`, diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace avloc::cli
