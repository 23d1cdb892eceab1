// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>

namespace pvqc::cli {

enum ExitCode : int { kSuccess = 0, kUsage = 1, kDataError = 2, kMismatch = 3 };

/// Entry point of the pvqc tool; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace pvqc::cli
