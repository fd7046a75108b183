#pragma once

namespace mixquant {

// Full command-line entry point; returns the process exit code
// (0 ok, 1 usage error, 2 data error, 3 internal error).
int run_cli(int argc, const char* const* argv);

} // namespace mixquant
