#pragma once

namespace nvsd {

// Full command-line entry point. Returns 0 on success, 1 on runtime
// failure, 2 on usage errors.
int cli_main(int argc, const char* const* argv);

}  // namespace nvsd
