#pragma once

#include <ostream>

namespace metricgrids::cli {

// Exit codes: 0 ok, 1 check failed, 2 bad config or usage, 3 I/O or file
// format, 4 training diverged.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace metricgrids::cli
