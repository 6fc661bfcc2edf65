#pragma once

#include <string>
#include <vector>

namespace xmatch {

inline constexpr const char* kToolVersion = "0.1.0";

/// Exit codes: 0 success, 1 input or data error, 2 usage error.
int run_cli(int argc, char** argv);

/// Same, with argv[0] omitted.
int run_cli(const std::vector<std::string>& args);

}  // namespace xmatch
