#pragma once

#include <string>
#include <vector>

namespace geoconf {

/// Exit codes: 0 success, 1 runtime or model failure, 2 configuration or
/// schema failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

/// Entry point of the `geoconfound` executable:
///   geoconfound simulate|fit|sweep-k|predict|report --config PATH
///               [--out DIR] [--seed N] [--threads N] [command options]
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);  // args[0] is the program name

/// File-name stem used for per-model artifacts ("null", "spatial_plus2", ...).
std::string model_slug(const std::string& display_name);

}  // namespace geoconf
