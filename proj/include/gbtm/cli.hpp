#ifndef GBTM_CLI_HPP
#define GBTM_CLI_HPP

#include <ostream>
#include <string>
#include <vector>

namespace gbtm::cli {

inline constexpr const char* kVersion = "0.1.0";

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 1;
inline constexpr int kExitNotConverged = 2;

/// Runs one command; `args` excludes the program name. Outputs and a
/// manifest.json land in --out (default "."). Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gbtm::cli

#endif  // GBTM_CLI_HPP
