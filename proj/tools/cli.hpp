#pragma once
#include <iosfwd>
#include <string>
#include <vector>

namespace calsurv::cli {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

constexpr const char* kSchemaVersion = "1.0";
constexpr const char* kArtifactVersion = "0.1.0";

/**
 * Runs one command line (without the program name). JSON or table output goes to `out`
 * unless --out names a file; diagnostics go to `err`. Returns the process exit code.
 */
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Hex SHA-256 of a file's bytes.
std::string file_digest(const std::string& path);

} // namespace calsurv::cli
