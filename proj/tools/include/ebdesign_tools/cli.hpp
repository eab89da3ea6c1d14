#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ebdesign::cli {

// Exit codes: 0 success, 1 runtime error, 2 usage error.
constexpr int exit_ok = 0;
constexpr int exit_runtime = 1;
constexpr int exit_usage = 2;

// args excludes the program name.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, const char* const* argv);

// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(const std::string& bytes);

}  // namespace ebdesign::cli
