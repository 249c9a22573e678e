#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dssl::cli {

// Exit codes of run().
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // the command ran but failed (I/O, contract, gradcheck mismatch)
inline constexpr int kExitUsage = 2;    // bad arguments or configuration

// args excludes the program name. Progress and errors go to `err`; `out` only receives help text.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace dssl::cli
