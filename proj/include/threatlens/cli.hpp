#pragma once

#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace threatlens {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

// `args` excludes the program name. Diagnostics and progress go to `err`.
int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out,
            std::ostream& err);

}  // namespace threatlens
