#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace erpbpnn::cli {

/// Entry point shared by the erpbpnn binary and the tests. `args` excludes
/// the program name. Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace erpbpnn::cli
