#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace relscale {

/// Runs one `relscale` invocation. `args` excludes the program name.
/// Returns 0 on success, 1 when the inputs fail validation, a fit cannot be
/// made or a file cannot be read or written, and 2 on a usage error.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace relscale
