#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace deco::cli {

/// Runs the command line `args` (without the program name). Returns 0 on
/// success, 1 on usage errors and 2 on runtime failures.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Keeps freed activation buffers in the heap instead of returning them to the OS on every step.
void tune_allocator();

}  // namespace deco::cli
