#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fbwc {

// Command-line front end. `args` excludes the program name. Returns the
// process exit code: 0 success, 1 usage/config error, 2 runtime failure
// (I/O, non-finite loss, failed check). All diagnostics go to stderr;
// results go to stdout and the files named by the flags.
int run_cli(const std::vector<std::string>& args);

// One entry of the per-op finite-difference battery behind `gradcheck`.
struct OpCheckResult {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = false;
};

// Runs the whole battery (every differentiable op plus the mined and
// keep-all loss paths) with test tensors drawn from `seed`. Silent; callers
// format the results.
std::vector<OpCheckResult> gradcheck_all_ops(std::uint64_t seed);

}  // namespace fbwc
