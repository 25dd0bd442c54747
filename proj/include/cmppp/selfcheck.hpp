#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cmppp {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct SelfCheckOptions {
    std::uint64_t seed = 0;
    int threads = 1;
    /// Scales the Monte-Carlo sample sizes (1 = defaults).
    double effort = 1.0;
};

/// Monte-Carlo oracle and gradient-check suites behind `cmppp check`.
std::vector<CheckResult> run_selfcheck(const SelfCheckOptions& options = {});

}  // namespace cmppp
