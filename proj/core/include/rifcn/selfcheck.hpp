#pragma once

#include <string>
#include <vector>

namespace rifcn {

struct SuiteResult {
    std::string name;
    double max_err = 0.0;
    double threshold = 0.0;
    bool pass = false;
    std::string detail;
};

/// Runs the numeric property suites against built-in reference
/// implementations (naive convolution loops, finite differences, per-pixel
/// counting). inject_adjoint_fault is a test hook that deliberately
/// channel-transposes one deconvolution kernel so the adjoint suite must fail.
std::vector<SuiteResult> run_selfcheck(bool inject_adjoint_fault = false);

} // namespace rifcn
