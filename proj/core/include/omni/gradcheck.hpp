#pragma once

#include <functional>
#include <string>
#include <vector>

#include "omni/tensor.hpp"

namespace omni {

struct GradCheckOptions {
    double   epsilon = 1e-5;        // central-difference step, must be in [1e-6, 1e-4]
    int64_t  max_coords_per_param = 16;  // sampled coordinates (all if fewer)
    uint64_t seed = 0;              // coordinate sampling seed
};

struct GradCheckReport {
    double      max_rel_err = 0.0;
    std::string worst_param;        // name of the parameter holding the worst coordinate
    int64_t     worst_coord = -1;
    double      worst_analytic = 0.0;
    double      worst_numeric = 0.0;
};

// Compares analytic reverse-mode gradients of f() against central finite
// differences on the given parameters. f must be a deterministic scalar
// function that rebuilds its graph on every call. Requires 64-bit params;
// rel err = |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).
GradCheckReport finite_difference_check(const std::function<Tensor()> & f,
                                        const std::vector<std::pair<std::string, Tensor>> & params,
                                        const GradCheckOptions & opt = {});

// Whole-model gradient suite: the joint loss of a one-example batch that
// touches every parameterized module (thinker blocks, both projectors,
// talker blocks, low-rank adapters, fusion scales, spk_proj), checked at
// 64-bit precision against central differences for every named parameter.
struct GradSuiteResult {
    GradCheckReport report;
    int64_t params_checked = 0;
    double seconds = 0.0;
};
GradSuiteResult run_model_gradient_suite(uint64_t seed, int64_t coords_per_param = 8,
                                         double epsilon = 1e-4);

} // namespace omni
