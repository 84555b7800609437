#pragma once

#include <string>
#include <vector>

#include "omni/tensor.hpp"

namespace omni {

struct AdamWConfig {
    double lr           = 1e-3;
    double beta1        = 0.9;
    double beta2        = 0.999;
    double eps          = 1e-8;
    double weight_decay = 0.0;   // decoupled
    double clip_norm    = 1.0;   // global grad-norm clip; <= 0 disables
};

struct AdamWState {
    int64_t step = 0;
    std::vector<std::vector<double>> m;  // first moments, one per parameter
    std::vector<std::vector<double>> v;  // second moments
};

// One AdamW update over the parameter list. The global gradient norm is
// clipped to cfg.clip_norm before any moment update. A non-finite gradient
// refuses the whole step (no parameter or state mutation) and throws
// NumericError. Returns the pre-clip global gradient norm.
double adamw_step(std::vector<Tensor> & params, AdamWState & state, const AdamWConfig & cfg);

} // namespace omni
