#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dbmif/tensor.hpp"

namespace dbmif {

struct GradCheckResult {
    std::string name;
    double max_rel_err = 0.0;
    int64_t checked = 0;  // scalar entries compared
    bool pass = false;
};

// Compares one backward pass against central finite differences in 64-bit
// mode.  `f` maps the parameter list to a scalar; it may instead close over
// modules holding the same tensors, in which case the list only tells the
// checker what to perturb.  rel = |a - n| / max(|a| + |n|, 1e-6).
GradCheckResult check_gradients(const std::string& name,
                                const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                std::vector<Tensor> params, double step = 1e-4,
                                double tol = 1e-3);

// The full battery: every primitive op, the assembled fusion/gating/
// equilibrium modules, truncated discriminator stacks with grouping and
// dilation, and the four losses, repeated across `seeds` draws.
std::vector<GradCheckResult> run_gradient_suite(int seeds);

}  // namespace dbmif
