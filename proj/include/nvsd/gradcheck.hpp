#pragma once

#include <functional>
#include <vector>

#include "nvsd/tensor.hpp"

namespace nvsd {

// Compares reverse-mode gradients against central finite differences.
//
// f must rebuild its graph from the current contents of `point` on every
// call and return a scalar loss. Returns the max per-coordinate error
// |fd - an| / max(|fd|, |an|, 1), i.e. relative above unit gradient scale
// and absolute below it: the fp32 loss is quantized to one ULP of its
// magnitude, so finite differences cannot resolve gradients much smaller
// than ulp(loss)/step. Keep losses O(1) (mean-reduced) for tight checks.
// Throws on step == 0; a non-finite loss anywhere near the point is
// reported as error = infinity.
float finite_diff_check(const std::function<Tensor()>& f,
                        const std::vector<Tensor>& point, float step);

}  // namespace nvsd
