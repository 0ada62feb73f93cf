#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "quotrec/tensor.hpp"

namespace quotrec {

struct GradCheckResult {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = false;
};

// Compares tape gradients of a scalar-valued forward against central finite
// differences over every entry of every listed parameter. The numeric side
// only ever calls the forward (no tape), so it is independent of the
// backward implementation it checks.
GradCheckResult gradcheck(const std::string& name, const std::function<Tensor()>& forward,
                          std::vector<Tensor> params, double step = 1e-5,
                          double tolerance = 1e-4);

// finite-difference suites for every layer and both losses
std::vector<GradCheckResult> run_gradcheck_suites(std::uint64_t seed);

} // namespace quotrec
