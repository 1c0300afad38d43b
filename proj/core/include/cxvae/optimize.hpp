#pragma once

#include <functional>
#include <string>
#include <vector>

namespace cxvae::opt {

/// Objective for minimization: returns false when `x` is infeasible, otherwise sets
/// `value` and fills `grad` (same length as x).
using Objective = std::function<bool(const std::vector<double>& x, double& value,
                                     std::vector<double>& grad)>;

struct MinimizeResult {
    std::vector<double> x;
    double value = 0.0;
    bool converged = false;
    int iterations = 0;
    std::string message;
};

struct MinimizeOptions {
    int max_iterations = 500;
    double gradient_tolerance = 1e-10;
    double function_tolerance = 1e-12;
};

/// Quasi-Newton (BFGS, line search) minimization.
MinimizeResult minimize_bfgs(const Objective& f, std::vector<double> x0,
                             const MinimizeOptions& options = {});

}  // namespace cxvae::opt
