#include "cxvae/optimize.hpp"

#include <ceres/ceres.h>

#include <cmath>

namespace cxvae::opt {

namespace {

class CeresAdapter final : public ceres::FirstOrderFunction {
public:
    CeresAdapter(const Objective& f, int n) : f_(f), n_(n), x_(n), g_(n) {}

    bool Evaluate(const double* parameters, double* cost, double* gradient) const override {
        x_.assign(parameters, parameters + n_);
        double value = 0.0;
        if (!f_(x_, value, g_) || !std::isfinite(value)) return false;
        *cost = value;
        if (gradient != nullptr) {
            for (int i = 0; i < n_; ++i) {
                if (!std::isfinite(g_[i])) return false;
                gradient[i] = g_[i];
            }
        }
        return true;
    }

    int NumParameters() const override { return n_; }

private:
    const Objective& f_;
    int n_;
    mutable std::vector<double> x_;
    mutable std::vector<double> g_;
};

}  // namespace

MinimizeResult minimize_bfgs(const Objective& f, std::vector<double> x0,
                             const MinimizeOptions& options) {
    const int n = static_cast<int>(x0.size());
    ceres::GradientProblem problem(new CeresAdapter(f, n));
    ceres::GradientProblemSolver::Options opts;
    opts.line_search_direction_type = ceres::BFGS;
    opts.max_num_iterations = options.max_iterations;
    opts.gradient_tolerance = options.gradient_tolerance;
    opts.function_tolerance = options.function_tolerance;
    opts.logging_type = ceres::SILENT;
    opts.minimizer_progress_to_stdout = false;

    ceres::GradientProblemSolver::Summary summary;
    ceres::Solve(opts, problem, x0.data(), &summary);

    MinimizeResult r;
    r.x = std::move(x0);
    r.value = summary.final_cost;
    r.converged = summary.termination_type == ceres::CONVERGENCE;
    r.iterations = static_cast<int>(summary.iterations.size());
    r.message = summary.message;
    return r;
}

}  // namespace cxvae::opt
