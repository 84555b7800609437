#include "omni/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "omni/rng.hpp"

namespace omni {

GradCheckReport finite_difference_check(const std::function<Tensor()> & f,
                                        const std::vector<std::pair<std::string, Tensor>> & params,
                                        const GradCheckOptions & opt) {
    if (opt.epsilon < 1e-6 || opt.epsilon > 1e-4) {
        throw UsageError("finite_difference_check: epsilon must be in [1e-6, 1e-4]");
    }
    for (const auto & [name, p] : params) {
        if (p.dtype() != Dtype::f64) {
            throw NumericError("finite_difference_check: parameter '" + name +
                               "' is not f64; 64-bit precision must be active");
        }
        if (!p.requires_grad()) {
            throw UsageError("finite_difference_check: parameter '" + name + "' does not require grad");
        }
    }

    auto eval = [&]() -> double {
        NoGradGuard ng;
        return f().item();
    };

    // Two forward passes must agree bit-for-bit or the central differences
    // are meaningless.
    double base1 = eval();
    double base2 = eval();
    if (base1 != base2) {
        throw NumericError("finite_difference_check: f is non-deterministic (two forward passes disagree)");
    }

    // Analytic gradients. A loss that never touches a parameter (constant f)
    // legitimately has all-zero gradients.
    std::vector<std::vector<double>> analytic;
    {
        for (const auto & [name, p] : params) const_cast<Tensor &>(p).zero_grad();
        Tape tape;
        Tensor loss = f();
        if (loss.requires_grad()) tape.backward(loss);
        for (const auto & [name, p] : params) {
            analytic.push_back(const_cast<Tensor &>(p).grad());
        }
    }

    GradCheckReport report;
    Rng rng(opt.seed);
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor p = params[pi].second;
        int64_t n = p.numel();
        std::vector<int64_t> coords;
        if (n <= opt.max_coords_per_param) {
            for (int64_t i = 0; i < n; ++i) coords.push_back(i);
        } else {
            for (int64_t i = 0; i < opt.max_coords_per_param; ++i) {
                coords.push_back(static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(n))));
            }
        }
        for (int64_t c : coords) {
            double orig = p.data()[static_cast<size_t>(c)];
            auto central = [&](double eps) {
                p.data()[static_cast<size_t>(c)] = orig + eps;
                double up = eval();
                p.data()[static_cast<size_t>(c)] = orig - eps;
                double down = eval();
                p.data()[static_cast<size_t>(c)] = orig;
                return (up - down) / (2.0 * eps);
            };
            // Richardson-extrapolated central difference: cancels the eps^2
            // truncation term, which otherwise dominates at coordinates with
            // strong curvature relative to their gradient magnitude.
            double n1 = central(opt.epsilon);
            double n2 = central(opt.epsilon * 0.5);
            double numeric = (4.0 * n2 - n1) / 3.0;
            double a = analytic[pi][static_cast<size_t>(c)];
            double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-12});
            double rel = std::fabs(a - numeric) / denom;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param = params[pi].first;
                report.worst_coord = c;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    return report;
}

} // namespace omni
