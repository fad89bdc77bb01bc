#pragma once

#include <cmath>
#include <vector>

#include "wfdiff/tensor.hpp"

namespace wfdiff {

struct GradCheckOptions {
    double h = 1e-3;    // central-difference step
    double tol = 1e-3;  // maximum accepted relative error
    // Denominator floor for the relative error, so that gradients near zero
    // are judged on absolute error tol * floor instead.
    double floor = 1e-2;
    // Check at most this many elements per tensor (evenly strided); 0 = all.
    std::size_t max_elements = 0;
};

struct GradCheckReport {
    std::vector<double> rel_errors;
    std::vector<double> analytic;
    std::vector<double> numeric;
    double max_rel_error = 0.0;
    bool passed = true;
};

/// Compares reverse-mode gradients of `loss_fn()` with respect to every
/// tensor in `wrt` against central finite differences.
template <class T, class LossFn>
GradCheckReport grad_check(LossFn&& loss_fn, std::vector<Tensor<T>> wrt, const GradCheckOptions& opt = {}) {
    for (auto& t : wrt) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    {
        Tensor<T> loss = loss_fn();
        backward(loss);
    }
    GradCheckReport report;
    for (auto& t : wrt) {
        const std::vector<T> analytic = t.has_grad() ? std::vector<T>(t.grad().begin(), t.grad().end())
                                                     : std::vector<T>(t.numel(), T{0});
        const std::size_t n = t.numel();
        const std::size_t stride =
            (opt.max_elements == 0 || n <= opt.max_elements) ? 1 : (n + opt.max_elements - 1) / opt.max_elements;
        for (std::size_t i = 0; i < n; i += stride) {
            NoGradGuard guard;
            const T orig = t[i];
            t[i] = static_cast<T>(orig + opt.h);
            const double fp = loss_fn().item();
            t[i] = static_cast<T>(orig - opt.h);
            const double fm = loss_fn().item();
            t[i] = orig;
            const double num = (fp - fm) / (2.0 * opt.h);
            const double ana = analytic[i];
            const double denom = std::max({std::abs(ana), std::abs(num), opt.floor});
            const double rel = std::abs(ana - num) / denom;
            report.rel_errors.push_back(rel);
            report.analytic.push_back(ana);
            report.numeric.push_back(num);
            report.max_rel_error = std::max(report.max_rel_error, rel);
        }
    }
    report.passed = report.max_rel_error < opt.tol;
    return report;
}

/// Single-input form: checks d f(x) / dx.
template <class T, class Fn>
GradCheckReport grad_check(Fn&& f, Tensor<T> x, double h, double tol) {
    GradCheckOptions opt;
    opt.h = h;
    opt.tol = tol;
    return grad_check<T>([&] { return f(x); }, std::vector<Tensor<T>>{x}, opt);
}

}  // namespace wfdiff
