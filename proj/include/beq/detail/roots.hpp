#pragma once

#include <cmath>
#include <functional>
#include <limits>

namespace beq::detail {

// Safeguarded Newton iteration for an increasing function on [lo, hi].
// F(lo) <= target <= F(hi) is assumed. Bisection shrinks the bracket until
// Newton steps stay inside it, after which convergence is quadratic.
template <class F, class DF>
double solve_increasing(F&& f, DF&& df, double target, double lo, double hi,
                        int max_iter = 200) {
    double x = 0.5 * (lo + hi);
    for (int i = 0; i < max_iter; ++i) {
        const double r = f(x) - target;
        if (r == 0.0) return x;
        if (r > 0.0)
            hi = x;
        else
            lo = x;
        const double d = df(x);
        double next = x - r / d;
        if (!(d > 0.0) || !(next > lo && next < hi) || !std::isfinite(next)) next = 0.5 * (lo + hi);
        if (std::abs(next - x) <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(x)))
            return next;
        if (hi - lo <= std::numeric_limits<double>::min()) return next;
        x = next;
    }
    return x;
}

// Golden-section minimization of a unimodal function on [lo, hi].
template <class F>
double golden_min(F&& f, double lo, double hi, double tol = 1e-10, int max_iter = 200) {
    constexpr double inv_phi = 0.6180339887498949;
    double c = hi - inv_phi * (hi - lo);
    double d = lo + inv_phi * (hi - lo);
    double fc = f(c), fd = f(d);
    for (int i = 0; i < max_iter && (hi - lo) > tol; ++i) {
        if (fc < fd) {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    return 0.5 * (lo + hi);
}

}  // namespace beq::detail
