#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace beq::detail {

struct NelderMeadResult {
    std::vector<double> x;
    double value = 0.0;
    int evaluations = 0;
};

// Adaptive Nelder-Mead (Gao & Han coefficients). Non-finite objective
// values are treated as +inf so the simplex walks away from them.
template <class F>
NelderMeadResult nelder_mead(F&& f, std::vector<double> x0, double step = 0.1, double ftol = 1e-12,
                             int max_evals = 0) {
    const int n = static_cast<int>(x0.size());
    if (max_evals <= 0) max_evals = 400 * (n + 1);
    const double alpha = 1.0;
    const double beta = 1.0 + 2.0 / n;
    const double gamma = 0.75 - 1.0 / (2.0 * n);
    const double delta = 1.0 - 1.0 / n;

    int evals = 0;
    auto eval = [&](const std::vector<double>& x) {
        ++evals;
        const double v = f(x);
        return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
    };

    std::vector<std::vector<double>> pts(n + 1, x0);
    for (int i = 0; i < n; ++i) pts[i + 1][i] += step;
    std::vector<double> vals(n + 1);
    for (int i = 0; i <= n; ++i) vals[i] = eval(pts[i]);

    std::vector<int> order(n + 1);
    std::vector<double> centroid(n), xr(n), xe(n), xc(n);
    while (evals < max_evals) {
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) { return vals[a] < vals[b]; });
        const int best = order.front(), worst = order.back(), second = order[n - 1];
        if (std::abs(vals[worst] - vals[best]) <= ftol * (std::abs(vals[best]) + 1e-12)) break;

        std::fill(centroid.begin(), centroid.end(), 0.0);
        for (int i = 0; i < n; ++i)
            for (int d = 0; d < n; ++d) centroid[d] += pts[order[i]][d] / n;

        for (int d = 0; d < n; ++d) xr[d] = centroid[d] + alpha * (centroid[d] - pts[worst][d]);
        const double fr = eval(xr);
        if (fr < vals[best]) {
            for (int d = 0; d < n; ++d) xe[d] = centroid[d] + beta * (xr[d] - centroid[d]);
            const double fe = eval(xe);
            if (fe < fr) {
                pts[worst] = xe;
                vals[worst] = fe;
            } else {
                pts[worst] = xr;
                vals[worst] = fr;
            }
            continue;
        }
        if (fr < vals[second]) {
            pts[worst] = xr;
            vals[worst] = fr;
            continue;
        }
        const bool outside = fr < vals[worst];
        for (int d = 0; d < n; ++d)
            xc[d] = outside ? centroid[d] + gamma * (xr[d] - centroid[d])
                            : centroid[d] - gamma * (centroid[d] - pts[worst][d]);
        const double fc = eval(xc);
        if (fc < std::min(fr, vals[worst])) {
            pts[worst] = xc;
            vals[worst] = fc;
            continue;
        }
        for (int i = 1; i <= n; ++i) {
            auto& p = pts[order[i]];
            for (int d = 0; d < n; ++d) p[d] = pts[best][d] + delta * (p[d] - pts[best][d]);
            vals[order[i]] = eval(p);
        }
    }
    const auto it = std::min_element(vals.begin(), vals.end());
    return {pts[static_cast<std::size_t>(it - vals.begin())], *it, evals};
}

}  // namespace beq::detail
