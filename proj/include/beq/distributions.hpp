#pragma once

// Scalar distribution kernels: standard normal, Student t and folded normal.
// All functions are pure and thread-safe.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "beq/detail/roots.hpp"
#include "beq/errors.hpp"

namespace beq {

namespace detail {

inline void require_probability(double p, const char* what) {
    if (!(p > 0.0 && p < 1.0))
        throw DomainError(std::string(what) + " must lie in (0, 1), got " + std::to_string(p));
}

// Continued fraction for the regularized incomplete beta (modified Lentz).
inline double beta_continued_fraction(double a, double b, double x) {
    constexpr double tiny = 1e-300;
    constexpr double eps = 1e-16;
    constexpr int max_iter = 100000;
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < eps) break;
    }
    return h;
}

}  // namespace detail

namespace detail {

// lgamma(a + b) - lgamma(a) for a >= b > 0; Stirling differences avoid cancellation at large a.
inline double log_gamma_ratio(double a, double b) {
    if (a < 30.0) return std::lgamma(a + b) - std::lgamma(a);
    auto s = [](double x) {
        const double r = 1.0 / (x * x);
        return (1.0 / 12.0 - r * (1.0 / 360.0 - r * (1.0 / 1260.0 - r / 1680.0))) / x;
    };
    return b * std::log(a) + (a + b - 0.5) * std::log1p(b / a) - b + (s(a + b) - s(a));
}

// I_x(a, b) given x, y = 1 - x and their logarithms, each computed accurately by the caller.
inline double incomplete_beta_split(double a, double b, double x, double y, double log_x, double log_y) {
    if (x == 0.0 || y == 0.0) return x == 0.0 ? 0.0 : 1.0;
    const double big = std::max(a, b), small = std::min(a, b);
    const double log_front = log_gamma_ratio(big, small) - std::lgamma(small) + a * log_x + b * log_y;
    const double front = std::exp(log_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
    return 1.0 - front * beta_continued_fraction(b, a, y) / b;
}

}  // namespace detail

/// Regularized incomplete beta I_x(a, b) for a, b > 0 and x in [0, 1].
inline double incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) throw DomainError("incomplete_beta: shape parameters must be positive");
    if (!(x >= 0.0 && x <= 1.0)) throw DomainError("incomplete_beta: x must lie in [0, 1]");
    if (x == 0.0 || x == 1.0) return x;
    return detail::incomplete_beta_split(a, b, x, 1.0 - x, std::log(x), std::log1p(-x));
}

inline double normal_pdf(double x) {
    return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

/// Standard normal distribution function. Tails saturate to 0 / 1.
inline double normal_cdf(double x) {
    return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

/// Standard normal quantile; throws DomainError unless 0 < p < 1.
inline double normal_quantile(double p) {
    detail::require_probability(p, "normal_quantile: p");
    if (p == 0.5) return 0.0;
    // Antisymmetric evaluation keeps q(p) == -q(1-p) bit-for-bit.
    if (p > 0.5) return -normal_quantile(1.0 - p);
    return detail::solve_increasing([](double x) { return normal_cdf(x); },
                                    [](double x) { return normal_pdf(x); }, p, -40.0, 0.0);
}

/// Student t distribution function with df > 0 degrees of freedom.
inline double student_t_cdf(double x, double df) {
    if (!(df > 0.0)) throw DomainError("student_t_cdf: df must be positive");
    if (x == 0.0) return 0.5;
    const double x2 = x * x;
    const double w = df / (df + x2), y = x2 / (df + x2);
    const double tail = 0.5 * detail::incomplete_beta_split(0.5 * df, 0.5, w, y, -std::log1p(x2 / df), std::log(y));
    return x > 0.0 ? 1.0 - tail : tail;
}

inline double student_t_pdf(double x, double df) {
    const double log_c = detail::log_gamma_ratio(0.5 * df, 0.5) - 0.5 * std::log(df * std::numbers::pi);
    return std::exp(log_c - 0.5 * (df + 1.0) * std::log1p(x * x / df));
}

/// Student t quantile with integer df >= 1.
inline double student_t_quantile(double p, int df) {
    detail::require_probability(p, "student_t_quantile: p");
    if (df < 1) throw DomainError("student_t_quantile: df must be >= 1, got " + std::to_string(df));
    if (p == 0.5) return 0.0;
    if (p > 0.5) return -student_t_quantile(1.0 - p, df);
    const double nu = df;
    // Expand the lower bracket until it contains the root (Cauchy tails are heavy).
    double lo = -1.0;
    while (student_t_cdf(lo, nu) > p) lo *= 2.0;
    return detail::solve_increasing([nu](double x) { return student_t_cdf(x, nu); },
                                    [nu](double x) { return student_t_pdf(x, nu); }, p, lo, 0.0);
}

/// Parameters of the folded normal law of |Z|, Z ~ N(location, scale^2).
class FoldedNormalParams {
public:
    FoldedNormalParams(double location, double scale) : location_(location), scale_(scale) {
        if (!(scale > 0.0) || !std::isfinite(scale))
            throw DomainError("FoldedNormalParams: scale must be positive and finite");
        if (!std::isfinite(location)) throw DomainError("FoldedNormalParams: location must be finite");
    }
    double location() const noexcept { return location_; }
    double scale() const noexcept { return scale_; }

private:
    double location_;
    double scale_;
};

/// P(|Z| <= x) for Z ~ N(loc, scale^2). Symmetric in the sign of loc.
inline double folded_cdf(double x, const FoldedNormalParams& params) {
    if (!(x >= 0.0)) throw DomainError("folded_cdf: x must be >= 0");
    const double m = std::abs(params.location());
    const double s = params.scale();
    return normal_cdf((x - m) / s) - normal_cdf((-x - m) / s);
}

inline double folded_pdf(double x, const FoldedNormalParams& params) {
    const double m = std::abs(params.location());
    const double s = params.scale();
    return (normal_pdf((x - m) / s) + normal_pdf((x + m) / s)) / s;
}

/// alpha-quantile of the folded normal law, solved on [0, |loc| + 10 scale].
inline double folded_quantile(double alpha, const FoldedNormalParams& params) {
    detail::require_probability(alpha, "folded_quantile: alpha");
    double hi = std::abs(params.location()) + 10.0 * params.scale();
    while (folded_cdf(hi, params) < alpha) hi *= 2.0;
    return detail::solve_increasing([&](double u) { return folded_cdf(u, params); },
                                    [&](double u) { return folded_pdf(u, params); }, alpha, 0.0, hi);
}

}  // namespace beq
