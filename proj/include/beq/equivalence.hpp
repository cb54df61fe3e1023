#pragma once

// Average-bioequivalence decision rules on a scalar log-scale effect:
// the two one-sided tests (t and z variants), the folded-normal optimal
// test, and closed-form power functions for the known-variance regime.

#include <cmath>
#include <limits>
#include <iterator>
#include <string>
#include <string_view>

#include "beq/distributions.hpp"
#include "beq/errors.hpp"

namespace beq {

/// Equivalence margin delta on the log scale (delta = log 1.25 for the 80/125 rule).
class EquivalenceMargin {
public:
    explicit EquivalenceMargin(double delta) : delta_(delta) {
        if (!(delta > 0.0) || !std::isfinite(delta)) throw DomainError("EquivalenceMargin: delta must be > 0");
    }
    static EquivalenceMargin standard() { return EquivalenceMargin(std::log(1.25)); }
    double delta() const noexcept { return delta_; }

private:
    double delta_;
};

/// Group means, sizes and the pooled standard error of the mean difference.
struct TwoSampleSummary {
    double mean_test = 0.0;
    double mean_ref = 0.0;
    int n_test = 0;
    int n_ref = 0;
    double pooled_sd = 0.0;  ///< sigma_P = sqrt((1/N_T + 1/N_R) * s^2)

    double difference() const noexcept { return mean_test - mean_ref; }
    int degrees_of_freedom() const noexcept { return n_test + n_ref - 2; }

    void validate() const {
        if (n_test < 2 || n_ref < 2)
            throw InsufficientDataError("TwoSampleSummary: each group needs at least 2 subjects");
        if (!(pooled_sd >= 0.0) || !std::isfinite(pooled_sd))
            throw DomainError("TwoSampleSummary: pooled_sd must be finite and >= 0");
        if (!std::isfinite(mean_test) || !std::isfinite(mean_ref))
            throw DomainError("TwoSampleSummary: means must be finite");
    }
};

/// Pooled-variance summary from two samples of log endpoints.
template <class Range>
TwoSampleSummary summarize_two_samples(const Range& test, const Range& ref) {
    TwoSampleSummary s;
    s.n_test = static_cast<int>(std::size(test));
    s.n_ref = static_cast<int>(std::size(ref));
    if (s.n_test < 2 || s.n_ref < 2)
        throw InsufficientDataError("two-sample summary: each group needs at least 2 subjects");
    double sum_t = 0.0, sum_r = 0.0;
    for (double x : test) sum_t += x;
    for (double x : ref) sum_r += x;
    s.mean_test = sum_t / s.n_test;
    s.mean_ref = sum_r / s.n_ref;
    double ss = 0.0;
    for (double x : test) ss += (x - s.mean_test) * (x - s.mean_test);
    for (double x : ref) ss += (x - s.mean_ref) * (x - s.mean_ref);
    const double sigma2 = ss / (s.n_test + s.n_ref - 2);
    s.pooled_sd = std::sqrt((1.0 / s.n_test + 1.0 / s.n_ref) * sigma2);
    return s;
}

enum class TestMethod { TostT, TostZ, Bot };

inline std::string_view to_string(TestMethod m) {
    switch (m) {
        case TestMethod::TostT: return "TOST_T";
        case TestMethod::TostZ: return "TOST_Z";
        case TestMethod::Bot: return "BOT";
    }
    return "?";
}

struct Decision {
    bool reject_h0 = false;
    double effect_estimate = 0.0;
    double standard_error = 0.0;
    double critical_value = 0.0;  ///< t / z quantile for TOST, u_alpha for BOT
    TestMethod method = TestMethod::Bot;
    double alpha = 0.05;
    double margin = 0.0;
    int degrees_of_freedom = 0;  ///< TOST_T only
    int n_excluded = 0;          ///< subjects dropped upstream (incomplete crossover data)
};

namespace detail {

inline void require_tost_alpha(double alpha) {
    if (!(alpha > 0.0 && alpha < 0.5))
        throw DomainError("TOST: alpha must lie in (0, 0.5), got " + std::to_string(alpha));
}

inline void require_se(double se) {
    if (!(se >= 0.0) || !std::isfinite(se)) throw DomainError("standard error must be finite and >= 0");
}

// Both one-sided conditions with weak inequalities; se == 0 is the noiseless limit.
inline bool tost_rule(double effect, double se, double delta, double critical) {
    if (se == 0.0) return std::abs(effect) < delta;
    return (effect + delta) / se >= critical && (effect - delta) / se <= -critical;
}

}  // namespace detail

/// TOST with Student-t critical value, df = N_T + N_R - 2.
inline Decision tost_t(const TwoSampleSummary& summary, const EquivalenceMargin& margin, double alpha) {
    summary.validate();
    detail::require_tost_alpha(alpha);
    Decision d;
    d.method = TestMethod::TostT;
    d.alpha = alpha;
    d.margin = margin.delta();
    d.effect_estimate = summary.difference();
    d.standard_error = summary.pooled_sd;
    d.degrees_of_freedom = summary.degrees_of_freedom();
    d.critical_value = student_t_quantile(1.0 - alpha, d.degrees_of_freedom);
    d.reject_h0 = detail::tost_rule(d.effect_estimate, d.standard_error, d.margin, d.critical_value);
    return d;
}

/// TOST with standard-normal critical value (model-based / known variance).
inline Decision tost_z(double effect, double se, const EquivalenceMargin& margin, double alpha) {
    detail::require_se(se);
    detail::require_tost_alpha(alpha);
    Decision d;
    d.method = TestMethod::TostZ;
    d.alpha = alpha;
    d.margin = margin.delta();
    d.effect_estimate = effect;
    d.standard_error = se;
    d.critical_value = normal_quantile(1.0 - alpha);
    d.reject_h0 = detail::tost_rule(effect, se, d.margin, d.critical_value);
    return d;
}

/// Folded-normal optimal test: reject iff |effect| < u_alpha, the alpha-quantile of N_F(delta, se^2).
inline Decision bot(double effect, double se, const EquivalenceMargin& margin, double alpha) {
    detail::require_se(se);
    detail::require_probability(alpha, "BOT: alpha");
    Decision d;
    d.method = TestMethod::Bot;
    d.alpha = alpha;
    d.margin = margin.delta();
    d.effect_estimate = effect;
    d.standard_error = se;
    if (se == 0.0) {
        d.critical_value = margin.delta();
    } else {
        d.critical_value = folded_quantile(alpha, FoldedNormalParams(margin.delta(), se));
    }
    d.reject_h0 = std::abs(effect) < d.critical_value;
    return d;
}

/// Same decision as bot() via the p-value form: P(|Z| <= |effect|; delta, se) < alpha.
inline bool bot_rejects_by_cdf(double effect, double se, const EquivalenceMargin& margin, double alpha) {
    detail::require_se(se);
    if (se == 0.0) return std::abs(effect) < margin.delta();
    return folded_cdf(std::abs(effect), FoldedNormalParams(margin.delta(), se)) < alpha;
}

/// Rejection probability of tost_z when the estimate is N(d, sigma_p^2).
/// The rejection region is |X| <= delta - z sigma_p; it is empty (power 0) once z sigma_p >= delta.
inline double tost_power(double d, double sigma_p, const EquivalenceMargin& margin, double alpha) {
    if (!(sigma_p > 0.0)) throw DomainError("tost_power: sigma_p must be > 0");
    detail::require_tost_alpha(alpha);
    const double z = normal_quantile(1.0 - alpha);
    const double half_width = margin.delta() - z * sigma_p;
    // Below the rounding resolution of delta the rejection region is empty.
    if (half_width <= 8.0 * std::numeric_limits<double>::epsilon() * margin.delta()) return 0.0;
    const double p = normal_cdf((half_width - d) / sigma_p) - normal_cdf((-half_width - d) / sigma_p);
    return p > 0.0 ? p : 0.0;
}

/// Rejection probability of bot when the estimate is N(d, sigma_p^2).
inline double bot_power(double d, double sigma_p, const EquivalenceMargin& margin, double alpha) {
    if (!(sigma_p > 0.0)) throw DomainError("bot_power: sigma_p must be > 0");
    const double u = folded_quantile(alpha, FoldedNormalParams(margin.delta(), sigma_p));
    return folded_cdf(u, FoldedNormalParams(d, sigma_p));
}

}  // namespace beq
