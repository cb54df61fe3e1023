#include <catch_amalgamated.hpp>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "beq/equivalence.hpp"

using namespace beq;
using Catch::Matchers::WithinAbs;

namespace {

const EquivalenceMargin kMargin = EquivalenceMargin::standard();
const double kDelta = std::log(1.25);

TwoSampleSummary summary(double diff, double sd, int n_t = 20, int n_r = 20) {
    TwoSampleSummary s;
    s.mean_test = diff;
    s.mean_ref = 0.0;
    s.n_test = n_t;
    s.n_ref = n_r;
    s.pooled_sd = sd;
    return s;
}

double mc_rate(double d, double sigma, int reps, std::uint64_t seed, bool use_bot, double alpha = 0.05) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> dist(d, sigma);
    // The critical values do not depend on the draw, so precompute the rule once.
    const double z = boost::math::quantile(boost::math::normal(), 1 - alpha);
    const double u = bot(0.0, sigma, kMargin, alpha).critical_value;
    int hits = 0;
    for (int i = 0; i < reps; ++i) {
        const double x = dist(gen);
        hits += use_bot ? std::abs(x) < u : ((x + kDelta) / sigma >= z && (x - kDelta) / sigma <= -z);
    }
    return static_cast<double>(hits) / reps;
}

}  // namespace

TEST_CASE("EquivalenceMargin") {
    CHECK(kMargin.delta() == std::log(1.25));
    CHECK_THROWS_AS(EquivalenceMargin(0.0), DomainError);
    CHECK_THROWS_AS(EquivalenceMargin(-1.0), DomainError);
}

TEST_CASE("summarize_two_samples pools the variance") {
    const std::vector<double> t{1.0, 2.0, 3.0, 4.0}, r{2.0, 2.5, 3.5};
    const TwoSampleSummary s = summarize_two_samples(t, r);
    const double ss = (2.25 + 0.25 + 0.25 + 2.25) + (4.0 / 9 + 1.0 / 36 + 25.0 / 36);
    const double s2 = ss / (4 + 3 - 2);
    CHECK_THAT(s.mean_test, WithinAbs(2.5, 1e-15));
    CHECK_THAT(s.mean_ref, WithinAbs(8.0 / 3.0, 1e-15));
    CHECK_THAT(s.pooled_sd, WithinAbs(std::sqrt((1.0 / 4 + 1.0 / 3) * s2), 1e-15));
    CHECK(s.degrees_of_freedom() == 5);
    CHECK_THROWS_AS(summarize_two_samples(std::vector<double>{1.0}, r), InsufficientDataError);
}

TEST_CASE("tost_t decisions") {
    const Decision d = tost_t(summary(0.0, 0.01), kMargin, 0.05);
    CHECK(d.reject_h0);
    CHECK(d.degrees_of_freedom == 38);
    CHECK_THAT(d.critical_value, WithinAbs(boost::math::quantile(boost::math::students_t(38), 0.95), 1e-12));
    CHECK_THAT((0.0 + kDelta) / 0.01, WithinAbs(22.314, 1e-3));

    for (double sd : {1e-4, 0.01, 0.1, 1.0}) CHECK_FALSE(tost_t(summary(kDelta, sd), kMargin, 0.05).reject_h0);

    // t_{38, 0.95} > delta / sd: no observed difference can be declared equivalent.
    const double sd_large = kDelta / 1.6;
    for (double diff = -0.5; diff <= 0.5; diff += 0.01)
        CHECK_FALSE(tost_t(summary(diff, sd_large), kMargin, 0.05).reject_h0);

    CHECK(tost_t(summary(0.1, 0.0), kMargin, 0.05).reject_h0);
    CHECK_FALSE(tost_t(summary(kDelta, 0.0), kMargin, 0.05).reject_h0);
    CHECK_THROWS_AS(tost_t(summary(0.0, 0.1), kMargin, 0.5), DomainError);
    CHECK_THROWS_AS(tost_t(summary(0.0, 0.1), kMargin, 0.0), DomainError);
    CHECK_THROWS_AS(tost_t(summary(0.0, 0.1, 1, 20), kMargin, 0.05), InsufficientDataError);
}

TEST_CASE("tost_z decisions") {
    const Decision d = tost_z(0.0, 0.05, kMargin, 0.05);
    CHECK(d.reject_h0);
    CHECK_THAT(kDelta / 0.05, WithinAbs(4.463, 1e-3));
    CHECK_FALSE(tost_z(kDelta, 0.05, kMargin, 0.05).reject_h0);
    CHECK_FALSE(tost_z(-kDelta, 0.05, kMargin, 0.05).reject_h0);

    // Contradiction boundary: only an effect of exactly zero can satisfy both weak inequalities.
    const double z = normal_quantile(0.95);
    const double se_edge = kDelta / z;
    for (double eff : {1e-6, -1e-6, 0.01, 0.1}) CHECK_FALSE(tost_z(eff, se_edge, kMargin, 0.05).reject_h0);
    const bool at_zero = tost_z(0.0, se_edge, kMargin, 0.05).reject_h0;
    CHECK(at_zero == (kDelta / se_edge >= z));

    CHECK_THROWS_AS(tost_z(0.0, -0.1, kMargin, 0.05), DomainError);
    CHECK_THROWS_AS(tost_z(0.0, 0.1, kMargin, 0.6), DomainError);
}

TEST_CASE("bot decisions") {
    const Decision d = bot(0.0, 0.07, kMargin, 0.05);
    CHECK(d.reject_h0);
    CHECK_THAT(d.critical_value, WithinAbs(0.10800455677380073, 1e-10));
    for (double se : {0.01, 0.07, 0.2, 1.0}) {
        CHECK_FALSE(bot(kDelta, se, kMargin, 0.05).reject_h0);
        CHECK(bot(0.0, se, kMargin, 0.05).critical_value <= kDelta);
    }
    const double se_edge = kDelta / normal_quantile(0.95);
    CHECK(bot(0.0, se_edge, kMargin, 0.05).reject_h0);
    CHECK(bot(0.02, se_edge, kMargin, 0.05).reject_h0);

    const Decision noiseless = bot(0.2, 0.0, kMargin, 0.05);
    CHECK(noiseless.reject_h0);
    CHECK(noiseless.critical_value == kDelta);
    CHECK_FALSE(bot(kDelta, 0.0, kMargin, 0.05).reject_h0);
    CHECK_NOTHROW(bot(0.0, 0.1, kMargin, 0.7));
    CHECK_THROWS_AS(bot(0.0, 0.1, kMargin, 1.0), DomainError);
    CHECK_THROWS_AS(bot(0.0, 0.1, kMargin, 0.0), DomainError);
}

TEST_CASE("bot quantile and cdf formulations agree") {
    std::mt19937_64 gen(11);
    std::uniform_real_distribution<double> eff_d(-0.5, 0.5), se_d(0.001, 0.3), alpha_d(0.005, 0.3);
    for (int i = 0; i < 10000; ++i) {
        const double eff = eff_d(gen), se = se_d(gen), alpha = alpha_d(gen);
        CHECK(bot(eff, se, kMargin, alpha).reject_h0 == bot_rejects_by_cdf(eff, se, kMargin, alpha));
    }
}

TEST_CASE("decision dominance: TOST reject implies BOT reject") {
    std::mt19937_64 gen(12);
    std::uniform_real_distribution<double> eff_d(-0.3, 0.3), se_d(0.001, 0.2);
    int tost_rejections = 0;
    for (int i = 0; i < 10000; ++i) {
        const double eff = eff_d(gen), se = se_d(gen);
        for (double alpha : {0.01, 0.05, 0.1}) {
            const bool t = tost_z(eff, se, kMargin, alpha).reject_h0;
            tost_rejections += t;
            if (t) CHECK(bot(eff, se, kMargin, alpha).reject_h0);
        }
    }
    CHECK(tost_rejections > 1000);
}

TEST_CASE("tost_t with a very large df matches tost_z") {
    std::mt19937_64 gen(13);
    std::uniform_real_distribution<double> eff_d(-0.3, 0.3), se_d(0.005, 0.15);
    const int n = 500001;  // df = 10^6
    const double gap = student_t_quantile(0.95, 1000000) - normal_quantile(0.95);
    int compared = 0;
    for (int i = 0; i < 2000; ++i) {
        const double eff = eff_d(gen), se = se_d(gen);
        // Skip knife-edge inputs whose statistics fall within the quantile gap.
        const double lo = (eff + kDelta) / se, hi = (kDelta - eff) / se;
        if (std::abs(lo - normal_quantile(0.95)) < 2 * gap || std::abs(hi - normal_quantile(0.95)) < 2 * gap) continue;
        ++compared;
        CHECK(tost_t(summary(eff, se, n, n), kMargin, 0.05).reject_h0 == tost_z(eff, se, kMargin, 0.05).reject_h0);
    }
    CHECK(compared > 1900);
}

TEST_CASE("tost_power closed form") {
    const double z = normal_quantile(0.95);
    for (double d = -0.5; d <= 0.5; d += 0.01) CHECK(tost_power(d, kDelta / z, kMargin, 0.05) == 0.0);
    for (double sigma : {0.07, 0.12}) {
        const double expected = 0.05 - normal_cdf(z - 2 * kDelta / sigma);
        CHECK_THAT(tost_power(kDelta, sigma, kMargin, 0.05), WithinAbs(expected, 1e-12));
        CHECK_THAT(tost_power(-kDelta, sigma, kMargin, 0.05), WithinAbs(expected, 1e-12));
    }
    // Raw formula with the printed arguments, clamped at zero.
    for (double sigma : {0.03, 0.07, 0.1, 0.13, 0.2})
        for (double d = -0.4; d <= 0.4; d += 0.05) {
            const double raw = normal_cdf(-z + (kDelta - d) / sigma) - normal_cdf(z - (kDelta + d) / sigma);
            CHECK_THAT(tost_power(d, sigma, kMargin, 0.05), WithinAbs(std::max(0.0, raw), 1e-15));
        }
    CHECK_THROWS_AS(tost_power(0.0, 0.0, kMargin, 0.05), DomainError);
}

TEST_CASE("bot_power closed form") {
    for (double sigma : {0.01, 0.07, 0.12, 0.1357, 0.3}) {
        CHECK_THAT(bot_power(kDelta, sigma, kMargin, 0.05), WithinAbs(0.05, 1e-12));
        CHECK_THAT(bot_power(-kDelta, sigma, kMargin, 0.05), WithinAbs(0.05, 1e-12));
    }
    CHECK_THROWS_AS(bot_power(0.0, -0.1, kMargin, 0.05), DomainError);
}

TEST_CASE("power dominance, level and symmetry") {
    for (double alpha : {0.01, 0.05, 0.1})
        for (int i = 0; i < 20; ++i) {
            const double sigma = 0.01 + 0.3 * i / 19.0;
            for (int j = 0; j < 50; ++j) {
                const double d = -2 * kDelta + 4 * kDelta * j / 49.0;
                const double pt = tost_power(d, sigma, kMargin, alpha), pb = bot_power(d, sigma, kMargin, alpha);
                CHECK(pb >= pt - 1e-12);
                if (std::abs(d) >= kDelta) {
                    CHECK(pb <= alpha + 1e-12);
                    CHECK(pt <= alpha + 1e-12);
                }
                CHECK_THAT(tost_power(-d, sigma, kMargin, alpha), WithinAbs(pt, 1e-15));
                CHECK_THAT(bot_power(-d, sigma, kMargin, alpha), WithinAbs(pb, 1e-15));
            }
        }
}

TEST_CASE("closed-form powers match Monte Carlo rejection rates") {
    {
        const double p = tost_power(0.0, 0.07, kMargin, 0.05);
        const int reps = 1000000;
        const double rate = mc_rate(0.0, 0.07, reps, 1, false);
        CHECK(std::abs(rate - p) <= 3 * std::sqrt(p * (1 - p) / reps));
    }
    const int reps = 100000;
    std::uint64_t seed = 100;
    for (double sigma : {0.07, 0.12, 0.1357})
        for (double d : {0.0, 0.1, kDelta}) {
            for (bool use_bot : {false, true}) {
                const double p = use_bot ? bot_power(d, sigma, kMargin, 0.05) : tost_power(d, sigma, kMargin, 0.05);
                const double rate = mc_rate(d, sigma, reps, ++seed, use_bot);
                const double se = std::sqrt(std::max(p * (1 - p), 1e-12) / reps);
                CHECK(std::abs(rate - p) <= 3 * se + 1e-12);
            }
        }
}
