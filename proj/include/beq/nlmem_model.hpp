#pragma once

// Shared types for NLMEM estimation: estimator configuration, the fit
// result, and the per-subject data layout used by SAEM and the Fisher
// information.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "beq/errors.hpp"
#include "beq/pkmodel.hpp"

namespace beq {

struct SaemConfig {
    int n_chains = 10;
    int burn_in_iters = 300;    ///< K1: step size 1
    int smoothing_iters = 100;  ///< K2: step size 1 / (k - K1)
    int mcmc_steps_per_iter = 2;
    double target_acceptance = 0.3;
    std::uint64_t rng_seed = 1;
    /// Estimate period and sequence effects in crossover fits (fixed at 0 otherwise).
    bool estimate_period_sequence = false;

    void validate() const {
        if (n_chains < 1) throw ValidationError("SaemConfig: n_chains must be >= 1");
        if (burn_in_iters < 1 || smoothing_iters < 1)
            throw ValidationError("SaemConfig: burn_in_iters and smoothing_iters must be >= 1");
        if (mcmc_steps_per_iter < 1) throw ValidationError("SaemConfig: mcmc_steps_per_iter must be >= 1");
        if (!(target_acceptance > 0.0 && target_acceptance < 1.0))
            throw ValidationError("SaemConfig: target_acceptance must lie in (0, 1)");
    }
};

/// Individual log-parameters per subject and occasion (group_by_subject order).
using IndividualLogParams = std::vector<std::vector<Vec3>>;

struct FitResult {
    PopulationModel theta_hat;
    double dose = 4.0;
    bool period_sequence_estimated = false;

    /// Fixed effects on the estimation scale: log lambda (3), beta_T (3), then beta_P (3), beta_S (3) if estimated.
    std::vector<std::string> fixed_effect_names;
    Eigen::VectorXd fixed_effects;
    /// Variance components: omega^2 (3), gamma^2 (3, crossover), a, b.
    std::vector<std::string> variance_names;

    Eigen::MatrixXd fim;               ///< block-diagonal (fixed effects, variance components)
    Eigen::MatrixXd fixed_effect_cov;  ///< inverse of the fixed-effect block
    std::string fim_method = "linearization";

    std::vector<std::string> trace_names;
    std::vector<std::vector<double>> convergence_trace;  ///< one row per iteration
    std::vector<double> loglik_trace;                    ///< complete-data log-likelihood surrogate

    IndividualLogParams conditional_modes;

    double beta_auc_hat = 0.0;
    double beta_cmax_hat = 0.0;
    double se_beta_auc = 0.0;
    double se_beta_cmax = 0.0;

    double effect(Metric m) const noexcept { return m == Metric::Auc ? beta_auc_hat : beta_cmax_hat; }
    double standard_error(Metric m) const noexcept { return m == Metric::Auc ? se_beta_auc : se_beta_cmax; }
};

namespace detail {

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;

struct FitOccasion {
    int treatment = 0;
    int period = 0;  ///< 0-based indicator: 1 for the second period
    double dose = 0.0;
    std::vector<double> t;
    std::vector<double> y;
};

struct FitSubject {
    std::string id;
    int sequence = 0;  ///< 1 for TR
    std::vector<FitOccasion> occasions;
};

inline std::vector<FitSubject> prepare_subjects(const TrialDataset& data, DesignKind kind) {
    std::vector<FitSubject> out;
    for (const SubjectData& s : group_by_subject(data)) {
        if (kind == DesignKind::Parallel && s.sequence != Sequence::None)
            throw ValidationError("fit: crossover-labelled subject " + s.id + " in a parallel fit");
        if (kind == DesignKind::Crossover2x2 && s.sequence == Sequence::None)
            throw ValidationError("fit: subject " + s.id + " lacks a sequence in a crossover fit");
        if (kind == DesignKind::Parallel && s.occasions.size() != 1)
            throw ValidationError("fit: subject " + s.id + " has more than one period in a parallel fit");
        FitSubject fs;
        fs.id = s.id;
        fs.sequence = s.sequence == Sequence::TR ? 1 : 0;
        for (const Occasion& o : s.occasions) {
            FitOccasion fo;
            fo.treatment = o.treatment == Treatment::T ? 1 : 0;
            fo.period = o.period == 2 ? 1 : 0;
            fo.dose = o.dose;
            fo.t = o.times;
            fo.y = o.concentrations;
            fs.occasions.push_back(std::move(fo));
        }
        out.push_back(std::move(fs));
    }
    if (out.empty()) throw ValidationError("fit: dataset has no subjects");
    return out;
}

// Gaussian log-likelihood of one occasion under the combined error model.
// Writes model predictions to f_out when given. Returns -inf if g <= 0.
inline double occasion_loglik(const FitOccasion& o, const Vec3& phi, double a, double b, double* f_out = nullptr) {
    const double ka = std::exp(phi[0]), v = std::exp(phi[1]), cl = std::exp(phi[2]);
    double ll = 0.0;
    for (std::size_t j = 0; j < o.t.size(); ++j) {
        const double f = concentration_any(o.t[j], o.dose, ka, v, cl);
        if (f_out) f_out[j] = f;
        const double g = a + b * f;
        if (!(g > 0.0) || !std::isfinite(f)) return -std::numeric_limits<double>::infinity();
        const double r = (o.y[j] - f) / g;
        ll -= std::log(g) + 0.5 * r * r + kHalfLog2Pi;
    }
    return ll;
}

inline double loglik_from_predictions(const FitOccasion& o, const double* f, double a, double b) {
    double ll = 0.0;
    for (std::size_t j = 0; j < o.t.size(); ++j) {
        const double g = a + b * f[j];
        if (!(g > 0.0)) return -std::numeric_limits<double>::infinity();
        const double r = (o.y[j] - f[j]) / g;
        ll -= std::log(g) + 0.5 * r * r + kHalfLog2Pi;
    }
    return ll;
}

inline std::vector<std::string> fixed_effect_names(bool with_period_sequence) {
    std::vector<std::string> names;
    for (const char* p : kParamNames) names.push_back(std::string("log_") + p);
    for (const char* p : kParamNames) names.push_back(std::string("beta_T_") + p);
    if (with_period_sequence) {
        for (const char* p : kParamNames) names.push_back(std::string("beta_P_") + p);
        for (const char* p : kParamNames) names.push_back(std::string("beta_S_") + p);
    }
    return names;
}

inline std::vector<std::string> variance_names(DesignKind kind) {
    std::vector<std::string> names;
    for (const char* p : kParamNames) names.push_back(std::string("omega2_") + p);
    if (kind == DesignKind::Crossover2x2)
        for (const char* p : kParamNames) names.push_back(std::string("gamma2_") + p);
    names.emplace_back("a");
    names.emplace_back("b");
    return names;
}

inline Eigen::VectorXd fixed_effect_vector(const PopulationModel& m, bool with_period_sequence) {
    Eigen::VectorXd v(with_period_sequence ? 12 : 6);
    const Vec3 log_lambda = m.lambda.log();
    for (int l = 0; l < 3; ++l) {
        v[l] = log_lambda[l];
        v[3 + l] = m.beta_treatment[l];
        if (with_period_sequence) {
            v[6 + l] = m.beta_period[l];
            v[9 + l] = m.beta_sequence[l];
        }
    }
    return v;
}

}  // namespace detail
}  // namespace beq
