#pragma once

// One-compartment model with first-order absorption and elimination,
// combined additive + proportional residual error, log-normal individual
// parameters with treatment / period / sequence covariates, and trial
// simulation for parallel and 2x2 crossover designs.

#include <algorithm>
#include <array>
#include <iterator>
#include <map>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "beq/errors.hpp"
#include "beq/rng.hpp"

namespace beq {

using Vec3 = std::array<double, 3>;

/// Component order used by every 3-vector in this library.
enum class PkParam : int { Ka = 0, V = 1, Cl = 2 };
inline constexpr std::array<const char*, 3> kParamNames = {"ka", "V", "CL"};

inline constexpr double kFlipFlopTolerance = 1e-9;

struct StructuralParams {
    double ka = 0.0;         ///< absorption rate constant, 1/h
    double v_over_f = 0.0;   ///< apparent volume V/F, l
    double cl_over_f = 0.0;  ///< apparent clearance CL/F, l/h

    double ke() const noexcept { return cl_over_f / v_over_f; }

    bool positive() const noexcept {
        return ka > 0.0 && v_over_f > 0.0 && cl_over_f > 0.0 && std::isfinite(ka) && std::isfinite(v_over_f) &&
               std::isfinite(cl_over_f);
    }
    bool near_flip_flop() const noexcept { return std::abs(ka - ke()) <= kFlipFlopTolerance * ke(); }

    void validate() const {
        if (!positive()) throw DomainError("StructuralParams: ka, V/F and CL/F must be finite and > 0");
        if (near_flip_flop()) throw SingularityError("StructuralParams: ka equals ke (flip-flop singularity)");
    }

    Vec3 log() const { return {std::log(ka), std::log(v_over_f), std::log(cl_over_f)}; }
    static StructuralParams from_log(const Vec3& phi) {
        return {std::exp(phi[0]), std::exp(phi[1]), std::exp(phi[2])};
    }
    /// Typical reference values of the theophylline-like simulation model.
    static StructuralParams reference() { return {1.5, 0.5, 0.04}; }
};

namespace detail {

// f(t) = D ka / (V (ka - ke)) (exp(-ke t) - exp(-ka t)), evaluated as
// D ka / V * exp(-ke t) * (1 - exp(-(ka - ke) t)) / (ka - ke), which has
// the finite limit D ka / V * t exp(-ke t) at ka == ke.
inline double concentration_any(double t, double dose, double ka, double v, double cl) noexcept {
    const double ke = cl / v;
    const double slow = std::min(ka, ke);
    const double gap = std::abs(ka - ke);
    const double x = gap * t;
    const double kernel = x < 1e-8 ? t * (1.0 - 0.5 * x) : -std::expm1(-x) / gap;
    return dose * ka / v * std::exp(-slow * t) * kernel;
}

}  // namespace detail

/// Concentration (mg/l) at time t (h) after an oral dose (mg).
inline double concentration(double t, double dose, const StructuralParams& psi) {
    if (!(t >= 0.0)) throw DomainError("concentration: t must be >= 0");
    if (!(dose > 0.0)) throw DomainError("concentration: dose must be > 0");
    psi.validate();
    return detail::concentration_any(t, dose, psi.ka, psi.v_over_f, psi.cl_over_f);
}

enum class DesignKind { Parallel, Crossover2x2 };

inline const char* to_string(DesignKind k) { return k == DesignKind::Parallel ? "parallel" : "crossover"; }

/// Full NLMEM parameter vector theta = (lambda, beta, Omega, Gamma, a, b), diagonal covariances.
struct PopulationModel {
    DesignKind kind = DesignKind::Parallel;
    StructuralParams lambda = StructuralParams::reference();
    Vec3 beta_treatment{0.0, 0.0, 0.0};
    Vec3 beta_period{0.0, 0.0, 0.0};
    Vec3 beta_sequence{0.0, 0.0, 0.0};
    Vec3 omega{0.0, 0.0, 0.0};  ///< BSV log-scale SDs
    Vec3 gamma{0.0, 0.0, 0.0};  ///< WSV log-scale SDs (crossover)
    double err_add = 0.1;       ///< a, mg/l
    double err_prop = 0.1;      ///< b, fraction

    void validate() const {
        if (!lambda.positive()) throw DomainError("PopulationModel: lambda components must be > 0");
        if (!(err_add >= 0.0) || !(err_prop >= 0.0))
            throw DomainError("PopulationModel: residual error parameters must be >= 0");
        if (!(err_add + err_prop > 0.0))
            throw DomainError("PopulationModel: err_add + err_prop must be > 0");
        for (int l = 0; l < 3; ++l) {
            if (!(omega[l] >= 0.0) || !(gamma[l] >= 0.0))
                throw DomainError("PopulationModel: random-effect SDs must be >= 0");
        }
        if (kind == DesignKind::Parallel) {
            for (int l = 0; l < 3; ++l) {
                if (beta_period[l] != 0.0 || beta_sequence[l] != 0.0 || gamma[l] != 0.0)
                    throw ContractError("PopulationModel: parallel models have no period/sequence effects or WSV");
            }
        }
    }
};

/// Residual SD g = a + b f of the combined error model.
inline double error_sd(double f_value, const PopulationModel& model) {
    return model.err_add + model.err_prop * f_value;
}

struct CovariateIndicators {
    int treatment = 0;  ///< 1 for the test formulation
    int period = 0;     ///< 1 for the second period
    int sequence = 0;   ///< 1 for sequence TR
};

/// Linear predictor on the log scale, without random effects.
inline Vec3 typical_log_params(const PopulationModel& model, const CovariateIndicators& c) {
    const Vec3 log_lambda = model.lambda.log();
    Vec3 phi{};
    for (int l = 0; l < 3; ++l)
        phi[l] = log_lambda[l] + model.beta_treatment[l] * c.treatment + model.beta_period[l] * c.period +
                 model.beta_sequence[l] * c.sequence;
    return phi;
}

inline StructuralParams individual_params(const PopulationModel& model, const CovariateIndicators& c,
                                          const Vec3& eta, const Vec3& kappa) {
    auto is_indicator = [](int v) { return v == 0 || v == 1; };
    if (!is_indicator(c.treatment) || !is_indicator(c.period) || !is_indicator(c.sequence))
        throw ContractError("individual_params: indicators must be 0 or 1");
    if (model.kind == DesignKind::Parallel &&
        (c.period != 0 || c.sequence != 0 || kappa[0] != 0.0 || kappa[1] != 0.0 || kappa[2] != 0.0))
        throw ContractError("individual_params: parallel design has no period, sequence or WSV terms");
    Vec3 phi = typical_log_params(model, c);
    for (int l = 0; l < 3; ++l) phi[l] += eta[l] + kappa[l];
    return StructuralParams::from_log(phi);
}

struct AnalyticEndpoints {
    double auc = 0.0;   ///< AUC(0, inf), mg h / l
    double cmax = 0.0;  ///< mg / l
    double tmax = 0.0;  ///< h
};

inline AnalyticEndpoints analytic_endpoints(double dose, const StructuralParams& psi) {
    if (!(dose > 0.0)) throw DomainError("analytic_endpoints: dose must be > 0");
    psi.validate();
    const double ke = psi.ke();
    AnalyticEndpoints e;
    e.auc = dose / psi.cl_over_f;
    e.tmax = std::log(psi.ka / ke) / (psi.ka - ke);
    e.cmax = concentration(e.tmax, dose, psi);
    return e;
}

enum class Metric { Auc, Cmax };

inline const char* to_string(Metric m) { return m == Metric::Auc ? "AUC" : "CMAX"; }

namespace detail {

// log Cmax = log D - log V - log(r) / (r - 1) with r = ka / ke, from the
// identity ka exp(-ka tmax) = ke exp(-ke tmax) (so Cmax = D / V exp(-ke tmax)).
// Derivative of -log(r)/(r-1) wrt log r: (r log r - r + 1) / (r - 1)^2.
inline double log_cmax_sensitivity(double log_r) {
    if (std::abs(log_r) < 1e-4) return 0.5 - log_r / 6.0;
    const double r = std::exp(log_r);
    const double rm1 = std::expm1(log_r);
    return (r * log_r - rm1) / (rm1 * rm1);
}

// Partial derivatives of log endpoint wrt (log ka, log V, log CL).
inline Vec3 log_endpoint_gradient(Metric metric, const Vec3& log_psi) {
    if (metric == Metric::Auc) return {0.0, 0.0, -1.0};
    const double log_r = log_psi[0] + log_psi[1] - log_psi[2];
    const double c = log_cmax_sensitivity(log_r);
    return {c, -1.0 + c, -c};
}

}  // namespace detail

/// Treatment effect on log AUC / log Cmax implied by (lambda, beta^T).
inline double secondary_effect(const StructuralParams& lambda, const Vec3& beta_treatment, Metric metric,
                               double dose = 4.0) {
    if (metric == Metric::Auc) return -beta_treatment[2];
    const StructuralParams shifted{lambda.ka * std::exp(beta_treatment[0]), lambda.v_over_f * std::exp(beta_treatment[1]),
                                   lambda.cl_over_f * std::exp(beta_treatment[2])};
    return std::log(analytic_endpoints(dose, shifted).cmax) - std::log(analytic_endpoints(dose, lambda).cmax);
}

inline double treatment_effect_secondary(const PopulationModel& model, Metric metric) {
    return secondary_effect(model.lambda, model.beta_treatment, metric);
}

/// Gradient of the secondary effect wrt (log lambda_ka, log lambda_V, log lambda_CL, beta_ka, beta_V, beta_CL).
inline std::array<double, 6> secondary_effect_gradient(const StructuralParams& lambda, const Vec3& beta_treatment,
                                                       Metric metric) {
    const Vec3 log_ref = lambda.log();
    Vec3 log_test{};
    for (int l = 0; l < 3; ++l) log_test[l] = log_ref[l] + beta_treatment[l];
    const Vec3 g_test = detail::log_endpoint_gradient(metric, log_test);
    const Vec3 g_ref = detail::log_endpoint_gradient(metric, log_ref);
    std::array<double, 6> grad{};
    for (int l = 0; l < 3; ++l) {
        grad[l] = g_test[l] - g_ref[l];
        grad[3 + l] = g_test[l];
    }
    return grad;
}

enum class Sequence { RT, TR, None };
enum class Treatment { R, T };

inline const char* to_string(Sequence s) {
    switch (s) {
        case Sequence::RT: return "RT";
        case Sequence::TR: return "TR";
        case Sequence::None: return "NA";
    }
    return "NA";
}
inline const char* to_string(Treatment t) { return t == Treatment::T ? "T" : "R"; }

/// Treatment received in a period of a 2x2 crossover (period is 1-based).
inline Treatment crossover_treatment(Sequence s, int period) {
    if (s == Sequence::RT) return period == 1 ? Treatment::R : Treatment::T;
    return period == 1 ? Treatment::T : Treatment::R;
}

struct TrialDesign {
    DesignKind kind = DesignKind::Parallel;
    int n_subjects = 40;
    std::vector<double> sampling_times;
    double dose = 4.0;

    void validate() const {
        if (n_subjects < 2 || n_subjects % 2 != 0)
            throw ValidationError("TrialDesign: n_subjects must be even and >= 2");
        if (sampling_times.empty()) throw ValidationError("TrialDesign: at least one sampling time required");
        for (std::size_t j = 0; j < sampling_times.size(); ++j) {
            if (!(sampling_times[j] > 0.0)) throw ValidationError("TrialDesign: sampling times must be > 0");
            if (j > 0 && !(sampling_times[j] > sampling_times[j - 1]))
                throw ValidationError("TrialDesign: sampling times must be strictly increasing");
        }
        if (!(dose > 0.0)) throw ValidationError("TrialDesign: dose must be > 0");
    }
    int n_periods() const noexcept { return kind == DesignKind::Parallel ? 1 : 2; }

    static std::vector<double> rich_times() { return {0.25, 0.5, 1, 2, 3.5, 5, 7, 9, 12, 24}; }
    static std::vector<double> sparse_times() { return {0.25, 3.35, 24}; }
};

struct Record {
    std::string subject;
    Sequence sequence = Sequence::None;
    int period = 1;
    Treatment treatment = Treatment::R;
    double time = 0.0;
    double dose = 0.0;
    double concentration = 0.0;
};

struct TrialDataset {
    std::vector<Record> records;
    /// True individual parameters per (subject, period) in record order; simulation diagnostics only.
    std::vector<StructuralParams> true_params;
};

namespace detail {

inline CovariateIndicators indicators_for(Sequence s, int period, Treatment t) {
    CovariateIndicators c;
    c.treatment = t == Treatment::T ? 1 : 0;
    c.period = period == 2 ? 1 : 0;
    c.sequence = s == Sequence::TR ? 1 : 0;
    return c;
}

}  // namespace detail

/// Simulates one trial. Draws are keyed by (seed, subject, period, observation),
/// so the dataset is a pure function of (model, design, seed).
inline TrialDataset simulate_trial(const PopulationModel& model, const TrialDesign& design, std::uint64_t seed) {
    model.validate();
    design.validate();
    if (model.kind != design.kind) throw ContractError("simulate_trial: model and design kinds differ");
    constexpr int kMaxAttempts = 100;
    const int n = design.n_subjects;
    const int n_periods = design.n_periods();
    TrialDataset out;
    out.records.reserve(static_cast<std::size_t>(n * n_periods) * design.sampling_times.size());

    for (int i = 0; i < n; ++i) {
        const bool first_half = i < n / 2;
        const Sequence seq = design.kind == DesignKind::Parallel ? Sequence::None
                             : first_half                        ? Sequence::RT
                                                                 : Sequence::TR;
        std::vector<StructuralParams> psi(n_periods);
        bool ok = false;
        for (int attempt = 0; attempt < kMaxAttempts && !ok; ++attempt) {
            KeyedStream eta_stream(seed, {0, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(attempt)});
            Vec3 eta{};
            for (int l = 0; l < 3; ++l) eta[l] = model.omega[l] * eta_stream.normal();
            ok = true;
            for (int k = 0; k < n_periods; ++k) {
                Vec3 kappa{};
                if (design.kind == DesignKind::Crossover2x2) {
                    KeyedStream kappa_stream(seed, {1, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(k),
                                                    static_cast<std::uint64_t>(attempt)});
                    for (int l = 0; l < 3; ++l) kappa[l] = model.gamma[l] * kappa_stream.normal();
                }
                const Treatment tr = design.kind == DesignKind::Parallel
                                         ? (first_half ? Treatment::R : Treatment::T)
                                         : crossover_treatment(seq, k + 1);
                psi[k] = individual_params(model, detail::indicators_for(seq, k + 1, tr), eta, kappa);
                if (psi[k].near_flip_flop()) ok = false;
            }
        }
        if (!ok) throw SingularityError("simulate_trial: flip-flop singularity persisted after redraws");

        for (int k = 0; k < n_periods; ++k) {
            const Treatment tr = design.kind == DesignKind::Parallel ? (first_half ? Treatment::R : Treatment::T)
                                                                     : crossover_treatment(seq, k + 1);
            out.true_params.push_back(psi[k]);
            for (std::size_t j = 0; j < design.sampling_times.size(); ++j) {
                const double t = design.sampling_times[j];
                const double f = concentration(t, design.dose, psi[k]);
                KeyedStream eps(seed, {2, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(k),
                                       static_cast<std::uint64_t>(j)});
                Record r;
                r.subject = std::to_string(i + 1);
                r.sequence = seq;
                r.period = k + 1;
                r.treatment = tr;
                r.time = t;
                r.dose = design.dose;
                r.concentration = f + error_sd(f, model) * eps.normal();
                out.records.push_back(std::move(r));
            }
        }
    }
    return out;
}

/// Per-subject view of a dataset: one occasion per period.
struct Occasion {
    int period = 1;
    Treatment treatment = Treatment::R;
    double dose = 0.0;
    std::vector<double> times;
    std::vector<double> concentrations;
};

struct SubjectData {
    std::string id;
    Sequence sequence = Sequence::None;
    std::vector<Occasion> occasions;  ///< sorted by period
};

/// Groups records by subject (first-appearance order) and period; times sorted within an occasion.
inline std::vector<SubjectData> group_by_subject(const TrialDataset& data) {
    std::vector<SubjectData> subjects;
    std::map<std::string, std::size_t> index;
    for (const Record& r : data.records) {
        auto [it, inserted] = index.try_emplace(r.subject, subjects.size());
        if (inserted) {
            SubjectData s;
            s.id = r.subject;
            s.sequence = r.sequence;
            subjects.push_back(std::move(s));
        }
        SubjectData& s = subjects[it->second];
        if (s.sequence != r.sequence)
            throw ValidationError("dataset: subject " + r.subject + " has inconsistent sequence labels");
        auto occ = std::find_if(s.occasions.begin(), s.occasions.end(),
                                [&](const Occasion& o) { return o.period == r.period; });
        if (occ == s.occasions.end()) {
            Occasion o;
            o.period = r.period;
            o.treatment = r.treatment;
            o.dose = r.dose;
            s.occasions.push_back(std::move(o));
            occ = std::prev(s.occasions.end());
        }
        if (occ->treatment != r.treatment)
            throw ValidationError("dataset: subject " + r.subject + " changes treatment within a period");
        occ->times.push_back(r.time);
        occ->concentrations.push_back(r.concentration);
    }
    for (SubjectData& s : subjects) {
        std::sort(s.occasions.begin(), s.occasions.end(),
                  [](const Occasion& a, const Occasion& b) { return a.period < b.period; });
        for (Occasion& o : s.occasions) {
            std::vector<std::size_t> order(o.times.size());
            for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
            std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return o.times[a] < o.times[b]; });
            Occasion sorted = o;
            for (std::size_t j = 0; j < order.size(); ++j) {
                sorted.times[j] = o.times[order[j]];
                sorted.concentrations[j] = o.concentrations[order[j]];
                if (j > 0 && !(sorted.times[j] > sorted.times[j - 1]))
                    throw ValidationError("dataset: duplicate sampling time for subject " + s.id);
            }
            o = std::move(sorted);
        }
        if (s.sequence != Sequence::None) {
            for (const Occasion& o : s.occasions) {
                if (o.period < 1 || o.period > 2 || o.treatment != crossover_treatment(s.sequence, o.period))
                    throw ValidationError("dataset: treatment inconsistent with sequence for subject " + s.id);
            }
        }
    }
    return subjects;
}

}  // namespace beq
