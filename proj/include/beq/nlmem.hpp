#pragma once

// Model-based equivalence tests on a fitted NLMEM and text serialization
// of fit results.

#include <ostream>

#include "beq/dataset_io.hpp"
#include "beq/equivalence.hpp"
#include "beq/fim.hpp"
#include "beq/nlmem_model.hpp"
#include "beq/saem.hpp"

namespace beq {

namespace detail {

inline void require_fitted_se(const FitResult& fit, Metric metric) {
    const double se = fit.standard_error(metric);
    if (!std::isfinite(se) || se < 0.0)
        throw DomainError(std::string("model-based test: invalid standard error for ") + to_string(metric));
}

}  // namespace detail

/// TOST on the delta-method z statistics of the fitted secondary effect.
inline Decision mb_tost(const FitResult& fit, Metric metric, const EquivalenceMargin& margin, double alpha) {
    detail::require_fitted_se(fit, metric);
    return tost_z(fit.effect(metric), fit.standard_error(metric), margin, alpha);
}

/// BOT with the folded-normal critical value built from the delta-method SE.
inline Decision mb_bot(const FitResult& fit, Metric metric, const EquivalenceMargin& margin, double alpha) {
    detail::require_fitted_se(fit, metric);
    return bot(fit.effect(metric), fit.standard_error(metric), margin, alpha);
}

inline void write_fit_report(std::ostream& os, const FitResult& fit, const EquivalenceMargin& margin, double alpha) {
    using detail::format_real;
    const PopulationModel& m = fit.theta_hat;
    os << "[model]\n";
    os << "design = " << to_string(m.kind) << '\n';
    os << "dose = " << format_real(fit.dose) << '\n';
    os << "fim_method = " << fit.fim_method << '\n';
    os << "period_sequence_estimated = " << (fit.period_sequence_estimated ? "true" : "false") << '\n';
    os << "\n[fixed_effects]\n";
    for (std::size_t j = 0; j < fit.fixed_effect_names.size(); ++j) {
        const double se = std::sqrt(std::max(fit.fixed_effect_cov(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)), 0.0));
        os << fit.fixed_effect_names[j] << " = " << format_real(fit.fixed_effects[static_cast<Eigen::Index>(j)])
           << "  # se " << format_real(se) << '\n';
    }
    os << "\n[variance_components]\n";
    for (int l = 0; l < 3; ++l) os << "omega_" << kParamNames[l] << " = " << format_real(m.omega[l]) << '\n';
    if (m.kind == DesignKind::Crossover2x2)
        for (int l = 0; l < 3; ++l) os << "gamma_" << kParamNames[l] << " = " << format_real(m.gamma[l]) << '\n';
    os << "a = " << format_real(m.err_add) << '\n';
    os << "b = " << format_real(m.err_prop) << '\n';
    os << "\n[secondary_effects]\n";
    os << "beta_auc = " << format_real(fit.beta_auc_hat) << '\n';
    os << "se_beta_auc = " << format_real(fit.se_beta_auc) << '\n';
    os << "beta_cmax = " << format_real(fit.beta_cmax_hat) << '\n';
    os << "se_beta_cmax = " << format_real(fit.se_beta_cmax) << '\n';
    os << "\n[decisions]\n";
    os << "margin = " << format_real(margin.delta()) << '\n';
    os << "alpha = " << format_real(alpha) << '\n';
    for (Metric metric : {Metric::Auc, Metric::Cmax}) {
        const Decision t = mb_tost(fit, metric, margin, alpha);
        const Decision b = mb_bot(fit, metric, margin, alpha);
        os << "MB-TOST_" << to_string(metric) << " = " << (t.reject_h0 ? "reject" : "retain")
           << "  # critical " << format_real(t.critical_value) << '\n';
        os << "MB-BOT_" << to_string(metric) << " = " << (b.reject_h0 ? "reject" : "retain") << "  # critical "
           << format_real(b.critical_value) << '\n';
    }
}

/// Long-format convergence trace: iteration,parameter,value.
inline void write_trace_csv(std::ostream& os, const FitResult& fit) {
    os << "iteration,parameter,value\n";
    for (std::size_t it = 0; it < fit.convergence_trace.size(); ++it) {
        const auto& row = fit.convergence_trace[it];
        for (std::size_t j = 0; j < row.size() && j < fit.trace_names.size(); ++j)
            os << it + 1 << ',' << fit.trace_names[j] << ',' << detail::format_real(row[j]) << '\n';
        if (it < fit.loglik_trace.size())
            os << it + 1 << ",complete_loglik," << detail::format_real(fit.loglik_trace[it]) << '\n';
    }
}

}  // namespace beq
