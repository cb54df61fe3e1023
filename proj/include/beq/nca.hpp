#pragma once

// Non-compartmental endpoints (linear-trapezoid AUC over the observed
// range, observed Cmax) and NCA-based equivalence tests for parallel and
// 2x2 crossover trials.

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>
#include <vector>

#include "beq/dataset_io.hpp"
#include "beq/equivalence.hpp"
#include "beq/errors.hpp"
#include "beq/pkmodel.hpp"

namespace beq {

struct ConcentrationProfile {
    std::vector<double> times;
    std::vector<double> concentrations;
    double dose = 0.0;

    void validate() const {
        if (times.size() != concentrations.size())
            throw DomainError("ConcentrationProfile: times and concentrations differ in length");
        for (std::size_t j = 0; j < times.size(); ++j) {
            if (!(times[j] >= 0.0)) throw DomainError("ConcentrationProfile: times must be >= 0");
            if (j > 0 && !(times[j] > times[j - 1]))
                throw DomainError("ConcentrationProfile: times must be strictly increasing");
        }
    }
};

/// Linear trapezoidal AUC over [t_first, t_last]; no extrapolation.
inline double auc_trapezoid(const ConcentrationProfile& p) {
    p.validate();
    if (p.times.size() < 2) throw InsufficientDataError("auc_trapezoid: at least 2 observations required");
    double auc = 0.0;
    for (std::size_t j = 0; j + 1 < p.times.size(); ++j)
        auc += (p.times[j + 1] - p.times[j]) * (p.concentrations[j] + p.concentrations[j + 1]) / 2.0;
    return auc;
}

inline double cmax(const ConcentrationProfile& p) {
    p.validate();
    if (p.concentrations.empty()) throw InsufficientDataError("cmax: empty profile");
    return *std::max_element(p.concentrations.begin(), p.concentrations.end());
}

struct PeriodEndpoints {
    int period = 1;
    Treatment treatment = Treatment::R;
    double auc = 0.0;
    double cmax = 0.0;
    double log_auc = 0.0;
    double log_cmax = 0.0;

    double log_value(Metric m) const noexcept { return m == Metric::Auc ? log_auc : log_cmax; }
};

struct SubjectEndpoints {
    std::string subject_id;
    Sequence sequence = Sequence::None;
    std::vector<PeriodEndpoints> periods;
};

/// NCA endpoints for every subject and period. Throws EndpointError when AUC or Cmax is not positive.
inline std::vector<SubjectEndpoints> extract_endpoints(const TrialDataset& data) {
    std::vector<SubjectEndpoints> out;
    for (const SubjectData& s : group_by_subject(data)) {
        SubjectEndpoints e;
        e.subject_id = s.id;
        e.sequence = s.sequence;
        for (const Occasion& o : s.occasions) {
            ConcentrationProfile profile{o.times, o.concentrations, o.dose};
            PeriodEndpoints pe;
            pe.period = o.period;
            pe.treatment = o.treatment;
            pe.auc = auc_trapezoid(profile);
            pe.cmax = cmax(profile);
            if (!(pe.auc > 0.0)) throw EndpointError(s.id, "non-positive AUC " + std::to_string(pe.auc));
            if (!(pe.cmax > 0.0)) throw EndpointError(s.id, "non-positive Cmax " + std::to_string(pe.cmax));
            pe.log_auc = std::log(pe.auc);
            pe.log_cmax = std::log(pe.cmax);
            e.periods.push_back(pe);
        }
        out.push_back(std::move(e));
    }
    return out;
}

inline void write_endpoints_csv(std::ostream& os, const std::vector<SubjectEndpoints>& endpoints) {
    os << "subject,sequence,period,treatment,auc,cmax,log_auc,log_cmax\n";
    for (const auto& s : endpoints) {
        for (const auto& p : s.periods) {
            os << s.subject_id << ',' << to_string(s.sequence) << ',' << p.period << ',' << to_string(p.treatment)
               << ',' << detail::format_real(p.auc) << ',' << detail::format_real(p.cmax) << ','
               << detail::format_real(p.log_auc) << ',' << detail::format_real(p.log_cmax) << '\n';
        }
    }
}

enum class NcaMethod { Tost, Bot };

inline const char* to_string(NcaMethod m) { return m == NcaMethod::Tost ? "TOST" : "BOT"; }

namespace detail {

inline Decision dispatch_two_sample(const TwoSampleSummary& s, NcaMethod method, const EquivalenceMargin& margin,
                                    double alpha) {
    if (method == NcaMethod::Tost) return tost_t(s, margin, alpha);
    s.validate();
    return bot(s.difference(), s.pooled_sd, margin, alpha);
}

}  // namespace detail

/// Parallel-group analysis: pooled-variance two-sample summary of log endpoints.
inline Decision nca_parallel_test(const std::vector<SubjectEndpoints>& endpoints, Metric metric, NcaMethod method,
                                  const EquivalenceMargin& margin, double alpha) {
    std::vector<double> test, ref;
    for (const auto& s : endpoints) {
        if (s.periods.size() != 1)
            throw ContractError("nca_parallel_test: subject " + s.subject_id + " has more than one period");
        const auto& p = s.periods.front();
        if (!std::isfinite(p.log_value(metric)))
            throw EndpointError(s.subject_id, "non-finite log endpoint");
        (p.treatment == Treatment::T ? test : ref).push_back(p.log_value(metric));
    }
    if (test.size() < 2 || ref.size() < 2)
        throw InsufficientDataError("nca_parallel_test: each arm needs at least 2 subjects");
    return detail::dispatch_two_sample(summarize_two_samples(test, ref), method, margin, alpha);
}

/// Classical 2x2 crossover analysis on half period differences d = (Y2 - Y1) / 2:
/// effect = mean d(RT) - mean d(TR), standard error from the pooled variance of d.
inline Decision nca_crossover_test(const std::vector<SubjectEndpoints>& endpoints, Metric metric, NcaMethod method,
                                   const EquivalenceMargin& margin, double alpha) {
    std::vector<double> d_rt, d_tr;
    int excluded = 0;
    for (const auto& s : endpoints) {
        const PeriodEndpoints* p1 = nullptr;
        const PeriodEndpoints* p2 = nullptr;
        for (const auto& p : s.periods) (p.period == 1 ? p1 : p2) = &p;
        if (p1 == nullptr || p2 == nullptr || s.sequence == Sequence::None) {
            ++excluded;
            continue;
        }
        const double d = (p2->log_value(metric) - p1->log_value(metric)) / 2.0;
        if (!std::isfinite(d)) throw EndpointError(s.subject_id, "non-finite log endpoint");
        (s.sequence == Sequence::RT ? d_rt : d_tr).push_back(d);
    }
    if (d_rt.size() < 2 || d_tr.size() < 2)
        throw InsufficientDataError("nca_crossover_test: each sequence needs at least 2 complete subjects");
    Decision dec = detail::dispatch_two_sample(summarize_two_samples(d_rt, d_tr), method, margin, alpha);
    dec.n_excluded = excluded;
    return dec;
}

}  // namespace beq
