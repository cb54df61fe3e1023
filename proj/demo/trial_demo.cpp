// Simulates one parallel trial with equal formulations, then runs the NCA
// and model-based tests on it.

#include <cstdio>
#include <iostream>

#include "beq/beq.hpp"

int main() {
    using namespace beq;
    Scenario s;
    s.hypothesis = Hypothesis::H1Equal;
    const PopulationModel model = model_for_scenario(s);
    const TrialDataset data = simulate_trial(model, s.design_spec(), 2024);
    const EquivalenceMargin margin = EquivalenceMargin::standard();

    const auto endpoints = extract_endpoints(data);
    for (Metric m : kAllMetrics)
        for (NcaMethod method : {NcaMethod::Tost, NcaMethod::Bot}) {
            const Decision d = nca_parallel_test(endpoints, m, method, margin, 0.05);
            std::printf("NCA-%-4s %-4s effect %+.4f  se %.4f  critical %.4f  %s\n", to_string(method), to_string(m),
                        d.effect_estimate, d.standard_error, d.critical_value, d.reject_h0 ? "reject" : "retain");
        }

    SaemConfig config;
    config.rng_seed = 7;
    const FitResult fit = fit_saem(data, DesignKind::Parallel, config);
    std::cout << '\n';
    write_fit_report(std::cout, fit, margin, 0.05);
}
