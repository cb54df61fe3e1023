#include <catch_amalgamated.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <sstream>

#include "beq/nlmem.hpp"

using namespace beq;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

const EquivalenceMargin kMargin = EquivalenceMargin::standard();

double cv_sd(double cv) { return std::sqrt(std::log1p(cv * cv)); }

PopulationModel low_parallel() {
    PopulationModel m;
    m.omega = {cv_sd(0.22), cv_sd(0.11), cv_sd(0.22)};
    return m;
}

TrialDesign parallel_design(std::vector<double> times) {
    TrialDesign d;
    d.sampling_times = std::move(times);
    return d;
}

SaemConfig seeded(std::uint64_t seed) {
    SaemConfig c;
    c.rng_seed = seed;
    return c;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double sd(const std::vector<double>& v) {
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

// Fits to rich parallel low-BSV trials simulated under equal formulations.
const std::vector<FitResult>& recovery_fits(int n = 100) {
    static std::vector<FitResult> fits;
    for (int r = static_cast<int>(fits.size()); r < n; ++r) {
        const TrialDataset data = simulate_trial(low_parallel(), parallel_design(TrialDesign::rich_times()), 5000 + r);
        fits.push_back(fit_saem(data, DesignKind::Parallel, seeded(77 + r)));
    }
    return fits;
}

TrialDataset duplicate_subjects(const TrialDataset& d) {
    TrialDataset out = d;
    for (Record r : d.records) {
        r.subject += "_copy";
        out.records.push_back(r);
    }
    return out;
}

FitResult synthetic_fit(double beta_auc, double se) {
    FitResult f;
    f.beta_auc_hat = f.beta_cmax_hat = beta_auc;
    f.se_beta_auc = f.se_beta_cmax = se;
    return f;
}

}  // namespace

TEST_CASE("SaemConfig defaults and validation") {
    const SaemConfig c;
    CHECK(c.n_chains == 10);
    CHECK(c.burn_in_iters == 300);
    CHECK(c.smoothing_iters == 100);
    CHECK(c.mcmc_steps_per_iter >= 1);
    SaemConfig bad;
    bad.n_chains = 0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = {};
    bad.target_acceptance = 1.0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = {};
    bad.mcmc_steps_per_iter = 0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("fit_saem rejects mismatched designs") {
    PopulationModel x = low_parallel();
    x.kind = DesignKind::Crossover2x2;
    TrialDesign xd = parallel_design(TrialDesign::rich_times());
    xd.kind = DesignKind::Crossover2x2;
    const TrialDataset crossover = simulate_trial(x, xd, 1);
    CHECK_THROWS_AS(fit_saem(crossover, DesignKind::Parallel), ValidationError);
    const TrialDataset parallel = simulate_trial(low_parallel(), parallel_design(TrialDesign::rich_times()), 1);
    CHECK_THROWS_AS(fit_saem(parallel, DesignKind::Crossover2x2), ValidationError);
    CHECK_THROWS_AS(fit_saem(TrialDataset{}, DesignKind::Parallel), ValidationError);
}

TEST_CASE("fit_saem is deterministic") {
    const TrialDataset data = simulate_trial(low_parallel(), parallel_design(TrialDesign::sparse_times()), 11);
    SaemConfig c = seeded(3);
    c.burn_in_iters = 60;
    c.smoothing_iters = 30;
    const FitResult a = fit_saem(data, DesignKind::Parallel, c);
    const FitResult b = fit_saem(data, DesignKind::Parallel, c);
    CHECK(a.fixed_effects == b.fixed_effects);
    CHECK(a.theta_hat.omega == b.theta_hat.omega);
    CHECK(a.theta_hat.err_add == b.theta_hat.err_add);
    CHECK(a.theta_hat.err_prop == b.theta_hat.err_prop);
    CHECK(a.se_beta_auc == b.se_beta_auc);
    CHECK(a.convergence_trace == b.convergence_trace);
    c.rng_seed = 4;
    CHECK(fit_saem(data, DesignKind::Parallel, c).fixed_effects != a.fixed_effects);
}

TEST_CASE("noiseless limit recovers lambda") {
    PopulationModel m;
    m.err_add = 1e-6;
    m.err_prop = 0.0;
    const TrialDataset data = simulate_trial(m, parallel_design(TrialDesign::rich_times()), 21);
    const FitResult fit = fit_saem(data, DesignKind::Parallel, seeded(5));
    const StructuralParams truth = StructuralParams::reference();
    CHECK_THAT(fit.theta_hat.lambda.ka, WithinRel(truth.ka, 0.005));
    CHECK_THAT(fit.theta_hat.lambda.v_over_f, WithinRel(truth.v_over_f, 0.005));
    CHECK_THAT(fit.theta_hat.lambda.cl_over_f, WithinRel(truth.cl_over_f, 0.005));
    for (double b : fit.theta_hat.beta_treatment) CHECK(std::abs(b) < 0.005);
}

TEST_CASE("FitResult structure") {
    const FitResult& fit = recovery_fits(1).front();
    CHECK(fit.fixed_effect_names.size() == 6);
    CHECK(fit.fixed_effects.size() == 6);
    CHECK(fit.variance_names.size() == 5);
    CHECK(fit.fim.rows() == 11);
    CHECK(fit.fim_method == "linearization");
    CHECK(fit.convergence_trace.size() == 400);
    CHECK(fit.loglik_trace.size() == 400);
    CHECK(fit.trace_names.size() == fit.convergence_trace.front().size());
    CHECK(fit.theta_hat.gamma == Vec3{0.0, 0.0, 0.0});

    const Eigen::MatrixXd& v = fit.fixed_effect_cov;
    CHECK((v - v.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * v.cwiseAbs().maxCoeff());
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(v);
    CHECK(es.eigenvalues().minCoeff() >= 0.0);
    CHECK((fit.fim.topLeftCorner(6, 6) * v - Eigen::MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("recovery, secondary identities and decision dominance over 100 fits") {
    const auto& fits = recovery_fits();
    const StructuralParams truth = StructuralParams::reference();
    const Vec3 omega = low_parallel().omega;
    std::array<std::vector<double>, 3> lambda_err, omega_err;
    for (const FitResult& f : fits) {
        const Vec3 est{f.theta_hat.lambda.ka, f.theta_hat.lambda.v_over_f, f.theta_hat.lambda.cl_over_f};
        const Vec3 tru{truth.ka, truth.v_over_f, truth.cl_over_f};
        for (int l = 0; l < 3; ++l) {
            lambda_err[l].push_back(std::abs(est[l] / tru[l] - 1.0));
            omega_err[l].push_back(std::abs(f.theta_hat.omega[l] / omega[l] - 1.0));
        }
        CHECK(f.beta_auc_hat == -f.theta_hat.beta_treatment[2]);
        CHECK(f.beta_auc_hat == f.effect(Metric::Auc));
        CHECK(f.se_beta_auc == std::sqrt(f.fixed_effect_cov(5, 5)));
        CHECK_THAT(f.beta_cmax_hat, WithinAbs(treatment_effect_secondary(f.theta_hat, Metric::Cmax), 1e-15));
        for (Metric m : {Metric::Auc, Metric::Cmax})
            for (double alpha : {0.01, 0.05, 0.1})
                if (mb_tost(f, m, kMargin, alpha).reject_h0) CHECK(mb_bot(f, m, kMargin, alpha).reject_h0);
    }
    for (int l = 0; l < 3; ++l) {
        CHECK(median(lambda_err[l]) < 0.10);
        CHECK(median(omega_err[l]) < 0.30);
    }
}

TEST_CASE("delta-method SE of the AUC effect matches its empirical spread") {
    const auto& fits = recovery_fits();
    std::vector<double> est, se;
    for (const FitResult& f : fits) {
        est.push_back(f.beta_auc_hat);
        se.push_back(f.se_beta_auc);
    }
    const double ratio = median(se) / sd(est);
    INFO("median SE " << median(se) << ", empirical SD " << sd(est));
    CHECK(std::abs(ratio - 1.0) < 0.25);
}

TEST_CASE("delta-method SE calibration at 500 fits", "[.extended]") {
    const auto& fits = recovery_fits(500);
    std::vector<double> est, se;
    for (const FitResult& f : fits) {
        est.push_back(f.beta_auc_hat);
        se.push_back(f.se_beta_auc);
    }
    CHECK(std::abs(median(se) / sd(est) - 1.0) < 0.25);
}

TEST_CASE("complete-data log-likelihood ascends on average") {
    const auto& fits = recovery_fits();
    const int window = 20;
    int no_significant_decrease = 0, net_ascent = 0, pointwise = 0;
    for (const FitResult& f : fits) {
        const std::vector<double>& L = f.loglik_trace;
        const int total = static_cast<int>(L.size()), k1 = 300;
        auto window_mean = [&](int from) {
            return std::accumulate(L.begin() + from, L.begin() + from + window, 0.0) / window;
        };
        // Smoothing phase: non-overlapping window means act as batch means.
        std::vector<double> batches;
        for (int s = k1; s + window <= total; s += window) batches.push_back(window_mean(s));
        const double se_diff = std::sqrt(2.0) * sd(batches);
        no_significant_decrease += batches.back() >= batches.front() - 3.0 * se_diff;
        net_ascent += window_mean(total - window) > window_mean(0);

        bool monotone = true;
        for (int s = k1 + 1; s + window <= total; ++s) monotone = monotone && window_mean(s) >= window_mean(s - 1);
        pointwise += monotone;
    }
    const int n = static_cast<int>(fits.size());
    WARN("pointwise nondecreasing window-" << window << " trace in smoothing phase: " << pointwise << " of " << n);
    CHECK(no_significant_decrease >= 0.95 * n);
    CHECK(net_ascent >= 0.95 * n);
}

TEST_CASE("Fisher information doubles for a duplicated dataset") {
    const TrialDataset data = simulate_trial(low_parallel(), parallel_design(TrialDesign::rich_times()), 31);
    const FitResult fit = fit_saem(data, DesignKind::Parallel, seeded(9));
    const TrialDataset twice = duplicate_subjects(data);

    IndividualLogParams modes = fit.conditional_modes;
    modes.insert(modes.end(), fit.conditional_modes.begin(), fit.conditional_modes.end());
    const FisherInformation info2 = fisher_information(fit.theta_hat, twice, modes);
    CHECK((info2.matrix - 2.0 * fit.fim).cwiseAbs().maxCoeff() <= 1e-9 * fit.fim.cwiseAbs().maxCoeff());

    const FitResult refit = fit_saem(twice, DesignKind::Parallel, seeded(9));
    for (Metric m : {Metric::Auc, Metric::Cmax})
        CHECK_THAT(fit.standard_error(m) / refit.standard_error(m), WithinRel(std::sqrt(2.0), 0.02));
}

IndividualLogParams typical_modes(const PopulationModel& m, const TrialDataset& data) {
    IndividualLogParams out;
    for (const SubjectData& s : group_by_subject(data)) {
        std::vector<Vec3> occ;
        for (const Occasion& o : s.occasions) {
            Vec3 psi = m.lambda.log();
            if (o.treatment == Treatment::T)
                for (int l = 0; l < 3; ++l) psi[l] += m.beta_treatment[l];
            occ.push_back(psi);
        }
        out.push_back(occ);
    }
    return out;
}

TEST_CASE("rich design carries more information than sparse design at the true parameters") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const PopulationModel m = low_parallel();
        const TrialDataset rich = simulate_trial(m, parallel_design(TrialDesign::rich_times()), seed);
        const TrialDataset sparse = simulate_trial(m, parallel_design(TrialDesign::sparse_times()), seed);
        const Eigen::MatrixXd cr = invert_information(fisher_information(m, rich, typical_modes(m, rich)).fixed_block());
        const Eigen::MatrixXd cs =
            invert_information(fisher_information(m, sparse, typical_modes(m, sparse)).fixed_block());
        for (int j = 0; j < 6; ++j) {
            INFO("fixed effect " << j);
            CHECK(cr(j, j) < cs(j, j));
        }
    }
}

TEST_CASE("rich sampling gives smaller fixed-effect SEs than sparse sampling") {
    const int pairs = 50;
    std::vector<std::vector<double>> rich(6), sparse(6);
    std::array<int, 6> per_effect{};
    for (int r = 0; r < pairs; ++r) {
        const FitResult fr =
            fit_saem(simulate_trial(low_parallel(), parallel_design(TrialDesign::rich_times()), 7000 + r),
                     DesignKind::Parallel, seeded(r + 1));
        const FitResult fs =
            fit_saem(simulate_trial(low_parallel(), parallel_design(TrialDesign::sparse_times()), 7000 + r),
                     DesignKind::Parallel, seeded(r + 1));
        for (int j = 0; j < 6; ++j) {
            const double a = std::sqrt(fr.fixed_effect_cov(j, j)), b = std::sqrt(fs.fixed_effect_cov(j, j));
            rich[j].push_back(a);
            sparse[j].push_back(b);
            per_effect[j] += a <= b;
        }
    }
    // One-sided sign test at 5%: 32 of 50 pairs.
    for (int j = 0; j < 6; ++j) {
        INFO("fixed effect " << j << ": " << per_effect[j] << " pairs, medians " << median(rich[j]) << " vs "
                             << median(sparse[j]));
        CHECK(median(rich[j]) <= median(sparse[j]));
        CHECK(per_effect[j] >= 32);
    }
}

TEST_CASE("delta_method_se") {
    const StructuralParams lambda = StructuralParams::reference();
    const Vec3 beta{0.05, std::log(1.25), std::log(1.25)};

    for (double c : {1e-4, 0.01, 2.0}) {
        const Eigen::MatrixXd cov = c * Eigen::MatrixXd::Identity(6, 6);
        CHECK_THAT(delta_method_se(lambda, beta, cov, Metric::Auc), WithinRel(std::sqrt(c), 1e-15));
    }

    Eigen::MatrixXd a = Eigen::MatrixXd::Random(6, 6);
    const Eigen::MatrixXd cov = a * a.transpose();
    CHECK(delta_method_se(lambda, beta, cov, Metric::Auc) == std::sqrt(cov(5, 5)));

    // Cmax: the quadratic form against central-difference gradients of the secondary effect.
    const Vec3 log_lambda = lambda.log();
    Eigen::VectorXd g(6);
    const double h = 1e-5;
    for (int j = 0; j < 6; ++j) {
        auto eval = [&](double step) {
            Vec3 ll = log_lambda, bb = beta;
            (j < 3 ? ll[j] : bb[j - 3]) += step;
            return secondary_effect(StructuralParams::from_log(ll), bb, Metric::Cmax);
        };
        g[j] = (eval(h) - eval(-h)) / (2 * h);
    }
    CHECK_THAT(delta_method_se(lambda, beta, cov, Metric::Cmax), WithinRel(std::sqrt(g.dot(cov * g)), 1e-6));

    // Larger covariances carry the extra period/sequence coordinates without contributing.
    Eigen::MatrixXd big = Eigen::MatrixXd::Identity(12, 12);
    big.topLeftCorner(6, 6) = cov;
    CHECK(delta_method_se(lambda, beta, big, Metric::Cmax) == delta_method_se(lambda, beta, cov, Metric::Cmax));

    Eigen::MatrixXd indefinite = Eigen::MatrixXd::Identity(6, 6);
    indefinite(0, 0) = -1.0;
    CHECK_THROWS_AS(delta_method_se(lambda, beta, indefinite, Metric::Auc), DomainError);
    CHECK_THROWS_AS(delta_method_se(lambda, beta, Eigen::MatrixXd::Identity(3, 3), Metric::Auc), ContractError);
}

TEST_CASE("invert_information") {
    Eigen::MatrixXd m(2, 2);
    m << 4.0, 1.0, 1.0, 3.0;
    CHECK((invert_information(m) * m - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-14);
    Eigen::MatrixXd singular(2, 2);
    singular << 1.0, 2.0, 2.0, 4.0;
    CHECK_THROWS_AS(invert_information(singular), SingularInformationError);
    try {
        Eigen::MatrixXd ill(2, 2);
        ill << 1.0, 0.0, 0.0, 1e-16;
        invert_information(ill);
        FAIL("expected SingularInformationError");
    } catch (const SingularInformationError& e) {
        CHECK_THAT(e.condition_number(), WithinRel(1e16, 1e-6));
        CHECK_THAT(std::string(e.what()), ContainsSubstring("condition number"));
    }
}

TEST_CASE("model-based decisions") {
    const double delta = kMargin.delta();
    for (double se : {1e-6, 0.01, 0.05, 0.2})
        for (double alpha : {0.01, 0.05, 0.1, 0.4}) {
            const FitResult f = synthetic_fit(delta, se);
            CHECK_FALSE(mb_tost(f, Metric::Auc, kMargin, alpha).reject_h0);
            CHECK_FALSE(mb_bot(f, Metric::Cmax, kMargin, alpha).reject_h0);
        }
    const FitResult f = synthetic_fit(0.01, 0.03);
    const Decision t = mb_tost(f, Metric::Auc, kMargin, 0.05);
    CHECK(t.method == TestMethod::TostZ);
    CHECK(t.reject_h0);
    CHECK_THAT(t.critical_value, WithinAbs(1.6448536269514727, 1e-12));
    const Decision b = mb_bot(f, Metric::Auc, kMargin, 0.05);
    CHECK(b.method == TestMethod::Bot);
    CHECK(b.critical_value == bot(0.01, 0.03, kMargin, 0.05).critical_value);
    CHECK_THROWS_AS(mb_tost(synthetic_fit(0.0, std::nan("")), Metric::Auc, kMargin, 0.05), DomainError);
    CHECK_THROWS_AS(mb_bot(synthetic_fit(0.0, -1.0), Metric::Cmax, kMargin, 0.05), DomainError);
}

TEST_CASE("crossover fit") {
    PopulationModel m;
    m.kind = DesignKind::Crossover2x2;
    m.omega = {cv_sd(0.2), cv_sd(0.1), cv_sd(0.2)};
    m.gamma = {cv_sd(0.1), cv_sd(0.05), cv_sd(0.1)};
    TrialDesign d = parallel_design(TrialDesign::rich_times());
    d.kind = DesignKind::Crossover2x2;
    const TrialDataset data = simulate_trial(m, d, 41);

    const FitResult fit = fit_saem(data, DesignKind::Crossover2x2, seeded(2));
    CHECK(fit.fixed_effects.size() == 6);
    CHECK(fit.variance_names.size() == 8);
    CHECK(fit.fim.rows() == 14);
    CHECK(fit.theta_hat.beta_period == Vec3{0.0, 0.0, 0.0});
    CHECK(std::abs(fit.beta_auc_hat) < 0.1);
    CHECK(fit.se_beta_auc < 0.1);
    CHECK(fit.se_beta_auc > 0.0);
    for (int l = 0; l < 3; ++l) CHECK(fit.theta_hat.gamma[l] > 0.0);

    SaemConfig free = seeded(2);
    free.estimate_period_sequence = true;
    free.burn_in_iters = 100;
    free.smoothing_iters = 50;
    const FitResult fp = fit_saem(data, DesignKind::Crossover2x2, free);
    CHECK(fp.period_sequence_estimated);
    CHECK(fp.fixed_effects.size() == 12);
    CHECK(fp.fixed_effect_cov.rows() == 12);
    CHECK(fp.fixed_effect_names[6] == "beta_P_ka");
    for (int l = 0; l < 3; ++l) CHECK(std::abs(fp.theta_hat.beta_period[l]) < 0.2);
}

TEST_CASE("fit report and trace serialization") {
    const FitResult& fit = recovery_fits(1).front();
    std::ostringstream report;
    write_fit_report(report, fit, kMargin, 0.05);
    const std::string text = report.str();
    for (const char* section :
         {"[model]", "[fixed_effects]", "[variance_components]", "[secondary_effects]", "[decisions]"})
        CHECK_THAT(text, ContainsSubstring(section));
    CHECK_THAT(text, ContainsSubstring("fim_method = linearization"));
    CHECK_THAT(text, ContainsSubstring("beta_auc = "));
    CHECK_THAT(text, ContainsSubstring("MB-BOT_CMAX = "));

    std::ostringstream trace;
    write_trace_csv(trace, fit);
    std::istringstream in(trace.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "iteration,parameter,value");
    std::size_t rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == fit.convergence_trace.size() * (fit.trace_names.size() + 1));
    CHECK_THAT(trace.str(), ContainsSubstring("\n400,complete_loglik,"));
}
