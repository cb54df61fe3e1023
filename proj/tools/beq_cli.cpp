// Command-line front end: simulate, nca, fit, test, study, power-curve.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>

#include "beq/beq.hpp"

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

struct Output {
    std::unique_ptr<std::ofstream> file;
    std::ostream* os = &std::cout;

    explicit Output(const std::string& path) {
        if (path.empty() || path == "-") return;
        file = std::make_unique<std::ofstream>(path);
        if (!*file) throw beq::ValidationError("cannot open output file '" + path + "'");
        os = file.get();
    }
    std::ostream& operator*() { return *os; }
};

beq::TrialDataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw beq::ValidationError("cannot open dataset '" + path + "'");
    return beq::read_dataset_csv(in);
}

const std::map<std::string, beq::DesignKind> kDesigns{{"parallel", beq::DesignKind::Parallel},
                                                      {"crossover", beq::DesignKind::Crossover2x2}};
const std::map<std::string, beq::Sampling> kSamplings{{"rich", beq::Sampling::Rich}, {"sparse", beq::Sampling::Sparse}};
const std::map<std::string, beq::Variability> kVariabilities{{"low", beq::Variability::Low},
                                                             {"high", beq::Variability::High}};
const std::map<std::string, beq::Hypothesis> kHypotheses{{"h0", beq::Hypothesis::H0Boundary},
                                                         {"h1", beq::Hypothesis::H1Equal}};
const std::map<std::string, beq::CvMapping> kCvMappings{{"exact", beq::CvMapping::Exact},
                                                        {"naive", beq::CvMapping::Naive}};

void print_decision(std::ostream& os, const std::string& label, const beq::Decision& d) {
    os << label << ": " << (d.reject_h0 ? "reject H0 (equivalent)" : "retain H0") << "  estimate "
       << beq::detail::format_real(d.effect_estimate) << "  se " << beq::detail::format_real(d.standard_error)
       << "  critical " << beq::detail::format_real(d.critical_value) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Average bioequivalence: simulation, NCA and model-based tests, Monte Carlo studies"};
    app.require_subcommand(1);

    // simulate
    auto* sim = app.add_subcommand("simulate", "Simulate a trial dataset (CSV)");
    beq::Scenario sim_s;
    std::uint64_t sim_seed = 0;
    std::string sim_out;
    sim->add_option("--design", sim_s.design)->transform(CLI::CheckedTransformer(kDesigns, CLI::ignore_case));
    sim->add_option("--sampling", sim_s.sampling)->transform(CLI::CheckedTransformer(kSamplings, CLI::ignore_case));
    sim->add_option("--variability", sim_s.variability)
        ->transform(CLI::CheckedTransformer(kVariabilities, CLI::ignore_case));
    sim->add_option("--hypothesis", sim_s.hypothesis)
        ->transform(CLI::CheckedTransformer(kHypotheses, CLI::ignore_case));
    sim->add_option("--cv-mapping", sim_s.cv_mapping)
        ->transform(CLI::CheckedTransformer(kCvMappings, CLI::ignore_case));
    sim->add_option("--n-subjects", sim_s.n_subjects, "Even number of subjects")->check(CLI::PositiveNumber);
    sim->add_option("--seed", sim_seed, "Simulation seed")->required();
    sim->add_option("-o,--output", sim_out, "Output CSV (default stdout)");

    // nca
    auto* nca = app.add_subcommand("nca", "NCA endpoints and NCA-TOST / NCA-BOT decisions");
    std::string nca_in, nca_endpoints;
    double nca_alpha = 0.05, nca_margin = std::log(1.25);
    nca->add_option("-i,--input", nca_in, "Dataset CSV")->required();
    nca->add_option("--alpha", nca_alpha, "Test level (default 0.05)");
    nca->add_option("--margin", nca_margin, "Log-scale margin delta (default log 1.25)");
    nca->add_option("--endpoints", nca_endpoints, "Write per-subject endpoints CSV");

    // fit
    auto* fit = app.add_subcommand("fit", "Fit the NLMEM by SAEM and report MB-TOST / MB-BOT decisions");
    std::string fit_in, fit_report, fit_trace, fit_design;
    double fit_alpha = 0.05, fit_margin = std::log(1.25);
    beq::SaemConfig fit_cfg;
    fit->add_option("-i,--input", fit_in, "Dataset CSV")->required();
    fit->add_option("--design", fit_design, "parallel|crossover (inferred from the sequence column by default)")
        ->check(CLI::IsMember({"parallel", "crossover"}, CLI::ignore_case));
    fit->add_option("--seed", fit_cfg.rng_seed, "SAEM seed");
    fit->add_option("--chains", fit_cfg.n_chains, "Markov chains per subject (default 10)")->check(CLI::PositiveNumber);
    fit->add_option("--burn-in", fit_cfg.burn_in_iters, "Burn-in iterations (default 300)")->check(CLI::PositiveNumber);
    fit->add_option("--smoothing", fit_cfg.smoothing_iters, "Smoothing iterations (default 100)")->check(CLI::PositiveNumber);
    fit->add_option("--mcmc-steps", fit_cfg.mcmc_steps_per_iter, "MCMC steps per iteration (default 2)")->check(CLI::PositiveNumber);
    fit->add_flag("--free-period-sequence", fit_cfg.estimate_period_sequence,
                  "Estimate period and sequence effects in crossover fits");
    fit->add_option("--alpha", fit_alpha, "Test level (default 0.05)");
    fit->add_option("--margin", fit_margin, "Log-scale margin delta (default log 1.25)");
    fit->add_option("-o,--report", fit_report, "Report file (default stdout)");
    fit->add_option("--trace", fit_trace, "Convergence trace CSV");

    // test
    auto* test = app.add_subcommand("test", "TOST (z) and BOT decisions for an estimate and its standard error");
    double t_est = 0.0, t_se = 0.0, t_alpha = 0.05, t_margin = std::log(1.25);
    test->add_option("--estimate", t_est, "Effect estimate (log scale)")->required();
    test->add_option("--se", t_se, "Standard error of the estimate")->required();
    test->add_option("--alpha", t_alpha, "Test level (default 0.05)");
    test->add_option("--margin", t_margin, "Log-scale margin delta (default log 1.25)");

    // study
    auto* study = app.add_subcommand("study", "Run a Monte Carlo study from a config file");
    std::string st_config, st_out_dir;
    std::uint64_t st_seed = 0;
    int st_workers = 0;
    study->add_option("-c,--config", st_config, "Study config")->required()->check(CLI::ExistingFile);
    study->add_option("--seed", st_seed, "Master seed")->required();
    study->add_option("--out-dir", st_out_dir, "Directory for type1.csv / power.csv");
    study->add_option("--workers", st_workers, "Worker threads (default: BEQ_WORKERS or hardware threads)")
        ->check(CLI::PositiveNumber);

    // power-curve
    auto* pc = app.add_subcommand("power-curve", "Closed-form TOST / BOT power on a grid of true effects");
    double pc_sigma = 0.0, pc_alpha = 0.05, pc_margin = std::log(1.25), pc_dmin = -0.3, pc_dmax = 0.3;
    int pc_points = 121;
    std::string pc_out;
    pc->add_option("--sigma", pc_sigma, "Standard error sigma_P")->required();
    pc->add_option("--alpha", pc_alpha, "Test level (default 0.05)");
    pc->add_option("--margin", pc_margin, "Log-scale margin delta (default log 1.25)");
    pc->add_option("--d-min", pc_dmin, "Grid start (default -0.3)");
    pc->add_option("--d-max", pc_dmax, "Grid end (default 0.3)");
    pc->add_option("--points", pc_points, "Grid points (default 121)")->check(CLI::Range(2, 1000000));
    pc->add_option("-o,--output", pc_out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitValidation;
    }

    try {
        if (*sim) {
            sim_s.methods = {beq::Method::MbTost};
            sim_s.validate();
            const beq::TrialDataset data =
                beq::simulate_trial(beq::model_for_scenario(sim_s), sim_s.design_spec(), sim_seed);
            Output out(sim_out);
            beq::write_dataset_csv(*out, data);
        } else if (*nca) {
            const beq::TrialDataset data = load_dataset(nca_in);
            const beq::DesignKind kind = beq::infer_design_kind(data);
            const auto endpoints = beq::extract_endpoints(data);
            if (!nca_endpoints.empty()) {
                Output out(nca_endpoints);
                beq::write_endpoints_csv(*out, endpoints);
            }
            const beq::EquivalenceMargin margin(nca_margin);
            std::cout << "design = " << beq::to_string(kind) << '\n';
            for (beq::Metric m : beq::kAllMetrics)
                for (beq::NcaMethod method : {beq::NcaMethod::Tost, beq::NcaMethod::Bot}) {
                    const beq::Decision d = kind == beq::DesignKind::Parallel
                                                ? beq::nca_parallel_test(endpoints, m, method, margin, nca_alpha)
                                                : beq::nca_crossover_test(endpoints, m, method, margin, nca_alpha);
                    print_decision(std::cout, std::string("NCA-") + beq::to_string(method) + ' ' + beq::to_string(m), d);
                }
        } else if (*fit) {
            const beq::TrialDataset data = load_dataset(fit_in);
            beq::DesignKind kind = beq::infer_design_kind(data);
            if (!fit_design.empty())
                kind = beq::detail::lower(fit_design) == "parallel" ? beq::DesignKind::Parallel
                                                                     : beq::DesignKind::Crossover2x2;
            const beq::FitResult result = beq::fit_saem(data, kind, fit_cfg);
            Output out(fit_report);
            beq::write_fit_report(*out, result, beq::EquivalenceMargin(fit_margin), fit_alpha);
            if (!fit_trace.empty()) {
                Output trace(fit_trace);
                beq::write_trace_csv(*trace, result);
            }
        } else if (*test) {
            const beq::EquivalenceMargin margin(t_margin);
            print_decision(std::cout, "TOST", beq::tost_z(t_est, t_se, margin, t_alpha));
            print_decision(std::cout, "BOT", beq::bot(t_est, t_se, margin, t_alpha));
        } else if (*study) {
            std::ifstream in(st_config);
            const beq::StudyConfig cfg = beq::parse_study_config(in, st_seed);
            const beq::StudyReport report = beq::run_study(cfg, st_workers, &std::cerr);
            for (beq::Hypothesis h : {beq::Hypothesis::H0Boundary, beq::Hypothesis::H1Equal}) {
                const bool present = std::any_of(cfg.scenarios.begin(), cfg.scenarios.end(),
                                                 [&](const beq::Scenario& s) { return s.hypothesis == h; });
                if (!present) continue;
                beq::write_study_table(std::cout, report, h);
                std::cout << '\n';
                if (!st_out_dir.empty()) {
                    std::filesystem::create_directories(st_out_dir);
                    const auto path = std::filesystem::path(st_out_dir) /
                                      (h == beq::Hypothesis::H0Boundary ? "type1.csv" : "power.csv");
                    Output out(path.string());
                    beq::write_study_csv(*out, report, h);
                } else {
                    beq::write_study_csv(std::cout, report, h);
                    std::cout << '\n';
                }
            }
        } else if (*pc) {
            const auto pts = beq::power_curve(pc_sigma, beq::EquivalenceMargin(pc_margin), pc_alpha,
                                              beq::linear_grid(pc_dmin, pc_dmax, pc_points));
            Output out(pc_out);
            beq::write_power_curve_csv(*out, pts);
        }
    } catch (const beq::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const beq::DomainError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const beq::ContractError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return 0;
}
