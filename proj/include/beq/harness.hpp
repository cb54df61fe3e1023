#pragma once

// Monte Carlo study harness: scenario definitions, the study config format,
// replicate execution over a worker pool, aggregation and report writers.

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "beq/equivalence.hpp"
#include "beq/errors.hpp"
#include "beq/nca.hpp"
#include "beq/nlmem.hpp"
#include "beq/pkmodel.hpp"
#include "beq/rng.hpp"

namespace beq {

enum class Sampling { Rich, Sparse };
enum class Variability { Low, High };
enum class Hypothesis { H0Boundary, H1Equal };
enum class Method { NcaTost, NcaBot, MbTost, MbBot };
enum class CvMapping { Exact, Naive };

inline const char* to_string(Sampling s) { return s == Sampling::Rich ? "rich" : "sparse"; }
inline const char* to_string(Variability v) { return v == Variability::Low ? "low" : "high"; }
inline const char* to_string(Hypothesis h) { return h == Hypothesis::H0Boundary ? "h0" : "h1"; }
inline const char* to_string(CvMapping c) { return c == CvMapping::Exact ? "exact" : "naive"; }
inline const char* to_string(Method m) {
    switch (m) {
        case Method::NcaTost: return "NCA-TOST";
        case Method::NcaBot: return "NCA-BOT";
        case Method::MbTost: return "MB-TOST";
        case Method::MbBot: return "MB-BOT";
    }
    return "?";
}

inline constexpr std::array<Method, 4> kAllMethods = {Method::NcaTost, Method::NcaBot, Method::MbTost, Method::MbBot};
inline constexpr std::array<Metric, 2> kAllMetrics = {Metric::Auc, Metric::Cmax};

inline bool is_nca(Method m) noexcept { return m == Method::NcaTost || m == Method::NcaBot; }

/// Lower and upper bounds of the 95% prediction interval for a 0.05 level at 500 replicates.
inline constexpr double kLevelBandLow = 0.0326;
inline constexpr double kLevelBandHigh = 0.0729;

/// Log-scale SD of a lognormal random effect with the given coefficient of variation.
inline double cv_to_sd(double cv, CvMapping mapping) {
    if (!(cv >= 0.0)) throw DomainError("cv_to_sd: CV must be >= 0");
    return mapping == CvMapping::Exact ? std::sqrt(std::log1p(cv * cv)) : cv;
}

struct VariabilitySetting {
    Vec3 omega_cv{};
    Vec3 gamma_cv{};
};

/// Simulated between- and within-subject CVs for the (ka, V/F, CL/F) components.
inline VariabilitySetting variability_setting(DesignKind kind, Variability v) {
    if (kind == DesignKind::Parallel)
        return v == Variability::Low ? VariabilitySetting{{0.22, 0.11, 0.22}, {}}
                                     : VariabilitySetting{{0.52, 0.52, 0.52}, {}};
    return v == Variability::Low ? VariabilitySetting{{0.20, 0.10, 0.20}, {0.10, 0.05, 0.10}}
                                 : VariabilitySetting{{0.50, 0.50, 0.50}, {0.15, 0.15, 0.15}};
}

struct Scenario {
    DesignKind design = DesignKind::Parallel;
    Sampling sampling = Sampling::Rich;
    Variability variability = Variability::Low;
    Hypothesis hypothesis = Hypothesis::H0Boundary;
    std::vector<Method> methods{kAllMethods.begin(), kAllMethods.end()};
    std::vector<Metric> metrics{kAllMetrics.begin(), kAllMetrics.end()};
    int n_replicates = 500;
    int n_subjects = 40;
    double dose = 4.0;
    double alpha = 0.05;
    double margin = std::log(1.25);
    CvMapping cv_mapping = CvMapping::Exact;
    SaemConfig saem{};
    std::uint64_t master_seed = 0;
    /// Replaces the built-in scenario model when set (its kind must match the design).
    std::optional<PopulationModel> model_override;

    std::string label() const {
        return std::string(to_string(design)) + '/' + to_string(sampling) + '/' + to_string(variability) + '/' +
               to_string(hypothesis);
    }

    bool uses_nca() const { return std::any_of(methods.begin(), methods.end(), is_nca); }
    bool uses_model() const { return std::any_of(methods.begin(), methods.end(), [](Method m) { return !is_nca(m); }); }

    void validate() const {
        if (methods.empty()) throw ValidationError("scenario " + label() + ": method list is empty");
        if (metrics.empty()) throw ValidationError("scenario " + label() + ": metric list is empty");
        if (sampling == Sampling::Sparse && uses_nca())
            throw ValidationError("scenario " + label() + ": NCA methods require the rich sampling design");
        if (n_replicates < 1) throw ValidationError("scenario " + label() + ": n_replicates must be >= 1");
        if (!(alpha > 0.0 && alpha < 0.5)) throw ValidationError("scenario " + label() + ": alpha must lie in (0, 0.5)");
        if (!(margin > 0.0)) throw ValidationError("scenario " + label() + ": margin must be > 0");
        design_spec().validate();
        saem.validate();
        if (model_override) {
            if (model_override->kind != design)
                throw ValidationError("scenario " + label() + ": model override kind does not match the design");
            model_override->validate();
        }
    }

    TrialDesign design_spec() const {
        TrialDesign d;
        d.kind = design;
        d.n_subjects = n_subjects;
        d.dose = dose;
        d.sampling_times = sampling == Sampling::Rich ? TrialDesign::rich_times() : TrialDesign::sparse_times();
        return d;
    }
};

/// Population model simulated for a scenario: reference lambda, built-in variability,
/// and beta_V = beta_CL = log 1.25 under the null boundary or beta = 0 under equivalence.
inline PopulationModel model_for_scenario(const Scenario& s) {
    if (s.model_override) return *s.model_override;
    PopulationModel m;
    m.kind = s.design;
    m.lambda = StructuralParams::reference();
    const VariabilitySetting v = variability_setting(s.design, s.variability);
    for (int l = 0; l < 3; ++l) {
        m.omega[l] = cv_to_sd(v.omega_cv[l], s.cv_mapping);
        m.gamma[l] = s.design == DesignKind::Crossover2x2 ? cv_to_sd(v.gamma_cv[l], s.cv_mapping) : 0.0;
    }
    if (s.hypothesis == Hypothesis::H0Boundary) {
        m.beta_treatment[static_cast<int>(PkParam::V)] = std::log(1.25);
        m.beta_treatment[static_cast<int>(PkParam::Cl)] = std::log(1.25);
    }
    return m;
}

namespace detail {

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline int method_index(Method m) { return static_cast<int>(m); }
inline int metric_index(Metric m) { return m == Metric::Auc ? 0 : 1; }

}  // namespace detail

/// Seed of global replicate r of a scenario; depends only on (master_seed, scenario label, r).
inline std::uint64_t replicate_seed(const Scenario& s, std::uint64_t r) {
    return derive_key(s.master_seed, {detail::fnv1a(s.label()), r});
}

struct ReplicateOutcome {
    bool nca_ok = false;
    bool model_ok = false;
    /// reject[method][metric], valid only where the corresponding *_ok flag is set.
    std::array<std::array<bool, 2>, 4> reject{};
    std::string failure;

    bool ok(Method m) const noexcept { return is_nca(m) ? nca_ok : model_ok; }
    bool rejects(Method m, Metric metric) const noexcept {
        return reject[detail::method_index(m)][detail::metric_index(metric)];
    }
};

/// Runs every requested method on replicate r of the scenario.
inline ReplicateOutcome run_replicate(const Scenario& s, std::uint64_t r) {
    ReplicateOutcome out;
    const std::uint64_t seed = replicate_seed(s, r);
    const EquivalenceMargin margin(s.margin);
    TrialDataset data;
    try {
        data = simulate_trial(model_for_scenario(s), s.design_spec(), seed);
    } catch (const SingularityError& e) {
        out.failure = std::string("simulation: ") + e.what();
        return out;
    }
    if (s.uses_nca()) {
        try {
            const auto endpoints = extract_endpoints(data);
            for (Method m : s.methods) {
                if (!is_nca(m)) continue;
                const NcaMethod nm = m == Method::NcaTost ? NcaMethod::Tost : NcaMethod::Bot;
                for (Metric metric : s.metrics) {
                    const Decision d = s.design == DesignKind::Parallel
                                           ? nca_parallel_test(endpoints, metric, nm, margin, s.alpha)
                                           : nca_crossover_test(endpoints, metric, nm, margin, s.alpha);
                    out.reject[detail::method_index(m)][detail::metric_index(metric)] = d.reject_h0;
                }
            }
            out.nca_ok = true;
        } catch (const EndpointError& e) {
            out.failure = std::string("nca: ") + e.what();
        } catch (const InsufficientDataError& e) {
            out.failure = std::string("nca: ") + e.what();
        } catch (const DomainError& e) {
            out.failure = std::string("nca: ") + e.what();
        }
    }
    if (s.uses_model()) {
        try {
            SaemConfig cfg = s.saem;
            cfg.rng_seed = derive_key(seed, {0x5AE3});
            const FitResult fit = fit_saem(data, s.design, cfg);
            for (Method m : s.methods) {
                if (is_nca(m)) continue;
                for (Metric metric : s.metrics) {
                    const Decision d = m == Method::MbTost ? mb_tost(fit, metric, margin, s.alpha)
                                                           : mb_bot(fit, metric, margin, s.alpha);
                    out.reject[detail::method_index(m)][detail::metric_index(metric)] = d.reject_h0;
                }
            }
            out.model_ok = true;
        } catch (const FitError& e) {
            out.failure = std::string("fit: ") + e.what();
        } catch (const SingularInformationError& e) {
            out.failure = std::string("fit: ") + e.what();
        } catch (const DomainError& e) {
            out.failure = std::string("fit: ") + e.what();
        }
    }
    return out;
}

struct CellResult {
    Method method = Method::NcaTost;
    Metric metric = Metric::Auc;
    int rejections = 0;
    int n_valid = 0;
    int n_failed = 0;
    double rate = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    bool flagged = false;
};

struct ScenarioResult {
    Scenario scenario;
    std::vector<CellResult> cells;
    std::vector<ReplicateOutcome> replicates;
    std::vector<std::string> warnings;
    double runtime_seconds = 0.0;

    const CellResult& cell(Method m, Metric metric) const {
        for (const auto& c : cells)
            if (c.method == m && c.metric == metric) return c;
        throw ContractError(std::string("ScenarioResult: no cell for ") + to_string(m) + ' ' + to_string(metric));
    }
};

/// Wald 95% interval for a binomial proportion, clipped to [0, 1].
inline std::pair<double, double> wald_interval(int successes, int n) {
    if (n <= 0) return {0.0, 1.0};
    const double p = static_cast<double>(successes) / n;
    const double half = 1.959963984540054 * std::sqrt(p * (1.0 - p) / n);
    return {std::max(0.0, p - half), std::min(1.0, p + half)};
}

/// Worker count from BEQ_WORKERS, defaulting to the hardware concurrency.
inline int default_worker_count() {
    if (const char* env = std::getenv("BEQ_WORKERS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v >= 1 && v <= 4096) return static_cast<int>(v);
        throw ValidationError(std::string("BEQ_WORKERS must be a positive integer, got '") + env + "'");
    }
    return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

/// Aggregates replicate outcomes into per-(method, metric) cells.
inline std::vector<CellResult> aggregate(const Scenario& s, const std::vector<ReplicateOutcome>& reps) {
    std::vector<CellResult> cells;
    for (Method m : s.methods) {
        for (Metric metric : s.metrics) {
            CellResult c;
            c.method = m;
            c.metric = metric;
            for (const auto& r : reps) {
                if (!r.ok(m)) {
                    ++c.n_failed;
                    continue;
                }
                ++c.n_valid;
                if (r.rejects(m, metric)) ++c.rejections;
            }
            c.rate = c.n_valid > 0 ? static_cast<double>(c.rejections) / c.n_valid : 0.0;
            std::tie(c.ci_low, c.ci_high) = wald_interval(c.rejections, c.n_valid);
            c.flagged = s.hypothesis == Hypothesis::H0Boundary && c.n_valid > 0 &&
                        (c.rate < kLevelBandLow || c.rate > kLevelBandHigh);
            cells.push_back(c);
        }
    }
    return cells;
}

/// Runs replicates [first, first + count) of a scenario on `workers` threads.
/// Outcomes are stored by replicate index, so results do not depend on scheduling.
inline ScenarioResult run_scenario(const Scenario& s, int workers = 0, std::uint64_t first_replicate = 0) {
    s.validate();
    if (workers <= 0) workers = default_worker_count();
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t n = static_cast<std::size_t>(s.n_replicates);
    std::vector<ReplicateOutcome> reps(n);
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto work = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                reps[i] = run_replicate(s, first_replicate + i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                next = n;
            }
        }
    };
    const int nthreads = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(workers), n));
    if (nthreads <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < nthreads; ++t) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    if (first_error) std::rethrow_exception(first_error);

    ScenarioResult out;
    out.scenario = s;
    out.cells = aggregate(s, reps);
    for (std::size_t i = 0; i < n; ++i)
        if (!reps[i].failure.empty())
            out.warnings.push_back("replicate " + std::to_string(first_replicate + i) + ": " + reps[i].failure);
    const bool nca_all_failed = s.uses_nca() && std::none_of(reps.begin(), reps.end(), [](const auto& r) { return r.nca_ok; });
    const bool mb_all_failed = s.uses_model() && std::none_of(reps.begin(), reps.end(), [](const auto& r) { return r.model_ok; });
    if (nca_all_failed || mb_all_failed)
        throw StudyError("scenario " + s.label() + ": all replicates failed" +
                         (out.warnings.empty() ? std::string() : " (first: " + out.warnings.front() + ")"));
    out.replicates = std::move(reps);
    out.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

// ---------------------------------------------------------------------------
// Study configuration

struct StudyConfig {
    std::vector<Scenario> scenarios;
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

inline std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

struct ConfigEntry {
    std::string value;
    int line = 0;
};

using ConfigSection = std::map<std::string, ConfigEntry>;

[[noreturn]] inline void config_error(int line, const std::string& key, const std::string& msg) {
    throw ValidationError("config line " + std::to_string(line) + (key.empty() ? "" : ", field '" + key + "'") + ": " +
                          msg);
}

inline int parse_int_field(const ConfigEntry& e, const std::string& key, int min_value) {
    char* end = nullptr;
    const long v = std::strtol(e.value.c_str(), &end, 10);
    if (e.value.empty() || *end != '\0' || v < min_value || v > 100000000)
        config_error(e.line, key, "expected an integer >= " + std::to_string(min_value) + ", got '" + e.value + "'");
    return static_cast<int>(v);
}

inline double parse_real_field(const ConfigEntry& e, const std::string& key) {
    char* end = nullptr;
    const double v = std::strtod(e.value.c_str(), &end);
    if (e.value.empty() || *end != '\0' || !std::isfinite(v))
        config_error(e.line, key, "expected a real number, got '" + e.value + "'");
    return v;
}

template <class Enum>
Enum parse_enum(const std::string& raw, const ConfigEntry& e, const std::string& key,
                std::initializer_list<std::pair<const char*, Enum>> options) {
    const std::string v = lower(raw);
    std::string allowed;
    for (const auto& [name, value] : options) {
        if (v == name) return value;
        allowed += (allowed.empty() ? "" : "|") + std::string(name);
    }
    config_error(e.line, key, "unknown value '" + raw + "' (expected " + allowed + ")");
}

inline DesignKind parse_design(const std::string& v, const ConfigEntry& e) {
    return parse_enum<DesignKind>(v, e, "design", {{"parallel", DesignKind::Parallel}, {"crossover", DesignKind::Crossover2x2}});
}
inline Sampling parse_sampling(const std::string& v, const ConfigEntry& e) {
    return parse_enum<Sampling>(v, e, "sampling", {{"rich", Sampling::Rich}, {"sparse", Sampling::Sparse}});
}
inline Variability parse_variability(const std::string& v, const ConfigEntry& e) {
    return parse_enum<Variability>(v, e, "variability", {{"low", Variability::Low}, {"high", Variability::High}});
}
inline Hypothesis parse_hypothesis(const std::string& v, const ConfigEntry& e) {
    return parse_enum<Hypothesis>(v, e, "hypothesis", {{"h0", Hypothesis::H0Boundary}, {"h1", Hypothesis::H1Equal}});
}
inline Method parse_method(const std::string& v, const ConfigEntry& e) {
    return parse_enum<Method>(v, e, "methods",
                              {{"nca-tost", Method::NcaTost}, {"nca_tost", Method::NcaTost},
                               {"nca-bot", Method::NcaBot}, {"nca_bot", Method::NcaBot},
                               {"mb-tost", Method::MbTost}, {"mb_tost", Method::MbTost},
                               {"mb-bot", Method::MbBot}, {"mb_bot", Method::MbBot}});
}
inline Metric parse_metric(const std::string& v, const ConfigEntry& e) {
    return parse_enum<Metric>(v, e, "metrics", {{"auc", Metric::Auc}, {"cmax", Metric::Cmax}});
}

inline const std::vector<std::string>& study_keys() {
    static const std::vector<std::string> keys{"replicates",  "alpha",     "margin",         "cv_mapping",
                                               "n_subjects",  "dose",      "methods",        "metrics",
                                               "saem_chains", "saem_burn_in", "saem_smoothing", "saem_mcmc_steps",
                                               "saem_period_sequence"};
    return keys;
}
inline const std::vector<std::string>& scenario_only_keys() {
    static const std::vector<std::string> keys{"design", "sampling", "variability", "hypothesis"};
    return keys;
}

inline void apply_common(Scenario& s, const ConfigSection& sec) {
    for (const auto& [key, e] : sec) {
        if (key == "replicates") s.n_replicates = parse_int_field(e, key, 1);
        else if (key == "alpha") {
            s.alpha = parse_real_field(e, key);
            if (!(s.alpha > 0.0 && s.alpha < 0.5)) config_error(e.line, key, "alpha must lie in (0, 0.5)");
        } else if (key == "margin") {
            s.margin = parse_real_field(e, key);
            if (!(s.margin > 0.0)) config_error(e.line, key, "margin must be > 0");
        } else if (key == "cv_mapping") {
            s.cv_mapping = parse_enum<CvMapping>(e.value, e, key, {{"exact", CvMapping::Exact}, {"naive", CvMapping::Naive}});
        } else if (key == "n_subjects") {
            s.n_subjects = parse_int_field(e, key, 2);
            if (s.n_subjects % 2 != 0) config_error(e.line, key, "n_subjects must be even");
        } else if (key == "dose") {
            s.dose = parse_real_field(e, key);
            if (!(s.dose > 0.0)) config_error(e.line, key, "dose must be > 0");
        } else if (key == "methods") {
            s.methods.clear();
            for (const auto& item : split_list(e.value)) {
                const Method m = parse_method(item, e);
                if (std::find(s.methods.begin(), s.methods.end(), m) == s.methods.end()) s.methods.push_back(m);
            }
            if (s.methods.empty()) config_error(e.line, key, "method list is empty");
        } else if (key == "metrics") {
            s.metrics.clear();
            for (const auto& item : split_list(e.value)) {
                const Metric m = parse_metric(item, e);
                if (std::find(s.metrics.begin(), s.metrics.end(), m) == s.metrics.end()) s.metrics.push_back(m);
            }
            if (s.metrics.empty()) config_error(e.line, key, "metric list is empty");
        } else if (key == "saem_chains") s.saem.n_chains = parse_int_field(e, key, 1);
        else if (key == "saem_burn_in") s.saem.burn_in_iters = parse_int_field(e, key, 1);
        else if (key == "saem_smoothing") s.saem.smoothing_iters = parse_int_field(e, key, 1);
        else if (key == "saem_mcmc_steps") s.saem.mcmc_steps_per_iter = parse_int_field(e, key, 1);
        else if (key == "saem_period_sequence") {
            const std::string v = lower(e.value);
            if (v != "true" && v != "false") config_error(e.line, key, "expected true or false");
            s.saem.estimate_period_sequence = v == "true";
        }
    }
}

}  // namespace detail

/// Parses a study config.
///
///   [study]                      defaults for every scenario
///   replicates = 500
///   methods = NCA-TOST, NCA-BOT, MB-TOST, MB-BOT
///
///   [scenario <name>]            one section per scenario group
///   design = parallel, crossover   comma lists expand to every combination
///   sampling = rich
///   variability = low, high
///   hypothesis = h0
///
/// Lines starting with '#' or ';' are comments. Errors carry the line number and field.
inline StudyConfig parse_study_config(std::istream& is, std::uint64_t master_seed) {
    using namespace detail;
    ConfigSection study;
    std::vector<std::pair<int, ConfigSection>> scenario_sections;
    ConfigSection* current = nullptr;
    bool in_study = false;
    std::string raw;
    int line_no = 0;
    while (std::getline(is, raw)) {
        ++line_no;
        const std::string line = trim(raw);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']') config_error(line_no, "", "unterminated section header");
            const std::string name = trim(line.substr(1, line.size() - 2));
            if (lower(name) == "study") {
                current = &study;
                in_study = true;
            } else if (lower(name.substr(0, 8)) == "scenario") {
                scenario_sections.emplace_back(line_no, ConfigSection{});
                current = &scenario_sections.back().second;
                in_study = false;
            } else {
                config_error(line_no, "", "unknown section '" + name + "' (expected [study] or [scenario ...])");
            }
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) config_error(line_no, "", "expected 'key = value'");
        if (current == nullptr) config_error(line_no, "", "entry outside of a section");
        const std::string key = lower(trim(line.substr(0, eq)));
        const std::string value = trim(line.substr(eq + 1));
        const auto& common = study_keys();
        const auto& local = scenario_only_keys();
        const bool known_common = std::find(common.begin(), common.end(), key) != common.end();
        const bool known_local = std::find(local.begin(), local.end(), key) != local.end();
        if (!known_common && !(known_local && !in_study))
            config_error(line_no, key, in_study && known_local ? "only allowed in [scenario] sections" : "unknown field");
        if (current->count(key)) config_error(line_no, key, "duplicate field");
        (*current)[key] = ConfigEntry{value, line_no};
    }
    if (scenario_sections.empty()) throw ValidationError("config: no [scenario] sections");

    StudyConfig out;
    for (const auto& [header_line, sec] : scenario_sections) {
        Scenario base;
        base.master_seed = master_seed;
        apply_common(base, study);
        apply_common(base, sec);
        auto list_of = [&](const std::string& key) {
            const auto it = sec.find(key);
            if (it == sec.end()) config_error(header_line, key, "required field missing");
            auto items = split_list(it->second.value);
            if (items.empty()) config_error(it->second.line, key, "empty list");
            return std::pair{items, it->second};
        };
        const auto [designs, de] = list_of("design");
        const auto [samplings, se] = list_of("sampling");
        const auto [variabilities, ve] = list_of("variability");
        const auto [hypotheses, he] = list_of("hypothesis");
        for (const auto& h : hypotheses)
            for (const auto& d : designs)
                for (const auto& sm : samplings)
                    for (const auto& v : variabilities) {
                        Scenario s = base;
                        s.design = parse_design(d, de);
                        s.sampling = parse_sampling(sm, se);
                        s.variability = parse_variability(v, ve);
                        s.hypothesis = parse_hypothesis(h, he);
                        if (s.sampling == Sampling::Sparse && s.uses_nca()) {
                            // NCA cells do not exist for sparse sampling; keep the model-based methods only.
                            std::vector<Method> kept;
                            for (Method m : s.methods)
                                if (!is_nca(m)) kept.push_back(m);
                            if (kept.empty() || sec.count("methods"))
                                config_error(sec.count("methods") ? sec.at("methods").line : se.line, "methods",
                                             "NCA methods require the rich sampling design");
                            s.methods = kept;
                        }
                        try {
                            s.validate();
                        } catch (const ValidationError& err) {
                            config_error(header_line, "", err.what());
                        }
                        out.scenarios.push_back(s);
                    }
    }
    return out;
}

struct StudyReport {
    std::vector<ScenarioResult> results;
};

inline StudyReport run_study(const StudyConfig& config, int workers = 0, std::ostream* progress = nullptr) {
    StudyReport report;
    for (const Scenario& s : config.scenarios) {
        ScenarioResult r = run_scenario(s, workers);
        if (progress) {
            *progress << "scenario " << s.label() << ": " << s.n_replicates << " replicates in " << r.runtime_seconds
                      << " s";
            if (!r.warnings.empty()) *progress << ", " << r.warnings.size() << " with failures";
            *progress << '\n';
            for (std::size_t i = 0; i < std::min<std::size_t>(r.warnings.size(), 5); ++i)
                *progress << "  warning: " << r.warnings[i] << '\n';
        }
        report.results.push_back(std::move(r));
    }
    return report;
}

inline constexpr const char* kStudyCsvHeader = "design,sampling,variability,method,metric,rate,ci_low,ci_high,flagged,n_failed";

namespace detail {

inline std::string fixed(double x, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, x);
    return buf;
}

}  // namespace detail

/// CSV rows for the scenarios of one hypothesis.
inline void write_study_csv(std::ostream& os, const StudyReport& report, Hypothesis hypothesis) {
    os << kStudyCsvHeader << '\n';
    for (const auto& r : report.results) {
        const Scenario& s = r.scenario;
        if (s.hypothesis != hypothesis) continue;
        for (const auto& c : r.cells) {
            os << to_string(s.design) << ',' << to_string(s.sampling) << ',' << to_string(s.variability) << ','
               << to_string(c.method) << ',' << to_string(c.metric) << ',' << detail::fixed(c.rate, 4) << ','
               << detail::fixed(c.ci_low, 4) << ',' << detail::fixed(c.ci_high, 4) << ','
               << (c.flagged ? "true" : "false") << ',' << c.n_failed << '\n';
        }
    }
}

/// Grid table: method x metric rows, design x sampling x variability columns.
/// Flagged cells carry a trailing '*'; missing cells show '-'.
inline void write_study_table(std::ostream& os, const StudyReport& report, Hypothesis hypothesis) {
    struct Column {
        DesignKind design;
        Sampling sampling;
        Variability variability;
    };
    std::vector<Column> columns;
    for (DesignKind d : {DesignKind::Parallel, DesignKind::Crossover2x2})
        for (Sampling sm : {Sampling::Rich, Sampling::Sparse})
            for (Variability v : {Variability::Low, Variability::High}) {
                const bool present = std::any_of(report.results.begin(), report.results.end(), [&](const auto& r) {
                    const Scenario& s = r.scenario;
                    return s.hypothesis == hypothesis && s.design == d && s.sampling == sm && s.variability == v;
                });
                if (present) columns.push_back({d, sm, v});
            }
    if (columns.empty()) return;
    os << (hypothesis == Hypothesis::H0Boundary ? "Type I error (null boundary)" : "Power (equal formulations)") << '\n';
    auto pad = [](std::string s, std::size_t w) {
        if (s.size() < w) s.insert(0, w - s.size(), ' ');
        return s;
    };
    constexpr std::size_t w = 10;
    std::string h1 = pad("", 14), h2 = pad("", 14), h3 = pad("", 14);
    for (const auto& c : columns) {
        h1 += pad(to_string(c.design), w);
        h2 += pad(to_string(c.sampling), w);
        h3 += pad(to_string(c.variability), w);
    }
    os << h1 << '\n' << h2 << '\n' << h3 << '\n';
    for (Method m : kAllMethods)
        for (Metric metric : kAllMetrics) {
            std::string row = std::string(to_string(m)) + ' ' + to_string(metric);
            row.resize(14, ' ');
            bool any = false;
            for (const auto& col : columns) {
                std::string cell = "-";
                for (const auto& r : report.results) {
                    const Scenario& s = r.scenario;
                    if (s.hypothesis != hypothesis || s.design != col.design || s.sampling != col.sampling ||
                        s.variability != col.variability)
                        continue;
                    for (const auto& c : r.cells)
                        if (c.method == m && c.metric == metric) {
                            cell = detail::fixed(c.rate, 3) + (c.flagged ? "*" : " ");
                            any = true;
                        }
                }
                row += pad(cell, w);
            }
            if (any) os << row << '\n';
        }
    if (hypothesis == Hypothesis::H0Boundary)
        os << "* outside [" << kLevelBandLow << ", " << kLevelBandHigh << "]\n";
}

// ---------------------------------------------------------------------------
// Power curves

struct PowerPoint {
    double d = 0.0;
    double tost = 0.0;
    double bot = 0.0;
};

inline std::vector<PowerPoint> power_curve(double sigma_p, const EquivalenceMargin& margin, double alpha,
                                           const std::vector<double>& d_grid) {
    if (!(sigma_p > 0.0) || !std::isfinite(sigma_p)) throw DomainError("power_curve: sigma_p must be > 0");
    std::vector<PowerPoint> out;
    out.reserve(d_grid.size());
    for (double d : d_grid)
        out.push_back({d, tost_power(d, sigma_p, margin, alpha), bot_power(d, sigma_p, margin, alpha)});
    return out;
}

/// n evenly spaced points on [lo, hi].
inline std::vector<double> linear_grid(double lo, double hi, int n) {
    if (n < 2 || !(hi > lo)) throw DomainError("linear_grid: need n >= 2 and hi > lo");
    std::vector<double> g(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (n - 1);
    return g;
}

inline void write_power_curve_csv(std::ostream& os, const std::vector<PowerPoint>& pts) {
    os << "d,tost_power,bot_power\n";
    for (const auto& p : pts)
        os << detail::format_real(p.d) << ',' << detail::format_real(p.tost) << ',' << detail::format_real(p.bot)
           << '\n';
}

}  // namespace beq
