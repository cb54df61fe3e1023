#pragma once

// Stochastic-approximation EM for the one-compartment NLMEM.
//
// Latent variables are the subject-level log-parameters phi_i and, for
// crossover data, the occasion deviations d_ik, with log psi_ik = phi_i + d_ik:
//
//   phi_i ~ N(x_i b_s, Omega)      x_i = [1, Tr_i] (parallel) or [1 (, S_i)] (crossover)
//   d_ik  ~ N(z_ik b_o, Gamma)     z_ik = [Tr_ik (, P_k)]
//
// Both levels are Gaussian regressions, so the M-step for (b, Omega, Gamma)
// is a least-squares solve on stochastically approximated sufficient
// statistics. The residual parameters (a, b) are profiled each iteration.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "beq/detail/roots.hpp"
#include "beq/errors.hpp"
#include "beq/fim.hpp"
#include "beq/nlmem_model.hpp"
#include "beq/pkmodel.hpp"
#include "beq/rng.hpp"

namespace beq {

namespace detail {

inline double median_of(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    if (v.size() % 2 == 1) return *mid;
    const double hi = *mid;
    return 0.5 * (hi + *std::max_element(v.begin(), mid));
}

// Maximizes the combined-error likelihood over (a, b) >= 0 given predictions.
// With g = s (cos w + sin w f) the scale s has a closed form, leaving a
// one-dimensional search over the mixing angle w in [0, pi/2].
inline std::pair<double, double> profile_residual_error(const std::vector<double>& y, const std::vector<double>& f) {
    const std::size_t n = y.size();
    auto criterion = [&](double w, double* scale_out) {
        const double c = std::cos(w), s = std::sin(w);
        double ss = 0.0, log_sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double shape = c + s * f[j];
            if (!(shape > 0.0)) return std::numeric_limits<double>::infinity();
            const double r = (y[j] - f[j]) / shape;
            ss += r * r;
            log_sum += std::log(shape);
        }
        const double scale2 = ss / static_cast<double>(n);
        if (scale_out) *scale_out = std::sqrt(scale2);
        if (!(scale2 > 0.0)) return -std::numeric_limits<double>::infinity();
        return static_cast<double>(n) * std::log(scale2) + 2.0 * log_sum;
    };
    constexpr int grid = 16;
    constexpr double half_pi = 0.5 * std::numbers::pi;
    int best = 0;
    double best_val = std::numeric_limits<double>::infinity();
    for (int g = 0; g <= grid; ++g) {
        const double v = criterion(half_pi * g / grid, nullptr);
        if (v < best_val) {
            best_val = v;
            best = g;
        }
    }
    const double lo = half_pi * std::max(0, best - 1) / grid;
    const double hi = half_pi * std::min(grid, best + 1) / grid;
    const double w = golden_min([&](double x) { return criterion(x, nullptr); }, lo, hi, 1e-7);
    double scale = 0.0;
    criterion(w, &scale);
    return {scale * std::cos(w), scale * std::sin(w)};
}

class SaemEstimator {
public:
    SaemEstimator(const TrialDataset& data, DesignKind kind, const SaemConfig& cfg)
        : data_(data), kind_(kind), cfg_(cfg), subjects_(prepare_subjects(data, kind)) {
        cfg_.validate();
        crossover_ = kind_ == DesignKind::Crossover2x2;
        free_ps_ = crossover_ && cfg_.estimate_period_sequence;
        n_sub_cov_ = crossover_ ? (free_ps_ ? 2 : 1) : 2;
        n_occ_cov_ = crossover_ ? (free_ps_ ? 2 : 1) : 0;
        check_design();
        build_design_matrices();
        initialize();
    }

    FitResult run() {
        const int K1 = cfg_.burn_in_iters;
        const int total = K1 + cfg_.smoothing_iters;
        for (int iter = 1; iter <= total; ++iter) {
            const double step = iter <= K1 ? 1.0 : 1.0 / (iter - K1);
            e_step(iter);
            m_step(iter, step);
            if (iter <= K1) adapt_proposals();
            if (iter > K1) accumulate_conditional_means(step);
            record_trace();
        }
        return finish();
    }

private:
    struct Chain {
        Vec3 phi{};
        std::vector<Vec3> dev;
        std::vector<double> ll;
        std::vector<std::vector<double>> f;
    };

    void check_design() {
        if (!crossover_) {
            int n_test = 0;
            for (const auto& s : subjects_) n_test += s.occasions.front().treatment;
            if (n_test == 0 || n_test == static_cast<int>(subjects_.size()))
                throw ValidationError("fit: parallel data must contain both treatment arms");
        } else {
            for (const auto& s : subjects_)
                if (s.occasions.size() != 2)
                    throw ValidationError("fit: crossover subject " + s.id + " must have both periods");
        }
        for (const auto& s : subjects_)
            for (const auto& o : s.occasions)
                if (o.t.empty()) throw ValidationError("fit: subject " + s.id + " has an empty occasion");
    }

    std::array<double, 2> subject_row(const FitSubject& s) const {
        if (!crossover_) return {1.0, static_cast<double>(s.occasions.front().treatment)};
        return {1.0, static_cast<double>(s.sequence)};
    }
    std::array<double, 2> occasion_row(const FitOccasion& o) const {
        return {static_cast<double>(o.treatment), static_cast<double>(o.period)};
    }

    void build_design_matrices() {
        xtx_ = Eigen::MatrixXd::Zero(n_sub_cov_, n_sub_cov_);
        for (const auto& s : subjects_) {
            const auto x = subject_row(s);
            for (int a = 0; a < n_sub_cov_; ++a)
                for (int b = 0; b < n_sub_cov_; ++b) xtx_(a, b) += x[a] * x[b];
        }
        if (n_occ_cov_ > 0) {
            ztz_ = Eigen::MatrixXd::Zero(n_occ_cov_, n_occ_cov_);
            n_occ_units_ = 0;
            for (const auto& s : subjects_)
                for (const auto& o : s.occasions) {
                    const auto z = occasion_row(o);
                    for (int a = 0; a < n_occ_cov_; ++a)
                        for (int b = 0; b < n_occ_cov_; ++b) ztz_(a, b) += z[a] * z[b];
                    ++n_occ_units_;
                }
            ztz_ldlt_ = ztz_.ldlt();
        }
        xtx_ldlt_ = xtx_.ldlt();
        if (xtx_ldlt_.info() != Eigen::Success || xtx_ldlt_.rcond() < 1e-12)
            throw ValidationError("fit: covariate design is rank deficient");
    }

    Vec3 subject_mean(const FitSubject& s) const {
        const auto x = subject_row(s);
        Vec3 m{};
        for (int l = 0; l < 3; ++l)
            for (int c = 0; c < n_sub_cov_; ++c) m[l] += x[c] * b_sub_[l][c];
        return m;
    }
    Vec3 occasion_mean(const FitOccasion& o) const {
        const auto z = occasion_row(o);
        Vec3 m{};
        for (int l = 0; l < 3; ++l)
            for (int c = 0; c < n_occ_cov_; ++c) m[l] += z[c] * b_occ_[l][c];
        return m;
    }

    void initialize() {
        // Naive pooled endpoint heuristics: CL = D / median AUC, V = D / median Cmax, ka = 1.
        std::vector<double> aucs, cmaxs, ys;
        double dose = 0.0;
        for (const auto& s : subjects_)
            for (const auto& o : s.occasions) {
                dose = o.dose;
                double auc = 0.0;
                for (std::size_t j = 0; j + 1 < o.t.size(); ++j)
                    auc += (o.t[j + 1] - o.t[j]) * (o.y[j] + o.y[j + 1]) / 2.0;
                if (auc > 0.0) aucs.push_back(auc);
                const double c = *std::max_element(o.y.begin(), o.y.end());
                if (c > 0.0) cmaxs.push_back(c);
                for (double y : o.y) ys.push_back(y);
            }
        dose_ = dose;
        const double auc = aucs.empty() ? 100.0 : median_of(aucs);
        const double cmax = cmaxs.empty() ? 1.0 : median_of(cmaxs);
        const Vec3 log_lambda0{0.0, std::log(dose / cmax), std::log(dose / auc)};
        for (int l = 0; l < 3; ++l) {
            b_sub_[l] = {log_lambda0[l], 0.0};
            b_occ_[l] = {0.0, 0.0};
            omega2_[l] = 0.3 * 0.3;
            gamma2_[l] = crossover_ ? 0.3 * 0.3 : 0.0;
            prop_eta_[l] = 0.5 * std::sqrt(omega2_[l]);
            prop_dev_[l] = 0.5 * 0.3;
        }
        const double med_y = median_of(ys);
        err_a_ = std::max(0.1 * std::abs(med_y), 1e-3);
        err_b_ = 0.1;

        const int C = cfg_.n_chains;
        chains_.resize(subjects_.size() * static_cast<std::size_t>(C));
        for (std::size_t i = 0; i < subjects_.size(); ++i) {
            const auto& s = subjects_[i];
            const Vec3 m = subject_mean(s);
            for (int c = 0; c < C; ++c) {
                KeyedStream rng(cfg_.rng_seed, {0, i, static_cast<std::uint64_t>(c)});
                Chain& ch = chain(i, c);
                for (int l = 0; l < 3; ++l) ch.phi[l] = m[l] + std::sqrt(omega2_[l]) * rng.normal();
                ch.dev.assign(s.occasions.size(), Vec3{});
                ch.ll.assign(s.occasions.size(), 0.0);
                ch.f.resize(s.occasions.size());
                for (std::size_t k = 0; k < s.occasions.size(); ++k) {
                    if (crossover_) {
                        const Vec3 cm = occasion_mean(s.occasions[k]);
                        for (int l = 0; l < 3; ++l) ch.dev[k][l] = cm[l] + std::sqrt(gamma2_[l]) * rng.normal();
                    }
                    ch.f[k].resize(s.occasions[k].t.size());
                    ch.ll[k] = occasion_loglik(s.occasions[k], log_params(ch, k), err_a_, err_b_, ch.f[k].data());
                }
            }
        }
        sa_sub_xy_ = Eigen::MatrixXd::Zero(3, n_sub_cov_);
        sa_sub_yy_ = Eigen::Vector3d::Zero();
        sa_occ_xy_ = Eigen::MatrixXd::Zero(3, std::max(n_occ_cov_, 1));
        sa_occ_yy_ = Eigen::Vector3d::Zero();
        cond_mean_.assign(subjects_.size(), {});
        for (std::size_t i = 0; i < subjects_.size(); ++i) cond_mean_[i].assign(subjects_[i].occasions.size(), Vec3{});
    }

    Chain& chain(std::size_t i, int c) { return chains_[i * static_cast<std::size_t>(cfg_.n_chains) + c]; }

    Vec3 log_params(const Chain& ch, std::size_t k) const {
        Vec3 p = ch.phi;
        for (int l = 0; l < 3; ++l) p[l] += ch.dev[k][l];
        return p;
    }

    void e_step(int iter) {
        acc_eta_.fill(0.0);
        tries_eta_.fill(0.0);
        acc_dev_.fill(0.0);
        tries_dev_.fill(0.0);
        std::vector<double> ll_new;
        for (std::size_t i = 0; i < subjects_.size(); ++i) {
            const FitSubject& s = subjects_[i];
            const std::size_t K = s.occasions.size();
            const Vec3 m = subject_mean(s);
            std::vector<Vec3> occ_mean(K);
            if (crossover_)
                for (std::size_t k = 0; k < K; ++k) occ_mean[k] = occasion_mean(s.occasions[k]);
            std::vector<std::vector<double>> f_new(K);
            for (std::size_t k = 0; k < K; ++k) f_new[k].resize(s.occasions[k].t.size());
            ll_new.resize(K);

            for (int c = 0; c < cfg_.n_chains; ++c) {
                Chain& ch = chain(i, c);
                KeyedStream rng(cfg_.rng_seed,
                                {static_cast<std::uint64_t>(iter), i, static_cast<std::uint64_t>(c)});
                for (int step = 0; step < cfg_.mcmc_steps_per_iter; ++step) {
                    // Subject-level block: moves every occasion of the subject together.
                    for (int l = 0; l < 3; ++l) {
                        const double old_v = ch.phi[l];
                        const double new_v = old_v + prop_eta_[l] * rng.normal();
                        double delta = 0.0;
                        for (std::size_t k = 0; k < K; ++k) {
                            Vec3 p = log_params(ch, k);
                            p[l] += new_v - old_v;
                            ll_new[k] = occasion_loglik(s.occasions[k], p, err_a_, err_b_, f_new[k].data());
                            delta += ll_new[k] - ch.ll[k];
                        }
                        const double ro = old_v - m[l], rn = new_v - m[l];
                        delta -= 0.5 * (rn * rn - ro * ro) / omega2_[l];
                        tries_eta_[l] += 1.0;
                        if (std::isfinite(delta) && std::log(rng.uniform()) < delta) {
                            ch.phi[l] = new_v;
                            for (std::size_t k = 0; k < K; ++k) {
                                ch.ll[k] = ll_new[k];
                                ch.f[k].swap(f_new[k]);
                            }
                            acc_eta_[l] += 1.0;
                        }
                    }
                    if (!crossover_) continue;
                    // Occasion-level blocks.
                    for (std::size_t k = 0; k < K; ++k) {
                        for (int l = 0; l < 3; ++l) {
                            const double old_v = ch.dev[k][l];
                            const double new_v = old_v + prop_dev_[l] * rng.normal();
                            Vec3 p = log_params(ch, k);
                            p[l] += new_v - old_v;
                            const double ll_k = occasion_loglik(s.occasions[k], p, err_a_, err_b_, f_new[k].data());
                            const double ro = old_v - occ_mean[k][l], rn = new_v - occ_mean[k][l];
                            const double delta = ll_k - ch.ll[k] - 0.5 * (rn * rn - ro * ro) / gamma2_[l];
                            tries_dev_[l] += 1.0;
                            if (std::isfinite(delta) && std::log(rng.uniform()) < delta) {
                                ch.dev[k][l] = new_v;
                                ch.ll[k] = ll_k;
                                ch.f[k].swap(f_new[k]);
                                acc_dev_[l] += 1.0;
                            }
                        }
                    }
                }
            }
        }
    }

    void m_step(int iter, double step) {
        const int C = cfg_.n_chains;
        const double inv_c = 1.0 / C;
        Eigen::MatrixXd sub_xy = Eigen::MatrixXd::Zero(3, n_sub_cov_);
        Eigen::Vector3d sub_yy = Eigen::Vector3d::Zero();
        Eigen::MatrixXd occ_xy = Eigen::MatrixXd::Zero(3, std::max(n_occ_cov_, 1));
        Eigen::Vector3d occ_yy = Eigen::Vector3d::Zero();
        for (std::size_t i = 0; i < subjects_.size(); ++i) {
            const auto x = subject_row(subjects_[i]);
            for (int c = 0; c < C; ++c) {
                const Chain& ch = chain(i, c);
                for (int l = 0; l < 3; ++l) {
                    for (int a = 0; a < n_sub_cov_; ++a) sub_xy(l, a) += inv_c * x[a] * ch.phi[l];
                    sub_yy[l] += inv_c * ch.phi[l] * ch.phi[l];
                }
                if (crossover_) {
                    for (std::size_t k = 0; k < subjects_[i].occasions.size(); ++k) {
                        const auto z = occasion_row(subjects_[i].occasions[k]);
                        for (int l = 0; l < 3; ++l) {
                            for (int a = 0; a < n_occ_cov_; ++a) occ_xy(l, a) += inv_c * z[a] * ch.dev[k][l];
                            occ_yy[l] += inv_c * ch.dev[k][l] * ch.dev[k][l];
                        }
                    }
                }
            }
        }
        sa_sub_xy_ += step * (sub_xy - sa_sub_xy_);
        sa_sub_yy_ += step * (sub_yy - sa_sub_yy_);
        sa_occ_xy_ += step * (occ_xy - sa_occ_xy_);
        sa_occ_yy_ += step * (occ_yy - sa_occ_yy_);

        const double n_sub = static_cast<double>(subjects_.size());
        const bool anneal = iter <= cfg_.burn_in_iters / 2;
        for (int l = 0; l < 3; ++l) {
            const Eigen::VectorXd rhs = sa_sub_xy_.row(l).transpose();
            const Eigen::VectorXd b = xtx_ldlt_.solve(rhs);
            for (int a = 0; a < n_sub_cov_; ++a) b_sub_[l][a] = b[a];
            double w = (sa_sub_yy_[l] - b.dot(rhs)) / n_sub;
            if (anneal) w = std::max(w, 0.95 * omega2_[l]);
            omega2_[l] = std::max(w, kMinVariance);
            if (crossover_) {
                const Eigen::VectorXd rz = sa_occ_xy_.row(l).head(n_occ_cov_).transpose();
                const Eigen::VectorXd bo = ztz_ldlt_.solve(rz);
                for (int a = 0; a < n_occ_cov_; ++a) b_occ_[l][a] = bo[a];
                double g = (sa_occ_yy_[l] - bo.dot(rz)) / n_occ_units_;
                if (anneal) g = std::max(g, 0.95 * gamma2_[l]);
                gamma2_[l] = std::max(g, kMinVariance);
            }
        }

        // Residual error: profile on the current chain predictions, then stochastic approximation.
        std::vector<double> ys, fs;
        ys.reserve(n_obs_total() * C);
        fs.reserve(n_obs_total() * C);
        for (std::size_t i = 0; i < subjects_.size(); ++i)
            for (int c = 0; c < C; ++c) {
                const Chain& ch = chain(i, c);
                for (std::size_t k = 0; k < subjects_[i].occasions.size(); ++k) {
                    const auto& o = subjects_[i].occasions[k];
                    ys.insert(ys.end(), o.y.begin(), o.y.end());
                    fs.insert(fs.end(), ch.f[k].begin(), ch.f[k].end());
                }
            }
        const auto [a_opt, b_opt] = profile_residual_error(ys, fs);
        err_a_ += step * (a_opt - err_a_);
        err_b_ += step * (b_opt - err_b_);
        err_a_ = std::max(err_a_, 0.0);
        err_b_ = std::max(err_b_, 0.0);
        if (!(err_a_ + err_b_ > 0.0)) err_a_ = 1e-10;

        // Refresh cached likelihoods under the new residual parameters and evaluate the surrogate.
        double cdll = 0.0;
        for (std::size_t i = 0; i < subjects_.size(); ++i) {
            const auto& s = subjects_[i];
            const Vec3 m = subject_mean(s);
            for (int c = 0; c < C; ++c) {
                Chain& ch = chain(i, c);
                double total = 0.0;
                for (std::size_t k = 0; k < s.occasions.size(); ++k) {
                    ch.ll[k] = loglik_from_predictions(s.occasions[k], ch.f[k].data(), err_a_, err_b_);
                    total += ch.ll[k];
                    if (crossover_) {
                        const Vec3 cm = occasion_mean(s.occasions[k]);
                        for (int l = 0; l < 3; ++l) total += log_normal_density(ch.dev[k][l], cm[l], gamma2_[l]);
                    }
                }
                for (int l = 0; l < 3; ++l) total += log_normal_density(ch.phi[l], m[l], omega2_[l]);
                cdll += inv_c * total;
            }
        }
        last_cdll_ = cdll;
        if (!std::isfinite(cdll) || !all_parameters_finite())
            throw FitError("SAEM: non-finite quantity at iteration " + std::to_string(iter) + trace_tail());
    }

    static double log_normal_density(double x, double mean, double var) {
        const double r = x - mean;
        return -0.5 * r * r / var - 0.5 * std::log(var) - kHalfLog2Pi;
    }

    std::size_t n_obs_total() const {
        std::size_t n = 0;
        for (const auto& s : subjects_)
            for (const auto& o : s.occasions) n += o.t.size();
        return n;
    }

    bool all_parameters_finite() const {
        for (int l = 0; l < 3; ++l) {
            if (!std::isfinite(b_sub_[l][0]) || !std::isfinite(b_sub_[l][1]) || !std::isfinite(b_occ_[l][0]) ||
                !std::isfinite(b_occ_[l][1]) || !std::isfinite(omega2_[l]) || !std::isfinite(gamma2_[l]))
                return false;
        }
        return std::isfinite(err_a_) && std::isfinite(err_b_);
    }

    void adapt_proposals() {
        for (int l = 0; l < 3; ++l) {
            if (tries_eta_[l] > 0) {
                const double rate = acc_eta_[l] / tries_eta_[l];
                prop_eta_[l] = std::clamp(prop_eta_[l] * (1.0 + 0.4 * (rate - cfg_.target_acceptance)), 1e-5, 5.0);
            }
            if (tries_dev_[l] > 0) {
                const double rate = acc_dev_[l] / tries_dev_[l];
                prop_dev_[l] = std::clamp(prop_dev_[l] * (1.0 + 0.4 * (rate - cfg_.target_acceptance)), 1e-5, 5.0);
            }
        }
    }

    void accumulate_conditional_means(double step) {
        const int C = cfg_.n_chains;
        for (std::size_t i = 0; i < subjects_.size(); ++i)
            for (std::size_t k = 0; k < subjects_[i].occasions.size(); ++k) {
                Vec3 avg{};
                for (int c = 0; c < C; ++c) {
                    const Vec3 p = log_params(chain(i, c), k);
                    for (int l = 0; l < 3; ++l) avg[l] += p[l] / C;
                }
                for (int l = 0; l < 3; ++l) cond_mean_[i][k][l] += step * (avg[l] - cond_mean_[i][k][l]);
            }
    }

    PopulationModel current_model() const {
        PopulationModel m;
        m.kind = kind_;
        Vec3 log_lambda{};
        for (int l = 0; l < 3; ++l) {
            log_lambda[l] = b_sub_[l][0];
            if (crossover_) {
                m.beta_treatment[l] = b_occ_[l][0];
                if (free_ps_) {
                    m.beta_sequence[l] = b_sub_[l][1];
                    m.beta_period[l] = b_occ_[l][1];
                }
                m.gamma[l] = std::sqrt(gamma2_[l]);
            } else {
                m.beta_treatment[l] = b_sub_[l][1];
            }
            m.omega[l] = std::sqrt(omega2_[l]);
        }
        m.lambda = StructuralParams::from_log(log_lambda);
        m.err_add = err_a_;
        m.err_prop = err_b_;
        return m;
    }

    void record_trace() {
        const PopulationModel m = current_model();
        std::vector<double> row{m.lambda.ka, m.lambda.v_over_f, m.lambda.cl_over_f};
        for (double b : m.beta_treatment) row.push_back(b);
        if (free_ps_) {
            for (double b : m.beta_period) row.push_back(b);
            for (double b : m.beta_sequence) row.push_back(b);
        }
        for (double w : m.omega) row.push_back(w);
        if (crossover_)
            for (double g : m.gamma) row.push_back(g);
        row.push_back(m.err_add);
        row.push_back(m.err_prop);
        trace_.push_back(std::move(row));
        loglik_trace_.push_back(last_cdll_);
    }

    std::vector<std::string> trace_names() const {
        std::vector<std::string> names{"ka", "V", "CL"};
        for (const char* p : kParamNames) names.push_back(std::string("beta_T_") + p);
        if (free_ps_) {
            for (const char* p : kParamNames) names.push_back(std::string("beta_P_") + p);
            for (const char* p : kParamNames) names.push_back(std::string("beta_S_") + p);
        }
        for (const char* p : kParamNames) names.push_back(std::string("omega_") + p);
        if (crossover_)
            for (const char* p : kParamNames) names.push_back(std::string("gamma_") + p);
        names.emplace_back("a");
        names.emplace_back("b");
        return names;
    }

    std::string trace_tail() const {
        std::ostringstream os;
        const auto names = trace_names();
        const std::size_t from = trace_.size() > 5 ? trace_.size() - 5 : 0;
        for (std::size_t r = from; r < trace_.size(); ++r) {
            os << "\n  iter " << r + 1 << ':';
            for (std::size_t j = 0; j < names.size() && j < trace_[r].size(); ++j)
                os << ' ' << names[j] << '=' << trace_[r][j];
        }
        return os.str();
    }

    FitResult finish() {
        FitResult out;
        out.theta_hat = current_model();
        out.dose = dose_;
        out.period_sequence_estimated = free_ps_;
        out.fixed_effect_names = fixed_effect_names(free_ps_);
        out.fixed_effects = fixed_effect_vector(out.theta_hat, free_ps_);
        out.variance_names = variance_names(kind_);
        out.trace_names = trace_names();
        out.convergence_trace = std::move(trace_);
        out.loglik_trace = std::move(loglik_trace_);
        out.conditional_modes = conditional_modes(out.theta_hat, data_, cond_mean_);
        const FisherInformation info = fisher_information(out.theta_hat, data_, out.conditional_modes, free_ps_);
        out.fim = info.matrix;
        out.fixed_effect_cov = invert_information(info.fixed_block());
        out.beta_auc_hat = -out.theta_hat.beta_treatment[static_cast<int>(PkParam::Cl)];
        out.beta_cmax_hat = secondary_effect(out.theta_hat.lambda, out.theta_hat.beta_treatment, Metric::Cmax, dose_);
        out.se_beta_auc = delta_method_se(out, Metric::Auc);
        out.se_beta_cmax = delta_method_se(out, Metric::Cmax);
        return out;
    }

    static constexpr double kMinVariance = 1e-8;

    const TrialDataset& data_;
    DesignKind kind_;
    SaemConfig cfg_;
    std::vector<FitSubject> subjects_;
    bool crossover_ = false;
    bool free_ps_ = false;
    int n_sub_cov_ = 2;
    int n_occ_cov_ = 0;
    double n_occ_units_ = 0.0;
    double dose_ = 0.0;

    Eigen::MatrixXd xtx_, ztz_;
    Eigen::LDLT<Eigen::MatrixXd> xtx_ldlt_, ztz_ldlt_;

    std::array<std::array<double, 2>, 3> b_sub_{};
    std::array<std::array<double, 2>, 3> b_occ_{};
    Vec3 omega2_{}, gamma2_{};
    double err_a_ = 0.1, err_b_ = 0.1;

    Vec3 prop_eta_{}, prop_dev_{};
    Vec3 acc_eta_{}, tries_eta_{}, acc_dev_{}, tries_dev_{};

    Eigen::MatrixXd sa_sub_xy_, sa_occ_xy_;
    Eigen::Vector3d sa_sub_yy_, sa_occ_yy_;

    std::vector<Chain> chains_;
    IndividualLogParams cond_mean_;
    std::vector<std::vector<double>> trace_;
    std::vector<double> loglik_trace_;
    double last_cdll_ = 0.0;
};

}  // namespace detail

/// Fits the NLMEM by SAEM, then computes the linearized Fisher information,
/// the fixed-effect covariance and delta-method SEs of the AUC / Cmax effects.
inline FitResult fit_saem(const TrialDataset& data, DesignKind kind, const SaemConfig& config = {}) {
    detail::SaemEstimator est(data, kind, config);
    return est.run();
}

}  // namespace beq
