#pragma once

// Fisher information by first-order linearization of the NLMEM around the
// conditional modes of the individual parameters, and delta-method
// standard errors for the secondary treatment effects.

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include "beq/detail/nelder_mead.hpp"
#include "beq/errors.hpp"
#include "beq/nlmem_model.hpp"
#include "beq/pkmodel.hpp"

namespace beq {

namespace detail {

inline double safe_variance(double sd) { return std::max(sd * sd, 1e-10); }

// Negative log posterior of one subject's (phi_i, d_i1, ..., d_iK) given theta.
inline double subject_neg_log_posterior(const FitSubject& s, const PopulationModel& m, const std::vector<double>& x) {
    Vec3 phi_i{x[0], x[1], x[2]};
    double nlp = 0.0;
    const bool crossover = m.kind == DesignKind::Crossover2x2;
    // Subject-level mean: log lambda (+ beta_S S) in crossover; log lambda + beta_T Tr in parallel.
    Vec3 mean_i = m.lambda.log();
    for (int l = 0; l < 3; ++l) {
        if (crossover)
            mean_i[l] += m.beta_sequence[l] * s.sequence;
        else
            mean_i[l] += m.beta_treatment[l] * s.occasions.front().treatment;
        const double r = phi_i[l] - mean_i[l];
        nlp += 0.5 * r * r / safe_variance(m.omega[l]);
    }
    for (std::size_t k = 0; k < s.occasions.size(); ++k) {
        const FitOccasion& o = s.occasions[k];
        Vec3 phi = phi_i;
        if (crossover) {
            for (int l = 0; l < 3; ++l) {
                const double dev = x[3 + 3 * k + l];
                const double mean_dev = m.beta_treatment[l] * o.treatment + m.beta_period[l] * o.period;
                const double r = dev - mean_dev;
                nlp += 0.5 * r * r / safe_variance(m.gamma[l]);
                phi[l] += dev;
            }
        }
        nlp -= occasion_loglik(o, phi, m.err_add, m.err_prop);
    }
    return nlp;
}

inline Eigen::MatrixXd prediction_jacobian(const FitOccasion& o, const Vec3& phi) {
    constexpr double h = 1e-5;
    Eigen::MatrixXd J(static_cast<Eigen::Index>(o.t.size()), 3);
    for (int l = 0; l < 3; ++l) {
        Vec3 up = phi, dn = phi;
        up[l] += h;
        dn[l] -= h;
        for (std::size_t j = 0; j < o.t.size(); ++j) {
            const double fu = concentration_any(o.t[j], o.dose, std::exp(up[0]), std::exp(up[1]), std::exp(up[2]));
            const double fd = concentration_any(o.t[j], o.dose, std::exp(dn[0]), std::exp(dn[1]), std::exp(dn[2]));
            J(static_cast<Eigen::Index>(j), l) = (fu - fd) / (2.0 * h);
        }
    }
    return J;
}

}  // namespace detail

/// Maximum a posteriori individual log-parameters per subject and occasion.
/// `start` (optional, same shape as the result) seeds the search.
inline IndividualLogParams conditional_modes(const PopulationModel& model, const TrialDataset& data,
                                             const IndividualLogParams& start = {}) {
    const auto subjects = detail::prepare_subjects(data, model.kind);
    const bool crossover = model.kind == DesignKind::Crossover2x2;
    IndividualLogParams out;
    out.reserve(subjects.size());
    for (std::size_t i = 0; i < subjects.size(); ++i) {
        const auto& s = subjects[i];
        const std::size_t K = s.occasions.size();
        std::vector<double> x0(crossover ? 3 + 3 * K : 3);
        if (!start.empty()) {
            // Split start values into a subject level (occasion mean) and deviations.
            Vec3 mean{};
            for (std::size_t k = 0; k < K; ++k)
                for (int l = 0; l < 3; ++l) mean[l] += start[i][k][l] / static_cast<double>(K);
            for (int l = 0; l < 3; ++l) x0[l] = crossover ? mean[l] : start[i][0][l];
            if (crossover)
                for (std::size_t k = 0; k < K; ++k)
                    for (int l = 0; l < 3; ++l) x0[3 + 3 * k + l] = start[i][k][l] - mean[l];
        } else {
            const Vec3 log_lambda = model.lambda.log();
            for (int l = 0; l < 3; ++l)
                x0[l] = log_lambda[l] + (crossover ? 0.0 : model.beta_treatment[l] * s.occasions.front().treatment);
            if (crossover)
                for (std::size_t k = 0; k < K; ++k)
                    for (int l = 0; l < 3; ++l)
                        x0[3 + 3 * k + l] = model.beta_treatment[l] * s.occasions[k].treatment;
        }
        auto objective = [&](const std::vector<double>& x) { return detail::subject_neg_log_posterior(s, model, x); };
        auto best = detail::nelder_mead(objective, x0, 0.05, 1e-12);
        // One restart from the optimum shakes off premature simplex collapse.
        best = detail::nelder_mead(objective, best.x, 0.01, 1e-13);
        std::vector<Vec3> phis(K);
        for (std::size_t k = 0; k < K; ++k)
            for (int l = 0; l < 3; ++l) phis[k][l] = best.x[l] + (crossover ? best.x[3 + 3 * k + l] : 0.0);
        out.push_back(std::move(phis));
    }
    return out;
}

struct FisherInformation {
    Eigen::MatrixXd matrix;  ///< block-diagonal: fixed effects then variance components
    int n_fixed = 0;
    std::vector<std::string> names;

    Eigen::MatrixXd fixed_block() const { return matrix.topLeftCorner(n_fixed, n_fixed); }
};

/// Linearized (first-order conditional) Fisher information. `modes` holds the
/// individual log-parameters at which the model is linearized.
inline FisherInformation fisher_information(const PopulationModel& model, const TrialDataset& data,
                                            const IndividualLogParams& modes, bool free_period_sequence = false) {
    const auto subjects = detail::prepare_subjects(data, model.kind);
    if (modes.size() != subjects.size())
        throw ContractError("fisher_information: one set of modes per subject required");
    const bool crossover = model.kind == DesignKind::Crossover2x2;
    const bool with_ps = crossover && free_period_sequence;
    const int p = with_ps ? 12 : 6;
    const int n_var = crossover ? 8 : 5;

    Eigen::MatrixXd fixed = Eigen::MatrixXd::Zero(p, p);
    Eigen::MatrixXd var = Eigen::MatrixXd::Zero(n_var, n_var);

    for (std::size_t i = 0; i < subjects.size(); ++i) {
        const auto& s = subjects[i];
        const std::size_t K = s.occasions.size();
        if (modes[i].size() != K) throw ContractError("fisher_information: one mode per occasion required");
        Eigen::Index n_i = 0;
        for (const auto& o : s.occasions) n_i += static_cast<Eigen::Index>(o.t.size());

        Eigen::MatrixXd U(n_i, 3);                       // stacked Jacobians
        Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n_i, p);  // d mean / d fixed effects
        Eigen::VectorXd g(n_i), f(n_i);
        std::vector<std::pair<Eigen::Index, Eigen::Index>> blocks;
        Eigen::Index row = 0;
        for (std::size_t k = 0; k < K; ++k) {
            const auto& o = s.occasions[k];
            const Vec3& phi = modes[i][k];
            const Eigen::MatrixXd J = detail::prediction_jacobian(o, phi);
            const auto n_k = static_cast<Eigen::Index>(o.t.size());
            U.block(row, 0, n_k, 3) = J;
            for (int l = 0; l < 3; ++l) {
                M.block(row, l, n_k, 1) = J.col(l);
                M.block(row, 3 + l, n_k, 1) = J.col(l) * o.treatment;
                if (with_ps) {
                    M.block(row, 6 + l, n_k, 1) = J.col(l) * o.period;
                    M.block(row, 9 + l, n_k, 1) = J.col(l) * s.sequence;
                }
            }
            for (Eigen::Index j = 0; j < n_k; ++j) {
                const double fj = detail::concentration_any(o.t[static_cast<std::size_t>(j)], o.dose,
                                                            std::exp(phi[0]), std::exp(phi[1]), std::exp(phi[2]));
                f[row + j] = fj;
                g[row + j] = model.err_add + model.err_prop * fj;
            }
            blocks.emplace_back(row, n_k);
            row += n_k;
        }

        Eigen::MatrixXd V = Eigen::MatrixXd::Zero(n_i, n_i);
        for (int l = 0; l < 3; ++l) V += model.omega[l] * model.omega[l] * U.col(l) * U.col(l).transpose();
        if (crossover) {
            for (const auto& [start, len] : blocks)
                for (int l = 0; l < 3; ++l)
                    V.block(start, start, len, len) += model.gamma[l] * model.gamma[l] *
                                                       U.block(start, l, len, 1) * U.block(start, l, len, 1).transpose();
        }
        V.diagonal() += g.cwiseProduct(g);

        const Eigen::LDLT<Eigen::MatrixXd> ldlt(V);
        if (ldlt.info() != Eigen::Success)
            throw SingularInformationError("fisher_information: marginal covariance not invertible", 0.0);
        fixed += M.transpose() * ldlt.solve(M);

        std::vector<Eigen::MatrixXd> dV;
        for (int l = 0; l < 3; ++l) dV.push_back(U.col(l) * U.col(l).transpose());
        if (crossover) {
            for (int l = 0; l < 3; ++l) {
                Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n_i, n_i);
                for (const auto& [start, len] : blocks)
                    d.block(start, start, len, len) = U.block(start, l, len, 1) * U.block(start, l, len, 1).transpose();
                dV.push_back(std::move(d));
            }
        }
        dV.emplace_back((2.0 * g).asDiagonal());
        dV.emplace_back((2.0 * g.cwiseProduct(f)).asDiagonal());
        std::vector<Eigen::MatrixXd> W;
        W.reserve(dV.size());
        for (const auto& d : dV) W.push_back(ldlt.solve(d));
        for (int a = 0; a < n_var; ++a)
            for (int b = a; b < n_var; ++b) {
                const double v = 0.5 * (W[a].cwiseProduct(W[b].transpose())).sum();
                var(a, b) += v;
                if (a != b) var(b, a) += v;
            }
    }

    FisherInformation out;
    out.n_fixed = p;
    out.matrix = Eigen::MatrixXd::Zero(p + n_var, p + n_var);
    out.matrix.topLeftCorner(p, p) = fixed;
    out.matrix.bottomRightCorner(n_var, n_var) = var;
    out.names = detail::fixed_effect_names(with_ps);
    for (auto& n : detail::variance_names(model.kind)) out.names.push_back(n);
    return out;
}

/// Inverse of a symmetric information block; throws when it is not safely invertible.
inline Eigen::MatrixXd invert_information(const Eigen::MatrixXd& info) {
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (info + info.transpose()));
    if (es.info() != Eigen::Success) throw SingularInformationError("information eigen-decomposition failed", 0.0);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    const double cond = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
    if (!(lo > 0.0) || !(cond < 1e14) || !std::isfinite(hi))
        throw SingularInformationError("Fisher information is singular", cond);
    return es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
}

/// Standard error of the secondary treatment effect by the delta method.
inline double delta_method_se(const StructuralParams& lambda, const Vec3& beta_treatment, const Eigen::MatrixXd& cov,
                              Metric metric) {
    if (cov.rows() != cov.cols() || cov.rows() < 6) throw ContractError("delta_method_se: covariance must be >= 6x6");
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    const double max_abs = es.eigenvalues().cwiseAbs().maxCoeff();
    if (es.eigenvalues().minCoeff() < -1e-10 * std::max(max_abs, 1e-300))
        throw DomainError("delta_method_se: fixed-effect covariance is not positive semidefinite");
    const auto grad6 = secondary_effect_gradient(lambda, beta_treatment, metric);
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(cov.rows());
    for (int j = 0; j < 6; ++j) grad[j] = grad6[static_cast<std::size_t>(j)];
    const double v = grad.dot(cov * grad);
    return std::sqrt(std::max(v, 0.0));
}

inline double delta_method_se(const FitResult& fit, Metric metric) {
    return delta_method_se(fit.theta_hat.lambda, fit.theta_hat.beta_treatment, fit.fixed_effect_cov, metric);
}

}  // namespace beq
