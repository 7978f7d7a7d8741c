#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "homlab/assembly.hpp"

namespace homlab {

struct SolveReport {
    int iterations = 0;
    double final_residual = 0.0; // relative 2-norm
    bool converged = false;
    double range_defect = 0.0; // norm of the solution component along the kernel basis
};

struct SolverOptions {
    double tol = 1e-10;
    int max_iterations = 0; // 0: pick from the problem size
    std::vector<std::pair<int, double>>* history = nullptr; // (iter, relative residual)
};

namespace detail {

inline void project_out(Eigen::VectorXd& x, const std::vector<Eigen::VectorXd>& basis) {
    for (const auto& z : basis) x -= z.dot(x) * z;
}

inline double component_norm(const Eigen::VectorXd& x, const std::vector<Eigen::VectorXd>& basis) {
    double s = 0.0;
    for (const auto& z : basis) {
        const double c = z.dot(x);
        s += c * c;
    }
    return std::sqrt(s);
}

inline Eigen::VectorXd jacobi_diag(const SpMat& A) {
    Eigen::VectorXd d = A.diagonal();
    for (int i = 0; i < d.size(); ++i)
        if (std::abs(d[i]) < 1e-300) d[i] = 1.0;
    return d;
}

} // namespace detail

/// Jacobi-preconditioned CG for SPD and consistent positive-semidefinite
/// systems. A supplied orthonormal kernel basis is projected out of the
/// right-hand side (after a consistency check) and of the iterates each
/// iteration, so the solve runs in range(A).
inline std::pair<Eigen::VectorXd, SolveReport> cg_solve(const SpMat& A, const Eigen::VectorXd& b, double tol,
                                                        const std::vector<Eigen::VectorXd>& kernel_basis = {},
                                                        SolverOptions opts = {}) {
    const int n = static_cast<int>(A.rows());
    SolveReport rep;
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);

    const double bnorm_raw = b.norm();
    if (!kernel_basis.empty() && bnorm_raw > 0.0) {
        const double defect = detail::component_norm(b, kernel_basis);
        if (defect > 1e-8 * bnorm_raw)
            throw NotConsistent("right-hand side has a component in the supplied kernel");
    }
    Eigen::VectorXd r = b;
    detail::project_out(r, kernel_basis);
    const double bnorm = r.norm();
    if (bnorm == 0.0) {
        rep.converged = true;
        return {x, rep};
    }

    const Eigen::VectorXd d = detail::jacobi_diag(A);
    auto precond = [&](const Eigen::VectorXd& v) { return (v.array() / d.array()).matrix().eval(); };

    const int maxit = opts.max_iterations > 0 ? opts.max_iterations : std::max(1000, 40 * n);
    Eigen::VectorXd z = precond(r);
    detail::project_out(z, kernel_basis);
    Eigen::VectorXd p = z;
    double rz = r.dot(z);
    Eigen::VectorXd Ap(n);

    for (int it = 1; it <= maxit; ++it) {
        Ap.noalias() = A * p;
        const double pAp = p.dot(Ap);
        if (pAp <= 0.0) throw SolverError("cg: operator is not positive on the iterate space");
        const double alpha = rz / pAp;
        x += alpha * p;
        r -= alpha * Ap;
        detail::project_out(x, kernel_basis);
        detail::project_out(r, kernel_basis);
        const double rel = r.norm() / bnorm;
        if (opts.history) opts.history->emplace_back(it, rel);
        if (rel <= tol) {
            rep.iterations = it;
            rep.final_residual = rel;
            rep.converged = true;
            rep.range_defect = detail::component_norm(x, kernel_basis);
            detail::project_out(x, kernel_basis);
            return {x, rep};
        }
        Eigen::VectorXd znew = precond(r);
        detail::project_out(znew, kernel_basis);
        const double rznew = r.dot(znew);
        p = znew + (rznew / rz) * p;
        z.swap(znew);
        rz = rznew;
    }
    throw MaxIterations("cg: no convergence within the iteration budget");
}

/// Generic symmetric (possibly indefinite) operator for MINRES.
struct LinOp {
    int n = 0;
    std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&)> apply;
};

/// Preconditioned MINRES with an SPD diagonal preconditioner and optional
/// kernel projection. Returns the iterate with the smallest preconditioned
/// residual seen.
inline std::pair<Eigen::VectorXd, SolveReport> minres(const LinOp& op, const Eigen::VectorXd& b, double tol,
                                                      const Eigen::VectorXd& precond_diag,
                                                      const std::vector<Eigen::VectorXd>& kernel_basis = {},
                                                      SolverOptions opts = {}) {
    const int n = op.n;
    SolveReport rep;
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd r1 = b;
    detail::project_out(r1, kernel_basis);
    const double bnorm = r1.norm();
    if (bnorm == 0.0) {
        rep.converged = true;
        return {x, rep};
    }
    auto precond = [&](const Eigen::VectorXd& v) {
        Eigen::VectorXd y = (v.array() / precond_diag.array()).matrix();
        detail::project_out(y, kernel_basis);
        return y;
    };

    Eigen::VectorXd y = precond(r1);
    double beta1 = r1.dot(y);
    if (beta1 < 0.0) throw SolverError("minres: preconditioner is not positive definite");
    beta1 = std::sqrt(beta1);
    if (beta1 == 0.0) {
        rep.converged = true;
        return {x, rep};
    }

    double oldb = 0.0, beta = beta1, dbar = 0.0, epsln = 0.0, phibar = beta1;
    double cs = -1.0, sn = 0.0;
    Eigen::VectorXd r2 = r1, w = Eigen::VectorXd::Zero(n), w2 = Eigen::VectorXd::Zero(n), w1(n), v(n), yy(n);

    const int maxit = opts.max_iterations > 0 ? opts.max_iterations : std::max(1000, 40 * n);
    double best_rel = 1e300;
    int stagnant = 0;

    for (int it = 1; it <= maxit; ++it) {
        v = y / beta;
        op.apply(v, yy);
        detail::project_out(yy, kernel_basis);
        if (it >= 2) yy -= (beta / oldb) * r1;
        const double alfa = v.dot(yy);
        yy -= (alfa / beta) * r2;
        r1 = r2;
        r2 = yy;
        y = precond(r2);
        oldb = beta;
        const double beta2 = r2.dot(y);
        if (beta2 < 0.0) throw SolverError("minres: preconditioner lost definiteness");
        beta = std::sqrt(beta2);

        const double oldeps = epsln;
        const double delta = cs * dbar + sn * alfa;
        const double gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        const double gamma = std::max(std::hypot(gbar, beta), 1e-300);
        cs = gbar / gamma;
        sn = beta / gamma;
        const double phi = cs * phibar;
        phibar = sn * phibar;

        w1 = w2;
        w2 = w;
        w = (v - oldeps * w1 - delta * w2) / gamma;
        x += phi * w;

        const double rel = phibar / beta1;
        if (opts.history) opts.history->emplace_back(it, rel);
        if (rel < best_rel * 0.999) {
            best_rel = rel;
            stagnant = 0;
        } else if (++stagnant > 2000) {
            throw Stagnation("minres: residual stagnated");
        }
        if (rel <= tol) {
            rep.iterations = it;
            rep.final_residual = rel;
            rep.converged = true;
            detail::project_out(x, kernel_basis);
            rep.range_defect = detail::component_norm(x, kernel_basis);
            return {x, rep};
        }
    }
    throw MaxIterations("minres: no convergence within the iteration budget");
}

/// Saddle-point solve  [A B^T; B 0] (v,p) = (f,0)  with the constant
/// pressure mode fixed by projection; the returned pressure has zero
/// mass-weighted mean.
struct SaddleResult {
    Eigen::VectorXd velocity;
    Eigen::VectorXd pressure;
    SolveReport report;
    double constraint_residual = 0.0; // ||B v||
};

inline SaddleResult minres_saddle_solve(const SpMat& A, const SpMat& B, const Eigen::VectorXd& f, double tol,
                                        const Eigen::VectorXd& pressure_mass_diag, SolverOptions opts = {}) {
    const int nv = static_cast<int>(A.rows());
    const int np = static_cast<int>(B.rows());
    if (B.cols() != nv || f.size() != nv) throw IncompatibleInputs("saddle blocks do not match");

    LinOp op;
    op.n = nv + np;
    op.apply = [&](const Eigen::VectorXd& z, Eigen::VectorXd& out) {
        out.resize(nv + np);
        out.head(nv).noalias() = A * z.head(nv);
        out.head(nv).noalias() += B.transpose() * z.tail(np);
        out.tail(np).noalias() = B * z.head(nv);
    };

    Eigen::VectorXd pd(nv + np);
    pd.head(nv) = detail::jacobi_diag(A);
    pd.tail(np) = pressure_mass_diag;
    for (int i = 0; i < np; ++i)
        if (pd[nv + i] <= 0.0) throw RankDeficientB("pressure mass diagonal must be positive");

    Eigen::VectorXd rhs(nv + np);
    rhs.head(nv) = f;
    rhs.tail(np).setZero();

    // on an enclosed domain the constant pressure spans the saddle kernel;
    // project it out only when it actually is one
    std::vector<Eigen::VectorXd> kernel;
    const bool constant_in_kernel =
        (B.transpose() * Eigen::VectorXd::Ones(np)).norm() <= 1e-10 * std::sqrt(double(np)) * B.norm();
    if (constant_in_kernel) {
        Eigen::VectorXd kp = Eigen::VectorXd::Zero(nv + np);
        kp.tail(np).setConstant(1.0 / std::sqrt(static_cast<double>(np)));
        kernel.push_back(kp);
    }

    auto [z, rep] = minres(op, rhs, tol, pd, kernel, opts);

    SaddleResult res;
    res.velocity = z.head(nv);
    res.pressure = z.tail(np);
    res.report = rep;
    res.constraint_residual = (B * res.velocity).norm();
    Eigen::VectorXd true_res(nv + np);
    op.apply(z, true_res);
    true_res -= rhs;
    detail::project_out(true_res, kernel);
    res.report.final_residual = true_res.norm() / std::max(rhs.norm(), 1e-300);
    if (constant_in_kernel) {
        const double vol = pressure_mass_diag.sum();
        if (vol > 0.0) res.pressure.array() -= pressure_mass_diag.dot(res.pressure) / vol;
    }
    if (res.pressure.norm() > 1e12 * (f.norm() + 1.0))
        throw RankDeficientB("pressure component diverged; constraint block is rank deficient");
    return res;
}

} // namespace homlab
