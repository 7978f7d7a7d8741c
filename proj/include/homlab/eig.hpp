#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <algorithm>
#include <atomic>
#include <functional>
#include <random>
#include <thread>

#include "homlab/solvers.hpp"

namespace homlab {

struct EigReport {
    std::vector<double> values; // ascending
    Eigen::MatrixXd vectors;    // columns, M-orthonormal
    std::vector<double> residuals;
    int filtered_count = 0; // spurious (pressure) modes rejected
};

struct EigOptions {
    double tol = 1e-8;    // relative residual ||Av - lambda Mv|| / ||Av||
    double inner_tol = 1e-11;
    int max_steps = 0;    // per Lanczos sweep, 0 = auto
    int max_restarts = 40;
    unsigned seed = 0x517cc1b7u;
    int workers = 1;      // window slicing only
};

namespace detail {

/// Shift-invert operator abstraction: apply() solves (A - sigma M) x = M q,
/// mass() is the (semi-)inner-product weight, residual() evaluates the
/// original pencil residual for a Ritz pair, accept_value() filters
/// eigenvalues by location, admissible() filters spurious vectors.
struct SpectralOp {
    int n = 0;
    double sigma = 0.0;
    std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&)> apply;
    std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&)> mass;
    std::function<double(double, const Eigen::VectorXd&)> residual;
    std::function<bool(double)> accept_value;
    std::function<bool(const Eigen::VectorXd&)> admissible;
};

struct RitzPair {
    double value = 0.0;
    Eigen::VectorXd vector;
    double residual = 0.0;
};

/// Deflated shift-invert Lanczos in the M-inner product with full
/// reorthogonalization. Each sweep builds one Krylov space orthogonal to the
/// locked pairs, stops once enough in-window Ritz values have converged, and
/// harvests once; random restarts pick up multiple eigenvalues and recover
/// breakdowns.
class LanczosEngine {
  public:
    LanczosEngine(const SpectralOp& op, const EigOptions& opts) : op_(op), opts_(opts) {}

    void run(const std::function<int(const std::vector<RitzPair>&)>& want_more) {
        std::mt19937 rng(opts_.seed);
        int dead_sweeps = 0;
        for (int sweep = 0; sweep < opts_.max_restarts; ++sweep) {
            const int need = want_more(locked_);
            if (need <= 0) return;
            const std::size_t before = locked_.size();
            run_sweep(rng, need);
            if (locked_.size() == before) {
                if (++dead_sweeps >= 3) return;
            } else {
                dead_sweeps = 0;
            }
        }
    }

    std::vector<RitzPair>& locked() { return locked_; }
    int filtered = 0;

  private:
    void append_basis(const Eigen::VectorXd& q) {
        if (basis_.cols() == nbasis_) basis_.conservativeResize(Eigen::NoChange, nbasis_ + 128);
        basis_.col(nbasis_++) = q;
    }

    void reorthogonalize(Eigen::VectorXd& z, Eigen::VectorXd& w) const {
        for (int pass = 0; pass < 2; ++pass) {
            op_.mass(z, w);
            if (nbasis_ > 0) {
                Eigen::VectorXd c = basis_.leftCols(nbasis_).transpose() * w;
                z.noalias() -= basis_.leftCols(nbasis_) * c;
            }
        }
    }

    double m_norm(const Eigen::VectorXd& z, Eigen::VectorXd& w) const {
        op_.mass(z, w);
        const double s = z.dot(w);
        return s > 0.0 ? std::sqrt(s) : 0.0;
    }

    bool value_ok(double lambda) const { return !op_.accept_value || op_.accept_value(lambda); }

    void run_sweep(std::mt19937& rng, int need) {
        const int n = op_.n;
        const int msteps = std::min(n, opts_.max_steps > 0 ? opts_.max_steps : std::max(80, n / 2));
        nbasis_ = 0;
        if (basis_.rows() != n) basis_.resize(n, 128);
        for (const auto& p : locked_) append_basis(p.vector);

        std::normal_distribution<double> dist;
        Eigen::VectorXd start(n), q(n), z(n), w(n), qprev = Eigen::VectorXd::Zero(n);
        for (int i = 0; i < n; ++i) start[i] = dist(rng);
        op_.apply(start, q); // purify into the operator range
        reorthogonalize(q, w);
        const double beta0 = m_norm(q, w);
        if (beta0 <= 1e-280) return;
        q /= beta0;

        std::vector<double> alphas, betas;
        std::vector<Eigen::VectorXd> krylov;
        double beta_prev = 0.0;

        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
        for (int j = 0; j < msteps; ++j) {
            append_basis(q);
            krylov.push_back(q);
            op_.apply(q, z);
            op_.mass(z, w);
            const double alpha = q.dot(w);
            z.noalias() -= alpha * q;
            if (j > 0) z.noalias() -= beta_prev * qprev;
            reorthogonalize(z, w);
            alphas.push_back(alpha);
            const double beta = m_norm(z, w);

            const int m = static_cast<int>(alphas.size());
            const bool last = (j + 1 == msteps) || beta <= std::max(1e-13 * std::abs(alpha), 1e-280);
            const bool check = last || (m >= 6 && m % 4 == 0);
            if (check) {
                Eigen::VectorXd diag = Eigen::Map<const Eigen::VectorXd>(alphas.data(), m);
                Eigen::VectorXd sub = Eigen::VectorXd::Zero(std::max(0, m - 1));
                for (int i = 0; i + 1 < m; ++i) sub[i] = betas[i];
                es.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
                int converged = 0;
                for (int i = 0; i < m; ++i) {
                    const double theta = es.eigenvalues()[i];
                    if (std::abs(theta) < 1e-280) continue;
                    const double bound = std::abs(beta * es.eigenvectors()(m - 1, i));
                    if (bound <= 1e-10 * std::abs(theta) && value_ok(op_.sigma + 1.0 / theta)) ++converged;
                }
                if (converged >= need || last) {
                    harvest(krylov, es, beta);
                    return;
                }
            }
            if (last) return;
            betas.push_back(beta);
            qprev = q;
            q = z / beta;
            beta_prev = beta;
        }
    }

    void harvest(const std::vector<Eigen::VectorXd>& krylov, const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>& es,
                 double beta_last) {
        const int m = static_cast<int>(krylov.size());
        Eigen::VectorXd w(op_.n);
        for (int i = m - 1; i >= 0; --i) {
            const double theta = es.eigenvalues()[i];
            if (std::abs(theta) < 1e-280) continue;
            const double bound = std::abs(beta_last * es.eigenvectors()(m - 1, i));
            if (bound > 1e-9 * std::abs(theta)) continue;
            const double lambda = op_.sigma + 1.0 / theta;
            if (!value_ok(lambda)) continue;
            Eigen::VectorXd y = Eigen::VectorXd::Zero(op_.n);
            for (int r = 0; r < m; ++r) y.noalias() += es.eigenvectors()(r, i) * krylov[r];
            const double nm = m_norm(y, w);
            if (nm <= 1e-280) continue;
            y /= nm;
            if (is_duplicate(lambda, y, w)) continue;
            const double res = op_.residual ? op_.residual(lambda, y) : bound;
            if (res > opts_.tol) continue;
            if (op_.admissible && !op_.admissible(y)) {
                ++filtered;
                continue;
            }
            locked_.push_back({lambda, std::move(y), res});
        }
    }

    // A re-found copy of an already locked pair lies (numerically) along the
    // locked vector; a genuine multiple eigenvalue arrives M-orthogonal to it
    // through deflation and is kept.
    bool is_duplicate(double lambda, const Eigen::VectorXd& y, Eigen::VectorXd& w) const {
        op_.mass(y, w);
        for (const auto& p : locked_) {
            if (std::abs(p.value - lambda) > 1e-7 * std::max(1.0, std::abs(lambda))) continue;
            if (std::abs(p.vector.dot(w)) > 0.3) return true;
        }
        return false;
    }

    const SpectralOp& op_;
    const EigOptions& opts_;
    Eigen::MatrixXd basis_;
    int nbasis_ = 0;
    std::vector<RitzPair> locked_;
};

/// LDLT-backed shift-invert; also yields the inertia (eigenvalue count below
/// the shift actually used, which may be jittered off a spectral point).
struct LdltShiftInvert {
    Eigen::SimplicialLDLT<SpMat> ldlt;
    double sigma = 0.0;
    int negatives = 0;

    void factorize(const SpMat& A, const SpMat& M, double sigma_in, double scale) {
        sigma = sigma_in;
        for (int attempt = 0; attempt < 6; ++attempt) {
            SpMat C = A - sigma * M;
            C.makeCompressed();
            ldlt.compute(C);
            if (ldlt.info() == Eigen::Success) {
                const auto& d = ldlt.vectorD();
                double dmax = 0.0;
                for (int i = 0; i < d.size(); ++i) dmax = std::max(dmax, std::abs(d[i]));
                double dmin = dmax;
                negatives = 0;
                for (int i = 0; i < d.size(); ++i) {
                    dmin = std::min(dmin, std::abs(d[i]));
                    if (d[i] < 0.0) ++negatives;
                }
                if (dmin > 1e-14 * dmax) return;
            }
            sigma += 1e-3 * scale * (attempt + 1);
        }
        throw InnerSolveFailure("shift-invert factorization failed near the requested shift");
    }
};

inline double pencil_scale(const SpMat& A, const SpMat& M) {
    const double ta = A.diagonal().cwiseAbs().sum();
    const double tm = M.diagonal().cwiseAbs().sum();
    return tm > 0 ? std::max(1e-300, ta / tm) : 1.0;
}

inline SpectralOp make_direct_op(const SpMat& A, const SpMat& M, LdltShiftInvert& f) {
    SpectralOp op;
    op.n = static_cast<int>(A.rows());
    op.sigma = f.sigma;
    op.apply = [&A, &M, &f](const Eigen::VectorXd& q, Eigen::VectorXd& out) {
        Eigen::VectorXd mq = M * q;
        out = f.ldlt.solve(mq);
    };
    op.mass = [&M](const Eigen::VectorXd& q, Eigen::VectorXd& out) { out.noalias() = M * q; };
    op.residual = [&A, &M](double lambda, const Eigen::VectorXd& v) {
        Eigen::VectorXd av = A * v;
        const double scale = std::max(av.norm(), 1e-300);
        return (av - lambda * (M * v)).norm() / scale;
    };
    return op;
}

inline EigReport pack_report(std::vector<RitzPair> pairs, int k, int filtered, int n) {
    std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) { return a.value < b.value; });
    if (static_cast<int>(pairs.size()) < k)
        throw NotConverged("eigensolver found " + std::to_string(pairs.size()) + " of " + std::to_string(k));
    pairs.resize(k);
    EigReport rep;
    rep.vectors.resize(n, k);
    for (int i = 0; i < k; ++i) {
        rep.values.push_back(pairs[i].value);
        rep.residuals.push_back(pairs[i].residual);
        rep.vectors.col(i) = pairs[i].vector;
    }
    rep.filtered_count = filtered;
    return rep;
}

} // namespace detail

/// Number of pencil eigenvalues below sigma (Sylvester inertia of A - sigma M).
inline int inertia_below(const SpMat& A, const SpMat& M, double sigma) {
    detail::LdltShiftInvert f;
    f.factorize(A, M, sigma, detail::pencil_scale(A, M));
    return f.negatives;
}

/// k smallest eigenvalues above zero of the symmetric pencil (A, M), M SPD
/// and A positive semidefinite, by shift-invert Lanczos with sparse
/// factorization inner solves. Eigenvalue multiplicities are verified
/// against the inertia count below the k-th value.
inline EigReport eig_generalized(const SpMat& A, const SpMat& M, int k, double shift = 0.0, EigOptions opts = {}) {
    if (k < 1) throw InvalidValue("eigensolver needs k >= 1");
    const double scale = detail::pencil_scale(A, M);
    detail::LdltShiftInvert f;
    f.factorize(A, M, shift, scale);
    detail::SpectralOp op = detail::make_direct_op(A, M, f);
    op.sigma = f.sigma;
    op.accept_value = [scale](double v) { return v > 1e-12 * scale; };
    if (opts.max_steps == 0) opts.max_steps = std::max(100, 6 * k + 40);
    detail::LanczosEngine eng(op, opts);
    eng.run([&](const std::vector<detail::RitzPair>& locked) { return k - static_cast<int>(locked.size()); });

    auto kth_value = [&]() {
        std::vector<double> vals;
        for (const auto& p : eng.locked()) vals.push_back(p.value);
        std::sort(vals.begin(), vals.end());
        return vals[static_cast<std::size_t>(k - 1)];
    };
    for (int round = 0; round < 4 && static_cast<int>(eng.locked().size()) >= k; ++round) {
        const double thresh = kth_value() * (1.0 + 1e-10) + 1e-12 * scale;
        const int expected = inertia_below(A, M, thresh);
        auto below = [&](const std::vector<detail::RitzPair>& locked) {
            int c = 0;
            for (const auto& p : locked)
                if (p.value <= thresh) ++c;
            return c;
        };
        if (below(eng.locked()) >= expected) break;
        eng.run([&](const std::vector<detail::RitzPair>& locked) { return expected - below(locked); });
    }
    return detail::pack_report(eng.locked(), k, eng.filtered, static_cast<int>(A.rows()));
}

/// Constrained (Stokes-type) pencil: A restricted to ker B, velocity mass M.
/// Shift-invert Lanczos on the saddle operator with MINRES inner solves;
/// pressure-ghost modes are filtered by the ||Bv|| test. Lanczos vectors are
/// (v,p) blocks with the velocity part M-orthonormal.
inline EigReport eig_generalized_constrained(const SpMat& A, const SpMat& M, const SpMat& B,
                                             const Eigen::VectorXd& pressure_mass_diag, int k, double shift = 0.0,
                                             EigOptions opts = {}) {
    if (k < 1) throw InvalidValue("eigensolver needs k >= 1");
    const int nv = static_cast<int>(A.rows());
    const int np = static_cast<int>(B.rows());
    const double scale = detail::pencil_scale(A, M);

    SpMat C = A - shift * M;
    LinOp saddle;
    saddle.n = nv + np;
    saddle.apply = [&C, &B, nv, np](const Eigen::VectorXd& z, Eigen::VectorXd& out) {
        out.resize(nv + np);
        out.head(nv).noalias() = C * z.head(nv);
        out.head(nv).noalias() += B.transpose() * z.tail(np);
        out.tail(np).noalias() = B * z.head(nv);
    };
    Eigen::VectorXd pd(nv + np);
    pd.head(nv) = detail::jacobi_diag(A);
    pd.tail(np) = pressure_mass_diag;
    std::vector<Eigen::VectorXd> kernel;
    if ((B.transpose() * Eigen::VectorXd::Ones(np)).norm() <= 1e-10 * std::sqrt(double(np)) * B.norm()) {
        Eigen::VectorXd kp = Eigen::VectorXd::Zero(nv + np);
        kp.tail(np).setConstant(1.0 / std::sqrt(static_cast<double>(np)));
        kernel.push_back(kp);
    }

    detail::SpectralOp op;
    op.n = nv + np;
    op.sigma = shift;
    op.apply = [&saddle, &M, &pd, kernel, nv, np, &opts](const Eigen::VectorXd& q, Eigen::VectorXd& out) {
        Eigen::VectorXd rhs(nv + np);
        rhs.head(nv).noalias() = M * q.head(nv);
        rhs.tail(np).setZero();
        SolverOptions so;
        so.max_iterations = 80 * (nv + np);
        auto [z, rep] = minres(saddle, rhs, opts.inner_tol, pd, kernel, so);
        (void)rep;
        out = z;
    };
    op.mass = [&M, nv, np](const Eigen::VectorXd& q, Eigen::VectorXd& out) {
        out = Eigen::VectorXd::Zero(nv + np);
        out.head(nv).noalias() = M * q.head(nv);
    };
    op.residual = [&A, &B, &M, nv, np](double lambda, const Eigen::VectorXd& z) {
        Eigen::VectorXd r = A * z.head(nv) + B.transpose() * z.tail(np);
        const double sc = std::max(r.norm(), 1e-300);
        r -= lambda * (M * z.head(nv));
        return r.norm() / sc;
    };
    op.accept_value = [scale](double v) { return v > 1e-12 * scale; };
    op.admissible = [&B, nv](const Eigen::VectorXd& z) { return (B * z.head(nv)).norm() <= 1e-8; };

    if (opts.max_steps == 0) opts.max_steps = std::max(80, 8 * k + 40);
    detail::LanczosEngine eng(op, opts);
    eng.run([&](const std::vector<detail::RitzPair>& locked) { return k - static_cast<int>(locked.size()); });
    // a couple of padding sweeps to pick up multiple eigenvalues hiding at
    // or below the k-th value (no inertia available through the saddle form)
    eng.run([&](const std::vector<detail::RitzPair>& locked) {
        return std::min(2, k + 2 - static_cast<int>(locked.size()));
    });
    return detail::pack_report(eng.locked(), k, eng.filtered, nv + np);
}

/// Every eigenvalue of the SPD pencil (A, M) in (lo, hi]: inertia bisection
/// with one factorization per tree node, Lanczos extraction per slice,
/// counts verified against the inertia deltas. Values only.
struct WindowReport {
    std::vector<double> values;
    std::vector<double> residuals;
};

inline WindowReport eig_window(const SpMat& A, const SpMat& M, double lo, double hi, EigOptions opts = {}) {
    if (!(hi > lo)) throw EmptyWindow("spectral window is empty");
    const double scale = detail::pencil_scale(A, M);

    struct Slice {
        double lo, hi;
        int neg_lo, neg_hi;
    };
    auto probe = [&](double target) {
        detail::LdltShiftInvert f;
        f.factorize(A, M, target, scale);
        return std::pair<double, int>(f.sigma, f.negatives);
    };
    const auto [lo_used, neg_lo] = probe(lo);
    const auto [hi_used, neg_hi] = probe(hi);

    std::vector<Slice> work{{lo_used, hi_used, neg_lo, neg_hi}};
    std::vector<Slice> ready;
    const int batch = 48;
    const double width_min = 1e-6 * (hi_used - lo_used);

    while (!work.empty()) {
        Slice s = work.back();
        work.pop_back();
        const int cnt = s.neg_hi - s.neg_lo;
        if (cnt == 0) continue;
        if (cnt <= batch || (s.hi - s.lo) < width_min) {
            ready.push_back(s);
            continue;
        }
        const auto [mid, neg_mid] = probe(0.5 * (s.lo + s.hi));
        if (mid <= s.lo || mid >= s.hi || neg_mid < s.neg_lo || neg_mid > s.neg_hi) {
            ready.push_back(s); // jitter escaped the slice; treat as cluster
            continue;
        }
        work.push_back({s.lo, mid, s.neg_lo, neg_mid});
        work.push_back({mid, s.hi, neg_mid, s.neg_hi});
    }
    std::sort(ready.begin(), ready.end(), [](const Slice& a, const Slice& b) { return a.lo < b.lo; });

    auto run_slice = [&](const Slice& s, unsigned seed) {
        const int cnt = s.neg_hi - s.neg_lo;
        detail::LdltShiftInvert f;
        f.factorize(A, M, 0.5 * (s.lo + s.hi), scale);
        detail::SpectralOp op = detail::make_direct_op(A, M, f);
        op.sigma = f.sigma;
        op.accept_value = [&s](double v) { return v > s.lo && v <= s.hi; };
        EigOptions local = opts;
        local.seed = seed;
        local.max_steps = std::max(120, 3 * cnt + 60);
        local.max_restarts = std::max(opts.max_restarts, 12 + cnt);
        detail::LanczosEngine eng(op, local);
        eng.run([&](const std::vector<detail::RitzPair>& locked) { return cnt - static_cast<int>(locked.size()); });
        std::vector<std::pair<double, double>> out;
        for (const auto& p : eng.locked()) out.emplace_back(p.value, p.residual);
        if (static_cast<int>(out.size()) < cnt)
            throw NotConverged("window slice [" + std::to_string(s.lo) + ", " + std::to_string(s.hi) + "] found " +
                               std::to_string(out.size()) + " of " + std::to_string(cnt));
        std::sort(out.begin(), out.end());
        return out;
    };

    std::vector<std::vector<std::pair<double, double>>> per_slice(ready.size());
    const int workers = std::max(1, opts.workers);
    if (workers == 1 || ready.size() <= 1) {
        for (std::size_t i = 0; i < ready.size(); ++i)
            per_slice[i] = run_slice(ready[i], opts.seed + 1000u * static_cast<unsigned>(i));
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
        for (int wk = 0; wk < workers; ++wk) {
            pool.emplace_back([&, wk] {
                try {
                    for (std::size_t i = next.fetch_add(1); i < ready.size(); i = next.fetch_add(1))
                        per_slice[i] = run_slice(ready[i], opts.seed + 1000u * static_cast<unsigned>(i));
                } catch (...) {
                    errors[wk] = std::current_exception();
                }
            });
        }
        for (auto& t : pool) t.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }

    WindowReport rep;
    for (const auto& slice : per_slice)
        for (const auto& [v, r] : slice) {
            rep.values.push_back(v);
            rep.residuals.push_back(r);
        }
    return rep;
}

} // namespace homlab
