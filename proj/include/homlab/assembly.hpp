#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <cstdio>
#include <functional>
#include <optional>
#include <set>
#include <unordered_map>

#include "homlab/fem.hpp"
#include "homlab/tensor.hpp"

namespace homlab {

enum class ConstraintKind { periodic, dirichlet, mean_zero };

using SpMat = Eigen::SparseMatrix<double>;

/// Symmetric sparse operator plus enough dof metadata to move between the
/// full nodal vector and the constrained equation vector. Assembly produces
/// the unconstrained system (dof_map = identity); constrain() eliminates
/// periodic slaves and Dirichlet rows and records projection constraints.
struct SparseSystem {
    SpMat matrix;
    Eigen::VectorXd rhs;
    std::vector<int> dof_map; // full vector dof -> equation index, -1 if eliminated
    int n_full = 0;
    int components = 2;
    std::set<ConstraintKind> constraint_kind;
    // orthonormal per-component translation vectors, equation coordinates
    std::vector<Eigen::VectorXd> mean_zero_basis;

    int n_reduced() const { return static_cast<int>(matrix.rows()); }

    Eigen::VectorXd reduce(const Eigen::VectorXd& full) const {
        Eigen::VectorXd r = Eigen::VectorXd::Zero(n_reduced());
        for (int i = 0; i < n_full; ++i)
            if (dof_map[i] >= 0) r[dof_map[i]] += full[i];
        return r;
    }
    Eigen::VectorXd expand(const Eigen::VectorXd& red) const {
        Eigen::VectorXd f = Eigen::VectorXd::Zero(n_full);
        for (int i = 0; i < n_full; ++i)
            if (dof_map[i] >= 0) f[i] = red[dof_map[i]];
        return f;
    }
    double symmetry_defect() const {
        SpMat d = SpMat(matrix.transpose()) - matrix;
        double mx = 0.0, scale = 0.0;
        for (int k = 0; k < d.outerSize(); ++k)
            for (SpMat::InnerIterator it(d, k); it; ++it) mx = std::max(mx, std::abs(it.value()));
        for (int k = 0; k < matrix.outerSize(); ++k)
            for (SpMat::InnerIterator it(matrix, k); it; ++it) scale = std::max(scale, std::abs(it.value()));
        return scale > 0 ? mx / scale : mx;
    }
};

namespace detail {

struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(int n) : parent(n) {
        for (int i = 0; i < n; ++i) parent[i] = i;
    }
    int find(int i) {
        while (parent[i] != i) i = parent[i] = parent[parent[i]];
        return i;
    }
    void unite(int a, int b) {
        a = find(a);
        b = find(b);
        if (a == b) return;
        if (a > b) std::swap(a, b); // keep the lowest index as representative
        parent[b] = a;
    }
};

inline long long quantize(double v, double lo, double span) {
    return std::llround((v - lo) / span * 1e12);
}

inline bool on_face(double v, double face, double tol) { return std::abs(v - face) < tol; }

} // namespace detail

/// Eliminates periodic slave dofs onto masters and removes Dirichlet dofs;
/// a mean_zero request appends the per-component translation constraint
/// handled by projection in the solvers (idempotent). The input system may
/// already be constrained; eliminations compose.
inline SparseSystem constrain(const SparseSystem& sys, const PeriodicMesh& mesh, const DofMap& dm,
                              const std::set<ConstraintKind>& kinds) {
    const int ns = dm.num_scalar();
    const int comps = sys.components;
    if (sys.n_full != ns * comps) throw IncompatibleInputs("dof map does not match the system");

    const Rect& bb = mesh.bbox;
    const double tol = 1e-12 * std::max(1.0, std::max(bb.width(), bb.height()));

    detail::UnionFind uf(ns);
    std::vector<char> kill(ns, 0);

    // fold in the equivalences and eliminations already present
    {
        std::unordered_map<int, int> eq_first;
        for (int i = 0; i < ns; ++i) {
            const int eq = sys.dof_map[i * comps];
            if (eq < 0) {
                kill[i] = 1;
                continue;
            }
            auto [it, fresh] = eq_first.try_emplace(eq, i);
            if (!fresh) uf.unite(it->second, i);
        }
    }

    if (kinds.count(ConstraintKind::periodic)) {
        if (mesh.periodic_pairs.empty()) throw MissingPeriodicPairs("mesh carries no periodic pairs");
        std::unordered_map<long long, int> left, bottom;
        const double spanx = std::max(bb.width(), 1e-12), spany = std::max(bb.height(), 1e-12);
        for (int i = 0; i < ns; ++i) {
            const Vec2& p = dm.dof_coords[i];
            if (detail::on_face(p.x(), bb.x0, tol)) left[detail::quantize(p.y(), bb.y0, spany)] = i;
            if (detail::on_face(p.y(), bb.y0, tol)) bottom[detail::quantize(p.x(), bb.x0, spanx)] = i;
        }
        for (int i = 0; i < ns; ++i) {
            const Vec2& p = dm.dof_coords[i];
            if (detail::on_face(p.x(), bb.x1, tol)) {
                auto it = left.find(detail::quantize(p.y(), bb.y0, spany));
                if (it == left.end()) throw MissingPeriodicPairs("unmatched dof on the right face");
                uf.unite(it->second, i);
            }
            if (detail::on_face(p.y(), bb.y1, tol)) {
                auto it = bottom.find(detail::quantize(p.x(), bb.x0, spanx));
                if (it == bottom.end()) throw MissingPeriodicPairs("unmatched dof on the top face");
                uf.unite(it->second, i);
            }
        }
    }

    if (kinds.count(ConstraintKind::dirichlet)) {
        if (mesh.boundary_nodes.empty()) throw EmptyBoundary("mesh carries no Dirichlet boundary nodes");
        for (int i = 0; i < ns; ++i) {
            const Vec2& p = dm.dof_coords[i];
            if (detail::on_face(p.x(), bb.x0, tol) || detail::on_face(p.x(), bb.x1, tol) ||
                detail::on_face(p.y(), bb.y0, tol) || detail::on_face(p.y(), bb.y1, tol))
                kill[i] = 1;
        }
    }

    // a killed member kills its class
    std::vector<char> class_kill(ns, 0);
    for (int i = 0; i < ns; ++i)
        if (kill[i]) class_kill[uf.find(i)] = 1;

    std::vector<int> scalar_red(ns, -1);
    int nred_scalar = 0;
    for (int i = 0; i < ns; ++i)
        if (uf.find(i) == i && !class_kill[i]) scalar_red[i] = nred_scalar++;

    SparseSystem out;
    out.components = comps;
    out.n_full = sys.n_full;
    out.constraint_kind = sys.constraint_kind;
    for (auto k : kinds) out.constraint_kind.insert(k);
    out.dof_map.assign(sys.n_full, -1);
    for (int i = 0; i < ns; ++i) {
        const int r = uf.find(i);
        if (class_kill[r]) continue;
        for (int c = 0; c < comps; ++c) out.dof_map[i * comps + c] = scalar_red[r] * comps + c;
    }

    // old equation index -> new equation index (classes only merge)
    std::vector<int> old_to_new(sys.matrix.rows(), -1);
    for (int i = 0; i < ns; ++i) {
        const int eq = sys.dof_map[i * comps];
        if (eq < 0) continue;
        for (int c = 0; c < comps; ++c) old_to_new[eq + c] = out.dof_map[i * comps + c];
    }

    const int nred = nred_scalar * comps;
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>(sys.matrix.nonZeros()));
    for (int k = 0; k < sys.matrix.outerSize(); ++k)
        for (SpMat::InnerIterator it(sys.matrix, k); it; ++it) {
            const int ri = old_to_new[it.row()], rj = old_to_new[it.col()];
            if (ri >= 0 && rj >= 0) trips.emplace_back(ri, rj, it.value());
        }
    out.matrix.resize(nred, nred);
    out.matrix.setFromTriplets(trips.begin(), trips.end());

    out.rhs = Eigen::VectorXd::Zero(nred);
    for (int i = 0; i < sys.matrix.rows(); ++i)
        if (old_to_new[i] >= 0) out.rhs[old_to_new[i]] += sys.rhs[i];

    if (out.constraint_kind.count(ConstraintKind::mean_zero)) {
        out.mean_zero_basis.clear();
        for (int c = 0; c < comps; ++c) {
            Eigen::VectorXd z = Eigen::VectorXd::Zero(nred);
            for (int s = 0; s < nred_scalar; ++s) z[s * comps + c] = 1.0;
            z.normalize();
            out.mean_zero_basis.push_back(z);
        }
    }
    return out;
}

namespace detail {

// 3x12 engineering-strain matrix columns for a vector P2 element: dof
// (node a, comp c) contributes (gx,0,gy) or (0,gy,gx).
inline void strain_columns(const Vec2* g, int ndofs, Eigen::Matrix<double, 3, 12>& B) {
    B.setZero();
    for (int a = 0; a < ndofs; ++a) {
        B(0, 2 * a + 0) = g[a].x();
        B(2, 2 * a + 0) = g[a].y();
        B(1, 2 * a + 1) = g[a].y();
        B(2, 2 * a + 1) = g[a].x();
    }
}

template <typename CellKernel>
inline SparseSystem assemble_vector_form(const PeriodicMesh& mesh, const DofMap& dm, CellKernel&& kernel) {
    SparseSystem sys;
    sys.components = 2;
    sys.n_full = dm.num_vector();
    sys.dof_map.resize(sys.n_full);
    for (int i = 0; i < sys.n_full; ++i) sys.dof_map[i] = i;
    sys.rhs = Eigen::VectorXd::Zero(sys.n_full);

    const int nd = dm.per_element();
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>(mesh.num_tris()) * nd * nd * 4);
    Eigen::Matrix<double, 12, 12> Ke;
    for (int t = 0; t < mesh.num_tris(); ++t) {
        const TriFrame f = tri_frame(mesh, t);
        Ke.setZero();
        kernel(t, f, Ke);
        const auto& ed = dm.element_dofs[t];
        for (int a = 0; a < nd; ++a)
            for (int b = 0; b < nd; ++b)
                for (int ca = 0; ca < 2; ++ca)
                    for (int cb = 0; cb < 2; ++cb) {
                        const double v = Ke(2 * a + ca, 2 * b + cb);
                        if (v != 0.0) trips.emplace_back(2 * ed[a] + ca, 2 * ed[b] + cb, v);
                    }
    }
    sys.matrix.resize(sys.n_full, sys.n_full);
    sys.matrix.setFromTriplets(trips.begin(), trips.end());
    return sys;
}

} // namespace detail

/// Per-phase constant Voigt tensors; an element in a phase without a tensor
/// is a hard error.
struct PhaseTensors {
    std::optional<Eigen::Matrix3d> matrix;
    std::optional<Eigen::Matrix3d> inclusion;

    const Eigen::Matrix3d& for_phase(Phase p) const {
        const auto& opt = (p == Phase::matrix) ? matrix : inclusion;
        if (!opt) throw PhaseFieldMissing("no elasticity tensor defined on a populated phase");
        return *opt;
    }
};

/// Strain form int C e(u) : e(v) with piecewise-constant C.
inline SparseSystem assemble_elasticity(const PeriodicMesh& mesh, const DofMap& dm, const PhaseTensors& field) {
    if (dm.order != ElementOrder::P2 && dm.order != ElementOrder::P1)
        throw UnsupportedOrder("vector forms support P1/P2 only");
    const int nd = dm.per_element();
    return detail::assemble_vector_form(mesh, dm, [&](int t, const TriFrame& f, Eigen::Matrix<double, 12, 12>& Ke) {
        const Eigen::Matrix3d& C = field.for_phase(mesh.tris[t].phase);
        double N[6];
        Vec2 g[6];
        Eigen::Matrix<double, 3, 12> B;
        for (int q = 0; q < QuadRule::n; ++q) {
            const auto& l = QuadRule::points()[q];
            shape_values(dm.order, l, N);
            shape_gradients(dm.order, l, f.grad_l, g);
            detail::strain_columns(g, nd, B);
            const double w = QuadRule::weights()[q] * f.area;
            Ke.topLeftCorner(2 * nd, 2 * nd) += w * B.topLeftCorner(3, 2 * nd).transpose() * C *
                                                B.topLeftCorner(3, 2 * nd);
        }
    });
}

/// Degenerate form: matrix-phase elasticity with C2 plus the dilatational
/// penalty lambda (div u)(div v) on the inclusion. Positive semidefinite.
inline SparseSystem assemble_degenerate(const PeriodicMesh& mesh, const DofMap& dm, const MaterialSpec& mat) {
    const Eigen::Matrix3d C2 = mat.matrix_tensor.voigt();
    const double lam = mat.inclusion_lambda;
    const int nd = dm.per_element();
    return detail::assemble_vector_form(mesh, dm, [&](int t, const TriFrame& f, Eigen::Matrix<double, 12, 12>& Ke) {
        const bool incl = mesh.tris[t].phase == Phase::inclusion;
        double N[6];
        Vec2 g[6];
        Eigen::Matrix<double, 3, 12> B;
        for (int q = 0; q < QuadRule::n; ++q) {
            const auto& l = QuadRule::points()[q];
            shape_values(dm.order, l, N);
            shape_gradients(dm.order, l, f.grad_l, g);
            detail::strain_columns(g, nd, B);
            const double w = QuadRule::weights()[q] * f.area;
            if (!incl) {
                Ke.topLeftCorner(2 * nd, 2 * nd) +=
                    w * B.topLeftCorner(3, 2 * nd).transpose() * C2 * B.topLeftCorner(3, 2 * nd);
            } else {
                Eigen::Matrix<double, 1, 12> d = Eigen::Matrix<double, 1, 12>::Zero();
                for (int a = 0; a < nd; ++a) {
                    d(0, 2 * a + 0) = g[a].x();
                    d(0, 2 * a + 1) = g[a].y();
                }
                Ke.topLeftCorner(2 * nd, 2 * nd) +=
                    (w * lam) * d.leftCols(2 * nd).transpose() * d.leftCols(2 * nd);
            }
        }
    });
}

/// Full eps-scaled composite form: degenerate part plus eps^2 times the
/// shear-identity tensor on the inclusion.
inline SparseSystem assemble_scaled_full(const PeriodicMesh& mesh, const DofMap& dm, const MaterialSpec& mat,
                                         double eps) {
    SparseSystem sys = assemble_degenerate(mesh, dm, mat);
    const Eigen::Matrix3d C0 = ElasticityTensor4::shear_identity(mat.c0_coefficient()).voigt();
    PhaseTensors shear;
    shear.matrix = Eigen::Matrix3d::Zero();
    shear.inclusion = (eps * eps) * C0;
    SparseSystem add = assemble_elasticity(mesh, dm, shear);
    sys.matrix += add.matrix;
    return sys;
}

/// Vector mass form int u . v.
inline SparseSystem assemble_mass(const PeriodicMesh& mesh, const DofMap& dm) {
    const int nd = dm.per_element();
    return detail::assemble_vector_form(mesh, dm, [&](int t, const TriFrame& f, Eigen::Matrix<double, 12, 12>& Ke) {
        (void)t;
        double N[6];
        for (int q = 0; q < QuadRule::n; ++q) {
            shape_values(dm.order, QuadRule::points()[q], N);
            const double w = QuadRule::weights()[q] * f.area;
            for (int a = 0; a < nd; ++a)
                for (int b = 0; b < nd; ++b) {
                    const double v = w * N[a] * N[b];
                    Ke(2 * a, 2 * b) += v;
                    Ke(2 * a + 1, 2 * b + 1) += v;
                }
        }
    });
}

/// Mixed divergence coupling B(q, v) = int q div(v); rows are P1 pressure
/// dofs, columns P2 velocity dofs (full numbering, constrain separately).
inline SpMat assemble_divergence(const PeriodicMesh& mesh, const DofMap& vel, const DofMap& pres) {
    if (vel.order != ElementOrder::P2 || pres.order != ElementOrder::P1)
        throw UnsupportedOrder("divergence form requires the P2/P1 mixed pair");
    std::vector<Eigen::Triplet<double>> trips;
    double Np[3];
    Vec2 g[6];
    for (int t = 0; t < mesh.num_tris(); ++t) {
        const TriFrame f = tri_frame(mesh, t);
        const auto& ev = vel.element_dofs[t];
        const auto& ep = pres.element_dofs[t];
        for (int q = 0; q < QuadRule::n; ++q) {
            const auto& l = QuadRule::points()[q];
            shape_values(ElementOrder::P1, l, Np);
            shape_gradients(ElementOrder::P2, l, f.grad_l, g);
            const double w = QuadRule::weights()[q] * f.area;
            for (int a = 0; a < 3; ++a)
                for (int b = 0; b < 6; ++b) {
                    trips.emplace_back(ep[a], 2 * ev[b] + 0, w * Np[a] * g[b].x());
                    trips.emplace_back(ep[a], 2 * ev[b] + 1, w * Np[a] * g[b].y());
                }
        }
    }
    SpMat B(pres.num_scalar(), vel.num_vector());
    B.setFromTriplets(trips.begin(), trips.end());
    return B;
}

/// Quadrature load vector int f . phi over the mesh (full numbering).
inline Eigen::VectorXd assemble_load(const PeriodicMesh& mesh, const DofMap& dm,
                                     const std::function<Vec2(const Vec2&)>& f) {
    Eigen::VectorXd b = Eigen::VectorXd::Zero(dm.num_vector());
    const int nd = dm.per_element();
    double N[6];
    for (int t = 0; t < mesh.num_tris(); ++t) {
        const TriFrame fr = tri_frame(mesh, t);
        const auto& ed = dm.element_dofs[t];
        for (int q = 0; q < QuadRule::n; ++q) {
            const auto& l = QuadRule::points()[q];
            shape_values(dm.order, l, N);
            const Vec2 p = bary_to_point(fr, l);
            const Vec2 fv = f(p);
            if (!std::isfinite(fv.x()) || !std::isfinite(fv.y())) throw NonFiniteSample("forcing not finite");
            const double w = QuadRule::weights()[q] * fr.area;
            for (int a = 0; a < nd; ++a) {
                b[2 * ed[a] + 0] += w * N[a] * fv.x();
                b[2 * ed[a] + 1] += w * N[a] * fv.y();
            }
        }
    }
    return b;
}

/// Nodal interpolation of an analytic vector field (full numbering).
inline Eigen::VectorXd project_field(const DofMap& dm, const std::function<Vec2(const Vec2&)>& f) {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(dm.num_vector());
    for (int i = 0; i < dm.num_scalar(); ++i) {
        const Vec2 v = f(dm.dof_coords[i]);
        if (!std::isfinite(v.x()) || !std::isfinite(v.y())) throw NonFiniteSample("field not finite at a node");
        x[2 * i + 0] = v.x();
        x[2 * i + 1] = v.y();
    }
    return x;
}

/// Coordinate-format text export, 17 significant digits, row-major order.
inline void write_coordinate_matrix(std::ostream& os, const SpMat& m) {
    char buf[96];
    SpMat rm = m;
    rm.makeCompressed();
    for (int k = 0; k < rm.outerSize(); ++k)
        for (SpMat::InnerIterator it(rm, k); it; ++it) {
            std::snprintf(buf, sizeof buf, "%d %d %.17g\n", static_cast<int>(it.row()), static_cast<int>(it.col()),
                          it.value());
            os << buf;
        }
}

} // namespace homlab
