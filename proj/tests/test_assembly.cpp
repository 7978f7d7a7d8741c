#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "homlab/assembly.hpp"
#include "homlab/solvers.hpp"

using namespace homlab;

namespace {

constexpr double kPi = 3.14159265358979323846;

PeriodicMesh two_triangle_square() {
    PeriodicMesh m;
    m.nodes = {Vec2(0, 0), Vec2(1, 0), Vec2(1, 1), Vec2(0, 1)};
    m.tris = {Tri{{0, 1, 2}, Phase::matrix}, Tri{{0, 2, 3}, Phase::matrix}};
    m.bbox = Rect::unit();
    m.boundary_nodes = {0, 1, 2, 3};
    return m;
}

CellGeometry disk(double r, int res) {
    CellGeometry g;
    g.radius = r;
    g.resolution = res;
    return g;
}

// Brute-force element integrator: tensor Gauss-Legendre collapsed onto the
// triangle, far beyond the order of anything assembled. Independent of the
// quadrature used by the library.
template <typename F>
double duffy_integrate(const std::array<Vec2, 3>& tri, F&& f, int n = 24) {
    std::vector<double> x(n), w(n);
    // Golub-Welsch via Newton on Legendre polynomials
    for (int i = 0; i < n; ++i) {
        double t = std::cos(kPi * (i + 0.75) / (n + 0.5));
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = t;
            for (int k = 2; k <= n; ++k) {
                const double p2 = ((2 * k - 1) * t * p1 - (k - 1) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            const double dp = n * (t * p1 - p0) / (t * t - 1.0);
            const double dt = p1 / dp;
            t -= dt;
            if (std::abs(dt) < 1e-15) break;
        }
        double p0 = 1.0, p1 = t;
        for (int k = 2; k <= n; ++k) {
            const double p2 = ((2 * k - 1) * t * p1 - (k - 1) * p0) / k;
            p0 = p1;
            p1 = p2;
        }
        const double dp = n * (t * p1 - p0) / (t * t - 1.0);
        x[i] = t;
        w[i] = 2.0 / ((1.0 - t * t) * dp * dp);
    }
    const Vec2 &a = tri[0], &b = tri[1], &c = tri[2];
    const double area2 = (b.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (b.y() - a.y());
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        const double u = 0.5 * (x[i] + 1.0);
        for (int j = 0; j < n; ++j) {
            const double v = 0.5 * (x[j] + 1.0);
            // Duffy map: (u, v) in unit square -> barycentric (1-u, u(1-v), uv)
            const double l1 = u * (1.0 - v), l2 = u * v, l0 = 1.0 - l1 - l2;
            const Vec2 p = l0 * a + l1 * b + l2 * c;
            sum += 0.25 * w[i] * w[j] * u * f(p, std::array<double, 3>{l0, l1, l2});
        }
    }
    return sum * area2 * 0.5 * 2.0; // jacobian of the Duffy map times 2*area scaling
}

} // namespace

TEST_CASE("P1 mass partitions unity on the two-triangle square") {
    PeriodicMesh m = two_triangle_square();
    DofMap dm = build_dof_map(m, ElementOrder::P1);
    SparseSystem sys = assemble_mass(m, dm);
    double sx = 0.0, sy = 0.0;
    for (int k = 0; k < sys.matrix.outerSize(); ++k)
        for (SpMat::InnerIterator it(sys.matrix, k); it; ++it)
            ((it.row() % 2 == 0) ? sx : sy) += it.value();
    REQUIRE(sx == Catch::Approx(1.0).margin(1e-14));
    REQUIRE(sy == Catch::Approx(1.0).margin(1e-14));
}

TEST_CASE("degenerate form annihilates rigid translations") {
    PeriodicMesh m = build_cell_mesh(disk(0.25, 16));
    DofMap dm = build_dof_map(m, ElementOrder::P2);
    MaterialSpec mat;
    SparseSystem sys = assemble_degenerate(m, dm, mat);
    Eigen::VectorXd ex = project_field(dm, [](const Vec2&) { return Vec2(1.0, 0.0); });
    REQUIRE((sys.matrix * ex).norm() <= 1e-12 * sys.matrix.norm());
    Eigen::VectorXd ey = project_field(dm, [](const Vec2&) { return Vec2(0.0, 1.0); });
    REQUIRE((sys.matrix * ey).norm() <= 1e-12 * sys.matrix.norm());
}

TEST_CASE("P1 single-triangle elasticity matches the hand-assembled matrix") {
    PeriodicMesh m;
    m.nodes = {Vec2(0.1, 0.05), Vec2(0.9, 0.2), Vec2(0.3, 0.8)};
    m.tris = {Tri{{0, 1, 2}, Phase::matrix}};
    m.bbox = Rect::unit();
    DofMap dm = build_dof_map(m, ElementOrder::P1);
    PhaseTensors field;
    field.matrix = ElasticityTensor4::isotropic(1.0, 1.0).voigt();
    SparseSystem sys = assemble_elasticity(m, dm, field);

    // independent route: constant strains from the analytic P1 gradients
    const TriFrame f = tri_frame(m, 0);
    Eigen::Matrix<double, 3, 6> B = Eigen::Matrix<double, 3, 6>::Zero();
    for (int a = 0; a < 3; ++a) {
        B(0, 2 * a) = f.grad_l[a].x();
        B(2, 2 * a) = f.grad_l[a].y();
        B(1, 2 * a + 1) = f.grad_l[a].y();
        B(2, 2 * a + 1) = f.grad_l[a].x();
    }
    const Eigen::Matrix<double, 6, 6> Ke = f.area * B.transpose() * (*field.matrix) * B;
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) REQUIRE(sys.matrix.coeff(i, j) == Catch::Approx(Ke(i, j)).margin(1e-13));
}

TEST_CASE("P2 stiffness matches a high-order brute-force integration") {
    PeriodicMesh m;
    m.nodes = {Vec2(0.0, 0.0), Vec2(1.1, 0.1), Vec2(0.4, 0.9)};
    m.tris = {Tri{{0, 1, 2}, Phase::matrix}};
    m.bbox = Rect{0.0, 0.0, 1.1, 0.9};
    DofMap dm = build_dof_map(m, ElementOrder::P2);
    const Eigen::Matrix3d C = ElasticityTensor4::isotropic(1.3, 0.7).voigt();
    PhaseTensors field;
    field.matrix = C;
    SparseSystem sys = assemble_elasticity(m, dm, field);

    const TriFrame f = tri_frame(m, 0);
    for (int a = 0; a < 6; ++a)
        for (int ca = 0; ca < 2; ++ca)
            for (int b = a; b < 6; ++b)
                for (int cb = 0; cb < 2; ++cb) {
                    const double ref = duffy_integrate(f.coords, [&](const Vec2&, const std::array<double, 3>& l) {
                        Vec2 g[6];
                        shape_gradients(ElementOrder::P2, l, f.grad_l, g);
                        Eigen::Vector3d ea = Eigen::Vector3d::Zero(), eb = Eigen::Vector3d::Zero();
                        ea[ca == 0 ? 0 : 1] = ca == 0 ? g[a].x() : g[a].y();
                        ea[2] = ca == 0 ? g[a].y() : g[a].x();
                        eb[cb == 0 ? 0 : 1] = cb == 0 ? g[b].x() : g[b].y();
                        eb[2] = cb == 0 ? g[b].y() : g[b].x();
                        return double(ea.transpose() * C * eb);
                    });
                    REQUIRE(sys.matrix.coeff(2 * a + ca, 2 * b + cb) == Catch::Approx(ref).margin(1e-12));
                }
}

TEST_CASE("dirichlet elimination leaves the interior dofs") {
    PeriodicMesh m = build_macro_mesh(Rect::unit(), 2);
    DofMap dm = build_dof_map(m, ElementOrder::P1);
    SparseSystem sys = assemble_mass(m, dm);
    SparseSystem red = constrain(sys, m, dm, {ConstraintKind::dirichlet});
    REQUIRE(red.n_reduced() == 2); // 2*(n-1)^2 for the P1 vector space
}

TEST_CASE("mean_zero is idempotent") {
    PeriodicMesh m = build_cell_mesh(disk(0.25, 8));
    DofMap dm = build_dof_map(m, ElementOrder::P2);
    SparseSystem sys = assemble_degenerate(m, dm, MaterialSpec{});
    SparseSystem once = constrain(sys, m, dm, {ConstraintKind::periodic, ConstraintKind::mean_zero});
    SparseSystem twice = constrain(once, m, dm, {ConstraintKind::mean_zero});
    REQUIRE(once.n_reduced() == twice.n_reduced());
    SpMat diff = once.matrix - twice.matrix;
    REQUIRE(diff.norm() == 0.0);
    REQUIRE(once.mean_zero_basis.size() == 2);
}

TEST_CASE("periodic reduction merges faces and keeps translations in the kernel") {
    PeriodicMesh m = build_cell_mesh(disk(0.25, 16));
    DofMap dm = build_dof_map(m, ElementOrder::P2);
    SparseSystem sys = assemble_degenerate(m, dm, MaterialSpec{});
    SparseSystem red = constrain(sys, m, dm, {ConstraintKind::periodic, ConstraintKind::mean_zero});
    // torus dof count: n^2 vertices + 3n^2 edges for the structured grid
    REQUIRE(red.n_reduced() == 2 * (16 * 16 + 3 * 16 * 16));
    for (const auto& z : red.mean_zero_basis) REQUIRE((red.matrix * z).norm() <= 1e-12 * red.matrix.norm());
}

TEST_CASE("project_field interpolates nodally") {
    PeriodicMesh m = build_cell_mesh(disk(0.25, 8));
    DofMap dm = build_dof_map(m, ElementOrder::P2);
    Eigen::VectorXd zero = project_field(dm, [](const Vec2&) { return Vec2(0, 0); });
    REQUIRE(zero.norm() == 0.0);
    Eigen::VectorXd cst = project_field(dm, [](const Vec2&) { return Vec2(1, 0); });
    for (int i = 0; i < dm.num_scalar(); ++i) {
        REQUIRE(cst[2 * i] == 1.0);
        REQUIRE(cst[2 * i + 1] == 0.0);
    }
    REQUIRE_THROWS_AS(project_field(dm, [](const Vec2&) { return Vec2(1.0 / 0.0, 0); }), NonFiniteSample);
}

TEST_CASE("interpolant L2 norm approaches the analytic value") {
    PeriodicMesh m = build_macro_mesh(Rect::unit(), 32);
    DofMap dm = build_dof_map(m, ElementOrder::P2);
    Eigen::VectorXd x = project_field(dm, [](const Vec2& p) { return Vec2(std::sin(2 * kPi * p.x()), 0.0); });
    SparseSystem mass = assemble_mass(m, dm);
    const double norm2 = x.dot(mass.matrix * x);
    REQUIRE(norm2 == Catch::Approx(0.5).epsilon(0.01));
}

TEST_CASE("assembled matrices are numerically symmetric") {
    PeriodicMesh m = build_cell_mesh(disk(0.25, 16));
    DofMap dm = build_dof_map(m, ElementOrder::P2);
    REQUIRE(assemble_mass(m, dm).symmetry_defect() <= 1e-12);
    REQUIRE(assemble_degenerate(m, dm, MaterialSpec{}).symmetry_defect() <= 1e-12);
    REQUIRE(assemble_scaled_full(m, dm, MaterialSpec{}, 0.25).symmetry_defect() <= 1e-12);
}

TEST_CASE("degenerate form is positive semidefinite on random probes") {
    PeriodicMesh m = build_cell_mesh(disk(0.25, 16));
    DofMap dm = build_dof_map(m, ElementOrder::P2);
    SparseSystem sys = assemble_degenerate(m, dm, MaterialSpec{});
    std::mt19937 rng(7);
    std::normal_distribution<double> dist;
    for (int trial = 0; trial < 50; ++trial) {
        Eigen::VectorXd v(sys.matrix.rows());
        for (int i = 0; i < v.size(); ++i) v[i] = dist(rng);
        v.normalize();
        REQUIRE(v.dot(sys.matrix * v) >= -1e-10);
    }
}

TEST_CASE("patch test: linear fields are reproduced exactly") {
    PeriodicMesh m = build_cell_mesh(disk(0.25, 8)); // unstructured-ish interior from snapping
    m.boundary_nodes.clear();
    detail::collect_boundary_nodes(m);
    DofMap dm = build_dof_map(m, ElementOrder::P2);
    PhaseTensors field;
    field.matrix = ElasticityTensor4::isotropic(2.0, 1.0).voigt();
    field.inclusion = ElasticityTensor4::isotropic(2.0, 1.0).voigt();
    SparseSystem sys = assemble_elasticity(m, dm, field);
    SparseSystem red = constrain(sys, m, dm, {ConstraintKind::dirichlet});

    Eigen::Matrix2d A;
    A << 0.3, -0.2, 0.1, 0.4;
    auto lin = [&](const Vec2& p) { return Vec2(A.row(0).dot(p), A.row(1).dot(p)); };
    Eigen::VectorXd ubc = project_field(dm, lin);
    // zero the interior part, keep boundary data
    Eigen::VectorXd interior_mask = Eigen::VectorXd::Zero(sys.n_full);
    for (int i = 0; i < sys.n_full; ++i)
        if (red.dof_map[i] >= 0) interior_mask[i] = 1.0;
    Eigen::VectorXd ubdry = ubc;
    for (int i = 0; i < sys.n_full; ++i)
        if (interior_mask[i] > 0) ubdry[i] = 0.0;

    Eigen::VectorXd rhs_full = -(sys.matrix * ubdry);
    Eigen::VectorXd rhs = red.reduce(rhs_full);
    auto [x, rep] = cg_solve(red.matrix, rhs, 1e-13);
    REQUIRE(rep.converged);
    Eigen::VectorXd u = red.expand(x) + ubdry;
    REQUIRE((u - ubc).lpNorm<Eigen::Infinity>() <= 1e-10);
}

TEST_CASE("energy identity holds for the constrained solve") {
    PeriodicMesh m = build_macro_mesh(Rect::unit(), 8);
    DofMap dm = build_dof_map(m, ElementOrder::P2);
    PhaseTensors field;
    field.matrix = ElasticityTensor4::isotropic(1.0, 1.0).voigt();
    SparseSystem K = assemble_elasticity(m, dm, field);
    SparseSystem M = assemble_mass(m, dm);
    const double alpha = 1.0;
    SparseSystem sysK = constrain(K, m, dm, {ConstraintKind::dirichlet});
    SparseSystem sysM = constrain(M, m, dm, {ConstraintKind::dirichlet});
    Eigen::VectorXd f = sysK.reduce(assemble_load(m, dm, [](const Vec2& p) { return Vec2(p.y(), 1.0 - p.x()); }));
    SpMat Aop = sysK.matrix + alpha * sysM.matrix;
    auto [u, rep] = cg_solve(Aop, f, 1e-12);
    REQUIRE(rep.converged);
    const double a_uu = u.dot(sysK.matrix * u);
    const double m_uu = u.dot(sysM.matrix * u);
    const double fu = f.dot(u);
    REQUIRE(std::abs(a_uu + alpha * m_uu - fu) <= 1e-8 * std::abs(fu));
}

TEST_CASE("divergence form needs the mixed pair and sums to boundary flux") {
    PeriodicMesh m = build_cell_mesh(disk(0.25, 16));
    DofMap v2 = build_dof_map(m, ElementOrder::P2);
    DofMap p1 = build_dof_map(m, ElementOrder::P1);
    REQUIRE_THROWS_AS(assemble_divergence(m, p1, p1), UnsupportedOrder);
    SpMat B = assemble_divergence(m, v2, p1);
    // int div(u) over the whole cell for u = (x, 0) equals the boundary flux 1
    Eigen::VectorXd u = project_field(v2, [](const Vec2& p) { return Vec2(p.x(), 0.0); });
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(p1.num_scalar());
    REQUIRE(ones.dot(B * u) == Catch::Approx(1.0).margin(1e-12));
}
