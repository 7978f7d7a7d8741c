#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <sstream>

#include "homlab/mesh.hpp"

using namespace homlab;

namespace {
CellGeometry disk(double r, int res) {
    CellGeometry g;
    g.shape = CellGeometry::Shape::disk;
    g.center = Vec2(0.5, 0.5);
    g.radius = r;
    g.resolution = res;
    return g;
}
constexpr double kPi = 3.14159265358979323846;
} // namespace

TEST_CASE("empty inclusion gives a plain periodic grid") {
    PeriodicMesh m = build_cell_mesh(disk(0.0, 8));
    REQUIRE(m.num_tris() == 2 * 8 * 8);
    REQUIRE(m.count_phase(Phase::inclusion) == 0);
    REQUIRE_FALSE(m.periodic_pairs.empty());
    REQUIRE(m.total_area() == Catch::Approx(1.0).epsilon(1e-13));
}

TEST_CASE("disk area converges to pi r^2") {
    PeriodicMesh m = build_cell_mesh(disk(0.25, 32));
    const double exact = kPi * 0.25 * 0.25;
    REQUIRE(std::abs(m.phase_area(Phase::inclusion) - exact) < 0.02 * exact);
}

TEST_CASE("margin rule rejects an inclusion near the boundary") {
    REQUIRE_THROWS_AS(build_cell_mesh(disk(0.49, 8)), InclusionTouchesBoundary);
}

TEST_CASE("coarse resolutions are rejected") {
    REQUIRE_THROWS_AS(build_cell_mesh(disk(0.25, 3)), ResolutionTooCoarse);
    REQUIRE_THROWS_AS(build_cell_mesh(disk(0.2, 8)), ResolutionTooCoarse); // r < 2h
}

TEST_CASE("macro mesh structured counts") {
    PeriodicMesh m2 = build_macro_mesh(Rect::unit(), 2);
    REQUIRE(m2.num_tris() == 8);
    REQUIRE(m2.num_nodes() == 9);
    REQUIRE(m2.periodic_pairs.empty());
    REQUIRE(m2.boundary_nodes.size() == 8);

    PeriodicMesh m4 = build_macro_mesh(Rect::unit(), 4);
    REQUIRE(m4.num_tris() == 32);

    PeriodicMesh mr = build_macro_mesh(Rect{0.0, 0.0, 2.0, 1.0}, 4);
    REQUIRE(mr.num_tris() == 64);
    for (const auto& t : mr.tris) REQUIRE(t.phase == Phase::matrix);
}

TEST_CASE("fine mesh boundary cells lose their inclusions") {
    PeriodicMesh m = build_fine_mesh(Rect::unit(), 2, 8, disk(0.25, 8));
    REQUIRE(m.count_phase(Phase::inclusion) == 0);
}

TEST_CASE("fine mesh interior cell count") {
    PeriodicMesh m = build_fine_mesh(Rect::unit(), 4, 8, disk(0.25, 8));
    // inclusions live only in the (1/eps - 2)^2 interior cells
    std::set<std::pair<int, int>> cells;
    for (int t = 0; t < m.num_tris(); ++t) {
        if (m.tris[t].phase != Phase::inclusion) continue;
        const Vec2 c = m.tri_centroid(t);
        cells.insert({static_cast<int>(c.x() * 4), static_cast<int>(c.y() * 4)});
    }
    REQUIRE(cells.size() == 4);
    for (const auto& [cx, cy] : cells) {
        REQUIRE(cx >= 1);
        REQUIRE(cx <= 2);
        REQUIRE(cy >= 1);
        REQUIRE(cy <= 2);
    }
}

TEST_CASE("fine mesh inclusion area matches the scaled analytic count") {
    PeriodicMesh m = build_fine_mesh(Rect::unit(), 8, 8, disk(0.25, 8));
    const double exact = 36.0 * (1.0 / 64.0) * kPi * 0.25 * 0.25;
    REQUIRE(std::abs(m.phase_area(Phase::inclusion) - exact) < 0.03 * exact);
}

TEST_CASE("non-tiling epsilon is rejected") {
    REQUIRE_THROWS_AS(build_fine_mesh(Rect{0.0, 0.0, 1.1, 1.0}, 4, 8, disk(0.25, 8)), NonTilingEpsilon);
}

TEST_CASE("locate_phase classifies points and ties deterministically") {
    PeriodicMesh m = build_cell_mesh(disk(0.25, 16));
    REQUIRE(locate_phase(m, Vec2(0.5, 0.5)) == Phase::inclusion);
    REQUIRE(locate_phase(m, Vec2(0.05, 0.05)) == Phase::matrix);
    const Phase a = locate_phase(m, Vec2(0.75, 0.5));
    const Phase b = locate_phase(m, Vec2(0.75, 0.5));
    REQUIRE(a == b);
    REQUIRE_THROWS_AS(locate_phase(m, Vec2(2.0, 0.5)), PointOutsideDomain);
}

TEST_CASE("periodic pairs differ by one lattice vector") {
    PeriodicMesh m = build_cell_mesh(disk(0.25, 16));
    for (const auto& [mast, slv] : m.periodic_pairs) {
        const Vec2 d = m.nodes[slv] - m.nodes[mast];
        const bool xvec = std::abs(d.x() - 1.0) < 1e-12 && std::abs(d.y()) < 1e-12;
        const bool yvec = std::abs(d.y() - 1.0) < 1e-12 && std::abs(d.x()) < 1e-12;
        REQUIRE((xvec || yvec));
    }
}

TEST_CASE("phase area error shrinks at least first order under refinement") {
    const double exact = kPi * 0.25 * 0.25;
    const double e16 = std::abs(build_cell_mesh(disk(0.25, 16)).phase_area(Phase::inclusion) - exact);
    const double e32 = std::abs(build_cell_mesh(disk(0.25, 32)).phase_area(Phase::inclusion) - exact);
    REQUIRE(e32 < e16);
    REQUIRE(e16 / e32 >= 1.5);
}

TEST_CASE("all areas stay positive after snapping, matrix phase connected") {
    for (int res : {8, 16, 32, 64}) {
        PeriodicMesh m = build_cell_mesh(disk(0.25, res));
        for (int t = 0; t < m.num_tris(); ++t) REQUIRE(m.tri_area(t) > 0.0);
    }
    REQUIRE_NOTHROW(build_cell_mesh(disk(0.45, 64)));
}

TEST_CASE("mesh text round trip") {
    PeriodicMesh m = build_cell_mesh(disk(0.25, 8));
    std::stringstream ss;
    write_mesh(ss, m);
    PeriodicMesh r = read_mesh(ss);
    REQUIRE(r.num_nodes() == m.num_nodes());
    REQUIRE(r.num_tris() == m.num_tris());
    REQUIRE(r.periodic_pairs == m.periodic_pairs);
    REQUIRE(r.boundary_nodes == m.boundary_nodes);
    for (int i = 0; i < m.num_nodes(); ++i) REQUIRE((r.nodes[i] - m.nodes[i]).norm() == 0.0);
    for (int t = 0; t < m.num_tris(); ++t) {
        REQUIRE(r.tris[t].v == m.tris[t].v);
        REQUIRE(r.tris[t].phase == m.tris[t].phase);
    }
}
