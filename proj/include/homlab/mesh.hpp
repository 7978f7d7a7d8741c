#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <map>
#include <optional>
#include <queue>
#include <sstream>
#include <vector>

#include "homlab/errors.hpp"

namespace homlab {

using Vec2 = Eigen::Vector2d;

enum class Phase : std::uint8_t { matrix = 0, inclusion = 1 };

enum class ElementOrder : std::uint8_t { P1 = 1, P2 = 2 };

struct Rect {
    double x0 = 0.0, y0 = 0.0, x1 = 1.0, y1 = 1.0;
    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
    bool contains(const Vec2& p, double tol = 0.0) const {
        return p.x() >= x0 - tol && p.x() <= x1 + tol && p.y() >= y0 - tol && p.y() <= y1 + tol;
    }
    static Rect unit() { return {0.0, 0.0, 1.0, 1.0}; }
};

struct Tri {
    std::array<int, 3> v;
    Phase phase = Phase::matrix;
};

struct CellGeometry {
    enum class Shape { disk, square };
    Shape shape = Shape::disk;
    Vec2 center{0.5, 0.5};
    double radius = 0.25; // disk radius, or half-width for the square
    int resolution = 32;  // segments per unit length

    bool has_inclusion() const { return radius > 0.0; }
};

/// Conforming triangulation with phase tags, periodic node pairing across
/// opposite faces and a Dirichlet boundary set. Immutable once built.
struct PeriodicMesh {
    std::vector<Vec2> nodes;
    std::vector<Tri> tris;
    // Single-hop pairs (master, slave): paired coordinates differ by exactly
    // one lattice vector. Corners collapse to one master after transitive
    // resolution in the dof map.
    std::vector<std::pair<int, int>> periodic_pairs;
    std::vector<int> boundary_nodes;
    ElementOrder element_order = ElementOrder::P2;
    Rect bbox = Rect::unit();

    int num_nodes() const { return static_cast<int>(nodes.size()); }
    int num_tris() const { return static_cast<int>(tris.size()); }

    double tri_area(int t) const {
        const auto& tr = tris[t];
        const Vec2 &a = nodes[tr.v[0]], &b = nodes[tr.v[1]], &c = nodes[tr.v[2]];
        return 0.5 * ((b.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (b.y() - a.y()));
    }
    Vec2 tri_centroid(int t) const {
        const auto& tr = tris[t];
        return (nodes[tr.v[0]] + nodes[tr.v[1]] + nodes[tr.v[2]]) / 3.0;
    }
    double phase_area(Phase p) const {
        double a = 0.0;
        for (int t = 0; t < num_tris(); ++t)
            if (tris[t].phase == p) a += tri_area(t);
        return a;
    }
    double total_area() const {
        double a = 0.0;
        for (int t = 0; t < num_tris(); ++t) a += tri_area(t);
        return a;
    }
    int count_phase(Phase p) const {
        int n = 0;
        for (const auto& t : tris)
            if (t.phase == p) ++n;
        return n;
    }
};

namespace detail {

inline int structured_node_id(int i, int j, int npx) { return j * npx + i; }

// Structured triangulation of rect with nx-by-ny squares, diagonals
// alternating by parity so the pattern has the symmetries of the square.
inline PeriodicMesh structured_mesh(const Rect& rect, int nx, int ny) {
    PeriodicMesh m;
    m.bbox = rect;
    const int npx = nx + 1, npy = ny + 1;
    m.nodes.reserve(static_cast<std::size_t>(npx) * npy);
    for (int j = 0; j < npy; ++j)
        for (int i = 0; i < npx; ++i)
            m.nodes.emplace_back(rect.x0 + rect.width() * i / nx, rect.y0 + rect.height() * j / ny);

    m.tris.reserve(2 * static_cast<std::size_t>(nx) * ny);
    for (int j = 0; j < ny; ++j) {
        for (int i = 0; i < nx; ++i) {
            const int v00 = structured_node_id(i, j, npx);
            const int v10 = structured_node_id(i + 1, j, npx);
            const int v01 = structured_node_id(i, j + 1, npx);
            const int v11 = structured_node_id(i + 1, j + 1, npx);
            if ((i + j) % 2 == 0) {
                m.tris.push_back({{v00, v10, v11}, Phase::matrix});
                m.tris.push_back({{v00, v11, v01}, Phase::matrix});
            } else {
                m.tris.push_back({{v00, v10, v01}, Phase::matrix});
                m.tris.push_back({{v10, v11, v01}, Phase::matrix});
            }
        }
    }
    return m;
}

// Signed distance to the inclusion interface, negative inside.
inline double inclusion_sdist(const CellGeometry& g, const Vec2& p) {
    if (g.shape == CellGeometry::Shape::disk) return (p - g.center).norm() - g.radius;
    const double dx = std::abs(p.x() - g.center.x()), dy = std::abs(p.y() - g.center.y());
    return std::max(dx, dy) - g.radius;
}

inline Vec2 inclusion_project(const CellGeometry& g, const Vec2& p) {
    if (g.shape == CellGeometry::Shape::disk) {
        Vec2 d = p - g.center;
        const double n = d.norm();
        if (n < 1e-300) return g.center + Vec2(g.radius, 0.0);
        return g.center + d * (g.radius / n);
    }
    // square: push the dominant coordinate onto the side
    Vec2 d = p - g.center;
    Vec2 q = p;
    if (std::abs(d.x()) >= std::abs(d.y()))
        q.x() = g.center.x() + (d.x() >= 0 ? g.radius : -g.radius);
    else
        q.y() = g.center.y() + (d.y() >= 0 ? g.radius : -g.radius);
    return q;
}

// Snap structured nodes onto the inclusion interface so that no element edge
// crosses it: every crossing edge donates its nearest endpoint. Nodes listed
// in `locked` (outer boundary / cell interfaces) never move. Where three
// consecutive nodes land on the interface (near the diagonal tangencies) the
// in-between triangle collapses onto the arc; its middle vertex is pulled
// off the chord towards the inclusion center to restore a valid element.
inline void snap_to_interface(PeriodicMesh& m, const CellGeometry& g, const std::vector<char>& locked) {
    const int nn = m.num_nodes();
    std::vector<double> sd(nn);
    for (int i = 0; i < nn; ++i) sd[i] = inclusion_sdist(g, m.nodes[i]);

    const double on_tol = 1e-12;
    std::vector<char> snap(nn, 0);
    auto consider_edge = [&](int a, int b) {
        const double da = sd[a], db = sd[b];
        if (std::abs(da) <= on_tol || std::abs(db) <= on_tol) return;
        if (da * db >= 0.0) return;
        const int cand = (std::abs(da) <= std::abs(db)) ? a : b;
        if (!locked[cand])
            snap[cand] = 1;
        else
            snap[(cand == a) ? b : a] = 1; // margin rule keeps this off the boundary
    };
    for (const auto& t : m.tris) {
        consider_edge(t.v[0], t.v[1]);
        consider_edge(t.v[1], t.v[2]);
        consider_edge(t.v[2], t.v[0]);
    }
    for (int i = 0; i < nn; ++i)
        if (snap[i]) m.nodes[i] = inclusion_project(g, m.nodes[i]);

    // sliver repair
    std::vector<std::vector<int>> node_tris(nn);
    for (int t = 0; t < m.num_tris(); ++t)
        for (int k = 0; k < 3; ++k) node_tris[m.tris[t].v[k]].push_back(t);
    double mean_area = 0.0;
    for (int t = 0; t < m.num_tris(); ++t) mean_area += std::abs(m.tri_area(t));
    mean_area /= std::max(1, m.num_tris());
    const double floor_area = 0.05 * mean_area;

    for (int t = 0; t < m.num_tris(); ++t) {
        if (m.tri_area(t) > floor_area) continue;
        const auto& v = m.tris[t].v;
        // the vertex whose projection falls inside the opposite edge is the
        // angularly middle one
        int mid = -1;
        for (int k = 0; k < 3; ++k) {
            const int i = v[k], j = v[(k + 1) % 3], l = v[(k + 2) % 3];
            if (locked[i]) continue;
            const Vec2 e = m.nodes[l] - m.nodes[j];
            const double len2 = e.squaredNorm();
            if (len2 <= 0) continue;
            const double s = (m.nodes[i] - m.nodes[j]).dot(e) / len2;
            if (s > 0.05 && s < 0.95) {
                mid = k;
                break;
            }
        }
        if (mid < 0) continue;
        const int i = v[mid], j = v[(mid + 1) % 3], l = v[(mid + 2) % 3];
        const Vec2 chord_mid = 0.5 * (m.nodes[j] + m.nodes[l]);
        Vec2 inward = g.center - chord_mid;
        if (inward.norm() < 1e-300) continue;
        inward.normalize();
        const Vec2 old = m.nodes[i];
        m.nodes[i] = chord_mid + 0.3 * (m.nodes[l] - m.nodes[j]).norm() * inward;
        bool ok = true;
        for (int tt : node_tris[i])
            if (m.tri_area(tt) <= floor_area) ok = false;
        if (!ok) {
            // fall back to the reflection across the chord
            const Vec2 e = (m.nodes[l] - m.nodes[j]).normalized();
            const Vec2 rel = old - m.nodes[j];
            const Vec2 foot = m.nodes[j] + rel.dot(e) * e;
            m.nodes[i] = 2.0 * foot - old;
            for (int tt : node_tris[i])
                if (m.tri_area(tt) <= 0.0) m.nodes[i] = old;
        }
    }
}

inline void tag_phases(PeriodicMesh& m, const CellGeometry& g) {
    for (int t = 0; t < m.num_tris(); ++t)
        m.tris[t].phase = inclusion_sdist(g, m.tri_centroid(t)) < 0.0 ? Phase::inclusion : Phase::matrix;
}

inline void check_positive_areas(const PeriodicMesh& m, const char* what) {
    for (int t = 0; t < m.num_tris(); ++t)
        if (m.tri_area(t) <= 0.0)
            throw ResolutionTooCoarse(std::string(what) + ": interface snapping produced a degenerate element");
}

// Matrix-phase element adjacency (shared edges) must form one component.
inline bool matrix_phase_connected(const PeriodicMesh& m) {
    std::map<std::pair<int, int>, std::array<int, 2>> edge_tris;
    for (int t = 0; t < m.num_tris(); ++t) {
        if (m.tris[t].phase != Phase::matrix) continue;
        for (int e = 0; e < 3; ++e) {
            int a = m.tris[t].v[e], b = m.tris[t].v[(e + 1) % 3];
            if (a > b) std::swap(a, b);
            auto [it, fresh] = edge_tris.try_emplace({a, b}, std::array<int, 2>{-1, -1});
            it->second[fresh ? 0 : 1] = t;
            if (!fresh && it->second[0] < 0) it->second[0] = t;
        }
    }
    std::vector<std::vector<int>> adj(m.num_tris());
    for (const auto& [e, ts] : edge_tris)
        if (ts[0] >= 0 && ts[1] >= 0) {
            adj[ts[0]].push_back(ts[1]);
            adj[ts[1]].push_back(ts[0]);
        }
    int start = -1, total = 0;
    for (int t = 0; t < m.num_tris(); ++t)
        if (m.tris[t].phase == Phase::matrix) {
            if (start < 0) start = t;
            ++total;
        }
    if (total == 0) return false;
    std::vector<char> seen(m.num_tris(), 0);
    std::queue<int> q;
    q.push(start);
    seen[start] = 1;
    int reached = 1;
    while (!q.empty()) {
        const int t = q.front();
        q.pop();
        for (int u : adj[t])
            if (!seen[u]) {
                seen[u] = 1;
                ++reached;
                q.push(u);
            }
    }
    return reached == total;
}

inline void add_periodic_pairs(PeriodicMesh& m, int nx, int ny) {
    const int npx = nx + 1;
    // right face -> left face (lattice vector (1,0)), including corners
    for (int j = 0; j <= ny; ++j)
        m.periodic_pairs.emplace_back(structured_node_id(0, j, npx), structured_node_id(nx, j, npx));
    // top face -> bottom face (lattice vector (0,1)), excluding the right
    // corner column handled above only as x-pairs; corners resolve
    // transitively through (0,ny)->(0,0).
    for (int i = 0; i <= nx; ++i)
        m.periodic_pairs.emplace_back(structured_node_id(i, 0, npx), structured_node_id(i, ny, npx));
}

inline void collect_boundary_nodes(PeriodicMesh& m) {
    const Rect& r = m.bbox;
    const double tx = 1e-12 * std::max(1.0, r.width()), ty = 1e-12 * std::max(1.0, r.height());
    for (int i = 0; i < m.num_nodes(); ++i) {
        const Vec2& p = m.nodes[i];
        if (std::abs(p.x() - r.x0) < tx || std::abs(p.x() - r.x1) < tx || std::abs(p.y() - r.y0) < ty ||
            std::abs(p.y() - r.y1) < ty)
            m.boundary_nodes.push_back(i);
    }
}

} // namespace detail

/// Triangulates the unit cell with the inclusion interface resolved by
/// element edges (nearest structured nodes snapped onto it) and periodic
/// pairing across opposite faces.
inline PeriodicMesh build_cell_mesh(const CellGeometry& geom) {
    if (geom.resolution < 4) throw ResolutionTooCoarse("cell mesh needs resolution >= 4");
    const int n = geom.resolution;
    const double h = 1.0 / n;

    if (geom.has_inclusion()) {
        const double margin = std::min(std::min(geom.center.x(), 1.0 - geom.center.x()),
                                       std::min(geom.center.y(), 1.0 - geom.center.y())) -
                              geom.radius;
        if (margin < h - 1e-12)
            throw InclusionTouchesBoundary("inclusion closure must stay one element away from the cell boundary");
        if (geom.radius < 2.0 * h - 1e-12)
            throw ResolutionTooCoarse("inclusion interface cannot be resolved at this resolution");
    }

    PeriodicMesh m = detail::structured_mesh(Rect::unit(), n, n);
    if (geom.has_inclusion()) {
        std::vector<char> locked(m.num_nodes(), 0);
        for (int i = 0; i < m.num_nodes(); ++i) {
            const Vec2& p = m.nodes[i];
            if (p.x() < 1e-12 || p.x() > 1.0 - 1e-12 || p.y() < 1e-12 || p.y() > 1.0 - 1e-12) locked[i] = 1;
        }
        detail::snap_to_interface(m, geom, locked);
        detail::check_positive_areas(m, "cell mesh");
        detail::tag_phases(m, geom);
        if (!detail::matrix_phase_connected(m)) throw MeshError("matrix phase is not connected");
    }
    detail::add_periodic_pairs(m, n, n);
    return m;
}

/// Structured triangulation of a rectangle; n subdivisions per unit length.
/// All elements matrix phase, Dirichlet set = boundary nodes, no pairing.
inline PeriodicMesh build_macro_mesh(const Rect& domain, int n) {
    if (n < 2) throw InvalidValue("macro mesh needs n >= 2");
    if (domain.width() <= 0 || domain.height() <= 0) throw InvalidValue("empty macro domain");
    const int nx = static_cast<int>(std::lround(domain.width() * n));
    const int ny = static_cast<int>(std::lround(domain.height() * n));
    if (std::abs(nx - domain.width() * n) > 1e-9 || std::abs(ny - domain.height() * n) > 1e-9)
        throw InvalidValue("macro domain sides must subdivide into whole elements");
    PeriodicMesh m = detail::structured_mesh(domain, nx, ny);
    detail::collect_boundary_nodes(m);
    return m;
}

/// Fine-scale composite mesh: the domain is tiled by eps-cells (eps = 1/k),
/// each interior cell carrying a scaled copy of the cell geometry. Cells
/// that touch the outer boundary keep the matrix tag everywhere.
inline PeriodicMesh build_fine_mesh(const Rect& domain, int k, int cells_res, const CellGeometry& geom) {
    if (k < 1) throw NonTilingEpsilon("epsilon must be the reciprocal of a positive integer");
    if (cells_res < 8) throw ResolutionTooCoarse("fine mesh needs cells_res >= 8");
    const double eps = 1.0 / k;
    const double wcx = domain.width() * k, wcy = domain.height() * k;
    const int ncx = static_cast<int>(std::lround(wcx)), ncy = static_cast<int>(std::lround(wcy));
    if (std::abs(ncx - wcx) > 1e-9 || std::abs(ncy - wcy) > 1e-9)
        throw NonTilingEpsilon("domain is not tiled exactly by eps-cells");

    // validate the per-cell geometry once (errors should not depend on k)
    CellGeometry probe = geom;
    probe.resolution = cells_res;
    build_cell_mesh(probe);

    PeriodicMesh m = detail::structured_mesh(domain, ncx * cells_res, ncy * cells_res);
    if (geom.has_inclusion()) {
        std::vector<char> locked(m.num_nodes(), 0);
        const double hx = domain.width() / (ncx * cells_res), hy = domain.height() / (ncy * cells_res);
        for (int i = 0; i < m.num_nodes(); ++i) {
            const Vec2& p = m.nodes[i];
            const double fx = (p.x() - domain.x0) / eps, fy = (p.y() - domain.y0) / eps;
            // lock nodes on any cell interface so tiling stays conforming
            if (std::abs(fx - std::round(fx)) * eps < 0.25 * hx || std::abs(fy - std::round(fy)) * eps < 0.25 * hy)
                locked[i] = 1;
        }
        for (int cy = 1; cy + 1 < ncy; ++cy) {
            for (int cx = 1; cx + 1 < ncx; ++cx) {
                CellGeometry local = geom;
                local.center = Vec2(domain.x0 + (cx + geom.center.x()) * eps, domain.y0 + (cy + geom.center.y()) * eps);
                local.radius = geom.radius * eps;
                detail::snap_to_interface(m, local, locked);
            }
        }
        detail::check_positive_areas(m, "fine mesh");
        for (int cy = 1; cy + 1 < ncy; ++cy) {
            for (int cx = 1; cx + 1 < ncx; ++cx) {
                CellGeometry local = geom;
                local.center = Vec2(domain.x0 + (cx + geom.center.x()) * eps, domain.y0 + (cy + geom.center.y()) * eps);
                local.radius = geom.radius * eps;
                for (int t = 0; t < m.num_tris(); ++t)
                    if (detail::inclusion_sdist(local, m.tri_centroid(t)) < 0.0) m.tris[t].phase = Phase::inclusion;
            }
        }
    }
    detail::collect_boundary_nodes(m);
    return m;
}

/// Phase of the element containing x; ties on edges resolve to the lowest
/// triangle index.
inline Phase locate_phase(const PeriodicMesh& mesh, const Vec2& x) {
    const double tol = 1e-12 * std::max(mesh.bbox.width(), mesh.bbox.height());
    if (!mesh.bbox.contains(x, tol)) throw PointOutsideDomain("query point outside the mesh bounding box");
    for (int t = 0; t < mesh.num_tris(); ++t) {
        const auto& tr = mesh.tris[t];
        const Vec2 &a = mesh.nodes[tr.v[0]], &b = mesh.nodes[tr.v[1]], &c = mesh.nodes[tr.v[2]];
        const double det = (b.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (b.y() - a.y());
        const double l1 = ((x.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (x.y() - a.y())) / det;
        const double l2 = ((b.x() - a.x()) * (x.y() - a.y()) - (x.x() - a.x()) * (b.y() - a.y())) / det;
        const double l0 = 1.0 - l1 - l2;
        const double bary_tol = 1e-12;
        if (l0 >= -bary_tol && l1 >= -bary_tol && l2 >= -bary_tol) return tr.phase;
    }
    throw PointOutsideDomain("query point not contained in any element");
}

// ---------------------------------------------------------------------------
// text format: `mesh2d v1`, node/tri/periodic/dirichlet blocks
// ---------------------------------------------------------------------------

inline void write_mesh(std::ostream& os, const PeriodicMesh& m) {
    char buf[64];
    os << "mesh2d v1\n";
    os << "nodes " << m.num_nodes() << "\n";
    for (int i = 0; i < m.num_nodes(); ++i) {
        std::snprintf(buf, sizeof buf, "%d %.17g %.17g\n", i, m.nodes[i].x(), m.nodes[i].y());
        os << buf;
    }
    os << "tris " << m.num_tris() << "\n";
    for (int t = 0; t < m.num_tris(); ++t) {
        const auto& tr = m.tris[t];
        os << t << ' ' << tr.v[0] << ' ' << tr.v[1] << ' ' << tr.v[2] << ' '
           << (tr.phase == Phase::inclusion ? 1 : 0) << "\n";
    }
    os << "periodic " << m.periodic_pairs.size() << "\n";
    for (const auto& [mast, slv] : m.periodic_pairs) os << mast << ' ' << slv << "\n";
    os << "dirichlet " << m.boundary_nodes.size() << "\n";
    for (int b : m.boundary_nodes) os << b << "\n";
}

inline PeriodicMesh read_mesh(std::istream& is) {
    PeriodicMesh m;
    std::string tag, version;
    is >> tag >> version;
    if (tag != "mesh2d" || version != "v1") throw IoError("not a mesh2d v1 stream");
    std::size_t n = 0;
    is >> tag >> n;
    if (tag != "nodes") throw IoError("expected nodes block");
    m.nodes.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        int id;
        double x, y;
        is >> id >> x >> y;
        m.nodes.at(id) = Vec2(x, y);
    }
    is >> tag >> n;
    if (tag != "tris") throw IoError("expected tris block");
    m.tris.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        int id, a, b, c, ph;
        is >> id >> a >> b >> c >> ph;
        m.tris.at(id) = Tri{{a, b, c}, ph ? Phase::inclusion : Phase::matrix};
    }
    is >> tag >> n;
    if (tag != "periodic") throw IoError("expected periodic block");
    for (std::size_t i = 0; i < n; ++i) {
        int a, b;
        is >> a >> b;
        m.periodic_pairs.emplace_back(a, b);
    }
    is >> tag >> n;
    if (tag != "dirichlet") throw IoError("expected dirichlet block");
    for (std::size_t i = 0; i < n; ++i) {
        int b;
        is >> b;
        m.boundary_nodes.push_back(b);
    }
    if (!is) throw IoError("truncated mesh stream");
    double lox = 1e300, loy = 1e300, hix = -1e300, hiy = -1e300;
    for (const auto& p : m.nodes) {
        lox = std::min(lox, p.x());
        loy = std::min(loy, p.y());
        hix = std::max(hix, p.x());
        hiy = std::max(hiy, p.y());
    }
    m.bbox = Rect{lox, loy, hix, hiy};
    return m;
}

} // namespace homlab
