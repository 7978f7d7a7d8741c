#pragma once

#include <Eigen/Dense>
#include <array>
#include <map>
#include <vector>

#include "homlab/mesh.hpp"

namespace homlab {

/// Symmetric degree-4 triangle rule, 6 points; weights sum to one so an
/// integral is area * sum w_q f(p_q). Exact for every integrand assembled
/// here (P2 stiffness, mass, mixed divergence) on affine triangles.
struct QuadRule {
    static constexpr int n = 6;
    // barycentric coordinates
    static constexpr double a1 = 0.445948490915965;
    static constexpr double a2 = 0.091576213509771;
    static constexpr double w1 = 0.223381589678011;
    static constexpr double w2 = 0.109951743655322;
    static const std::array<std::array<double, 3>, 6>& points() {
        static const std::array<std::array<double, 3>, 6> p = {{
            {1.0 - 2 * a1, a1, a1},
            {a1, 1.0 - 2 * a1, a1},
            {a1, a1, 1.0 - 2 * a1},
            {1.0 - 2 * a2, a2, a2},
            {a2, 1.0 - 2 * a2, a2},
            {a2, a2, 1.0 - 2 * a2},
        }};
        return p;
    }
    static const std::array<double, 6>& weights() {
        static const std::array<double, 6> w = {w1, w1, w1, w2, w2, w2};
        return w;
    }
};

inline int dofs_per_element(ElementOrder o) { return o == ElementOrder::P2 ? 6 : 3; }

/// Nodal basis values at a barycentric point. P2 local numbering: vertices
/// 0..2, then midpoint of edge opposite vertex k at 3+k.
inline void shape_values(ElementOrder o, const std::array<double, 3>& l, double* N) {
    if (o == ElementOrder::P1) {
        N[0] = l[0];
        N[1] = l[1];
        N[2] = l[2];
        return;
    }
    N[0] = l[0] * (2 * l[0] - 1);
    N[1] = l[1] * (2 * l[1] - 1);
    N[2] = l[2] * (2 * l[2] - 1);
    N[3] = 4 * l[1] * l[2];
    N[4] = 4 * l[2] * l[0];
    N[5] = 4 * l[0] * l[1];
}

/// Physical gradients; grad_l[k] are the barycentric gradients of the tri.
inline void shape_gradients(ElementOrder o, const std::array<double, 3>& l, const std::array<Vec2, 3>& grad_l,
                            Vec2* g) {
    if (o == ElementOrder::P1) {
        g[0] = grad_l[0];
        g[1] = grad_l[1];
        g[2] = grad_l[2];
        return;
    }
    g[0] = grad_l[0] * (4 * l[0] - 1);
    g[1] = grad_l[1] * (4 * l[1] - 1);
    g[2] = grad_l[2] * (4 * l[2] - 1);
    g[3] = 4 * (grad_l[1] * l[2] + grad_l[2] * l[1]);
    g[4] = 4 * (grad_l[2] * l[0] + grad_l[0] * l[2]);
    g[5] = 4 * (grad_l[0] * l[1] + grad_l[1] * l[0]);
}

/// Scalar dof numbering for one order on one mesh: vertex dofs first, then
/// edge-midpoint dofs (P2). Edge dofs are numbered in first-encounter order
/// over the element loop, so numbering is deterministic.
struct DofMap {
    ElementOrder order = ElementOrder::P2;
    int n_vertices = 0;
    int n_edges = 0;
    std::vector<std::array<int, 6>> element_dofs;
    std::vector<Vec2> dof_coords;

    int num_scalar() const { return order == ElementOrder::P2 ? n_vertices + n_edges : n_vertices; }
    int num_vector() const { return 2 * num_scalar(); }
    int per_element() const { return dofs_per_element(order); }
};

inline DofMap build_dof_map(const PeriodicMesh& mesh, ElementOrder order) {
    DofMap dm;
    dm.order = order;
    dm.n_vertices = mesh.num_nodes();
    dm.dof_coords = mesh.nodes;
    dm.element_dofs.resize(mesh.num_tris());
    if (order == ElementOrder::P1) {
        for (int t = 0; t < mesh.num_tris(); ++t) {
            const auto& v = mesh.tris[t].v;
            dm.element_dofs[t] = {v[0], v[1], v[2], -1, -1, -1};
        }
        return dm;
    }
    std::map<std::pair<int, int>, int> edge_index;
    for (int t = 0; t < mesh.num_tris(); ++t) {
        const auto& v = mesh.tris[t].v;
        dm.element_dofs[t] = {v[0], v[1], v[2], -1, -1, -1};
        for (int k = 0; k < 3; ++k) {
            int a = v[(k + 1) % 3], b = v[(k + 2) % 3];
            if (a > b) std::swap(a, b);
            auto [it, fresh] = edge_index.try_emplace({a, b}, dm.n_edges);
            if (fresh) {
                ++dm.n_edges;
                dm.dof_coords.push_back(0.5 * (mesh.nodes[a] + mesh.nodes[b]));
            }
            dm.element_dofs[t][3 + k] = dm.n_vertices + it->second;
        }
    }
    return dm;
}

/// Barycentric gradients and area for an affine triangle.
struct TriFrame {
    std::array<Vec2, 3> coords;
    std::array<Vec2, 3> grad_l;
    double area = 0.0;
};

inline TriFrame tri_frame(const PeriodicMesh& mesh, int t) {
    TriFrame f;
    const auto& v = mesh.tris[t].v;
    for (int k = 0; k < 3; ++k) f.coords[k] = mesh.nodes[v[k]];
    const Vec2 &a = f.coords[0], &b = f.coords[1], &c = f.coords[2];
    const double det2 = (b.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (b.y() - a.y());
    f.area = 0.5 * det2;
    f.grad_l[0] = Vec2(b.y() - c.y(), c.x() - b.x()) / det2;
    f.grad_l[1] = Vec2(c.y() - a.y(), a.x() - c.x()) / det2;
    f.grad_l[2] = Vec2(a.y() - b.y(), b.x() - a.x()) / det2;
    return f;
}

inline Vec2 bary_to_point(const TriFrame& f, const std::array<double, 3>& l) {
    return l[0] * f.coords[0] + l[1] * f.coords[1] + l[2] * f.coords[2];
}

} // namespace homlab
