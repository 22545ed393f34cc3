#include "pointmesh/meshtopo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <queue>
#include <set>
#include <sstream>

namespace pointmesh {

namespace {

// --------------------------------------------------------------------------
// Quad-mesh modeller. The coarse figure is box-modelled: a segmented torso
// box, a three-segment head column extruded from the top cap, arms extruded
// from the upper side walls and legs from the two bottom cap quads. Every
// operation keeps the mesh a closed, consistently oriented quad manifold,
// which the subdivision arithmetic below relies on.

struct QuadMesh {
    std::vector<Vec3> verts;
    std::vector<std::array<int, 4>> quads;
};

struct TriMesh {
    std::vector<Vec3> verts;
    std::vector<std::array<int, 3>> faces;
};

QuadMesh build_torso_box(const std::vector<double>& xs, const std::vector<double>& ys,
                         const std::vector<double>& zs) {
    QuadMesh m;
    std::map<std::array<int, 3>, int> ids;
    auto vid = [&](int i, int j, int k) {
        auto key = std::array<int, 3>{i, j, k};
        auto it = ids.find(key);
        if (it != ids.end()) return it->second;
        int id = int(m.verts.size());
        m.verts.push_back({xs[size_t(i)], ys[size_t(j)], zs[size_t(k)]});
        ids[key] = id;
        return id;
    };
    const int nx = int(xs.size()) - 1, ny = int(ys.size()) - 1, nz = int(zs.size()) - 1;
    for (int i = 0; i < nx; ++i)  // bottom (-y) and top (+y)
        for (int k = 0; k < nz; ++k) {
            m.quads.push_back({vid(i, 0, k), vid(i + 1, 0, k), vid(i + 1, 0, k + 1),
                               vid(i, 0, k + 1)});
            m.quads.push_back({vid(i, ny, k), vid(i, ny, k + 1), vid(i + 1, ny, k + 1),
                               vid(i + 1, ny, k)});
        }
    for (int j = 0; j < ny; ++j)  // -x and +x walls
        for (int k = 0; k < nz; ++k) {
            m.quads.push_back({vid(0, j, k), vid(0, j, k + 1), vid(0, j + 1, k + 1),
                               vid(0, j + 1, k)});
            m.quads.push_back({vid(nx, j, k), vid(nx, j + 1, k), vid(nx, j + 1, k + 1),
                               vid(nx, j, k + 1)});
        }
    for (int i = 0; i < nx; ++i)  // -z and +z walls
        for (int j = 0; j < ny; ++j) {
            m.quads.push_back({vid(i, j, 0), vid(i, j + 1, 0), vid(i + 1, j + 1, 0),
                               vid(i + 1, j, 0)});
            m.quads.push_back({vid(i, j, nz), vid(i + 1, j, nz), vid(i + 1, j + 1, nz),
                               vid(i, j + 1, nz)});
        }
    return m;
}

/// Extrudes a patch of quads. The boundary loop gains a ring of moved copies,
/// side quads stitch old ring to new, and the caps are the patch quads
/// remapped onto the new ring. Returns indices of the new cap quads.
std::vector<int> extrude_patch(QuadMesh& m, const std::vector<int>& patch,
                               const std::function<Vec3(const Vec3&, const Vec3&)>& move) {
    require(!patch.empty(), "construction-error", "extrude of empty patch");
    std::set<std::pair<int, int>> directed;
    std::set<int> patch_verts;
    for (int q : patch)
        for (int e = 0; e < 4; ++e) {
            int a = m.quads[size_t(q)][size_t(e)];
            int b = m.quads[size_t(q)][size_t((e + 1) % 4)];
            directed.insert({a, b});
            patch_verts.insert(a);
        }
    std::vector<std::pair<int, int>> boundary;
    for (const auto& [a, b] : directed)
        if (!directed.count({b, a})) boundary.push_back({a, b});
    std::set<int> boundary_verts;
    for (const auto& [a, b] : boundary) {
        boundary_verts.insert(a);
        boundary_verts.insert(b);
    }
    require(boundary_verts.size() == patch_verts.size(), "construction-error",
            "extrude patch has interior vertices");

    Vec3 centroid{};
    for (int v : patch_verts) centroid += m.verts[size_t(v)];
    centroid = centroid * (1.0 / double(patch_verts.size()));

    std::map<int, int> lift;
    for (int v : patch_verts) {
        lift[v] = int(m.verts.size());
        m.verts.push_back(move(m.verts[size_t(v)], centroid));
    }

    std::vector<std::array<int, 4>> kept;
    std::set<int> drop(patch.begin(), patch.end());
    std::vector<std::array<int, 4>> caps;
    for (int q = 0; q < int(m.quads.size()); ++q) {
        if (drop.count(q)) {
            auto f = m.quads[size_t(q)];
            caps.push_back({lift[f[0]], lift[f[1]], lift[f[2]], lift[f[3]]});
        } else {
            kept.push_back(m.quads[size_t(q)]);
        }
    }
    for (const auto& [a, b] : boundary) kept.push_back({a, b, lift[b], lift[a]});
    std::vector<int> cap_ids;
    for (const auto& c : caps) {
        cap_ids.push_back(int(kept.size()));
        kept.push_back(c);
    }
    m.quads = std::move(kept);
    return cap_ids;
}

std::vector<int> select_quads(const QuadMesh& m,
                              const std::function<bool(const std::array<Vec3, 4>&)>& pred) {
    std::vector<int> out;
    for (int q = 0; q < int(m.quads.size()); ++q) {
        std::array<Vec3, 4> c;
        for (int e = 0; e < 4; ++e) c[size_t(e)] = m.verts[size_t(m.quads[size_t(q)][size_t(e)])];
        if (pred(c)) out.push_back(q);
    }
    return out;
}

template <typename FaceArray>
void check_closed_oriented(const std::vector<FaceArray>& faces, int vertex_count,
                           const char* what) {
    std::map<std::pair<int, int>, int> count;
    for (const auto& f : faces) {
        const int n = int(f.size());
        for (int e = 0; e < n; ++e) {
            int a = f[size_t(e)], b = f[size_t((e + 1) % n)];
            require(a != b && a >= 0 && b >= 0 && a < vertex_count && b < vertex_count,
                    "construction-error", std::string(what) + ": bad face index");
            count[{a, b}] += 1;
        }
    }
    for (const auto& [edge, c] : count) {
        require(c == 1, "construction-error",
                std::string(what) + ": directed edge repeated, not a manifold");
        require(count.count({edge.second, edge.first}) == 1, "construction-error",
                std::string(what) + ": open boundary edge, mesh is not closed");
    }
}

TriMesh triangulate(const QuadMesh& m) {
    TriMesh t;
    t.verts = m.verts;
    for (const auto& q : m.quads) {
        t.faces.push_back({q[0], q[1], q[2]});
        t.faces.push_back({q[0], q[2], q[3]});
    }
    return t;
}

TriMesh build_mannequin() {
    QuadMesh m = build_torso_box({-0.18, 0.0, 0.18}, {0.90, 1.08, 1.26, 1.44},
                                 {-0.10, 0.10});
    constexpr double eps = 1e-9;

    auto scale_xz = [](double dy, double s) {
        return [dy, s](const Vec3& p, const Vec3& c) {
            return Vec3{c.x + (p.x - c.x) * s, p.y + dy, c.z + (p.z - c.z) * s};
        };
    };
    auto scale_yz = [](double dx, double s) {
        return [dx, s](const Vec3& p, const Vec3& c) {
            return Vec3{p.x + dx, c.y + (p.y - c.y) * s, c.z + (p.z - c.z) * s};
        };
    };

    // head column from the full top cap (2 quads, extruded together)
    std::vector<int> cap = select_quads(m, [&](const std::array<Vec3, 4>& c) {
        return std::all_of(c.begin(), c.end(),
                           [&](const Vec3& p) { return std::abs(p.y - 1.44) < eps; });
    });
    cap = extrude_patch(m, cap, scale_xz(0.10, 0.50));
    cap = extrude_patch(m, cap, scale_xz(0.12, 1.60));
    extrude_patch(m, cap, scale_xz(0.10, 0.85));

    // arms from the top segment of each side wall
    for (double side : {+1.0, -1.0}) {
        std::vector<int> anchor = select_quads(m, [&](const std::array<Vec3, 4>& c) {
            bool on_wall = std::all_of(c.begin(), c.end(), [&](const Vec3& p) {
                return std::abs(p.x - side * 0.18) < eps;
            });
            double ymin = std::min({c[0].y, c[1].y, c[2].y, c[3].y});
            double ymax = std::max({c[0].y, c[1].y, c[2].y, c[3].y});
            return on_wall && std::abs(ymin - 1.26) < eps && std::abs(ymax - 1.44) < eps;
        });
        require(anchor.size() == 1, "construction-error", "arm anchor quad not found");
        anchor = extrude_patch(m, anchor, scale_yz(side * 0.16, 0.55));
        anchor = extrude_patch(m, anchor, scale_yz(side * 0.24, 0.90));
        extrude_patch(m, anchor, scale_yz(side * 0.24, 0.85));
    }

    // legs from the two bottom cap quads
    for (double side : {+1.0, -1.0}) {
        std::vector<int> anchor = select_quads(m, [&](const std::array<Vec3, 4>& c) {
            bool on_bottom = std::all_of(c.begin(), c.end(), [&](const Vec3& p) {
                return std::abs(p.y - 0.90) < eps;
            });
            double cx = (c[0].x + c[1].x + c[2].x + c[3].x) / 4.0;
            return on_bottom && cx * side > 0.0;
        });
        require(anchor.size() == 1, "construction-error", "leg anchor quad not found");
        anchor = extrude_patch(m, anchor, scale_xz(-0.20, 0.62));
        anchor = extrude_patch(m, anchor, scale_xz(-0.22, 0.95));
        anchor = extrude_patch(m, anchor, scale_xz(-0.22, 0.90));
        extrude_patch(m, anchor, scale_xz(-0.24, 0.85));
    }

    check_closed_oriented(m.quads, int(m.verts.size()), "mannequin quads");
    TriMesh t = triangulate(m);
    check_closed_oriented(t.faces, int(t.verts.size()), "mannequin triangles");
    return t;
}

TriMesh build_capsule(int radial, int rings) {
    require(radial >= 3 && rings >= 2, "config-error", "capsule needs >=3 radial, >=2 rings");
    constexpr double y_center = 0.93, half_height = 0.90, radius = 0.25;
    TriMesh t;
    t.verts.push_back({0.0, y_center - half_height, 0.0});  // bottom apex
    for (int ring = 0; ring < rings; ++ring) {
        double theta = M_PI * double(ring + 1) / double(rings + 1);
        double y = y_center - half_height * std::cos(theta);
        double rad = radius * std::sin(theta);
        for (int i = 0; i < radial; ++i) {
            double phi = 2.0 * M_PI * double(i) / double(radial);
            t.verts.push_back({rad * std::cos(phi), y, rad * std::sin(phi)});
        }
    }
    int top = int(t.verts.size());
    t.verts.push_back({0.0, y_center + half_height, 0.0});

    auto rv = [&](int ring, int i) { return 1 + ring * radial + (i % radial); };
    for (int i = 0; i < radial; ++i) t.faces.push_back({0, rv(0, i), rv(0, i + 1)});
    for (int ring = 0; ring + 1 < rings; ++ring)
        for (int i = 0; i < radial; ++i) {
            int a = rv(ring, i), b = rv(ring, i + 1);
            int c = rv(ring + 1, i + 1), d = rv(ring + 1, i);
            t.faces.push_back({b, a, d});
            t.faces.push_back({b, d, c});
        }
    for (int i = 0; i < radial; ++i) t.faces.push_back({top, rv(rings - 1, i + 1), rv(rings - 1, i)});
    check_closed_oriented(t.faces, int(t.verts.size()), "capsule");
    return t;
}

// --------------------------------------------------------------------------
// Subdivision hierarchy. Each dense vertex carries its weight row over the
// coarse vertices; midpoints average their parents' rows, so U stays exactly
// row-stochastic through any number of levels.

using WeightRow = std::vector<std::pair<int, double>>;

struct Hierarchy {
    std::vector<Vec3> verts;
    std::vector<std::array<int, 3>> faces;
    std::vector<WeightRow> weights;
    std::vector<std::array<int, 2>> first_midpoints;  // only for a single level
};

WeightRow half_sum(const WeightRow& a, const WeightRow& b) {
    std::map<int, double> acc;
    for (const auto& [i, w] : a) acc[i] += 0.5 * w;
    for (const auto& [i, w] : b) acc[i] += 0.5 * w;
    WeightRow out(acc.begin(), acc.end());
    return out;
}

void subdivide(Hierarchy& h, bool record_midpoints) {
    auto edges = edges_of_faces(h.faces);
    std::map<std::pair<int, int>, int> mid;
    for (const auto& e : edges) {
        int id = int(h.verts.size());
        mid[{e[0], e[1]}] = id;
        h.verts.push_back((h.verts[size_t(e[0])] + h.verts[size_t(e[1])]) * 0.5);
        h.weights.push_back(half_sum(h.weights[size_t(e[0])], h.weights[size_t(e[1])]));
        if (record_midpoints) h.first_midpoints.push_back(e);
    }
    auto midpoint = [&](int a, int b) { return mid.at({std::min(a, b), std::max(a, b)}); };
    std::vector<std::array<int, 3>> out;
    out.reserve(h.faces.size() * 4);
    for (const auto& f : h.faces) {
        int mab = midpoint(f[0], f[1]), mbc = midpoint(f[1], f[2]), mca = midpoint(f[2], f[0]);
        out.push_back({f[0], mab, mca});
        out.push_back({mab, f[1], mbc});
        out.push_back({mca, mbc, f[2]});
        out.push_back({mab, mbc, mca});
    }
    h.faces = std::move(out);
}

void split_edge(Hierarchy& h, std::array<int, 2> e) {
    int m = int(h.verts.size());
    h.verts.push_back((h.verts[size_t(e[0])] + h.verts[size_t(e[1])]) * 0.5);
    h.weights.push_back(half_sum(h.weights[size_t(e[0])], h.weights[size_t(e[1])]));
    std::vector<std::array<int, 3>> out;
    out.reserve(h.faces.size() + 2);
    for (const auto& f : h.faces) {
        int pos = -1;
        for (int k = 0; k < 3; ++k) {
            int a = f[size_t(k)], b = f[size_t((k + 1) % 3)];
            if ((a == e[0] && b == e[1]) || (a == e[1] && b == e[0])) pos = k;
        }
        if (pos < 0) {
            out.push_back(f);
            continue;
        }
        int a = f[size_t(pos)], b = f[size_t((pos + 1) % 3)], c = f[size_t((pos + 2) % 3)];
        out.push_back({a, m, c});
        out.push_back({m, b, c});
    }
    h.faces = std::move(out);
}

// --------------------------------------------------------------------------
// Skeleton

struct JointSpec {
    const char* name;
    int parent;
    Vec3 rest;
    Vec3 limit_min;
    Vec3 limit_max;
};

const std::vector<JointSpec>& skeleton14() {
    static const std::vector<JointSpec> joints = {
        {"pelvis", -1, {0.00, 0.93, 0.0}, {-0.30, -0.70, -0.30}, {0.30, 0.70, 0.30}},
        {"chest", 0, {0.00, 1.38, 0.0}, {-0.25, -0.25, -0.25}, {0.25, 0.25, 0.25}},
        {"l_shoulder", 1, {0.26, 1.35, 0.0}, {-0.40, -0.50, -0.90}, {0.40, 0.50, 0.50}},
        {"l_elbow", 2, {0.58, 1.35, 0.0}, {-0.10, -0.90, -1.10}, {0.10, 0.30, 0.20}},
        {"l_wrist", 3, {0.82, 1.35, 0.0}, {0.0, 0.0, 0.0}, {0.0, 0.0, 0.0}},
        {"r_shoulder", 1, {-0.26, 1.35, 0.0}, {-0.40, -0.50, -0.50}, {0.40, 0.50, 0.90}},
        {"r_elbow", 5, {-0.58, 1.35, 0.0}, {-0.10, -0.30, -0.20}, {0.10, 0.90, 1.10}},
        {"r_wrist", 6, {-0.82, 1.35, 0.0}, {0.0, 0.0, 0.0}, {0.0, 0.0, 0.0}},
        {"l_hip", 0, {0.09, 0.80, 0.0}, {-0.80, -0.30, -0.50}, {0.50, 0.30, 0.20}},
        {"l_knee", 8, {0.09, 0.48, 0.0}, {-0.05, 0.0, 0.0}, {1.20, 0.0, 0.0}},
        {"l_ankle", 9, {0.09, 0.04, 0.0}, {0.0, 0.0, 0.0}, {0.0, 0.0, 0.0}},
        {"r_hip", 0, {-0.09, 0.80, 0.0}, {-0.80, -0.30, -0.20}, {0.50, 0.30, 0.50}},
        {"r_knee", 11, {-0.09, 0.48, 0.0}, {-0.05, 0.0, 0.0}, {1.20, 0.0, 0.0}},
        {"r_ankle", 12, {-0.09, 0.04, 0.0}, {0.0, 0.0, 0.0}, {0.0, 0.0, 0.0}},
    };
    return joints;
}

double point_segment_dist(const Vec3& p, const Vec3& a, const Vec3& b) {
    Vec3 ab = b - a;
    double len2 = ab.dot(ab);
    double t = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
    return (p - (a + ab * t)).norm();
}

}  // namespace

TopologyPreset TopologyPreset::desk_default() { return TopologyPreset{}; }

TopologyPreset TopologyPreset::paper_ratio() {
    TopologyPreset p;
    p.body = TopologyPreset::Body::Capsule;
    p.radial_segments = 11;
    p.rings = 39;            // 11 * 39 + 2 = 431 coarse vertices
    p.subdivision_depth = 2; // 431 -> 1718 -> 6866
    p.extra_edge_splits = 24;  // -> 6890
    return p;
}

std::vector<std::array<int, 2>> edges_of_faces(const std::vector<std::array<int, 3>>& faces) {
    std::set<std::array<int, 2>> set;
    for (const auto& f : faces) {
        require(f[0] != f[1] && f[1] != f[2] && f[0] != f[2], "construction-error",
                "degenerate face with repeated vertex indices");
        set.insert({std::min(f[0], f[1]), std::max(f[0], f[1])});
        set.insert({std::min(f[1], f[2]), std::max(f[1], f[2])});
        set.insert({std::min(f[2], f[0]), std::max(f[2], f[0])});
    }
    return {set.begin(), set.end()};
}

std::vector<std::vector<int>> hop_from_edges(const std::vector<std::array<int, 2>>& edges,
                                             int vertex_count) {
    std::vector<std::vector<int>> adj(static_cast<size_t>(vertex_count));
    for (const auto& e : edges) {
        require(e[0] >= 0 && e[1] >= 0 && e[0] < vertex_count && e[1] < vertex_count,
                "dim-error", "edge index out of range");
        adj[size_t(e[0])].push_back(e[1]);
        adj[size_t(e[1])].push_back(e[0]);
    }
    std::vector<std::vector<int>> hop(size_t(vertex_count),
                                      std::vector<int>(size_t(vertex_count), -1));
    for (int src = 0; src < vertex_count; ++src) {
        auto& dist = hop[size_t(src)];
        dist[size_t(src)] = 0;
        std::queue<int> q;
        q.push(src);
        while (!q.empty()) {
            int u = q.front();
            q.pop();
            for (int v : adj[size_t(u)])
                if (dist[size_t(v)] < 0) {
                    dist[size_t(v)] = dist[size_t(u)] + 1;
                    q.push(v);
                }
        }
        for (int v = 0; v < vertex_count; ++v)
            require(dist[size_t(v)] >= 0, "connectivity-error",
                    "vertex " + std::to_string(v) + " unreachable from " + std::to_string(src));
    }
    return hop;
}

std::vector<std::vector<int>> hop_distances(const std::vector<std::array<int, 3>>& faces,
                                            int vertex_count) {
    return hop_from_edges(edges_of_faces(faces), vertex_count);
}

AttentionMask build_attention_mask(const std::vector<std::vector<int>>& hop, int level,
                                   int joint_tokens, int grid_tokens) {
    require(level >= 1, "config-error", "attention mask level must be >= 1");
    const int n = int(hop.size());
    const int t = n + joint_tokens + grid_tokens;
    AttentionMask mask;
    mask.level = level;
    mask.allowed = BoolMask(t, t, true);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (hop[size_t(i)][size_t(j)] > level) mask.allowed.set(i, j, false);
    return mask;
}

Mat upsample_vertices(const Mat& U, const Mat& coarse) {
    require(U.cols == coarse.rows && coarse.cols == 3, "dim-error",
            "upsample_vertices: U is " + std::to_string(U.rows) + "x" + std::to_string(U.cols) +
                ", coarse is " + std::to_string(coarse.rows) + "x" + std::to_string(coarse.cols));
    return matmul(U, coarse);
}

Mat regress_joints(const Mat& R, const Mat& dense) {
    require(R.cols == dense.rows && dense.cols == 3, "dim-error",
            "regress_joints: R is " + std::to_string(R.rows) + "x" + std::to_string(R.cols) +
                ", dense is " + std::to_string(dense.rows) + "x" + std::to_string(dense.cols));
    return matmul(R, dense);
}

Volume render_gt_heatmaps(const Mat& coarse3d, const Camera& camera, int h, int w) {
    require(coarse3d.cols == 3, "dim-error", "render_gt_heatmaps expects N x 3 vertices");
    Volume maps(coarse3d.rows, h, w);
    for (int i = 0; i < coarse3d.rows; ++i) {
        auto [x, y] = camera.project(coarse3d.row3(i));
        require(std::isfinite(x) && std::isfinite(y), "data-error",
                "vertex " + std::to_string(i) + " projects to a non-finite position");
        int px = std::clamp(int(std::floor(x * w)), 0, w - 1);
        int py = std::clamp(int(std::floor(y * h)), 0, h - 1);
        maps.at(i, py, px) = 1.0;
    }
    return maps;
}

TemplateMesh build_template(const TopologyPreset& preset) {
    require(preset.joint_count == 14, "config-error",
            "only the 14-joint skeleton is supported");
    require(preset.subdivision_depth >= 1, "config-error", "subdivision depth must be >= 1");

    TriMesh coarse = preset.body == TopologyPreset::Body::Mannequin
                         ? build_mannequin()
                         : build_capsule(preset.radial_segments, preset.rings);
    const int nc = int(coarse.verts.size());

    {  // reject a disconnected construction before anything depends on it
        auto edges = edges_of_faces(coarse.faces);
        std::vector<int> seen(size_t(nc), 0);
        std::vector<std::vector<int>> adj(static_cast<size_t>(nc));
        for (const auto& e : edges) {
            adj[size_t(e[0])].push_back(e[1]);
            adj[size_t(e[1])].push_back(e[0]);
        }
        std::queue<int> q;
        q.push(0);
        seen[0] = 1;
        int reached = 1;
        while (!q.empty()) {
            int u = q.front();
            q.pop();
            for (int v : adj[size_t(u)])
                if (!seen[size_t(v)]) {
                    seen[size_t(v)] = 1;
                    ++reached;
                    q.push(v);
                }
        }
        require(reached == nc, "construction-error", "generated mesh is disconnected");
    }

    Hierarchy h;
    h.verts = coarse.verts;
    h.faces = coarse.faces;
    h.weights.resize(size_t(nc));
    for (int i = 0; i < nc; ++i) h.weights[size_t(i)] = {{i, 1.0}};

    const bool single_level = preset.subdivision_depth == 1 && preset.extra_edge_splits == 0;
    for (int d = 0; d < preset.subdivision_depth; ++d) subdivide(h, single_level);
    if (preset.extra_edge_splits > 0) {
        auto edges = edges_of_faces(h.faces);
        require(preset.extra_edge_splits <= int(edges.size()), "config-error",
                "more edge splits requested than edges available");
        for (int k = 0; k < preset.extra_edge_splits; ++k) split_edge(h, edges[size_t(k)]);
    }

    TemplateMesh mesh;
    mesh.coarse_vertices = Mat(nc, 3);
    for (int i = 0; i < nc; ++i) mesh.coarse_vertices.set_row3(i, coarse.verts[size_t(i)]);
    mesh.coarse_faces = coarse.faces;
    mesh.dense_faces = h.faces;
    mesh.midpoint_parents = h.first_midpoints;

    const int nd = int(h.verts.size());
    mesh.U = Mat(nd, nc);
    for (int i = 0; i < nd; ++i) {
        double sum = 0;
        for (const auto& [j, wgt] : h.weights[size_t(i)]) {
            mesh.U.at(i, j) = wgt;
            sum += wgt;
        }
        require(std::abs(sum - 1.0) <= 1e-9, "construction-error",
                "upsampling row " + std::to_string(i) + " is not stochastic");
    }

    const auto& joints = skeleton14();
    const int k = int(joints.size());
    mesh.joint_rest = Mat(k, 3);
    mesh.joint_limit_min = Mat(k, 3);
    mesh.joint_limit_max = Mat(k, 3);
    for (int j = 0; j < k; ++j) {
        mesh.joint_rest.set_row3(j, joints[size_t(j)].rest);
        mesh.joint_limit_min.set_row3(j, joints[size_t(j)].limit_min);
        mesh.joint_limit_max.set_row3(j, joints[size_t(j)].limit_max);
        mesh.joint_parent.push_back(joints[size_t(j)].parent);
        mesh.joint_names.push_back(joints[size_t(j)].name);
    }

    // joint regressor: each joint averages the coarse vertices whose nearest
    // joint it is, addressed through their (identical) dense indices
    std::vector<std::vector<int>> assigned(static_cast<size_t>(k));
    for (int v = 0; v < nc; ++v) {
        int best = 0;
        double best_d = (coarse.verts[size_t(v)] - joints[0].rest).norm();
        for (int j = 1; j < k; ++j) {
            double d = (coarse.verts[size_t(v)] - joints[size_t(j)].rest).norm();
            if (d < best_d) {
                best_d = d;
                best = j;
            }
        }
        assigned[size_t(best)].push_back(v);
    }
    mesh.R = Mat(k, nd);
    for (int j = 0; j < k; ++j) {
        if (assigned[size_t(j)].empty()) {
            int best = 0;
            double best_d = (coarse.verts[0] - joints[size_t(j)].rest).norm();
            for (int v = 1; v < nc; ++v) {
                double d = (coarse.verts[size_t(v)] - joints[size_t(j)].rest).norm();
                if (d < best_d) {
                    best_d = d;
                    best = v;
                }
            }
            assigned[size_t(j)].push_back(best);
        }
        double wgt = 1.0 / double(assigned[size_t(j)].size());
        for (int v : assigned[size_t(j)]) mesh.R.at(j, v) = wgt;
    }

    // rigid bone binding: nearest bone segment in the rest pose
    mesh.vertex_bone.resize(size_t(nc));
    for (int v = 0; v < nc; ++v) {
        int best = -1;
        double best_d = 0;
        for (int j = 0; j < k; ++j) {
            if (joints[size_t(j)].parent < 0) continue;
            double d = point_segment_dist(coarse.verts[size_t(v)],
                                          joints[size_t(joints[size_t(j)].parent)].rest,
                                          joints[size_t(j)].rest);
            if (best < 0 || d < best_d) {
                best_d = d;
                best = j;
            }
        }
        mesh.vertex_bone[size_t(v)] = best;
    }

    mesh.hop = hop_distances(coarse.faces, nc);
    return mesh;
}

// ---------------------------------------------------------------------------
// Template export/import: an OBJ with the coarse mesh plus a sidecar holding
// everything else in documented dense row-major layout.

namespace {

void write_mat(std::ostream& os, const char* tag, const Mat& m) {
    os << tag << " " << m.rows << " " << m.cols << "\n";
    os << std::setprecision(17);
    for (int r = 0; r < m.rows; ++r) {
        for (int c = 0; c < m.cols; ++c) os << (c ? " " : "") << m.at(r, c);
        os << "\n";
    }
}

Mat read_mat(std::istream& is, const std::string& tag) {
    std::string got;
    int rows, cols;
    is >> got >> rows >> cols;
    require(bool(is) && got == tag, "io-error", "template sidecar: expected " + tag);
    Mat m(rows, cols);
    for (auto& v : m.v) is >> v;
    require(bool(is), "io-error", "template sidecar: truncated " + tag);
    return m;
}

}  // namespace

void save_template(const TemplateMesh& mesh, const std::string& obj_path,
                   const std::string& aux_path) {
    std::ofstream obj(obj_path);
    require(bool(obj), "io-error", "cannot write " + obj_path);
    obj << "# coarse template mesh: " << mesh.coarse_count() << " vertices, "
        << mesh.coarse_faces.size() << " faces\n";
    obj << std::setprecision(17);
    for (int i = 0; i < mesh.coarse_count(); ++i)
        obj << "v " << mesh.coarse_vertices.at(i, 0) << " " << mesh.coarse_vertices.at(i, 1)
            << " " << mesh.coarse_vertices.at(i, 2) << "\n";
    for (const auto& f : mesh.coarse_faces)
        obj << "f " << f[0] + 1 << " " << f[1] + 1 << " " << f[2] + 1 << "\n";

    std::ofstream aux(aux_path);
    require(bool(aux), "io-error", "cannot write " + aux_path);
    aux << "template-aux v1\n";
    aux << "joints " << mesh.joint_count() << "\n";
    for (int j = 0; j < mesh.joint_count(); ++j) {
        aux << mesh.joint_names[size_t(j)] << " " << mesh.joint_parent[size_t(j)]
            << std::setprecision(17);
        for (int c = 0; c < 3; ++c) aux << " " << mesh.joint_rest.at(j, c);
        for (int c = 0; c < 3; ++c) aux << " " << mesh.joint_limit_min.at(j, c);
        for (int c = 0; c < 3; ++c) aux << " " << mesh.joint_limit_max.at(j, c);
        aux << "\n";
    }
    aux << "vertex_bone " << mesh.vertex_bone.size() << "\n";
    for (size_t i = 0; i < mesh.vertex_bone.size(); ++i)
        aux << mesh.vertex_bone[i] << (i + 1 == mesh.vertex_bone.size() ? "\n" : " ");
    aux << "dense_faces " << mesh.dense_faces.size() << "\n";
    for (const auto& f : mesh.dense_faces) aux << f[0] << " " << f[1] << " " << f[2] << "\n";
    write_mat(aux, "U", mesh.U);
    write_mat(aux, "R", mesh.R);
    aux << "hop " << mesh.hop.size() << "\n";
    for (const auto& row : mesh.hop) {
        for (size_t c = 0; c < row.size(); ++c) aux << (c ? " " : "") << row[c];
        aux << "\n";
    }
    aux << "midpoint_parents " << mesh.midpoint_parents.size() << "\n";
    for (const auto& mp : mesh.midpoint_parents) aux << mp[0] << " " << mp[1] << "\n";
}

TemplateMesh load_template(const std::string& obj_path, const std::string& aux_path) {
    std::ifstream obj(obj_path);
    require(bool(obj), "io-error", "cannot read " + obj_path);
    TemplateMesh mesh;
    std::vector<Vec3> verts;
    std::string line;
    while (std::getline(obj, line)) {
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "v") {
            Vec3 p;
            ls >> p.x >> p.y >> p.z;
            verts.push_back(p);
        } else if (tag == "f") {
            std::array<int, 3> f;
            ls >> f[0] >> f[1] >> f[2];
            mesh.coarse_faces.push_back({f[0] - 1, f[1] - 1, f[2] - 1});
        }
    }
    mesh.coarse_vertices = Mat(int(verts.size()), 3);
    for (int i = 0; i < int(verts.size()); ++i) mesh.coarse_vertices.set_row3(i, verts[size_t(i)]);

    std::ifstream aux(aux_path);
    require(bool(aux), "io-error", "cannot read " + aux_path);
    std::string tag, version;
    aux >> tag >> version;
    require(tag == "template-aux" && version == "v1", "io-error",
            "unrecognized template sidecar header");
    int k;
    aux >> tag >> k;
    require(tag == "joints", "io-error", "template sidecar: expected joints");
    mesh.joint_rest = Mat(k, 3);
    mesh.joint_limit_min = Mat(k, 3);
    mesh.joint_limit_max = Mat(k, 3);
    for (int j = 0; j < k; ++j) {
        std::string name;
        int parent;
        aux >> name >> parent;
        mesh.joint_names.push_back(name);
        mesh.joint_parent.push_back(parent);
        for (int c = 0; c < 3; ++c) aux >> mesh.joint_rest.at(j, c);
        for (int c = 0; c < 3; ++c) aux >> mesh.joint_limit_min.at(j, c);
        for (int c = 0; c < 3; ++c) aux >> mesh.joint_limit_max.at(j, c);
    }
    size_t n;
    aux >> tag >> n;
    require(tag == "vertex_bone", "io-error", "template sidecar: expected vertex_bone");
    mesh.vertex_bone.resize(n);
    for (auto& v : mesh.vertex_bone) aux >> v;
    aux >> tag >> n;
    require(tag == "dense_faces", "io-error", "template sidecar: expected dense_faces");
    mesh.dense_faces.resize(n);
    for (auto& f : mesh.dense_faces) aux >> f[0] >> f[1] >> f[2];
    mesh.U = read_mat(aux, "U");
    mesh.R = read_mat(aux, "R");
    aux >> tag >> n;
    require(tag == "hop", "io-error", "template sidecar: expected hop");
    mesh.hop.assign(n, std::vector<int>(n));
    for (auto& row : mesh.hop)
        for (auto& v : row) aux >> v;
    aux >> tag >> n;
    require(tag == "midpoint_parents", "io-error", "template sidecar: expected midpoint_parents");
    mesh.midpoint_parents.resize(n);
    for (auto& mp : mesh.midpoint_parents) aux >> mp[0] >> mp[1];
    require(bool(aux), "io-error", "template sidecar truncated");
    return mesh;
}

}  // namespace pointmesh
