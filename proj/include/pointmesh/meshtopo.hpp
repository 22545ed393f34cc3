#pragma once

// Template mesh construction: the articulated figure's coarse/dense vertex
// hierarchy, graph structure, hop-distance matrix, attention masks, the
// upsampling matrix U, the joint regressor R, and ground-truth heatmap
// rasterization.

#include <array>
#include <string>
#include <vector>

#include "pointmesh/common.hpp"
#include "pointmesh/tensor.hpp"

namespace pointmesh {

struct TopologyPreset {
    enum class Body { Mannequin, Capsule };

    Body body = Body::Mannequin;
    int joint_count = 14;      // the only supported skeleton
    int radial_segments = 6;   // capsule cross-section vertex count
    int rings = 16;            // capsule latitude rings
    int subdivision_depth = 1;
    int extra_edge_splits = 0;

    /// 98 coarse / 386 dense vertices: box-modelled mannequin, one midpoint
    /// subdivision.
    static TopologyPreset desk_default();

    /// 431 coarse / 6890 dense vertices, matching the coarse/dense counts of
    /// the full-scale body template. Shape tests only: a single capsule body,
    /// two subdivisions plus 24 extra edge splits.
    static TopologyPreset paper_ratio();
};

struct TemplateMesh {
    Mat coarse_vertices;                           // N_c x 3, rest pose
    std::vector<std::array<int, 3>> coarse_faces;  // triangles over coarse vertices
    std::vector<std::array<int, 3>> dense_faces;   // triangles over dense vertices
    Mat U;                                         // dense_count x coarse_count, row-stochastic
    Mat R;                                         // K x dense_count, row-stochastic
    std::vector<std::vector<int>> hop;             // coarse hop-distance matrix

    // kinematic tree
    Mat joint_rest;                        // K x 3
    std::vector<int> joint_parent;         // -1 for the root
    std::vector<std::string> joint_names;
    Mat joint_limit_min, joint_limit_max;  // K x 3 axis-angle bounds (radians)
    std::vector<int> vertex_bone;          // per coarse vertex: child joint of its bone

    /// For depth-1 subdivisions: parent vertex pair of each dense midpoint,
    /// indexed from coarse_count(). Empty for deeper hierarchies.
    std::vector<std::array<int, 2>> midpoint_parents;

    int coarse_count() const { return coarse_vertices.rows; }
    int dense_count() const { return U.rows; }
    int joint_count() const { return joint_rest.rows; }

    Mat dense_rest() const { return matmul(U, coarse_vertices); }
};

/// Attention mask over the token sequence [vertices | joints | grid].
/// Vertex-vertex entries are allowed iff their hop distance is <= level;
/// everything involving joint or grid tokens stays fully connected.
struct AttentionMask {
    int level = 0;
    BoolMask allowed;
};

TemplateMesh build_template(const TopologyPreset& preset);

/// Shortest-path edge counts between all vertex pairs (BFS per source).
std::vector<std::vector<int>> hop_from_edges(const std::vector<std::array<int, 2>>& edges,
                                             int vertex_count);
std::vector<std::vector<int>> hop_distances(const std::vector<std::array<int, 3>>& faces,
                                            int vertex_count);

/// Undirected unique edges of a triangle set, sorted lexicographically.
std::vector<std::array<int, 2>> edges_of_faces(const std::vector<std::array<int, 3>>& faces);

AttentionMask build_attention_mask(const std::vector<std::vector<int>>& hop, int level,
                                   int joint_tokens, int grid_tokens);

/// V = U V' (plain double path; the model records the same product on the
/// autodiff graph via matmul).
Mat upsample_vertices(const Mat& U, const Mat& coarse);
Mat regress_joints(const Mat& R, const Mat& dense);

/// One binary map per coarse vertex: the nearest pixel to the projected
/// vertex is 1 (clamped to the image), everything else 0.
Volume render_gt_heatmaps(const Mat& coarse3d, const Camera& camera, int h, int w);

void save_template(const TemplateMesh& mesh, const std::string& obj_path,
                   const std::string& aux_path);
TemplateMesh load_template(const std::string& obj_path, const std::string& aux_path);

}  // namespace pointmesh
