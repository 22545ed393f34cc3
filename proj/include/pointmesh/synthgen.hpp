#pragma once

// Procedural dataset: random articulated poses of the template figure, a
// z-buffered flat-shaded rendering, and the full ground-truth chain
// (coarse/dense vertices, 3D/2D joints, binary heatmaps, camera). Everything
// is a pure function of (seed, config).

#include <cstdint>
#include <vector>

#include "pointmesh/common.hpp"
#include "pointmesh/meshtopo.hpp"

namespace pointmesh {

struct SkeletonPose {
    Mat joint_rotations;  // K x 3 axis-angle, radians
    Vec3 root_translation;
};

struct SynthConfig {
    int image_size = 64;
    int heatmap_h = 32;
    int heatmap_w = 32;
    double frame_fill = 0.7;  // longest figure extent as a fraction of the frame
    bool occlusion = false;   // draw a random opaque rectangle over the image
};

struct SyntheticSample {
    Volume image;  // 3 x S x S, values in [0,1]
    Mat gt_coarse;
    Mat gt_dense;
    Mat gt_joints3d;
    Mat gt_joints2d;
    Volume gt_heatmaps;
    Camera camera;
    uint64_t seed = 0;
};

struct PosedFigure {
    Mat coarse;
    Mat dense;
    Mat joints;  // regressed via R from the dense vertices
};

SkeletonPose sample_pose(const TemplateMesh& mesh, uint64_t seed);

PosedFigure pose_mesh(const SkeletonPose& pose, const TemplateMesh& mesh);

/// Forward-kinematics joint positions (the articulation chain itself, before
/// any regression). Bone lengths are preserved under every pose.
Mat pose_fk_joints(const SkeletonPose& pose, const TemplateMesh& mesh);

Camera fit_camera(const Mat& points, double frame_fill);

/// Flat-shaded z-buffer rasterization with per-body-part colors.
Volume rasterize(const Mat& dense_vertices, const std::vector<std::array<int, 3>>& faces,
                 const std::vector<int>& face_part, const Camera& camera, int image_size);

/// Body-part id per dense face (nearest bone of the face centroid, rest pose).
std::vector<int> dense_face_parts(const TemplateMesh& mesh);

SyntheticSample make_sample(uint64_t seed, const TemplateMesh& mesh, const SynthConfig& config);

std::vector<SyntheticSample> make_dataset(int count, uint64_t base_seed,
                                          const TemplateMesh& mesh, const SynthConfig& config);

}  // namespace pointmesh
