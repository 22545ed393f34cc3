#include <cmath>
#include <cstring>

#include "doctest.h"
#include "pointmesh/synthgen.hpp"

using namespace pointmesh;

namespace {

const TemplateMesh& tpl() {
    static TemplateMesh mesh = build_template(TopologyPreset::desk_default());
    return mesh;
}

}  // namespace

TEST_CASE("sample_pose is a deterministic function of the seed") {
    auto a = sample_pose(tpl(), 42);
    auto b = sample_pose(tpl(), 42);
    CHECK(a.joint_rotations.v == b.joint_rotations.v);
    CHECK(a.root_translation.x == b.root_translation.x);
    auto c = sample_pose(tpl(), 43);
    CHECK(a.joint_rotations.v != c.joint_rotations.v);
}

TEST_CASE("sampled poses stay within the joint limits") {
    for (uint64_t seed = 0; seed < 1000; ++seed) {
        auto pose = sample_pose(tpl(), seed);
        for (int j = 0; j < tpl().joint_count(); ++j)
            for (int c = 0; c < 3; ++c) {
                CHECK(pose.joint_rotations.at(j, c) >= tpl().joint_limit_min.at(j, c));
                CHECK(pose.joint_rotations.at(j, c) <= tpl().joint_limit_max.at(j, c));
            }
    }
}

TEST_CASE("zero pose reproduces the rest skeleton and mesh exactly") {
    SkeletonPose zero;
    zero.joint_rotations = Mat(tpl().joint_count(), 3);
    zero.root_translation = {0, 0, 0};
    auto figure = pose_mesh(zero, tpl());
    CHECK(figure.coarse.v == tpl().coarse_vertices.v);
    CHECK(figure.dense.v == tpl().dense_rest().v);
    Mat fk = pose_fk_joints(zero, tpl());
    CHECK(fk.v == tpl().joint_rest.v);
}

TEST_CASE("global root translation shifts every output") {
    SkeletonPose moved;
    moved.joint_rotations = Mat(tpl().joint_count(), 3);
    moved.root_translation = {0.4, -0.2, 0.7};
    auto figure = pose_mesh(moved, tpl());
    auto rest = pose_mesh({Mat(tpl().joint_count(), 3), {0, 0, 0}}, tpl());
    const Vec3 t = moved.root_translation;
    for (int i = 0; i < figure.coarse.rows; ++i) {
        Vec3 d = figure.coarse.row3(i) - rest.coarse.row3(i) - t;
        CHECK(d.norm() <= 1e-9);
    }
    for (int i = 0; i < figure.dense.rows; ++i) {
        Vec3 d = figure.dense.row3(i) - rest.dense.row3(i) - t;
        CHECK(d.norm() <= 1e-9);
    }
    for (int i = 0; i < figure.joints.rows; ++i) {
        Vec3 d = figure.joints.row3(i) - rest.joints.row3(i) - t;
        CHECK(d.norm() <= 1e-9);
    }
}

TEST_CASE("bone lengths are preserved under arbitrary poses") {
    for (uint64_t seed = 100; seed < 120; ++seed) {
        auto pose = sample_pose(tpl(), seed);
        Mat fk = pose_fk_joints(pose, tpl());
        for (int j = 0; j < tpl().joint_count(); ++j) {
            int p = tpl().joint_parent[size_t(j)];
            if (p < 0) continue;
            double rest_len = (tpl().joint_rest.row3(j) - tpl().joint_rest.row3(p)).norm();
            double posed_len = (fk.row3(j) - fk.row3(p)).norm();
            CHECK(std::abs(rest_len - posed_len) <= 1e-9);
        }
    }
}

TEST_CASE("rasterize: empty input gives pure background, figures leave pixels") {
    Camera cam{1.0, 0.5, 0.5};
    Volume empty = rasterize(Mat(0, 3), {}, {}, cam, 64);
    for (int y = 0; y < 64; ++y) {
        CHECK(empty.at(0, y, 0) == 0.92);
        CHECK(empty.at(2, y, 63) == 0.95);
    }

    auto figure = pose_mesh({Mat(tpl().joint_count(), 3), {0, 0, 0}}, tpl());
    Camera fitted = fit_camera(figure.dense, 0.7);
    Volume img = rasterize(figure.dense, tpl().dense_faces, dense_face_parts(tpl()), fitted, 64);
    int foreground = 0;
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x)
            if (img.at(0, y, x) != 0.92 || img.at(1, y, x) != 0.92 || img.at(2, y, x) != 0.95)
                ++foreground;
    CHECK(foreground > 64 * 64 / 20);
    CHECK(foreground < 64 * 64 * 9 / 10);

    Volume again = rasterize(figure.dense, tpl().dense_faces, dense_face_parts(tpl()), fitted, 64);
    CHECK(std::memcmp(img.v.data(), again.v.data(), img.v.size() * sizeof(double)) == 0);
}

TEST_CASE("make_sample satisfies every ground-truth invariant over many seeds") {
    SynthConfig cfg;
    for (uint64_t seed = 0; seed < 100; ++seed) {
        auto s = make_sample(seed, tpl(), cfg);
        CHECK(s.seed == seed);

        Mat dense = upsample_vertices(tpl().U, s.gt_coarse);
        for (size_t i = 0; i < dense.v.size(); ++i)
            CHECK(std::abs(dense.v[i] - s.gt_dense.v[i]) <= 1e-9);

        Mat joints = regress_joints(tpl().R, s.gt_dense);
        for (size_t i = 0; i < joints.v.size(); ++i)
            CHECK(std::abs(joints.v[i] - s.gt_joints3d.v[i]) <= 1e-9);

        Mat j2 = s.camera.project_points(s.gt_joints3d);
        for (size_t i = 0; i < j2.v.size(); ++i)
            CHECK(std::abs(j2.v[i] - s.gt_joints2d.v[i]) <= 1e-9);

        for (int i = 0; i < s.gt_heatmaps.n; ++i) {
            double sum = 0;
            for (int y = 0; y < s.gt_heatmaps.h; ++y)
                for (int x = 0; x < s.gt_heatmaps.w; ++x) {
                    double v = s.gt_heatmaps.at(i, y, x);
                    CHECK((v == 0.0 || v == 1.0));
                    sum += v;
                }
            CHECK(sum == 1.0);
        }
        for (double v : s.image.v) CHECK((v >= 0.0 && v <= 1.0));
    }
}

TEST_CASE("make_sample is bit-deterministic per seed") {
    SynthConfig cfg;
    auto a = make_sample(7, tpl(), cfg);
    auto b = make_sample(7, tpl(), cfg);
    CHECK(a.image.v == b.image.v);
    CHECK(a.gt_coarse.v == b.gt_coarse.v);
    CHECK(a.gt_heatmaps.v == b.gt_heatmaps.v);
    CHECK(a.camera.s == b.camera.s);
}

TEST_CASE("occlusion rectangles corrupt the image but never the labels") {
    SynthConfig plain;
    SynthConfig occluded;
    occluded.occlusion = true;
    auto a = make_sample(11, tpl(), plain);
    auto b = make_sample(11, tpl(), occluded);
    CHECK(a.image.v != b.image.v);
    CHECK(a.gt_coarse.v == b.gt_coarse.v);
    CHECK(a.gt_dense.v == b.gt_dense.v);
    CHECK(a.gt_joints3d.v == b.gt_joints3d.v);
    CHECK(a.gt_heatmaps.v == b.gt_heatmaps.v);
}

TEST_CASE("fitted cameras frame the figure inside the unit square") {
    SynthConfig cfg;
    for (uint64_t seed = 200; seed < 230; ++seed) {
        auto s = make_sample(seed, tpl(), cfg);
        Mat proj = s.camera.project_points(s.gt_dense);
        for (int i = 0; i < proj.rows; ++i) {
            CHECK(proj.at(i, 0) >= 0.0);
            CHECK(proj.at(i, 0) <= 1.0);
            CHECK(proj.at(i, 1) >= 0.0);
            CHECK(proj.at(i, 1) <= 1.0);
        }
    }
}
