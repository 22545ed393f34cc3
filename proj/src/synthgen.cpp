#include "pointmesh/synthgen.hpp"

#include <algorithm>
#include <cmath>

namespace pointmesh {

namespace {

struct Xform {
    Mat3 r;
    Vec3 t;

    Vec3 apply(const Vec3& p) const { return r.apply(p) + t; }

    static Xform compose(const Xform& a, const Xform& b) {  // a after b
        return {a.r.mul(b.r), a.r.apply(b.t) + a.t};
    }

    static Xform rotation_about(const Vec3& center, const Vec3& axis_angle) {
        Mat3 rot = axis_angle_matrix(axis_angle);
        return {rot, center - rot.apply(center)};
    }

    static Xform translation(const Vec3& t) { return {Mat3::identity(), t}; }
};

/// Global transform per joint: the root composes its translation and a
/// rotation about the rest pelvis; every other joint rotates about its own
/// rest position inside its parent's frame.
std::vector<Xform> joint_transforms(const SkeletonPose& pose, const TemplateMesh& mesh) {
    const int k = mesh.joint_count();
    std::vector<Xform> xf(static_cast<size_t>(k));
    for (int j = 0; j < k; ++j) {
        Vec3 aa = pose.joint_rotations.row3(j);
        Xform local = Xform::rotation_about(mesh.joint_rest.row3(j), aa);
        if (mesh.joint_parent[size_t(j)] < 0) {
            xf[size_t(j)] = Xform::compose(Xform::translation(pose.root_translation), local);
        } else {
            xf[size_t(j)] = Xform::compose(xf[size_t(mesh.joint_parent[size_t(j)])], local);
        }
    }
    return xf;
}

const std::array<std::array<double, 3>, 14> kPartPalette = {{
    {0.82, 0.45, 0.35},  // pelvis region
    {0.85, 0.62, 0.30},  // chest
    {0.40, 0.62, 0.85},  // l_shoulder
    {0.35, 0.50, 0.78},  // l_elbow
    {0.30, 0.40, 0.70},  // l_wrist
    {0.45, 0.80, 0.50},  // r_shoulder
    {0.36, 0.68, 0.42},  // r_elbow
    {0.28, 0.56, 0.36},  // r_wrist
    {0.78, 0.42, 0.72},  // l_hip
    {0.66, 0.34, 0.62},  // l_knee
    {0.54, 0.28, 0.52},  // l_ankle
    {0.85, 0.75, 0.35},  // r_hip
    {0.72, 0.62, 0.28},  // r_knee
    {0.60, 0.52, 0.24},  // r_ankle
}};

constexpr double kBackground[3] = {0.92, 0.92, 0.95};

SkeletonPose sample_pose_rng(Rng& rng, const TemplateMesh& mesh) {
    SkeletonPose pose;
    pose.joint_rotations = Mat(mesh.joint_count(), 3);
    for (int j = 0; j < mesh.joint_count(); ++j)
        for (int c = 0; c < 3; ++c)
            pose.joint_rotations.at(j, c) =
                rng.uniform(mesh.joint_limit_min.at(j, c), mesh.joint_limit_max.at(j, c));
    pose.root_translation = {rng.uniform(-0.15, 0.15), rng.uniform(-0.15, 0.15),
                             rng.uniform(-0.15, 0.15)};
    return pose;
}

double point_segment_dist(const Vec3& p, const Vec3& a, const Vec3& b) {
    Vec3 ab = b - a;
    double len2 = ab.dot(ab);
    double t = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
    return (p - (a + ab * t)).norm();
}

}  // namespace

SkeletonPose sample_pose(const TemplateMesh& mesh, uint64_t seed) {
    Rng rng(seed);
    return sample_pose_rng(rng, mesh);
}

Mat pose_fk_joints(const SkeletonPose& pose, const TemplateMesh& mesh) {
    auto xf = joint_transforms(pose, mesh);
    Mat joints(mesh.joint_count(), 3);
    for (int j = 0; j < mesh.joint_count(); ++j)
        joints.set_row3(j, xf[size_t(j)].apply(mesh.joint_rest.row3(j)));
    return joints;
}

PosedFigure pose_mesh(const SkeletonPose& pose, const TemplateMesh& mesh) {
    auto xf = joint_transforms(pose, mesh);
    PosedFigure out;
    out.coarse = Mat(mesh.coarse_count(), 3);
    for (int v = 0; v < mesh.coarse_count(); ++v) {
        // a vertex bound to bone (p -> c) rides its parent joint's frame
        int child = mesh.vertex_bone[size_t(v)];
        int frame = mesh.joint_parent[size_t(child)];
        out.coarse.set_row3(v, xf[size_t(frame)].apply(mesh.coarse_vertices.row3(v)));
    }
    out.dense = upsample_vertices(mesh.U, out.coarse);
    out.joints = regress_joints(mesh.R, out.dense);
    return out;
}

Camera fit_camera(const Mat& points, double frame_fill) {
    require(points.rows > 0, "data-error", "cannot fit a camera to an empty point set");
    double min_x = points.at(0, 0), max_x = min_x;
    double min_y = points.at(0, 1), max_y = min_y;
    for (int i = 0; i < points.rows; ++i) {
        min_x = std::min(min_x, points.at(i, 0));
        max_x = std::max(max_x, points.at(i, 0));
        min_y = std::min(min_y, points.at(i, 1));
        max_y = std::max(max_y, points.at(i, 1));
    }
    double extent = std::max(max_x - min_x, max_y - min_y);
    Camera cam;
    cam.s = extent > 0 ? frame_fill / extent : 1.0;
    cam.tx = 0.5 - cam.s * 0.5 * (min_x + max_x);
    cam.ty = 0.5 - cam.s * 0.5 * (min_y + max_y);
    return cam;
}

std::vector<int> dense_face_parts(const TemplateMesh& mesh) {
    Mat dense = mesh.dense_rest();
    std::vector<int> parts;
    parts.reserve(mesh.dense_faces.size());
    for (const auto& f : mesh.dense_faces) {
        Vec3 c = (dense.row3(f[0]) + dense.row3(f[1]) + dense.row3(f[2])) * (1.0 / 3.0);
        int best = -1;
        double best_d = 0;
        for (int j = 0; j < mesh.joint_count(); ++j) {
            if (mesh.joint_parent[size_t(j)] < 0) continue;
            double d = point_segment_dist(c, mesh.joint_rest.row3(mesh.joint_parent[size_t(j)]),
                                          mesh.joint_rest.row3(j));
            if (best < 0 || d < best_d) {
                best_d = d;
                best = j;
            }
        }
        parts.push_back(best);
    }
    return parts;
}

Volume rasterize(const Mat& dense_vertices, const std::vector<std::array<int, 3>>& faces,
                 const std::vector<int>& face_part, const Camera& camera, int image_size) {
    require(face_part.size() == faces.size(), "dim-error",
            "rasterize: one part id per face required");
    const int s = image_size;
    Volume img(3, s, s);
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x)
            for (int c = 0; c < 3; ++c) img.at(c, y, x) = kBackground[c];
    if (dense_vertices.rows == 0 || faces.empty()) return img;

    std::vector<double> px(static_cast<size_t>(dense_vertices.rows));
    std::vector<double> py(static_cast<size_t>(dense_vertices.rows));
    for (int i = 0; i < dense_vertices.rows; ++i) {
        auto [nx, ny] = camera.project(dense_vertices.row3(i));
        px[size_t(i)] = nx * s;
        py[size_t(i)] = ny * s;
    }

    const Vec3 light = Vec3{0.4, 0.7, -0.6}.normalized();
    std::vector<double> zbuf(size_t(s) * s, 1e30);  // camera looks along +Z, smaller is closer

    for (size_t fi = 0; fi < faces.size(); ++fi) {
        const auto& f = faces[fi];
        const double x0 = px[size_t(f[0])], y0 = py[size_t(f[0])];
        const double x1 = px[size_t(f[1])], y1 = py[size_t(f[1])];
        const double x2 = px[size_t(f[2])], y2 = py[size_t(f[2])];
        const double z0 = dense_vertices.at(f[0], 2), z1 = dense_vertices.at(f[1], 2),
                     z2 = dense_vertices.at(f[2], 2);
        double area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0);
        if (area == 0.0) continue;

        Vec3 n = (dense_vertices.row3(f[1]) - dense_vertices.row3(f[0]))
                     .cross(dense_vertices.row3(f[2]) - dense_vertices.row3(f[0]))
                     .normalized();
        double shade = 0.55 + 0.45 * std::abs(n.dot(light));
        const auto& base = kPartPalette[size_t(face_part[fi] % int(kPartPalette.size()))];

        int xs = std::max(0, int(std::floor(std::min({x0, x1, x2}))));
        int xe = std::min(s - 1, int(std::ceil(std::max({x0, x1, x2}))));
        int ys = std::max(0, int(std::floor(std::min({y0, y1, y2}))));
        int ye = std::min(s - 1, int(std::ceil(std::max({y0, y1, y2}))));
        for (int yy = ys; yy <= ye; ++yy)
            for (int xx = xs; xx <= xe; ++xx) {
                double cx = xx + 0.5, cy = yy + 0.5;
                double w0 = ((x1 - cx) * (y2 - cy) - (x2 - cx) * (y1 - cy)) / area;
                double w1 = ((x2 - cx) * (y0 - cy) - (x0 - cx) * (y2 - cy)) / area;
                double w2 = 1.0 - w0 - w1;
                if (w0 < 0 || w1 < 0 || w2 < 0) continue;
                double z = w0 * z0 + w1 * z1 + w2 * z2;
                if (z >= zbuf[size_t(yy) * s + xx]) continue;
                zbuf[size_t(yy) * s + xx] = z;
                for (int c = 0; c < 3; ++c)
                    img.at(c, yy, xx) = std::clamp(base[size_t(c)] * shade, 0.0, 1.0);
            }
    }
    return img;
}

SyntheticSample make_sample(uint64_t seed, const TemplateMesh& mesh, const SynthConfig& config) {
    Rng rng(seed);
    SkeletonPose pose = sample_pose_rng(rng, mesh);
    PosedFigure figure = pose_mesh(pose, mesh);

    SyntheticSample sample;
    sample.seed = seed;
    sample.gt_coarse = figure.coarse;
    sample.gt_dense = figure.dense;
    sample.gt_joints3d = figure.joints;
    sample.camera = fit_camera(figure.dense, config.frame_fill);
    sample.gt_joints2d = sample.camera.project_points(sample.gt_joints3d);
    sample.gt_heatmaps =
        render_gt_heatmaps(sample.gt_coarse, sample.camera, config.heatmap_h, config.heatmap_w);

    sample.image = rasterize(sample.gt_dense, mesh.dense_faces, dense_face_parts(mesh),
                             sample.camera, config.image_size);

    if (config.occlusion) {
        const int s = config.image_size;
        int w = rng.uniform_int(s / 8, s / 4);
        int h = rng.uniform_int(s / 8, s / 4);
        int x0 = rng.uniform_int(0, s - w - 1);
        int y0 = rng.uniform_int(0, s - h - 1);
        const double occ[3] = {0.15, 0.15, 0.18};
        for (int y = y0; y < y0 + h; ++y)
            for (int x = x0; x < x0 + w; ++x)
                for (int c = 0; c < 3; ++c) sample.image.at(c, y, x) = occ[c];
    }
    return sample;
}

std::vector<SyntheticSample> make_dataset(int count, uint64_t base_seed,
                                          const TemplateMesh& mesh, const SynthConfig& config) {
    std::vector<SyntheticSample> out;
    out.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) out.push_back(make_sample(base_seed + uint64_t(i), mesh, config));
    return out;
}

}  // namespace pointmesh
