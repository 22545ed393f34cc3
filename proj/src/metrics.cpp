#include "pointmesh/metrics.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace pointmesh {

namespace {

Vec3 centroid(const Mat& pts) {
    Vec3 c{};
    for (int i = 0; i < pts.rows; ++i) c += pts.row3(i);
    return c * (1.0 / double(pts.rows));
}

double mean_row_distance(const Mat& a, const Mat& b) {
    double acc = 0;
    for (int i = 0; i < a.rows; ++i) acc += (a.row3(i) - b.row3(i)).norm();
    return acc / double(a.rows);
}

Mat translate(const Mat& pts, const Vec3& t) {
    Mat out(pts.rows, 3);
    for (int i = 0; i < pts.rows; ++i) out.set_row3(i, pts.row3(i) + t);
    return out;
}

}  // namespace

double sum_squared_error(const Mat& a, const Mat& b) {
    require(a.rows == b.rows && a.cols == b.cols, "dim-error", "SSE shape mismatch");
    double acc = 0;
    for (size_t i = 0; i < a.v.size(); ++i) acc += (a.v[i] - b.v[i]) * (a.v[i] - b.v[i]);
    return acc;
}

double mpjpe(const Mat& joints_pred, const Mat& joints_gt) {
    require(joints_pred.rows == joints_gt.rows && joints_pred.cols == 3 &&
                joints_gt.cols == 3,
            "dim-error", "mpjpe: joint count mismatch");
    require(joints_pred.rows >= 1, "dim-error", "mpjpe needs at least one joint");
    Mat p = translate(joints_pred, joints_pred.row3(0) * -1.0);
    Mat g = translate(joints_gt, joints_gt.row3(0) * -1.0);
    return mean_row_distance(p, g);
}

double mpvpe(const Mat& verts_pred, const Mat& verts_gt) {
    require(verts_pred.rows == verts_gt.rows && verts_pred.cols == 3 && verts_gt.cols == 3,
            "dim-error", "mpvpe: vertex count mismatch");
    Mat p = translate(verts_pred, centroid(verts_pred) * -1.0);
    Mat g = translate(verts_gt, centroid(verts_gt) * -1.0);
    return mean_row_distance(p, g);
}

std::pair<SimilarityTransform, Mat> procrustes_align(const Mat& P, const Mat& G) {
    require(P.rows == G.rows && P.cols == 3 && G.cols == 3, "dim-error",
            "procrustes_align: point sets must both be n x 3");
    require(P.rows >= 3, "dim-error", "procrustes_align needs at least 3 points");
    const int n = P.rows;
    const Vec3 mu_p = centroid(P), mu_g = centroid(G);

    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();  // sum_i (g_i - mu_g)(p_i - mu_p)^T
    double var_p = 0, var_g = 0;
    for (int i = 0; i < n; ++i) {
        Vec3 x = P.row3(i) - mu_p, y = G.row3(i) - mu_g;
        Eigen::Vector3d xe(x.x, x.y, x.z), ye(y.x, y.y, y.z);
        cov += ye * xe.transpose();
        var_p += xe.squaredNorm();
        var_g += ye.squaredNorm();
    }
    require(var_p > 0, "alignment-error", "prediction points are all coincident");
    require(var_g > 0, "alignment-error", "reference points are all coincident");

    Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Vector3d d = svd.singularValues();
    require(d(1) > 1e-12 * std::max(d(0), 1.0), "alignment-error",
            "degenerate (rank-deficient) reference configuration");

    Eigen::Vector3d sign(1, 1, 1);
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) sign(2) = -1;
    Eigen::Matrix3d rot =
        svd.matrixU() * sign.asDiagonal() * svd.matrixV().transpose();
    double scale = (d(0) * sign(0) + d(1) * sign(1) + d(2) * sign(2)) / var_p;
    require(scale > 0, "alignment-error", "optimal similarity scale is not positive");

    SimilarityTransform t;
    t.scale = scale;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) t.rotation.m[size_t(r * 3 + c)] = rot(r, c);
    Vec3 rp = t.rotation.apply(mu_p);
    t.translation = mu_g - rp * scale;
    return {t, t.apply_points(P)};
}

double pa_mpjpe(const Mat& joints_pred, const Mat& joints_gt) {
    auto [transform, aligned] = procrustes_align(joints_pred, joints_gt);
    return mean_row_distance(aligned, joints_gt);
}

double f_score(const Mat& verts_pred, const Mat& verts_gt, double threshold) {
    require(threshold > 0, "config-error", "f_score threshold must be positive");
    require(verts_pred.rows > 0 && verts_gt.rows > 0, "dim-error",
            "f_score over an empty point set");
    require(verts_pred.cols == 3 && verts_gt.cols == 3, "dim-error",
            "f_score expects n x 3 point sets");
    auto fraction_within = [&](const Mat& from, const Mat& to) {
        int hit = 0;
        for (int i = 0; i < from.rows; ++i) {
            double best = (from.row3(i) - to.row3(0)).norm();
            for (int j = 1; j < to.rows; ++j)
                best = std::min(best, (from.row3(i) - to.row3(j)).norm());
            if (best <= threshold) ++hit;
        }
        return double(hit) / double(from.rows);
    };
    double precision = fraction_within(verts_pred, verts_gt);
    double recall = fraction_within(verts_gt, verts_pred);
    if (precision + recall == 0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

}  // namespace pointmesh
