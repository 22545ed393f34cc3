#pragma once

// Evaluation metrics: MPJPE, PA-MPJPE via closed-form Procrustes alignment,
// MPVPE, and F-score at a distance threshold. All metrics run in double and
// report distances in the units of their inputs.

#include "pointmesh/common.hpp"

namespace pointmesh {

struct SimilarityTransform {
    double scale = 1.0;
    Mat3 rotation;
    Vec3 translation;

    Vec3 apply(const Vec3& p) const { return rotation.apply(p) * scale + translation; }

    Mat apply_points(const Mat& pts) const {
        Mat out(pts.rows, 3);
        for (int i = 0; i < pts.rows; ++i) out.set_row3(i, apply(pts.row3(i)));
        return out;
    }
};

/// Root-joint-aligned mean per-joint Euclidean distance. The root is row 0
/// (the pelvis); both skeletons are translated so their roots coincide.
double mpjpe(const Mat& joints_pred, const Mat& joints_gt);

/// Least-squares similarity alignment of P onto G (centroid subtraction,
/// SVD rotation with reflection correction, optimal positive scale).
std::pair<SimilarityTransform, Mat> procrustes_align(const Mat& P, const Mat& G);

double pa_mpjpe(const Mat& joints_pred, const Mat& joints_gt);

/// Translation-aligned (centroid) mean per-vertex Euclidean distance.
double mpvpe(const Mat& verts_pred, const Mat& verts_gt);

/// Harmonic mean of precision and recall of nearest-neighbour matches within
/// the threshold. Callers align the clouds first.
double f_score(const Mat& verts_pred, const Mat& verts_gt, double threshold);

double sum_squared_error(const Mat& a, const Mat& b);

}  // namespace pointmesh
