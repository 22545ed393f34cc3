#include <cmath>

#include "doctest.h"
#include "pointmesh/metrics.hpp"

using namespace pointmesh;

namespace {

Mat random_points(int n, Rng& rng, double lo = -1, double hi = 1) {
    Mat m(n, 3);
    for (auto& v : m.v) v = rng.uniform(lo, hi);
    return m;
}

SimilarityTransform random_similarity(Rng& rng) {
    SimilarityTransform t;
    t.scale = rng.uniform(0.3, 2.5);
    Vec3 aa{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    t.rotation = axis_angle_matrix(aa);
    t.translation = {rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)};
    return t;
}

}  // namespace

TEST_CASE("mpjpe: zero cases and loop oracle") {
    Rng rng(31);
    Mat gt = random_points(14, rng);
    CHECK(mpjpe(gt, gt) == 0.0);

    Mat off = gt;
    for (int i = 0; i < off.rows; ++i) off.set_row3(i, off.row3(i) + Vec3{0.5, -1.0, 2.0});
    CHECK(mpjpe(off, gt) <= 1e-12);

    Mat pred = random_points(14, rng);
    double oracle = 0;
    for (int i = 0; i < 14; ++i) {
        Vec3 p = pred.row3(i) - pred.row3(0);
        Vec3 g = gt.row3(i) - gt.row3(0);
        oracle += (p - g).norm();
    }
    oracle /= 14.0;
    CHECK(std::abs(mpjpe(pred, gt) - oracle) <= 1e-9);
}

TEST_CASE("mpvpe: zero cases and loop oracle") {
    Rng rng(32);
    Mat gt = random_points(30, rng);
    CHECK(mpvpe(gt, gt) == 0.0);

    Mat off = gt;
    for (int i = 0; i < off.rows; ++i) off.set_row3(i, off.row3(i) + Vec3{-0.3, 0.8, 0.1});
    CHECK(mpvpe(off, gt) <= 1e-12);

    Mat pred = random_points(30, rng);
    Vec3 cp{}, cg{};
    for (int i = 0; i < 30; ++i) {
        cp += pred.row3(i) * (1.0 / 30);
        cg += gt.row3(i) * (1.0 / 30);
    }
    double oracle = 0;
    for (int i = 0; i < 30; ++i) oracle += ((pred.row3(i) - cp) - (gt.row3(i) - cg)).norm();
    oracle /= 30.0;
    CHECK(std::abs(mpvpe(pred, gt) - oracle) <= 1e-9);
}

TEST_CASE("procrustes: identity on equal inputs") {
    Rng rng(33);
    Mat g = random_points(12, rng);
    auto [t, aligned] = procrustes_align(g, g);
    CHECK(std::abs(t.scale - 1.0) <= 1e-9);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            CHECK(std::abs(t.rotation.m[size_t(r * 3 + c)] - (r == c ? 1.0 : 0.0)) <= 1e-9);
    CHECK(t.translation.norm() <= 1e-9);
    CHECK(sum_squared_error(aligned, g) <= 1e-18);
}

TEST_CASE("procrustes recovers planted similarity transforms") {
    Rng rng(34);
    for (int trial = 0; trial < 100; ++trial) {
        Mat g = random_points(10, rng);
        SimilarityTransform planted = random_similarity(rng);
        // P = planted^{-1}(G): aligning P onto G must recover `planted`
        Mat p(g.rows, 3);
        // invert: g = s R p + t  =>  p = R^T (g - t) / s
        for (int i = 0; i < g.rows; ++i) {
            Vec3 q = g.row3(i) - planted.translation;
            Mat3 rt;
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c)
                    rt.m[size_t(r * 3 + c)] = planted.rotation.m[size_t(c * 3 + r)];
            p.set_row3(i, rt.apply(q) * (1.0 / planted.scale));
        }
        auto [t, aligned] = procrustes_align(p, g);
        CHECK(sum_squared_error(aligned, g) <= 1e-9);
        CHECK(std::abs(t.scale - planted.scale) <= 1e-6 * planted.scale);
        // orthonormality and properness of the recovered rotation
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) {
                double dot = 0;
                for (int k = 0; k < 3; ++k)
                    dot += t.rotation.m[size_t(r * 3 + k)] * t.rotation.m[size_t(c * 3 + k)];
                CHECK(std::abs(dot - (r == c ? 1.0 : 0.0)) <= 1e-9);
            }
        double det =
            t.rotation.m[0] * (t.rotation.m[4] * t.rotation.m[8] - t.rotation.m[5] * t.rotation.m[7]) -
            t.rotation.m[1] * (t.rotation.m[3] * t.rotation.m[8] - t.rotation.m[5] * t.rotation.m[6]) +
            t.rotation.m[2] * (t.rotation.m[3] * t.rotation.m[7] - t.rotation.m[4] * t.rotation.m[6]);
        CHECK(std::abs(det - 1.0) <= 1e-9);
    }
}

TEST_CASE("procrustes alignment beats random similarity transforms") {
    Rng rng(35);
    Mat g = random_points(10, rng);
    Mat p = random_points(10, rng);
    auto [t, aligned] = procrustes_align(p, g);
    double best = sum_squared_error(aligned, g);
    for (int trial = 0; trial < 200; ++trial) {
        SimilarityTransform other = random_similarity(rng);
        CHECK(best <= sum_squared_error(other.apply_points(p), g) + 1e-12);
    }
    // identity and centroid-only translation are included in the hypothesis set
    CHECK(best <= sum_squared_error(p, g) + 1e-12);
    SimilarityTransform centroid_only;
    Vec3 cp{}, cg{};
    for (int i = 0; i < 10; ++i) {
        cp += p.row3(i) * 0.1;
        cg += g.row3(i) * 0.1;
    }
    centroid_only.translation = cg - cp;
    CHECK(best <= sum_squared_error(centroid_only.apply_points(p), g) + 1e-12);
}

TEST_CASE("procrustes rejects degenerate references") {
    Mat p(4, 3);
    p.set_row3(0, {0, 0, 0});
    p.set_row3(1, {1, 0, 0});
    p.set_row3(2, {0, 1, 0});
    p.set_row3(3, {0, 0, 1});
    Mat collinear(4, 3);
    for (int i = 0; i < 4; ++i) collinear.set_row3(i, {double(i), 2.0 * i, -1.0 * i});
    CHECK_THROWS_AS(procrustes_align(p, collinear), Error);

    Mat coincident(4, 3, 0.5);
    CHECK_THROWS_AS(procrustes_align(p, coincident), Error);
}

TEST_CASE("pa_mpjpe: zero after similarity, invariant to prediction transforms") {
    Rng rng(36);
    Mat gt = random_points(14, rng);
    SimilarityTransform t = random_similarity(rng);
    Mat moved = t.apply_points(gt);
    CHECK(pa_mpjpe(moved, gt) <= 1e-9);

    Mat pred = random_points(14, rng);
    double base = pa_mpjpe(pred, gt);
    for (int trial = 0; trial < 20; ++trial) {
        SimilarityTransform u = random_similarity(rng);
        CHECK(std::abs(pa_mpjpe(u.apply_points(pred), gt) - base) <= 1e-9);
    }

    // nested hypothesis: full alignment no worse than centroid-only
    auto [tr, aligned] = procrustes_align(pred, gt);
    Vec3 cp{}, cg{};
    for (int i = 0; i < 14; ++i) {
        cp += pred.row3(i) * (1.0 / 14);
        cg += gt.row3(i) * (1.0 / 14);
    }
    SimilarityTransform centroid_only;
    centroid_only.translation = cg - cp;
    CHECK(sum_squared_error(aligned, gt) <=
          sum_squared_error(centroid_only.apply_points(pred), gt) + 1e-12);
}

TEST_CASE("f_score: exact cases and brute-force oracle") {
    Rng rng(37);
    Mat g = random_points(20, rng);
    CHECK(f_score(g, g, 1e-9) == 1.0);

    Mat far = g;
    for (int i = 0; i < far.rows; ++i) far.set_row3(i, far.row3(i) + Vec3{50, 50, 50});
    CHECK(f_score(far, g, 1.0) == 0.0);

    for (int trial = 0; trial < 10; ++trial) {
        Mat a = random_points(8, rng), b = random_points(11, rng);
        double tau = rng.uniform(0.2, 1.5);
        int hits_a = 0;
        for (int i = 0; i < a.rows; ++i) {
            double best = 1e30;
            for (int j = 0; j < b.rows; ++j) best = std::min(best, (a.row3(i) - b.row3(j)).norm());
            if (best <= tau) ++hits_a;
        }
        int hits_b = 0;
        for (int j = 0; j < b.rows; ++j) {
            double best = 1e30;
            for (int i = 0; i < a.rows; ++i) best = std::min(best, (a.row3(i) - b.row3(j)).norm());
            if (best <= tau) ++hits_b;
        }
        double prec = double(hits_a) / a.rows, rec = double(hits_b) / b.rows;
        double want = (prec + rec) == 0 ? 0.0 : 2 * prec * rec / (prec + rec);
        CHECK(f_score(a, b, tau) == want);

        // symmetry at equal cardinality and monotonicity in the threshold
        Mat c = random_points(8, rng);
        CHECK(f_score(a, c, tau) == f_score(c, a, tau));
        CHECK(f_score(a, b, tau) <= f_score(a, b, tau * 2) + 1e-15);
    }
}
