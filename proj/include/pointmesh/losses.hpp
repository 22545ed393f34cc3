#pragma once

// The five training loss terms and their weighted combination. Each term is
// a fused autodiff primitive: values come from a single fixed-order sweep
// and the backward rules pin the subgradient conventions (0 at the L1 kink
// and at coincident joints).

#include <cmath>

#include "pointmesh/common.hpp"
#include "pointmesh/tensor.hpp"

namespace pointmesh {

struct LossWeights {
    double w_v = 0.01;
    double w_j3d = 0.1;
    double w_j2d = 0.01;
    double w_bce = 1.0;
    double w_dice = 0.001;

    void validate() const {
        require(w_v >= 0 && w_j3d >= 0 && w_j2d >= 0 && w_bce >= 0 && w_dice >= 0,
                "config-error", "loss weights must be non-negative");
    }
};

struct LossReport {
    double l_v = 0, l_j3d = 0, l_j2d = 0, l_bce = 0, l_dice = 0, total = 0;
};

/// Mean over rows of the L1 distance to the target: (1/N) sum_i |t_i - p_i|_1.
template <typename T>
Tensor<T> l1_mean(const Tensor<T>& pred, const Mat& target) {
    require(pred.ndim() == 2 && pred.dim(0) == target.rows && pred.dim(1) == target.cols,
            "dim-error",
            "l1_mean shape mismatch: " + str_of_shape(pred.shape()) + " vs " +
                std::to_string(target.rows) + "x" + std::to_string(target.cols));
    const long n = pred.dim(0), d = pred.dim(1);
    auto out = Tensor<T>::zeros({1}, pred.requires_grad());
    T acc = 0;
    for (long i = 0; i < n * d; ++i)
        acc += std::abs(T(target.v[size_t(i)]) - pred.value()[size_t(i)]);
    out.value()[0] = acc / T(n);
    detail::record(out, [pn = pred.node(), target, on = out.node(), n, d]() {
        if (on->grad.empty() || !pn->requires_grad) return;
        pn->ensure_grad();
        T g = on->grad[0] / T(n);
        for (long i = 0; i < n * d; ++i) {
            T diff = pn->value[size_t(i)] - T(target.v[size_t(i)]);
            if (diff > T(0)) pn->grad[size_t(i)] += g;
            else if (diff < T(0)) pn->grad[size_t(i)] -= g;
            // subgradient 0 at the kink
        }
    });
    return out;
}

/// Mean over rows of the Euclidean distance to the target:
/// (1/N) sum_i |t_i - p_i|_2.
template <typename T>
Tensor<T> euclidean_mean(const Tensor<T>& pred, const Mat& target) {
    require(pred.ndim() == 2 && pred.dim(0) == target.rows && pred.dim(1) == target.cols,
            "dim-error",
            "euclidean_mean shape mismatch: " + str_of_shape(pred.shape()) + " vs " +
                std::to_string(target.rows) + "x" + std::to_string(target.cols));
    const long n = pred.dim(0), d = pred.dim(1);
    auto out = Tensor<T>::zeros({1}, pred.requires_grad());
    std::vector<T> dist(static_cast<size_t>(n));
    T acc = 0;
    for (long i = 0; i < n; ++i) {
        T s = 0;
        for (long c = 0; c < d; ++c) {
            T diff = T(target.at(int(i), int(c))) - pred.value()[size_t(i * d + c)];
            s += diff * diff;
        }
        dist[size_t(i)] = std::sqrt(s);
        acc += dist[size_t(i)];
    }
    out.value()[0] = acc / T(n);
    detail::record(out, [pn = pred.node(), target, on = out.node(),
                         dist = std::move(dist), n, d]() {
        if (on->grad.empty() || !pn->requires_grad) return;
        pn->ensure_grad();
        T g = on->grad[0] / T(n);
        for (long i = 0; i < n; ++i) {
            if (dist[size_t(i)] == T(0)) continue;  // subgradient 0 at coincidence
            for (long c = 0; c < d; ++c) {
                T diff = pn->value[size_t(i * d + c)] - T(target.at(int(i), int(c)));
                pn->grad[size_t(i * d + c)] += g * diff / dist[size_t(i)];
            }
        }
    });
    return out;
}

/// L1 vertex position loss at one mesh level.
template <typename T>
Tensor<T> vertex_loss(const Tensor<T>& pred_vertices, const Mat& gt_vertices) {
    return l1_mean(pred_vertices, gt_vertices);
}

/// Joint loss: mean Euclidean gap of both the directly predicted joints and
/// the mesh-regressed joints against the same ground truth.
template <typename T>
Tensor<T> joint3d_loss(const Tensor<T>& joints, const Tensor<T>& joints_regressed,
                       const Mat& gt_joints) {
    return add(euclidean_mean(joints, gt_joints), euclidean_mean(joints_regressed, gt_joints));
}

template <typename T>
Tensor<T> joint2d_loss(const Tensor<T>& joints2d, const Tensor<T>& joints2d_regressed,
                       const Mat& gt_joints2d) {
    return add(euclidean_mean(joints2d, gt_joints2d),
               euclidean_mean(joints2d_regressed, gt_joints2d));
}

/// Binary cross entropy, summed per map and averaged over maps. Predictions
/// are clamped to [1e-7, 1-1e-7] inside the logs.
template <typename T>
Tensor<T> heatmap_bce(const Tensor<T>& pred, const Volume& gt) {
    require(pred.ndim() == 3 && pred.dim(0) == gt.n && pred.dim(1) == gt.h &&
                pred.dim(2) == gt.w,
            "dim-error", "heatmap_bce shape mismatch");
    constexpr double kLo = 1e-7, kHi = 1.0 - 1e-7;
    const long n = gt.n, hw = long(gt.h) * gt.w;
    for (double v : gt.v)
        require(v == 0.0 || v == 1.0, "contract-error", "ground-truth heatmap is not binary");
    for (long i = 0; i < n * hw; ++i) {
        T p = pred.value()[size_t(i)];
        require(p >= T(0) && p <= T(1), "contract-error",
                "predicted heatmap value outside [0,1]");
    }
    auto out = Tensor<T>::zeros({1}, pred.requires_grad());
    T acc = 0;
    for (long i = 0; i < n * hw; ++i) {
        T p = std::clamp(pred.value()[size_t(i)], T(kLo), T(kHi));
        T g = T(gt.v[size_t(i)]);
        acc -= g * std::log(p) + (T(1) - g) * std::log(T(1) - p);
    }
    out.value()[0] = acc / T(n);
    detail::record(out, [pn = pred.node(), gt, on = out.node(), n, hw]() {
        if (on->grad.empty() || !pn->requires_grad) return;
        pn->ensure_grad();
        T gscale = on->grad[0] / T(n);
        for (long i = 0; i < n * hw; ++i) {
            T p = pn->value[size_t(i)];
            if (p < T(kLo) || p > T(kHi)) continue;  // clamped, locally flat
            T g = T(gt.v[size_t(i)]);
            pn->grad[size_t(i)] += gscale * (-(g / p) + (T(1) - g) / (T(1) - p));
        }
    });
    return out;
}

/// Dice loss with per-map spatial sums:
/// (1/N) sum_i [1 - 2 * sum(gt*p) / (sum(gt) + sum(p) + eps)].
template <typename T>
Tensor<T> heatmap_dice(const Tensor<T>& pred, const Volume& gt) {
    require(pred.ndim() == 3 && pred.dim(0) == gt.n && pred.dim(1) == gt.h &&
                pred.dim(2) == gt.w,
            "dim-error", "heatmap_dice shape mismatch");
    constexpr double kEps = 1e-8;
    const long n = gt.n, hw = long(gt.h) * gt.w;
    for (double v : gt.v)
        require(v >= 0.0, "contract-error", "dice loss needs non-negative targets");
    for (long i = 0; i < n * hw; ++i)
        require(pred.value()[size_t(i)] >= T(0), "contract-error",
                "dice loss needs non-negative predictions");
    auto out = Tensor<T>::zeros({1}, pred.requires_grad());
    std::vector<T> overlap(static_cast<size_t>(n)), denom(static_cast<size_t>(n));
    T acc = 0;
    for (long i = 0; i < n; ++i) {
        T s_gp = 0, s_g = 0, s_p = 0;
        for (long q = 0; q < hw; ++q) {
            T p = pred.value()[size_t(i * hw + q)];
            T g = T(gt.v[size_t(i * hw + q)]);
            s_gp += g * p;
            s_g += g;
            s_p += p;
        }
        overlap[size_t(i)] = s_gp;
        denom[size_t(i)] = s_g + s_p + T(kEps);
        acc += T(1) - T(2) * s_gp / denom[size_t(i)];
    }
    out.value()[0] = acc / T(n);
    detail::record(out, [pn = pred.node(), gt, on = out.node(), overlap = std::move(overlap),
                         denom = std::move(denom), n, hw]() {
        if (on->grad.empty() || !pn->requires_grad) return;
        pn->ensure_grad();
        T gscale = on->grad[0] / T(n);
        for (long i = 0; i < n; ++i) {
            T d = denom[size_t(i)], s = overlap[size_t(i)];
            for (long q = 0; q < hw; ++q) {
                T g = T(gt.v[size_t(i * hw + q)]);
                pn->grad[size_t(i * hw + q)] += gscale * (-T(2)) * (g * d - s) / (d * d);
            }
        }
    });
    return out;
}

/// Weighted total over the five terms; the report keeps the raw values.
template <typename T>
std::pair<Tensor<T>, LossReport> total_loss(const Tensor<T>& l_v, const Tensor<T>& l_j3d,
                                            const Tensor<T>& l_j2d, const Tensor<T>& l_bce,
                                            const Tensor<T>& l_dice,
                                            const LossWeights& weights) {
    weights.validate();
    auto total = weighted_sum<T>({l_v, l_j3d, l_j2d, l_bce, l_dice},
                                 {weights.w_v, weights.w_j3d, weights.w_j2d, weights.w_bce,
                                  weights.w_dice});
    LossReport report;
    report.l_v = double(l_v.scalar());
    report.l_j3d = double(l_j3d.scalar());
    report.l_j2d = double(l_j2d.scalar());
    report.l_bce = double(l_bce.scalar());
    report.l_dice = double(l_dice.scalar());
    report.total = double(total.scalar());
    return {total, report};
}

}  // namespace pointmesh
