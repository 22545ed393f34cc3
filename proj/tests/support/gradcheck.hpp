#pragma once

// Central finite-difference oracle for gradient checks. The analytic path
// runs the computation under a Graph and calls backward; the reference path
// re-evaluates the forward value with each leaf entry nudged by +/- step.

#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "pointmesh/tensor.hpp"

namespace gradcheck {

inline double rel_err(double a, double b, double floor) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// make_loss must rebuild the scalar loss from the current leaf values on
/// every call. Leaves are perturbed in place between calls.
inline void check(std::vector<pointmesh::Tensor<double>> leaves,
                  const std::function<pointmesh::Tensor<double>()>& make_loss,
                  double tol = 1e-5, double step = 1e-5, double floor = 1e-8) {
    using namespace pointmesh;
    {
        Graph<double> g;
        auto loss = make_loss();
        g.backward(loss);
    }
    for (auto& leaf : leaves) {
        REQUIRE(leaf.requires_grad());
        std::vector<double> analytic = leaf.grad().empty()
                                           ? std::vector<double>(size_t(leaf.size()), 0.0)
                                           : leaf.grad();
        for (long i = 0; i < leaf.size(); ++i) {
            double orig = leaf.value()[size_t(i)];
            leaf.value()[size_t(i)] = orig + step;
            double fp = make_loss().scalar();
            leaf.value()[size_t(i)] = orig - step;
            double fm = make_loss().scalar();
            leaf.value()[size_t(i)] = orig;
            double fd = (fp - fm) / (2.0 * step);
            double err = rel_err(analytic[size_t(i)], fd, floor);
            if (err > tol) {
                CAPTURE(i);
                CAPTURE(analytic[size_t(i)]);
                CAPTURE(fd);
            }
            CHECK(err <= tol);
        }
        leaf.zero_grad();
    }
}

inline pointmesh::Tensor<double> random_tensor(pointmesh::Shape shape, pointmesh::Rng& rng,
                                               bool requires_grad = true, double lo = -1.0,
                                               double hi = 1.0) {
    std::vector<double> data(size_t(pointmesh::shape_numel(shape)));
    for (auto& v : data) v = rng.uniform(lo, hi);
    return pointmesh::Tensor<double>::from(std::move(shape), std::move(data), requires_grad);
}

/// Contracts an output tensor against fixed random weights so the gradient
/// check exercises the full Jacobian, not just its row sums.
inline pointmesh::Tensor<double> weigh(const pointmesh::Tensor<double>& out,
                                       const pointmesh::Tensor<double>& w) {
    return pointmesh::sum_all(pointmesh::mul(out, w));
}

}  // namespace gradcheck
