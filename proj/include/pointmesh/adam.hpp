#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pointmesh/tensor.hpp"

namespace pointmesh {

/// Named trainable tensor. Models register their parameters into a ParamSet
/// so the optimizer and the checkpoint writer see stable names.
template <typename T>
struct NamedParam {
    std::string name;
    Tensor<T> tensor;
};

template <typename T>
using ParamSet = std::vector<NamedParam<T>>;

template <typename T>
struct AdamState {
    long step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double learning_rate = 1e-4;
    std::vector<std::vector<T>> first_moment;
    std::vector<std::vector<T>> second_moment;
};

/// Bias-corrected Adam over a fixed parameter list. Missing gradients are
/// treated as zero (moments keep decaying); non-finite gradients abort with
/// the offending parameter's name.
template <typename T>
class AdamOptimizer {
public:
    AdamOptimizer(ParamSet<T>* params, double learning_rate, double beta1 = 0.9,
                  double beta2 = 0.999, double epsilon = 1e-8)
        : params_(params) {
        require(learning_rate > 0, "config-error", "learning rate must be positive");
        state_.learning_rate = learning_rate;
        state_.beta1 = beta1;
        state_.beta2 = beta2;
        state_.epsilon = epsilon;
        for (auto& p : *params_) {
            state_.first_moment.emplace_back(p.tensor.size(), T(0));
            state_.second_moment.emplace_back(p.tensor.size(), T(0));
        }
    }

    void set_learning_rate(double lr) {
        require(lr > 0, "config-error", "learning rate must be positive");
        state_.learning_rate = lr;
    }
    double learning_rate() const { return state_.learning_rate; }
    long step_count() const { return state_.step; }
    const AdamState<T>& state() const { return state_; }

    void zero_grad() {
        for (auto& p : *params_) p.tensor.zero_grad();
    }

    void step() {
        state_.step += 1;
        const T b1 = T(state_.beta1), b2 = T(state_.beta2);
        const T corr1 = T(1) - T(std::pow(state_.beta1, double(state_.step)));
        const T corr2 = T(1) - T(std::pow(state_.beta2, double(state_.step)));
        const T lr = T(state_.learning_rate), eps = T(state_.epsilon);
        for (size_t pi = 0; pi < params_->size(); ++pi) {
            auto& p = (*params_)[pi];
            auto& m = state_.first_moment[pi];
            auto& v = state_.second_moment[pi];
            const std::vector<T>& g = p.tensor.grad();
            auto& w = p.tensor.value();
            for (size_t i = 0; i < w.size(); ++i) {
                T gi = g.empty() ? T(0) : g[i];
                if (!std::isfinite(double(gi)))
                    fail("optimizer-error", "non-finite gradient in parameter " + p.name);
                m[i] = b1 * m[i] + (T(1) - b1) * gi;
                v[i] = b2 * v[i] + (T(1) - b2) * gi * gi;
                T mhat = m[i] / corr1;
                T vhat = v[i] / corr2;
                w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }

private:
    ParamSet<T>* params_;
    AdamState<T> state_;
};

}  // namespace pointmesh
