#pragma once

// Minimal dense-tensor numerics with reverse-mode automatic differentiation.
//
// Tensors are row-major value arrays with an optional gradient slot. Every
// operation is eager; when a Graph is in scope and the result depends on a
// tensor that requires gradients, the operation records a backward closure
// on the tape. Graph::backward replays the tape in reverse creation order,
// accumulates gradients additively, and clears the tape.
//
// All reductions run in a fixed sequential order, so repeated forward passes
// with identical inputs are bit-identical. The scalar type is a template
// parameter: double for gradient checking and reproducibility-sensitive
// runs, float when training throughput matters.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <utility>

#include "pointmesh/common.hpp"

namespace pointmesh {

using Shape = std::vector<int>;

inline long shape_numel(const Shape& s) {
    long n = 1;
    for (int d : s) n *= d;
    return n;
}

/// Boolean attention/selection mask over a 2-D score matrix.
struct BoolMask {
    int rows = 0, cols = 0;
    std::vector<uint8_t> allowed;

    BoolMask() = default;
    BoolMask(int r, int c, bool fill = false)
        : rows(r), cols(c), allowed(size_t(r) * c, fill ? 1 : 0) {}

    bool at(int r, int c) const { return allowed[size_t(r) * cols + c] != 0; }
    void set(int r, int c, bool v) { allowed[size_t(r) * cols + c] = v ? 1 : 0; }
};

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until first accumulation
    bool requires_grad = false;

    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), T(0));
    }
};

template <typename T>
class Graph;

template <typename T>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), T(0), requires_grad);
    }

    static Tensor filled(Shape shape, T fill, bool requires_grad = false) {
        check_shape(shape);
        auto n = std::make_shared<TensorNode<T>>();
        n->value.assign(size_t(shape_numel(shape)), fill);
        n->shape = std::move(shape);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
        check_shape(shape);
        require(long(data.size()) == shape_numel(shape), "dim-error",
                "tensor data length " + std::to_string(data.size()) +
                    " does not match shape " + str_of_shape(shape));
        auto n = std::make_shared<TensorNode<T>>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor from_mat(const Mat& m, bool requires_grad = false) {
        std::vector<T> data(m.v.size());
        for (size_t i = 0; i < m.v.size(); ++i) data[i] = T(m.v[i]);
        return from({m.rows, m.cols}, std::move(data), requires_grad);
    }

    static Tensor from_volume(const Volume& vol, bool requires_grad = false) {
        std::vector<T> data(vol.v.size());
        for (size_t i = 0; i < vol.v.size(); ++i) data[i] = T(vol.v[i]);
        return from({vol.n, vol.h, vol.w}, std::move(data), requires_grad);
    }

    bool valid() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    int dim(int i) const { return n_->shape[size_t(i)]; }
    int ndim() const { return int(n_->shape.size()); }
    long size() const { return long(n_->value.size()); }

    const std::vector<T>& value() const { return n_->value; }
    std::vector<T>& value() { return n_->value; }
    const std::vector<T>& grad() const { return n_->grad; }
    bool has_grad() const { return !n_->grad.empty(); }
    bool requires_grad() const { return n_->requires_grad; }

    T scalar() const {
        require(size() == 1, "contract-error", "scalar() on non-scalar tensor");
        return n_->value[0];
    }

    void zero_grad() { n_->grad.clear(); }

    std::shared_ptr<TensorNode<T>> node() const { return n_; }

private:
    explicit Tensor(std::shared_ptr<TensorNode<T>> n) : n_(std::move(n)) {}

    static void check_shape(const Shape& s) {
        require(!s.empty(), "dim-error", "empty shape");
        for (int d : s)
            require(d > 0, "dim-error", "non-positive extent in shape " + str_of_shape(s));
    }

    std::shared_ptr<TensorNode<T>> n_;

    template <typename U>
    friend class Graph;
};

/// Tape of recorded operations. Constructing a Graph makes it the active
/// tape for the current thread; destruction restores the previous one.
template <typename T>
class Graph {
public:
    Graph() : prev_(current_) { current_ = this; }
    ~Graph() { current_ = prev_; }

    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    static Graph* current() { return current_; }

    void record(std::function<void()> backward_fn) { ops_.push_back(std::move(backward_fn)); }

    size_t node_count() const { return ops_.size(); }

    /// Seeds d(loss)/d(loss) = 1, sweeps the tape in reverse creation order
    /// and accumulates gradients into every requires_grad tensor reached.
    /// The tape is cleared afterwards; gradients persist until zero_grad.
    void backward(const Tensor<T>& loss) {
        require(loss.size() == 1, "contract-error",
                "backward needs a scalar loss, got shape " + str_of_shape(loss.shape()));
        auto node = loss.node();
        node->ensure_grad();
        node->grad[0] += T(1);
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
        ops_.clear();
    }

private:
    std::vector<std::function<void()>> ops_;
    Graph* prev_ = nullptr;
    static inline thread_local Graph* current_ = nullptr;
};

namespace detail {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// C = op(A) * op(B), optionally accumulating into C. Single-threaded Eigen
/// product: deterministic for fixed inputs.
template <typename T>
void gemm(bool ta, bool tb, int m, int n, int k, const T* a, const T* b, T* c,
          bool accumulate) {
    Eigen::Map<const EMat<T>> ma(a, ta ? k : m, ta ? m : k);
    Eigen::Map<const EMat<T>> mb(b, tb ? n : k, tb ? k : n);
    Eigen::Map<EMat<T>> mc(c, m, n);
    if (ta && tb) {
        if (accumulate) mc.noalias() += ma.transpose() * mb.transpose();
        else            mc.noalias() = ma.transpose() * mb.transpose();
    } else if (ta) {
        if (accumulate) mc.noalias() += ma.transpose() * mb;
        else            mc.noalias() = ma.transpose() * mb;
    } else if (tb) {
        if (accumulate) mc.noalias() += ma * mb.transpose();
        else            mc.noalias() = ma * mb.transpose();
    } else {
        if (accumulate) mc.noalias() += ma * mb;
        else            mc.noalias() = ma * mb;
    }
}

template <typename T>
bool recording(const Tensor<T>& out) {
    return out.requires_grad() && Graph<T>::current() != nullptr;
}

template <typename T, typename F>
void record(const Tensor<T>& out, F&& fn) {
    if (recording(out)) Graph<T>::current()->record(std::function<void()>(std::forward<F>(fn)));
}

template <typename T>
Tensor<T> make_out(Shape shape, bool requires_grad) {
    return Tensor<T>::zeros(std::move(shape), requires_grad);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Matrix products

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(0), "dim-error",
            "matmul shape mismatch: " + str_of_shape(a.shape()) + " x " +
                str_of_shape(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    auto out = detail::make_out<T>({m, n}, a.requires_grad() || b.requires_grad());
    detail::gemm<T>(false, false, m, n, k, a.value().data(), b.value().data(),
                    out.value().data(), false);
    detail::record(out, [an = a.node(), bn = b.node(), on = out.node(), m, n, k]() {
        if (on->grad.empty()) return;
        if (an->requires_grad) {
            an->ensure_grad();  // dA += dC * B^T
            detail::gemm<T>(false, true, m, k, n, on->grad.data(), bn->value.data(),
                            an->grad.data(), true);
        }
        if (bn->requires_grad) {
            bn->ensure_grad();  // dB += A^T * dC
            detail::gemm<T>(true, false, k, n, m, an->value.data(), on->grad.data(),
                            bn->grad.data(), true);
        }
    });
    return out;
}

/// a [m,k] times b [n,k] transposed -> [m,n]
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(1), "dim-error",
            "matmul_nt shape mismatch: " + str_of_shape(a.shape()) + " x " +
                str_of_shape(b.shape()) + "^T");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    auto out = detail::make_out<T>({m, n}, a.requires_grad() || b.requires_grad());
    detail::gemm<T>(false, true, m, n, k, a.value().data(), b.value().data(),
                    out.value().data(), false);
    detail::record(out, [an = a.node(), bn = b.node(), on = out.node(), m, n, k]() {
        if (on->grad.empty()) return;
        if (an->requires_grad) {
            an->ensure_grad();  // dA += dC * B
            detail::gemm<T>(false, false, m, k, n, on->grad.data(), bn->value.data(),
                            an->grad.data(), true);
        }
        if (bn->requires_grad) {
            bn->ensure_grad();  // dB += dC^T * A
            detail::gemm<T>(true, false, n, k, m, on->grad.data(), an->value.data(),
                            bn->grad.data(), true);
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.shape() == b.shape(), "dim-error",
            "add shape mismatch: " + str_of_shape(a.shape()) + " vs " +
                str_of_shape(b.shape()));
    auto out = detail::make_out<T>(a.shape(), a.requires_grad() || b.requires_grad());
    for (long i = 0; i < a.size(); ++i) out.value()[i] = a.value()[i] + b.value()[i];
    detail::record(out, [an = a.node(), bn = b.node(), on = out.node()]() {
        if (on->grad.empty()) return;
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += on->grad[i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.shape() == b.shape(), "dim-error",
            "sub shape mismatch: " + str_of_shape(a.shape()) + " vs " +
                str_of_shape(b.shape()));
    auto out = detail::make_out<T>(a.shape(), a.requires_grad() || b.requires_grad());
    for (long i = 0; i < a.size(); ++i) out.value()[i] = a.value()[i] - b.value()[i];
    detail::record(out, [an = a.node(), bn = b.node(), on = out.node()]() {
        if (on->grad.empty()) return;
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] -= on->grad[i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.shape() == b.shape(), "dim-error",
            "mul shape mismatch: " + str_of_shape(a.shape()) + " vs " +
                str_of_shape(b.shape()));
    auto out = detail::make_out<T>(a.shape(), a.requires_grad() || b.requires_grad());
    for (long i = 0; i < a.size(); ++i) out.value()[i] = a.value()[i] * b.value()[i];
    detail::record(out, [an = a.node(), bn = b.node(), on = out.node()]() {
        if (on->grad.empty()) return;
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < on->grad.size(); ++i)
                an->grad[i] += on->grad[i] * bn->value[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < on->grad.size(); ++i)
                bn->grad[i] += on->grad[i] * an->value[i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, double c) {
    auto out = detail::make_out<T>(a.shape(), a.requires_grad());
    const T tc = T(c);
    for (long i = 0; i < a.size(); ++i) out.value()[i] = a.value()[i] * tc;
    detail::record(out, [an = a.node(), on = out.node(), tc]() {
        if (on->grad.empty() || !an->requires_grad) return;
        an->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i] * tc;
    });
    return out;
}

/// x [..., D] plus bias [D], broadcast over leading dimensions.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b) {
    require(b.ndim() == 1 && x.dim(x.ndim() - 1) == b.dim(0), "dim-error",
            "add_bias: " + str_of_shape(x.shape()) + " + " + str_of_shape(b.shape()));
    const long d = b.dim(0), rows = x.size() / d;
    auto out = detail::make_out<T>(x.shape(), x.requires_grad() || b.requires_grad());
    for (long r = 0; r < rows; ++r)
        for (long j = 0; j < d; ++j)
            out.value()[r * d + j] = x.value()[r * d + j] + b.value()[j];
    detail::record(out, [xn = x.node(), bn = b.node(), on = out.node(), rows, d]() {
        if (on->grad.empty()) return;
        if (xn->requires_grad) {
            xn->ensure_grad();
            for (size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (long r = 0; r < rows; ++r)
                for (long j = 0; j < d; ++j) bn->grad[j] += on->grad[r * d + j];
        }
    });
    return out;
}

/// x [C, ...] plus per-channel bias [C], broadcast over trailing dimensions.
template <typename T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& b) {
    require(b.ndim() == 1 && x.dim(0) == b.dim(0), "dim-error",
            "add_channel_bias: " + str_of_shape(x.shape()) + " + " +
                str_of_shape(b.shape()));
    const long c = b.dim(0), inner = x.size() / c;
    auto out = detail::make_out<T>(x.shape(), x.requires_grad() || b.requires_grad());
    for (long ch = 0; ch < c; ++ch)
        for (long i = 0; i < inner; ++i)
            out.value()[ch * inner + i] = x.value()[ch * inner + i] + b.value()[ch];
    detail::record(out, [xn = x.node(), bn = b.node(), on = out.node(), c, inner]() {
        if (on->grad.empty()) return;
        if (xn->requires_grad) {
            xn->ensure_grad();
            for (size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (long ch = 0; ch < c; ++ch)
                for (long i = 0; i < inner; ++i) bn->grad[ch] += on->grad[ch * inner + i];
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Nonlinearities

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    auto out = detail::make_out<T>(x.shape(), x.requires_grad());
    for (long i = 0; i < x.size(); ++i) out.value()[i] = x.value()[i] > T(0) ? x.value()[i] : T(0);
    detail::record(out, [xn = x.node(), on = out.node()]() {
        if (on->grad.empty() || !xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i)
            if (xn->value[i] > T(0)) xn->grad[i] += on->grad[i];
    });
    return out;
}

/// Exact-erf GELU. Smooth everywhere, which keeps central finite differences
/// honest on end-to-end checks.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    auto out = detail::make_out<T>(x.shape(), x.requires_grad());
    const T inv_sqrt2 = T(0.70710678118654752440);
    for (long i = 0; i < x.size(); ++i) {
        T v = x.value()[i];
        out.value()[i] = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
    }
    detail::record(out, [xn = x.node(), on = out.node(), inv_sqrt2]() {
        if (on->grad.empty() || !xn->requires_grad) return;
        xn->ensure_grad();
        const T inv_sqrt2pi = T(0.39894228040143267794);
        for (size_t i = 0; i < on->grad.size(); ++i) {
            T v = xn->value[i];
            T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
            T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
            xn->grad[i] += on->grad[i] * (cdf + v * pdf);
        }
    });
    return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    auto out = detail::make_out<T>(x.shape(), x.requires_grad());
    for (long i = 0; i < x.size(); ++i) {
        T v = x.value()[i];
        if (v >= T(0)) {
            out.value()[i] = T(1) / (T(1) + std::exp(-v));
        } else {
            T e = std::exp(v);
            out.value()[i] = e / (T(1) + e);
        }
    }
    detail::record(out, [xn = x.node(), on = out.node()]() {
        if (on->grad.empty() || !xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i) {
            T y = on->value[i];
            xn->grad[i] += on->grad[i] * y * (T(1) - y);
        }
    });
    return out;
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
    auto out = detail::make_out<T>(x.shape(), x.requires_grad());
    for (long i = 0; i < x.size(); ++i) {
        T v = x.value()[i];
        out.value()[i] = std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v)));
    }
    detail::record(out, [xn = x.node(), on = out.node()]() {
        if (on->grad.empty() || !xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i) {
            T v = xn->value[i];
            T s = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                            : std::exp(v) / (T(1) + std::exp(v));
            xn->grad[i] += on->grad[i] * s;
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Normalization

/// Layer normalization over the last axis with affine gain/bias, eps 1e-5.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias) {
    const int d = x.dim(x.ndim() - 1);
    require(d > 0, "dim-error", "layer_norm on zero-length axis");
    require(gain.ndim() == 1 && gain.dim(0) == d && bias.ndim() == 1 && bias.dim(0) == d,
            "dim-error", "layer_norm affine params must have length " + std::to_string(d));
    const long rows = x.size() / d;
    constexpr double kEps = 1e-5;

    auto out = detail::make_out<T>(
        x.shape(), x.requires_grad() || gain.requires_grad() || bias.requires_grad());
    std::vector<T> xhat(static_cast<size_t>(x.size()));
    std::vector<T> inv_std(static_cast<size_t>(rows));
    for (long r = 0; r < rows; ++r) {
        const T* xr = x.value().data() + r * d;
        T mean = 0;
        for (int j = 0; j < d; ++j) mean += xr[j];
        mean /= T(d);
        T var = 0;
        for (int j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= T(d);
        T is = T(1) / std::sqrt(var + T(kEps));
        inv_std[size_t(r)] = is;
        for (int j = 0; j < d; ++j) {
            T h = (xr[j] - mean) * is;
            xhat[size_t(r * d + j)] = h;
            out.value()[r * d + j] = gain.value()[j] * h + bias.value()[j];
        }
    }
    detail::record(out, [xn = x.node(), gn = gain.node(), bn = bias.node(),
                         on = out.node(), xhat = std::move(xhat),
                         inv_std = std::move(inv_std), rows, d]() {
        if (on->grad.empty()) return;
        if (gn->requires_grad) gn->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        if (xn->requires_grad) xn->ensure_grad();
        for (long r = 0; r < rows; ++r) {
            const T* g = on->grad.data() + r * d;
            const T* h = xhat.data() + r * d;
            if (gn->requires_grad)
                for (int j = 0; j < d; ++j) gn->grad[j] += g[j] * h[j];
            if (bn->requires_grad)
                for (int j = 0; j < d; ++j) bn->grad[j] += g[j];
            if (xn->requires_grad) {
                // dxhat = g * gain; dx = is/d * (d*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
                T sum_dh = 0, sum_dh_h = 0;
                for (int j = 0; j < d; ++j) {
                    T dh = g[j] * gn->value[j];
                    sum_dh += dh;
                    sum_dh_h += dh * h[j];
                }
                T is = inv_std[size_t(r)];
                for (int j = 0; j < d; ++j) {
                    T dh = g[j] * gn->value[j];
                    xn->grad[r * d + j] += is / T(d) * (T(d) * dh - sum_dh - h[j] * sum_dh_h);
                }
            }
        }
    });
    return out;
}

/// Row-wise softmax over allowed entries only. Disallowed entries get exactly
/// zero probability; the stabilizing max is taken over allowed entries, so
/// masked garbage scores cannot produce NaN. Every row must allow at least
/// one entry.
template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& scores, const BoolMask& mask) {
    require(scores.ndim() == 2, "dim-error", "masked_softmax expects a 2-D score matrix");
    const int rows = scores.dim(0), cols = scores.dim(1);
    require(mask.rows == rows && mask.cols == cols, "dim-error",
            "mask size does not match scores " + str_of_shape(scores.shape()));

    auto out = detail::make_out<T>(scores.shape(), scores.requires_grad());
    for (int r = 0; r < rows; ++r) {
        const T* s = scores.value().data() + size_t(r) * cols;
        T* y = out.value().data() + size_t(r) * cols;
        T mx = 0;
        bool any = false;
        for (int c = 0; c < cols; ++c)
            if (mask.at(r, c)) {
                mx = any ? std::max(mx, s[c]) : s[c];
                any = true;
            }
        require(any, "contract-error",
                "masked_softmax row " + std::to_string(r) + " allows no entries");
        T denom = 0;
        for (int c = 0; c < cols; ++c)
            if (mask.at(r, c)) {
                y[c] = std::exp(s[c] - mx);
                denom += y[c];
            }
        for (int c = 0; c < cols; ++c) y[c] = mask.at(r, c) ? y[c] / denom : T(0);
    }
    detail::record(out, [sn = scores.node(), on = out.node(), mask, rows, cols]() {
        if (on->grad.empty() || !sn->requires_grad) return;
        sn->ensure_grad();
        for (int r = 0; r < rows; ++r) {
            const T* y = on->value.data() + size_t(r) * cols;
            const T* g = on->grad.data() + size_t(r) * cols;
            T dot = 0;
            for (int c = 0; c < cols; ++c)
                if (mask.at(r, c)) dot += g[c] * y[c];
            T* ds = sn->grad.data() + size_t(r) * cols;
            for (int c = 0; c < cols; ++c)
                if (mask.at(r, c)) ds[c] += y[c] * (g[c] - dot);
        }
    });
    return out;
}

/// Per-row normalization x_ij / max(sum_j x_ij, eps). With non-negative
/// inputs the rows of the result sum to 1 unless the whole row is ~0.
/// A row whose sum is exactly representable leaves entries untouched up to
/// the division, so a one-hot row normalizes to itself bit-for-bit.
template <typename T>
Tensor<T> row_normalize(const Tensor<T>& x, double eps) {
    require(x.ndim() == 2, "dim-error", "row_normalize expects a 2-D tensor");
    const int rows = x.dim(0), cols = x.dim(1);
    auto out = detail::make_out<T>(x.shape(), x.requires_grad());
    std::vector<T> denom(static_cast<size_t>(rows));
    for (int r = 0; r < rows; ++r) {
        const T* xr = x.value().data() + size_t(r) * cols;
        T s = 0;
        for (int c = 0; c < cols; ++c) s += xr[c];
        T d = std::max(s, T(eps));
        denom[size_t(r)] = d;
        T* y = out.value().data() + size_t(r) * cols;
        if (d == T(1)) {
            for (int c = 0; c < cols; ++c) y[c] = xr[c];
        } else {
            for (int c = 0; c < cols; ++c) y[c] = xr[c] / d;
        }
    }
    detail::record(out, [xn = x.node(), on = out.node(), denom = std::move(denom),
                         rows, cols, eps]() {
        if (on->grad.empty() || !xn->requires_grad) return;
        xn->ensure_grad();
        for (int r = 0; r < rows; ++r) {
            const T* y = on->value.data() + size_t(r) * cols;
            const T* g = on->grad.data() + size_t(r) * cols;
            const T* xv = xn->value.data() + size_t(r) * cols;
            T d = denom[size_t(r)];
            T* dx = xn->grad.data() + size_t(r) * cols;
            T s = 0;
            for (int c = 0; c < cols; ++c) s += xv[c];
            if (s >= T(eps)) {
                T dot = 0;
                for (int c = 0; c < cols; ++c) dot += g[c] * y[c];
                for (int c = 0; c < cols; ++c) dx[c] += (g[c] - dot) / d;
            } else {
                for (int c = 0; c < cols; ++c) dx[c] += g[c] / d;
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Convolution and spatial ops

namespace detail {

template <typename T>
void im2col(const T* x, int cin, int h, int w, int k, int stride, int pad, int oh, int ow,
            T* col) {
    // col is [cin*k*k, oh*ow]
    for (int ci = 0; ci < cin; ++ci)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                T* dst = col + ((size_t(ci) * k + ky) * k + kx) * oh * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    int iy = oy * stride + ky - pad;
                    for (int ox = 0; ox < ow; ++ox) {
                        int ix = ox * stride + kx - pad;
                        dst[oy * ow + ox] =
                            (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                ? x[(size_t(ci) * h + iy) * w + ix]
                                : T(0);
                    }
                }
            }
}

template <typename T>
void col2im_add(const T* col, int cin, int h, int w, int k, int stride, int pad, int oh,
                int ow, T* x) {
    for (int ci = 0; ci < cin; ++ci)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const T* src = col + ((size_t(ci) * k + ky) * k + kx) * oh * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < ow; ++ox) {
                        int ix = ox * stride + kx - pad;
                        if (ix < 0 || ix >= w) continue;
                        x[(size_t(ci) * h + iy) * w + ix] += src[oy * ow + ox];
                    }
                }
            }
}

}  // namespace detail

/// 2-D cross-correlation: x [Cin,H,W] with kernels [Cout,Cin,k,k].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernels, int stride, int pad) {
    require(x.ndim() == 3 && kernels.ndim() == 4, "dim-error",
            "conv2d expects x [Cin,H,W], kernels [Cout,Cin,k,k]; got " +
                str_of_shape(x.shape()) + " and " + str_of_shape(kernels.shape()));
    const int cin = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int cout = kernels.dim(0), k = kernels.dim(2);
    require(kernels.dim(1) == cin, "dim-error",
            "conv2d channel mismatch: input has " + std::to_string(cin) +
                ", kernels expect " + std::to_string(kernels.dim(1)));
    require(kernels.dim(3) == k && k % 2 == 1, "dim-error", "conv2d kernels must be square, odd");
    require(stride >= 1, "config-error", "conv2d stride must be >= 1");
    require((h + 2 * pad - k) % stride == 0 && (w + 2 * pad - k) % stride == 0,
            "config-error", "conv2d output size is not integral");
    const int oh = (h + 2 * pad - k) / stride + 1;
    const int ow = (w + 2 * pad - k) / stride + 1;

    std::vector<T> col(size_t(cin) * k * k * oh * ow);
    detail::im2col(x.value().data(), cin, h, w, k, stride, pad, oh, ow, col.data());

    auto out = detail::make_out<T>({cout, oh, ow},
                                   x.requires_grad() || kernels.requires_grad());
    detail::gemm<T>(false, false, cout, oh * ow, cin * k * k, kernels.value().data(),
                    col.data(), out.value().data(), false);

    detail::record(out, [xn = x.node(), kn = kernels.node(), on = out.node(),
                         col = std::move(col), cin, h, w, k, stride, pad, oh, ow,
                         cout]() {
        if (on->grad.empty()) return;
        if (kn->requires_grad) {
            kn->ensure_grad();  // dK += dOut * col^T
            detail::gemm<T>(false, true, cout, cin * k * k, oh * ow, on->grad.data(),
                            col.data(), kn->grad.data(), true);
        }
        if (xn->requires_grad) {
            xn->ensure_grad();
            std::vector<T> dcol(col.size());  // dcol = K^T * dOut
            detail::gemm<T>(true, false, cin * k * k, oh * ow, cout, kn->value.data(),
                            on->grad.data(), dcol.data(), false);
            detail::col2im_add(dcol.data(), cin, h, w, k, stride, pad, oh, ow,
                               xn->grad.data());
        }
    });
    return out;
}

/// Average pooling with square window = stride = factor.
template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, int factor) {
    require(x.ndim() == 3, "dim-error", "avg_pool2d expects [C,H,W]");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    require(factor >= 1 && h % factor == 0 && w % factor == 0, "config-error",
            "avg_pool2d factor must divide spatial dims");
    const int oh = h / factor, ow = w / factor;
    auto out = detail::make_out<T>({c, oh, ow}, x.requires_grad());
    const T inv = T(1) / T(factor * factor);
    for (int ch = 0; ch < c; ++ch)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                T s = 0;
                for (int dy = 0; dy < factor; ++dy)
                    for (int dx = 0; dx < factor; ++dx)
                        s += x.value()[(size_t(ch) * h + oy * factor + dy) * w +
                                       ox * factor + dx];
                out.value()[(size_t(ch) * oh + oy) * ow + ox] = s * inv;
            }
    detail::record(out, [xn = x.node(), on = out.node(), c, h, w, oh, ow, factor, inv]() {
        if (on->grad.empty() || !xn->requires_grad) return;
        xn->ensure_grad();
        for (int ch = 0; ch < c; ++ch)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    T g = on->grad[(size_t(ch) * oh + oy) * ow + ox] * inv;
                    for (int dy = 0; dy < factor; ++dy)
                        for (int dx = 0; dx < factor; ++dx)
                            xn->grad[(size_t(ch) * h + oy * factor + dy) * w +
                                     ox * factor + dx] += g;
                }
    });
    return out;
}

/// Nearest-neighbour 2x spatial upsampling.
template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x) {
    require(x.ndim() == 3, "dim-error", "upsample2x expects [C,H,W]");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    auto out = detail::make_out<T>({c, 2 * h, 2 * w}, x.requires_grad());
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < 2 * h; ++y)
            for (int xx = 0; xx < 2 * w; ++xx)
                out.value()[(size_t(ch) * 2 * h + y) * 2 * w + xx] =
                    x.value()[(size_t(ch) * h + y / 2) * w + xx / 2];
    detail::record(out, [xn = x.node(), on = out.node(), c, h, w]() {
        if (on->grad.empty() || !xn->requires_grad) return;
        xn->ensure_grad();
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < 2 * h; ++y)
                for (int xx = 0; xx < 2 * w; ++xx)
                    xn->grad[(size_t(ch) * h + y / 2) * w + xx / 2] +=
                        on->grad[(size_t(ch) * 2 * h + y) * 2 * w + xx];
    });
    return out;
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    require(shape_numel(shape) == x.size(), "dim-error",
            "reshape " + str_of_shape(x.shape()) + " -> " + str_of_shape(shape) +
                " changes element count");
    auto out = Tensor<T>::from(std::move(shape), x.value(), x.requires_grad());
    detail::record(out, [xn = x.node(), on = out.node()]() {
        if (on->grad.empty() || !xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
    });
    return out;
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& x) {
    require(x.ndim() == 2, "dim-error", "transpose2d expects a 2-D tensor");
    const int r = x.dim(0), c = x.dim(1);
    auto out = detail::make_out<T>({c, r}, x.requires_grad());
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
            out.value()[size_t(j) * r + i] = x.value()[size_t(i) * c + j];
    detail::record(out, [xn = x.node(), on = out.node(), r, c]() {
        if (on->grad.empty() || !xn->requires_grad) return;
        xn->ensure_grad();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j)
                xn->grad[size_t(i) * c + j] += on->grad[size_t(j) * r + i];
    });
    return out;
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
    require(!parts.empty(), "dim-error", "concat_rows of nothing");
    const int cols = parts[0].dim(1);
    int rows = 0;
    bool rg = false;
    for (const auto& p : parts) {
        require(p.ndim() == 2 && p.dim(1) == cols, "dim-error",
                "concat_rows column mismatch");
        rows += p.dim(0);
        rg = rg || p.requires_grad();
    }
    auto out = detail::make_out<T>({rows, cols}, rg);
    long off = 0;
    for (const auto& p : parts) {
        std::copy(p.value().begin(), p.value().end(), out.value().begin() + off);
        off += p.size();
    }
    std::vector<std::shared_ptr<TensorNode<T>>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    detail::record(out, [nodes = std::move(nodes), on = out.node()]() {
        if (on->grad.empty()) return;
        long off = 0;
        for (auto& n : nodes) {
            if (n->requires_grad) {
                n->ensure_grad();
                for (size_t i = 0; i < n->value.size(); ++i)
                    n->grad[i] += on->grad[size_t(off) + i];
            }
            off += long(n->value.size());
        }
    });
    return out;
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, int r0, int r1) {
    require(x.ndim() == 2 && 0 <= r0 && r0 < r1 && r1 <= x.dim(0), "dim-error",
            "slice_rows range invalid");
    const int c = x.dim(1);
    auto out = detail::make_out<T>({r1 - r0, c}, x.requires_grad());
    std::copy(x.value().begin() + size_t(r0) * c, x.value().begin() + size_t(r1) * c,
              out.value().begin());
    detail::record(out, [xn = x.node(), on = out.node(), r0, c]() {
        if (on->grad.empty() || !xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i)
            xn->grad[size_t(r0) * c + i] += on->grad[i];
    });
    return out;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, int c0, int c1) {
    require(x.ndim() == 2 && 0 <= c0 && c0 < c1 && c1 <= x.dim(1), "dim-error",
            "slice_cols range invalid");
    const int r = x.dim(0), c = x.dim(1), oc = c1 - c0;
    auto out = detail::make_out<T>({r, oc}, x.requires_grad());
    for (int i = 0; i < r; ++i)
        std::copy(x.value().begin() + size_t(i) * c + c0,
                  x.value().begin() + size_t(i) * c + c1,
                  out.value().begin() + size_t(i) * oc);
    detail::record(out, [xn = x.node(), on = out.node(), r, c, c0, oc]() {
        if (on->grad.empty() || !xn->requires_grad) return;
        xn->ensure_grad();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < oc; ++j)
                xn->grad[size_t(i) * c + c0 + j] += on->grad[size_t(i) * oc + j];
    });
    return out;
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
    require(!parts.empty(), "dim-error", "concat_cols of nothing");
    const int rows = parts[0].dim(0);
    int cols = 0;
    bool rg = false;
    for (const auto& p : parts) {
        require(p.ndim() == 2 && p.dim(0) == rows, "dim-error", "concat_cols row mismatch");
        cols += p.dim(1);
        rg = rg || p.requires_grad();
    }
    auto out = detail::make_out<T>({rows, cols}, rg);
    int off = 0;
    for (const auto& p : parts) {
        const int pc = p.dim(1);
        for (int i = 0; i < rows; ++i)
            std::copy(p.value().begin() + size_t(i) * pc,
                      p.value().begin() + size_t(i + 1) * pc,
                      out.value().begin() + size_t(i) * cols + off);
        off += pc;
    }
    std::vector<std::shared_ptr<TensorNode<T>>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    detail::record(out, [nodes = std::move(nodes), on = out.node(), rows, cols]() {
        if (on->grad.empty()) return;
        int off = 0;
        for (auto& n : nodes) {
            const int pc = n->shape[1];
            if (n->requires_grad) {
                n->ensure_grad();
                for (int i = 0; i < rows; ++i)
                    for (int j = 0; j < pc; ++j)
                        n->grad[size_t(i) * pc + j] += on->grad[size_t(i) * cols + off + j];
            }
            off += pc;
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
    auto out = detail::make_out<T>({1}, x.requires_grad());
    T s = 0;
    for (long i = 0; i < x.size(); ++i) s += x.value()[i];
    out.value()[0] = s;
    detail::record(out, [xn = x.node(), on = out.node()]() {
        if (on->grad.empty() || !xn->requires_grad) return;
        xn->ensure_grad();
        T g = on->grad[0];
        for (size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += g;
    });
    return out;
}

/// Mean over rows of a 2-D tensor -> [1, cols].
template <typename T>
Tensor<T> mean_rows(const Tensor<T>& x) {
    require(x.ndim() == 2, "dim-error", "mean_rows expects a 2-D tensor");
    const int r = x.dim(0), c = x.dim(1);
    auto out = detail::make_out<T>({1, c}, x.requires_grad());
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.value()[j] += x.value()[size_t(i) * c + j];
    for (int j = 0; j < c; ++j) out.value()[j] /= T(r);
    detail::record(out, [xn = x.node(), on = out.node(), r, c]() {
        if (on->grad.empty() || !xn->requires_grad) return;
        xn->ensure_grad();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) xn->grad[size_t(i) * c + j] += on->grad[j] / T(r);
    });
    return out;
}

/// total = sum_i weights[i] * terms[i] over scalar terms.
template <typename T>
Tensor<T> weighted_sum(const std::vector<Tensor<T>>& terms, const std::vector<double>& weights) {
    require(terms.size() == weights.size() && !terms.empty(), "config-error",
            "weighted_sum needs matching, non-empty terms and weights");
    bool rg = false;
    for (const auto& t : terms) {
        require(t.size() == 1, "contract-error", "weighted_sum terms must be scalars");
        rg = rg || t.requires_grad();
    }
    for (double w : weights)
        require(w >= 0.0, "config-error", "loss weights must be non-negative");
    auto out = detail::make_out<T>({1}, rg);
    T s = 0;
    for (size_t i = 0; i < terms.size(); ++i) s += T(weights[i]) * terms[i].value()[0];
    out.value()[0] = s;
    std::vector<std::shared_ptr<TensorNode<T>>> nodes;
    for (const auto& t : terms) nodes.push_back(t.node());
    detail::record(out, [nodes = std::move(nodes), weights, on = out.node()]() {
        if (on->grad.empty()) return;
        for (size_t i = 0; i < nodes.size(); ++i)
            if (nodes[i]->requires_grad) {
                nodes[i]->ensure_grad();
                nodes[i]->grad[0] += on->grad[0] * T(weights[i]);
            }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Camera ops

/// Maps a raw 3-vector to weak-perspective parameters: softplus on the scale
/// slot keeps s positive, translations pass through.
template <typename T>
Tensor<T> make_camera(const Tensor<T>& raw) {
    require(raw.ndim() == 2 && raw.dim(0) == 1 && raw.dim(1) == 3, "dim-error",
            "make_camera expects a [1,3] tensor");
    auto out = detail::make_out<T>({1, 3}, raw.requires_grad());
    T v = raw.value()[0];
    out.value()[0] = std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v)));
    out.value()[1] = raw.value()[1];
    out.value()[2] = raw.value()[2];
    detail::record(out, [rn = raw.node(), on = out.node()]() {
        if (on->grad.empty() || !rn->requires_grad) return;
        rn->ensure_grad();
        T v = rn->value[0];
        T s = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
        rn->grad[0] += on->grad[0] * s;
        rn->grad[1] += on->grad[1];
        rn->grad[2] += on->grad[2];
    });
    return out;
}

/// Weak-perspective projection (x, y) = s * (X, Y) + (t_x, t_y).
template <typename T>
Tensor<T> project_2d(const Tensor<T>& points, const Tensor<T>& camera) {
    require(points.ndim() == 2 && points.dim(1) == 3, "dim-error",
            "project_2d expects points [n,3]");
    require(camera.ndim() == 2 && camera.dim(0) == 1 && camera.dim(1) == 3, "dim-error",
            "project_2d expects camera [1,3]");
    const int n = points.dim(0);
    auto out = detail::make_out<T>({n, 2}, points.requires_grad() || camera.requires_grad());
    const T s = camera.value()[0], tx = camera.value()[1], ty = camera.value()[2];
    for (int i = 0; i < n; ++i) {
        out.value()[size_t(i) * 2 + 0] = s * points.value()[size_t(i) * 3 + 0] + tx;
        out.value()[size_t(i) * 2 + 1] = s * points.value()[size_t(i) * 3 + 1] + ty;
    }
    detail::record(out, [pn = points.node(), cn = camera.node(), on = out.node(), n]() {
        if (on->grad.empty()) return;
        const T s = cn->value[0];
        if (pn->requires_grad) {
            pn->ensure_grad();
            for (int i = 0; i < n; ++i) {
                pn->grad[size_t(i) * 3 + 0] += on->grad[size_t(i) * 2 + 0] * s;
                pn->grad[size_t(i) * 3 + 1] += on->grad[size_t(i) * 2 + 1] * s;
            }
        }
        if (cn->requires_grad) {
            cn->ensure_grad();
            for (int i = 0; i < n; ++i) {
                T gx = on->grad[size_t(i) * 2 + 0], gy = on->grad[size_t(i) * 2 + 1];
                cn->grad[0] += gx * pn->value[size_t(i) * 3 + 0] +
                               gy * pn->value[size_t(i) * 3 + 1];
                cn->grad[1] += gx;
                cn->grad[2] += gy;
            }
        }
    });
    return out;
}

}  // namespace pointmesh
