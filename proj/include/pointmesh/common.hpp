#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pointmesh {

/// Error with a short machine-parsable code ("dim-error", "config-error", ...).
/// The CLI maps these to single-line diagnostics and a nonzero exit.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& msg)
        : std::runtime_error(msg), code_(std::move(code)) {}
    const std::string& code() const { return code_; }

private:
    std::string code_;
};

[[noreturn]] inline void fail(const char* code, const std::string& msg) {
    throw Error(code, msg);
}

inline void require(bool ok, const char* code, const std::string& msg) {
    if (!ok) fail(code, msg);
}

// ---------------------------------------------------------------------------
// Small fixed-size vector math used by the mesh / data-generation side.

struct Vec3 {
    double x = 0, y = 0, z = 0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }

    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double norm() const { return std::sqrt(dot(*this)); }
    Vec3 normalized() const {
        double n = norm();
        return n > 0 ? Vec3{x / n, y / n, z / n} : Vec3{};
    }
};

/// Dense row-major matrix of doubles. The non-differentiable side of the
/// project (topology, ground truth, metrics) works in these.
struct Mat {
    int rows = 0, cols = 0;
    std::vector<double> v;

    Mat() = default;
    Mat(int r, int c, double fill = 0.0) : rows(r), cols(c), v(size_t(r) * c, fill) {}

    double& at(int r, int c) { return v[size_t(r) * cols + c]; }
    double at(int r, int c) const { return v[size_t(r) * cols + c]; }

    Vec3 row3(int r) const { return {at(r, 0), at(r, 1), at(r, 2)}; }
    void set_row3(int r, const Vec3& p) { at(r, 0) = p.x; at(r, 1) = p.y; at(r, 2) = p.z; }
};

inline Mat matmul(const Mat& a, const Mat& b) {
    require(a.cols == b.rows, "dim-error", "Mat product inner mismatch");
    Mat c(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i)
        for (int k = 0; k < a.cols; ++k) {
            double aik = a.at(i, k);
            if (aik == 0.0) continue;
            for (int j = 0; j < b.cols; ++j) c.at(i, j) += aik * b.at(k, j);
        }
    return c;
}

/// Stack of n equally sized 2-D maps (e.g. per-vertex heatmaps), row-major.
struct Volume {
    int n = 0, h = 0, w = 0;
    std::vector<double> v;

    Volume() = default;
    Volume(int n_, int h_, int w_, double fill = 0.0)
        : n(n_), h(h_), w(w_), v(size_t(n_) * h_ * w_, fill) {}

    double& at(int i, int y, int x) { return v[(size_t(i) * h + y) * w + x]; }
    double at(int i, int y, int x) const { return v[(size_t(i) * h + y) * w + x]; }
};

/// Row-major 3x3 matrix for rigid-transform plumbing.
struct Mat3 {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    static Mat3 identity() { return Mat3{}; }

    Vec3 apply(const Vec3& p) const {
        return {m[0] * p.x + m[1] * p.y + m[2] * p.z,
                m[3] * p.x + m[4] * p.y + m[5] * p.z,
                m[6] * p.x + m[7] * p.y + m[8] * p.z};
    }

    Mat3 mul(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double s = 0;
                for (int k = 0; k < 3; ++k) s += m[size_t(i * 3 + k)] * o.m[size_t(k * 3 + j)];
                r.m[size_t(i * 3 + j)] = s;
            }
        return r;
    }
};

/// Rodrigues rotation from an axis-angle vector. A zero vector yields the
/// exact identity, so a rest pose reproduces rest geometry bit-for-bit.
inline Mat3 axis_angle_matrix(const Vec3& aa) {
    double theta = aa.norm();
    if (theta < 1e-300) return Mat3::identity();
    Vec3 k = aa * (1.0 / theta);
    double c = std::cos(theta), s = std::sin(theta), ic = 1.0 - c;
    Mat3 r;
    r.m = {c + k.x * k.x * ic,       k.x * k.y * ic - k.z * s, k.x * k.z * ic + k.y * s,
           k.y * k.x * ic + k.z * s, c + k.y * k.y * ic,       k.y * k.z * ic - k.x * s,
           k.z * k.x * ic - k.y * s, k.z * k.y * ic + k.x * s, c + k.z * k.z * ic};
    return r;
}

/// Weak-perspective camera: (x, y) = s * (X, Y) + (t_x, t_y), depth kept as Z.
struct Camera {
    double s = 1.0, tx = 0.0, ty = 0.0;

    std::pair<double, double> project(const Vec3& p) const {
        return {s * p.x + tx, s * p.y + ty};
    }

    Mat project_points(const Mat& pts) const {
        Mat out(pts.rows, 2);
        for (int i = 0; i < pts.rows; ++i) {
            auto [x, y] = project(pts.row3(i));
            out.at(i, 0) = x;
            out.at(i, 1) = y;
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// Deterministic RNG. The uniform draw is hand-rolled from the raw 64-bit
// stream so sequences do not depend on the standard library's distribution
// implementations.

struct Rng {
    std::mt19937_64 gen;

    explicit Rng(uint64_t seed) : gen(seed) {}

    double uniform() { return double(gen() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    int uniform_int(int lo, int hi) {  // inclusive bounds
        return lo + int(gen() % uint64_t(hi - lo + 1));
    }
};

inline std::string str_of_shape(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

}  // namespace pointmesh
