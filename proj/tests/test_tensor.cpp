#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "pointmesh/adam.hpp"
#include "pointmesh/tensor.hpp"
#include "support/gradcheck.hpp"

using namespace pointmesh;

namespace {

Tensor<double> rnd(Shape s, Rng& rng, bool rg = true) {
    return gradcheck::random_tensor(std::move(s), rng, rg);
}

}  // namespace

TEST_CASE("matmul identity and zero") {
    Rng rng(1);
    auto m = rnd({3, 3}, rng, false);
    auto eye = Tensor<double>::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    auto prod = matmul(eye, m);
    for (int i = 0; i < 9; ++i) CHECK(prod.value()[i] == m.value()[i]);

    auto zero = Tensor<double>::zeros({4, 3});
    auto z = matmul(zero, m);
    for (double v : z.value()) CHECK(v == 0.0);
}

TEST_CASE("matmul gradient matches finite differences") {
    Rng rng(2);
    auto a = rnd({4, 5}, rng);
    auto b = rnd({5, 3}, rng);
    auto w = rnd({4, 3}, rng, false);
    gradcheck::check({a, b}, [&] { return gradcheck::weigh(matmul(a, b), w); }, 1e-6);
}

TEST_CASE("matmul_nt gradient matches finite differences") {
    Rng rng(3);
    auto a = rnd({4, 5}, rng);
    auto b = rnd({6, 5}, rng);
    auto w = rnd({4, 6}, rng, false);
    gradcheck::check({a, b}, [&] { return gradcheck::weigh(matmul_nt(a, b), w); }, 1e-6);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    auto a = Tensor<double>::zeros({2, 3});
    auto b = Tensor<double>::zeros({4, 2});
    try {
        matmul(a, b);
        FAIL("expected dimension error");
    } catch (const Error& e) {
        CHECK(e.code() == "dim-error");
        CHECK(std::string(e.what()).find("[2x3]") != std::string::npos);
        CHECK(std::string(e.what()).find("[4x2]") != std::string::npos);
    }
}

TEST_CASE("masked_softmax trivial masks") {
    const int t = 5;
    BoolMask all(t, t, true);
    auto scores = Tensor<double>::filled({t, t}, 0.7);
    auto p = masked_softmax(scores, all);
    for (double v : p.value()) CHECK(v == doctest::Approx(1.0 / t).epsilon(1e-12));

    BoolMask diag(t, t, false);
    for (int i = 0; i < t; ++i) diag.set(i, i, true);
    Rng rng(4);
    auto s2 = rnd({t, t}, rng, false);
    auto p2 = masked_softmax(s2, diag);
    for (int i = 0; i < t; ++i)
        for (int j = 0; j < t; ++j)
            CHECK(p2.value()[size_t(i) * t + j] == (i == j ? 1.0 : 0.0));
}

TEST_CASE("masked_softmax matches dense re-normalization oracle") {
    Rng rng(5);
    const int t = 6;
    for (int trial = 0; trial < 20; ++trial) {
        auto scores = rnd({t, t}, rng, false);
        BoolMask mask(t, t, false);
        for (int i = 0; i < t; ++i) {
            mask.set(i, i, true);  // keeps every row legal
            for (int j = 0; j < t; ++j)
                if (rng.uniform() < 0.5) mask.set(i, j, true);
        }
        auto p = masked_softmax(scores, mask);
        for (int i = 0; i < t; ++i) {
            // oracle: drop masked entries, softmax the rest, re-insert zeros
            std::vector<double> kept;
            for (int j = 0; j < t; ++j)
                if (mask.at(i, j)) kept.push_back(scores.value()[size_t(i) * t + j]);
            double mx = *std::max_element(kept.begin(), kept.end());
            double denom = 0;
            for (double v : kept) denom += std::exp(v - mx);
            size_t ki = 0;
            double row_sum = 0;
            for (int j = 0; j < t; ++j) {
                double got = p.value()[size_t(i) * t + j];
                row_sum += got;
                if (mask.at(i, j)) {
                    double want = std::exp(kept[ki++] - mx) / denom;
                    CHECK(got == doctest::Approx(want).epsilon(1e-12));
                } else {
                    CHECK(got == 0.0);
                }
            }
            CHECK(std::abs(row_sum - 1.0) <= 1e-6);
        }
    }
}

TEST_CASE("masked_softmax rejects an all-false row") {
    BoolMask mask(2, 2, false);
    mask.set(0, 0, true);
    auto scores = Tensor<double>::zeros({2, 2});
    CHECK_THROWS_AS(masked_softmax(scores, mask), Error);
}

TEST_CASE("masked_softmax gradient matches finite differences") {
    Rng rng(6);
    const int t = 6;
    auto scores = rnd({t, t}, rng);
    BoolMask mask(t, t, false);
    for (int i = 0; i < t; ++i) {
        mask.set(i, i, true);
        for (int j = 0; j < t; ++j)
            if (rng.uniform() < 0.5) mask.set(i, j, true);
    }
    auto w = rnd({t, t}, rng, false);
    gradcheck::check({scores}, [&] { return gradcheck::weigh(masked_softmax(scores, mask), w); },
                     1e-5);
}

TEST_CASE("layer_norm constant input yields bias") {
    auto x = Tensor<double>::filled({2, 4}, 3.25);
    auto gain = Tensor<double>::filled({4}, 1.7);
    auto bias = Tensor<double>::from({4}, {0.1, -0.2, 0.3, -0.4});
    auto y = layer_norm(x, gain, bias);
    for (int r = 0; r < 2; ++r)
        for (int j = 0; j < 4; ++j)
            CHECK(y.value()[size_t(r) * 4 + j] == doctest::Approx(bias.value()[j]).epsilon(1e-9));
}

TEST_CASE("layer_norm normalizes mean and variance") {
    auto x = Tensor<double>::from({1, 3}, {1, 2, 3});
    auto gain = Tensor<double>::filled({3}, 1.0);
    auto bias = Tensor<double>::zeros({3});
    auto y = layer_norm(x, gain, bias);
    double mean = (y.value()[0] + y.value()[1] + y.value()[2]) / 3.0;
    double var = 0;
    for (double v : y.value()) var += (v - mean) * (v - mean);
    var /= 3.0;
    CHECK(std::abs(mean) <= 1e-5);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("layer_norm gradient matches finite differences") {
    Rng rng(7);
    auto x = rnd({2, 4}, rng);
    auto gain = rnd({4}, rng);
    auto bias = rnd({4}, rng);
    auto w = rnd({2, 4}, rng, false);
    gradcheck::check({x, gain, bias},
                     [&] { return gradcheck::weigh(layer_norm(x, gain, bias), w); }, 1e-5);
}

TEST_CASE("conv2d 1x1 unit kernel is the identity per channel") {
    Rng rng(8);
    auto x = rnd({2, 4, 4}, rng, false);
    auto k = Tensor<double>::zeros({2, 2, 1, 1});
    k.value()[0 * 2 + 0] = 1.0;  // out0 <- in0
    k.value()[1 * 2 + 1] = 1.0;  // out1 <- in1
    auto y = conv2d(x, k, 1, 0);
    CHECK(y.shape() == Shape{2, 4, 4});
    for (size_t i = 0; i < x.value().size(); ++i) CHECK(y.value()[i] == x.value()[i]);
}

TEST_CASE("conv2d delta kernel shifts the image") {
    auto x = Tensor<double>::zeros({1, 4, 4});
    for (int i = 0; i < 16; ++i) x.value()[i] = i + 1;
    auto k = Tensor<double>::zeros({1, 1, 3, 3});
    // single 1 at (ky=0, kx=1) with pad 1: out(y, x) = in(y-1, x)
    k.value()[0 * 3 + 1] = 1.0;
    auto y = conv2d(x, k, 1, 1);
    for (int yy = 0; yy < 4; ++yy)
        for (int xx = 0; xx < 4; ++xx) {
            double want = yy >= 1 ? x.value()[(yy - 1) * 4 + xx] : 0.0;
            CHECK(y.value()[yy * 4 + xx] == want);
        }
}

TEST_CASE("conv2d gradients match finite differences") {
    Rng rng(9);
    auto x = rnd({2, 5, 5}, rng);
    auto k = rnd({3, 2, 3, 3}, rng);
    auto w = rnd({3, 5, 5}, rng, false);
    gradcheck::check({x, k}, [&] { return gradcheck::weigh(conv2d(x, k, 1, 1), w); }, 1e-5);

    auto w2 = rnd({3, 3, 3}, rng, false);
    gradcheck::check({x, k}, [&] { return gradcheck::weigh(conv2d(x, k, 2, 1), w2); }, 1e-5);
}

TEST_CASE("conv2d rejects non-integral output size") {
    auto x = Tensor<double>::zeros({1, 6, 6});
    auto k = Tensor<double>::zeros({1, 1, 3, 3});
    CHECK_THROWS_AS(conv2d(x, k, 2, 0), Error);  // (6-3)/2 not integral
}

TEST_CASE("backward of sum gives ones, of sum of squares gives 2x") {
    Rng rng(10);
    auto x = rnd({3, 2}, rng);
    {
        Graph<double> g;
        auto loss = sum_all(x);
        g.backward(loss);
    }
    for (double v : x.grad()) CHECK(v == 1.0);
    x.zero_grad();
    {
        Graph<double> g;
        auto loss = sum_all(mul(x, x));
        g.backward(loss);
    }
    for (long i = 0; i < x.size(); ++i)
        CHECK(x.grad()[size_t(i)] == doctest::Approx(2 * x.value()[size_t(i)]).epsilon(1e-12));
}

TEST_CASE("backward rejects non-scalar loss") {
    Graph<double> g;
    auto x = Tensor<double>::zeros({2, 2}, true);
    auto y = add(x, x);
    CHECK_THROWS_AS(g.backward(y), Error);
}

TEST_CASE("gradient accumulation is additive across backward calls") {
    Rng rng(11);
    auto x = rnd({4}, rng);
    {
        Graph<double> g;
        g.backward(sum_all(mul(x, x)));
    }
    {
        Graph<double> g;
        g.backward(sum_all(x));
    }
    for (long i = 0; i < x.size(); ++i)
        CHECK(x.grad()[size_t(i)] ==
              doctest::Approx(2 * x.value()[size_t(i)] + 1.0).epsilon(1e-12));
}

TEST_CASE("forward is bit-identical across repeated runs") {
    Rng rng(12);
    auto x = rnd({3, 8}, rng);
    auto w = rnd({8, 8}, rng);
    auto gain = rnd({8}, rng);
    auto bias = rnd({8}, rng);
    auto run = [&] {
        auto h = relu(matmul(x, w));
        return layer_norm(h, gain, bias).value();
    };
    auto a = run();
    auto b = run();
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

TEST_CASE("row_normalize keeps one-hot rows bit-exact and is scale invariant") {
    auto h = Tensor<double>::zeros({2, 6});
    h.value()[3] = 1.0;
    h.value()[6 + 5] = 1.0;
    auto y = row_normalize(h, 1e-8);
    for (size_t i = 0; i < h.value().size(); ++i) CHECK(y.value()[i] == h.value()[i]);

    Rng rng(13);
    auto x = rnd({3, 10}, rng, true);
    for (auto& v : x.value()) v = std::abs(v) + 0.01;
    auto base = row_normalize(x, 1e-8);
    auto scaled_in = scale(x, 37.5);
    auto scaled = row_normalize(scaled_in, 1e-8);
    for (size_t i = 0; i < base.value().size(); ++i)
        CHECK(std::abs(base.value()[i] - scaled.value()[i]) <= 1e-6);
}

TEST_CASE("row_normalize gradient matches finite differences") {
    Rng rng(14);
    auto x = rnd({3, 5}, rng);
    for (auto& v : x.value()) v = std::abs(v) + 0.1;
    auto w = rnd({3, 5}, rng, false);
    gradcheck::check({x}, [&] { return gradcheck::weigh(row_normalize(x, 1e-8), w); }, 1e-5);
}

TEST_CASE("elementwise and shape op gradients match finite differences") {
    Rng rng(15);
    auto a = rnd({3, 4}, rng);
    auto b = rnd({3, 4}, rng);
    auto w = rnd({3, 4}, rng, false);
    gradcheck::check({a, b}, [&] { return gradcheck::weigh(mul(add(a, b), sub(a, b)), w); },
                     1e-5);

    auto bias = rnd({4}, rng);
    gradcheck::check({a, bias}, [&] { return gradcheck::weigh(add_bias(a, bias), w); }, 1e-6);

    auto x3 = rnd({2, 4, 4}, rng);
    auto cb = rnd({2}, rng);
    auto w3 = rnd({2, 4, 4}, rng, false);
    gradcheck::check({x3, cb}, [&] { return gradcheck::weigh(add_channel_bias(x3, cb), w3); },
                     1e-6);

    auto wp = rnd({2, 2, 2}, rng, false);
    gradcheck::check({x3}, [&] { return gradcheck::weigh(avg_pool2d(x3, 2), wp); }, 1e-6);

    auto wu = rnd({2, 8, 8}, rng, false);
    gradcheck::check({x3}, [&] { return gradcheck::weigh(upsample2x(x3), wu); }, 1e-6);

    auto wt = rnd({4, 3}, rng, false);
    gradcheck::check({a}, [&] { return gradcheck::weigh(transpose2d(a), wt); }, 1e-6);

    auto wr = rnd({2, 6}, rng, false);
    gradcheck::check({a}, [&] { return gradcheck::weigh(reshape(a, {2, 6}), wr); }, 1e-6);

    auto ws = rnd({2, 2}, rng, false);
    gradcheck::check(
        {a}, [&] { return gradcheck::weigh(slice_cols(slice_rows(a, 1, 3), 1, 3), ws); }, 1e-6);

    auto wc = rnd({6, 4}, rng, false);
    gradcheck::check({a, b},
                     [&] { return gradcheck::weigh(concat_rows<double>({a, b}), wc); }, 1e-6);

    auto wcc = rnd({3, 8}, rng, false);
    gradcheck::check({a, b},
                     [&] { return gradcheck::weigh(concat_cols<double>({a, b}), wcc); }, 1e-6);

    gradcheck::check({a}, [&] { return gradcheck::weigh(sigmoid(a), w); }, 1e-5);
    gradcheck::check({a}, [&] { return gradcheck::weigh(softplus(a), w); }, 1e-5);
    gradcheck::check({a}, [&] { return gradcheck::weigh(gelu(a), w); }, 1e-5);
    gradcheck::check({a}, [&] { return scale(sum_all(relu(a)), 0.5); }, 1e-5);

    auto wm = rnd({1, 4}, rng, false);
    gradcheck::check({a}, [&] { return gradcheck::weigh(mean_rows(a), wm); }, 1e-6);
}

TEST_CASE("projection ops: orthographic drop, scaling, gradients") {
    Rng rng(16);
    auto pts = rnd({5, 3}, rng);
    auto cam = Tensor<double>::from({1, 3}, {1.0, 0.0, 0.0}, false);
    auto p = project_2d(pts, cam);
    for (int i = 0; i < 5; ++i) {
        CHECK(p.value()[size_t(i) * 2 + 0] == pts.value()[size_t(i) * 3 + 0]);
        CHECK(p.value()[size_t(i) * 2 + 1] == pts.value()[size_t(i) * 3 + 1]);
    }

    auto cam2 = Tensor<double>::from({1, 3}, {2.0, 0.0, 0.0}, false);
    auto p2 = project_2d(pts, cam2);
    for (size_t i = 0; i < p.value().size(); ++i)
        CHECK(p2.value()[i] == doctest::Approx(2 * p.value()[i]).epsilon(1e-12));

    auto camg = rnd({1, 3}, rng);
    auto wp = rnd({5, 2}, rng, false);
    gradcheck::check({pts, camg},
                     [&] { return gradcheck::weigh(project_2d(pts, camg), wp); }, 1e-6);

    auto raw = rnd({1, 3}, rng);
    auto wc = rnd({1, 3}, rng, false);
    gradcheck::check({raw}, [&] { return gradcheck::weigh(make_camera(raw), wc); }, 1e-5);
    CHECK(make_camera(raw).value()[0] > 0.0);
}

TEST_CASE("weighted_sum combines scalars and rejects negative weights") {
    auto a = Tensor<double>::filled({1}, 2.0, true);
    auto b = Tensor<double>::filled({1}, 3.0, true);
    auto s = weighted_sum<double>({a, b}, {0.5, 2.0});
    CHECK(s.scalar() == doctest::Approx(7.0));
    CHECK_THROWS_AS(weighted_sum<double>({a, b}, {0.5, -1.0}), Error);

    Rng rng(17);
    auto x = gradcheck::random_tensor({3}, rng);
    gradcheck::check({x}, [&] {
        auto t1 = sum_all(mul(x, x));
        auto t2 = sum_all(x);
        return weighted_sum<double>({t1, t2}, {0.25, 1.5});
    });
}

TEST_CASE("adam: zero gradient leaves parameters unchanged, moments decay") {
    ParamSet<double> params;
    params.push_back({"p", Tensor<double>::from({3}, {1.0, -2.0, 0.5}, true)});
    auto before = params[0].tensor.value();
    AdamOptimizer<double> opt(&params, 0.1);
    // moments seeded away from zero, then fed zero gradients
    params[0].tensor.node()->ensure_grad();
    params[0].tensor.node()->grad = {0.0, 0.0, 0.0};
    opt.step();
    for (int i = 0; i < 3; ++i) CHECK(params[0].tensor.value()[i] == before[i]);
    CHECK(opt.step_count() == 1);
}

TEST_CASE("adam: one step on x^2 from x=1 decreases x") {
    ParamSet<double> params;
    params.push_back({"x", Tensor<double>::from({1}, {1.0}, true)});
    AdamOptimizer<double> opt(&params, 0.1);
    {
        Graph<double> g;
        auto loss = sum_all(mul(params[0].tensor, params[0].tensor));
        g.backward(loss);
    }
    opt.step();
    CHECK(params[0].tensor.value()[0] < 1.0);
    CHECK(params[0].tensor.value()[0] > 0.0);
}

TEST_CASE("adam: 200 steps on a convex quadratic reach small gradient") {
    ParamSet<double> params;
    params.push_back({"x", Tensor<double>::from({3}, {0.0, 0.0, 0.0}, true)});
    auto a = Tensor<double>::from({3}, {1.0, 2.0, 0.5});
    auto target = Tensor<double>::from({3}, {0.3, -0.4, 0.8});
    AdamOptimizer<double> opt(&params, 0.05);
    for (int it = 0; it < 200; ++it) {
        opt.zero_grad();
        Graph<double> g;
        auto d = sub(params[0].tensor, target);
        auto loss = scale(sum_all(mul(a, mul(d, d))), 0.5);
        g.backward(loss);
        opt.step();
    }
    // gradient at the end vs the closed-form minimum x* = target
    for (int i = 0; i < 3; ++i) {
        double grad_i = a.value()[i] * (params[0].tensor.value()[i] - target.value()[i]);
        CHECK(std::abs(grad_i) < 1e-3);
    }
}

TEST_CASE("adam: non-finite gradient reports the parameter name") {
    ParamSet<double> params;
    params.push_back({"enc0.q.w", Tensor<double>::from({1}, {1.0}, true)});
    AdamOptimizer<double> opt(&params, 0.1);
    params[0].tensor.node()->ensure_grad();
    params[0].tensor.node()->grad[0] = std::nan("");
    try {
        opt.step();
        FAIL("expected optimizer error");
    } catch (const Error& e) {
        CHECK(e.code() == "optimizer-error");
        CHECK(std::string(e.what()).find("enc0.q.w") != std::string::npos);
    }
}
