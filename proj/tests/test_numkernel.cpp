#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "nk/adam.hpp"
#include "nk/graph.hpp"
#include "nk/io.hpp"
#include "nk/ops.hpp"
#include "nk/random.hpp"
#include "stereopose/gradcheck.hpp"

using nk::Graph;
using nk::Rng;
using nk::Shape;
using nk::Tensor;
using nk::Var;

namespace {

// Oracle: triple-loop matmul, accumulation over p ascending (matches the
// library's summation order, so comparisons can be exact).
Tensor matmul_oracle(const Tensor& a, const Tensor& b) {
    const int m = a.extent(0), k = a.extent(1), n = b.extent(1);
    Tensor c({m, n}, 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            for (int p = 0; p < k; ++p) c.at({i, j}) += a.at({i, p}) * b.at({p, j});
    return c;
}

// Oracle: naive nested-loop conv3d with (cin, kd, kh, kw) accumulation order.
Tensor conv3d_oracle(const Tensor& x, const Tensor& k, std::array<int, 3> stride, std::array<int, 3> pad,
                     int groups) {
    const int D = x.extent(1), H = x.extent(2), W = x.extent(3);
    const int cout = k.extent(0), ckg = k.extent(1), kd = k.extent(2), kh = k.extent(3), kw = k.extent(4);
    const int od = (D + 2 * pad[0] - kd) / stride[0] + 1;
    const int oh = (H + 2 * pad[1] - kh) / stride[1] + 1;
    const int ow = (W + 2 * pad[2] - kw) / stride[2] + 1;
    const int cog = cout / groups;
    Tensor out({cout, od, oh, ow}, 0.0);
    for (int co = 0; co < cout; ++co) {
        const int g = co / cog;
        for (int zd = 0; zd < od; ++zd)
            for (int zh = 0; zh < oh; ++zh)
                for (int zw = 0; zw < ow; ++zw) {
                    double acc = 0.0;
                    for (int ci = 0; ci < ckg; ++ci)
                        for (int a = 0; a < kd; ++a)
                            for (int b = 0; b < kh; ++b)
                                for (int c = 0; c < kw; ++c) {
                                    const int sd = zd * stride[0] - pad[0] + a;
                                    const int sh = zh * stride[1] - pad[1] + b;
                                    const int sw = zw * stride[2] - pad[2] + c;
                                    if (sd < 0 || sd >= D || sh < 0 || sh >= H || sw < 0 || sw >= W) continue;
                                    acc += x.at({g * ckg + ci, sd, sh, sw}) * k.at({co, ci, a, b, c});
                                }
                    out.at({co, zd, zh, zw}) = acc;
                }
    }
    return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.shape() == b.shape());
    double m = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_SUITE_BEGIN("numkernel");

TEST_CASE("matmul identity and 1x1") {
    Graph g;
    Rng rng(7);
    Tensor m = rng.uniform_tensor({3, 3}, -1, 1);
    Tensor eye({3, 3}, 0.0);
    for (int i = 0; i < 3; ++i) eye.at({i, i}) = 1.0;
    Var vm = g.input(m);
    Var ve = g.input(eye);
    CHECK(max_abs_diff(g.val(nk::matmul(ve, vm)), m) == 0.0);

    Var a = g.input(Tensor::from({1, 1}, {2.0}));
    Var b = g.input(Tensor::from({1, 1}, {3.0}));
    CHECK(g.val(nk::matmul(a, b))[0] == 6.0);
}

TEST_CASE("matmul matches triple-loop oracle") {
    Rng rng(11);
    Tensor a = rng.uniform_tensor({5, 4}, -2, 2);
    Tensor b = rng.uniform_tensor({4, 3}, -2, 2);
    Graph g;
    Tensor got = g.val(nk::matmul(g.input(a), g.input(b)));
    CHECK(max_abs_diff(got, matmul_oracle(a, b)) < 1e-12);
}

TEST_CASE("matmul shape mismatch throws") {
    Graph g;
    Var a = g.input(Tensor({2, 3}));
    Var b = g.input(Tensor({2, 3}));
    CHECK_THROWS_AS(nk::matmul(a, b), std::invalid_argument);
}

TEST_CASE("softmax basics") {
    Graph g;
    Tensor sym = g.val(nk::softmax(g.input(Tensor::from({2}, {0.0, 0.0})), 0));
    CHECK(sym[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(sym[1] == doctest::Approx(0.5).epsilon(1e-15));

    // Large magnitudes must not overflow thanks to max subtraction.
    Tensor hot = g.val(nk::softmax(g.input(Tensor::from({2}, {1000.0, 0.0})), 0));
    CHECK(hot[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(hot[1] < 1e-300);
    CHECK(hot.all_finite());
}

TEST_CASE("softmax matches extended-precision oracle and sums to one") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x = rng.uniform_tensor({4, 7}, -5, 5);
        Graph g;
        Tensor y = g.val(nk::softmax(g.input(x), 1));
        for (int i = 0; i < 4; ++i) {
            long double z = 0.0L;
            for (int j = 0; j < 7; ++j) z += expl(static_cast<long double>(x.at({i, j})));
            double row_sum = 0.0;
            for (int j = 0; j < 7; ++j) {
                const double want = static_cast<double>(expl(static_cast<long double>(x.at({i, j}))) / z);
                CHECK(std::fabs(y.at({i, j}) - want) < 1e-12);
                CHECK(y.at({i, j}) > 0.0);
                row_sum += y.at({i, j});
            }
            CHECK(std::fabs(row_sum - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("conv3d delta kernel is identity") {
    Rng rng(5);
    Tensor x = rng.uniform_tensor({2, 4, 4, 4}, -1, 1);
    Tensor k({2, 2, 3, 3, 3}, 0.0);
    k.at({0, 0, 1, 1, 1}) = 1.0;
    k.at({1, 1, 1, 1, 1}) = 1.0;
    Graph g;
    Tensor y = g.val(nk::conv3d_same(g.input(x), g.input(k)));
    CHECK(max_abs_diff(y, x) == 0.0);
}

TEST_CASE("conv3d all-ones kernel equals sliding-window sums") {
    Rng rng(6);
    Tensor x = rng.uniform_tensor({1, 5, 5, 5}, -1, 1);
    Tensor k({1, 1, 3, 3, 3}, 1.0);
    Graph g;
    Tensor y = g.val(nk::conv3d(g.input(x), g.input(k), {1, 1, 1}, {0, 0, 0}));
    Tensor want = conv3d_oracle(x, k, {1, 1, 1}, {0, 0, 0}, 1);
    CHECK(max_abs_diff(y, want) == 0.0);
}

TEST_CASE("conv3d equals naive oracle exactly on small shapes") {
    Rng rng(9);
    for (int trial = 0; trial < 4; ++trial) {
        Tensor x = rng.uniform_tensor({4, 6, 5, 7}, -1, 1);
        Tensor k = rng.uniform_tensor({6, 4, 3, 2, 3}, -1, 1);
        std::array<int, 3> stride{trial % 2 + 1, 1, 2};
        std::array<int, 3> pad{1, 0, 1};
        Graph g;
        Tensor y = g.val(nk::conv3d(g.input(x), g.input(k), stride, pad));
        CHECK(max_abs_diff(y, conv3d_oracle(x, k, stride, pad, 1)) == 0.0);
    }
}

TEST_CASE("grouped conv3d equals per-channel independent conv") {
    Rng rng(10);
    const int C = 3;
    Tensor x = rng.uniform_tensor({C, 4, 4, 4}, -1, 1);
    Tensor k = rng.uniform_tensor({C, 1, 3, 3, 3}, -1, 1);
    Graph g;
    Tensor grouped = g.val(nk::conv3d_same(g.input(x), g.input(k), C));
    for (int c = 0; c < C; ++c) {
        Tensor xc({1, 4, 4, 4});
        for (int i = 0; i < 64; ++i) xc[i] = x[c * 64 + i];
        Tensor kc({1, 1, 3, 3, 3});
        for (int i = 0; i < 27; ++i) kc[i] = k[c * 27 + i];
        Graph g2;
        Tensor yc = g2.val(nk::conv3d_same(g2.input(xc), g2.input(kc)));
        for (int i = 0; i < 64; ++i) CHECK(grouped[c * 64 + i] == yc[i]);
    }
}

TEST_CASE("conv3d rejects bad group counts") {
    Graph g;
    Var x = g.input(Tensor({4, 2, 2, 2}));
    Var k = g.input(Tensor({4, 2, 1, 1, 1}));
    CHECK_THROWS_AS(nk::conv3d(x, k, {1, 1, 1}, {0, 0, 0}, 3), std::invalid_argument);
}

TEST_CASE("layer_norm of constant vector is zero") {
    Graph g;
    Tensor y = g.val(nk::layer_norm(g.input(Tensor({6}, 3.25)), 0));
    for (int64_t i = 0; i < y.size(); ++i) CHECK(y[i] == 0.0);
}

TEST_CASE("silu at zero") {
    Graph g;
    CHECK(g.val(nk::silu(g.input(Tensor::scalar(0.0))))[0] == 0.0);
}

TEST_CASE("instance_norm output moments") {
    Rng rng(12);
    // Spread sigma=10 keeps the eps=1e-5 regularizer negligible against the
    // unit-variance target.
    Tensor x = rng.normal_tensor({3, 8, 8}, 0.0, 10.0);
    Graph g;
    Tensor y = g.val(nk::instance_norm(g.input(x)));
    for (int c = 0; c < 3; ++c) {
        double mu = 0.0, sq = 0.0;
        for (int i = 0; i < 64; ++i) {
            const double v = y[c * 64 + i];
            mu += v;
            sq += v * v;
        }
        mu /= 64.0;
        const double sd = std::sqrt(sq / 64.0 - mu * mu);
        CHECK(std::fabs(mu) < 1e-10);
        CHECK(std::fabs(sd - 1.0) < 1e-6);
    }
}

TEST_CASE("softmax rejects invalid axis") {
    Graph g;
    CHECK_THROWS_AS(nk::softmax(g.input(Tensor({3})), 2), std::invalid_argument);
}

TEST_CASE("backward of sum of squares is 2x") {
    Rng rng(13);
    Tensor x = rng.uniform_tensor({5}, -2, 2);
    Graph g;
    Var vx = g.param(x);
    g.backward(nk::sum_all(nk::square(vx)));
    const Tensor& gx = g.grad(vx);
    for (int i = 0; i < 5; ++i) CHECK(gx[i] == doctest::Approx(2.0 * x[i]).epsilon(1e-14));
}

TEST_CASE("backward rejects non-scalar root") {
    Graph g;
    Var v = g.param(Tensor({3}, 1.0));
    CHECK_THROWS_AS(g.backward(v), std::invalid_argument);
}

TEST_CASE("disconnected leaf gets zero gradient") {
    Graph g;
    Var a = g.param(Tensor({2}, 1.0));
    Var b = g.param(Tensor({2}, 2.0));
    g.backward(nk::sum_all(nk::square(a)));
    const Tensor& gb = g.grad(b);
    CHECK(gb[0] == 0.0);
    CHECK(gb[1] == 0.0);
}

TEST_CASE("matmul gradient matches finite differences") {
    Rng rng(14);
    Tensor a = rng.uniform_tensor({3, 4}, -1, 1);
    Tensor b = rng.uniform_tensor({4, 2}, -1, 1);
    auto rep = stereopose::gradcheck::fd_check([&](Graph&, stereopose::gradcheck::Binder& bd) {
        return nk::sum_all(nk::matmul(bd("a", a), bd("b", b)));
    });
    CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("elementwise and reduction gradients match finite differences") {
    Rng rng(15);
    Tensor x = rng.uniform_tensor({3, 5}, 0.2, 2.0);
    Tensor y = rng.uniform_tensor({1, 5}, 0.5, 1.5);  // exercises broadcasting
    auto rep = stereopose::gradcheck::fd_check([&](Graph&, stereopose::gradcheck::Binder& bd) {
        Var vx = bd("x", x);
        Var vy = bd("y", y);
        Var t = nk::mul(nk::add(vx, vy), nk::sigmoid(vx));
        t = nk::div(t, nk::add_scalar(nk::square(vy), 1.0));
        t = nk::add(nk::silu(t), nk::tanh_op(vx));
        t = nk::add(t, nk::sqrt_op(nk::add_scalar(nk::abs_op(vx), 1.0)));
        t = nk::add(t, nk::log_op(nk::add_scalar(nk::square(t), 1.0)));
        return nk::add(nk::sum_all(nk::mean(t, {1})), nk::sum_all(nk::max_reduce(t, {0})));
    });
    CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("adam zero gradient leaves parameters unchanged") {
    Tensor p = Tensor::from({3}, {1.0, -2.0, 0.5});
    const Tensor before = p;
    Tensor zero({3}, 0.0);
    nk::Adam opt({.lr = 0.1});
    opt.step({&p}, {&zero});
    CHECK(max_abs_diff(p, before) == 0.0);
}

TEST_CASE("adam first step magnitude is about lr for constant gradient") {
    Tensor p({4}, 0.0);
    Tensor grad = Tensor::from({4}, {3.0, -0.7, 12.0, 0.01});
    nk::Adam opt({.lr = 1e-2});
    opt.step({&p}, {&grad});
    for (int i = 0; i < 4; ++i) {
        CHECK(std::fabs(p[i]) == doctest::Approx(1e-2).epsilon(1e-4));
        CHECK(p[i] * grad[i] < 0.0);  // moves against the gradient
    }
}

TEST_CASE("adam minimizes a quadratic bowl") {
    Rng rng(16);
    Tensor target = rng.uniform_tensor({8}, -1, 1);
    Tensor p({8}, 0.0);
    nk::Adam opt({.lr = 1e-2});
    double f = 0.0;
    for (int step = 0; step < 2000; ++step) {
        Graph g;
        Var vp = g.param(p);
        Var loss = nk::sum_all(nk::square(nk::sub(vp, g.input(target))));
        f = g.val(loss)[0];
        g.backward(loss);
        const Tensor grad = g.grad(vp);
        opt.step({&p}, {&grad});
    }
    CHECK(f < 1e-6);
}

TEST_CASE("adam rejects non-positive learning rate") {
    CHECK_THROWS_AS(nk::Adam({.lr = 0.0}), std::invalid_argument);
}

TEST_CASE("ops are deterministic") {
    Rng rng(17);
    Tensor x = rng.uniform_tensor({3, 6, 6}, -1, 1);
    Tensor k = rng.uniform_tensor({4, 3, 3, 3}, -1, 1);
    auto run = [&]() {
        Graph g;
        Var y = nk::conv2d_same(g.input(x), g.input(k));
        y = nk::softmax(nk::reshape(y, {4, 36}), 1);
        return g.val(nk::sum_all(nk::instance_norm(nk::reshape(y, {4, 6, 6}))))[0];
    };
    const double a = run(), b = run();
    CHECK(std::memcmp(&a, &b, sizeof(double)) == 0);
}

TEST_CASE("structural op gradients match finite differences") {
    Rng rng(18);
    Tensor x = rng.uniform_tensor({2, 4, 6}, -1, 1);
    auto rep = stereopose::gradcheck::fd_check([&](Graph&, stereopose::gradcheck::Binder& bd) {
        Var vx = bd("x", x);
        Var a = nk::permute(vx, {2, 0, 1});
        Var b = nk::slice(vx, 2, 1, 3);
        Var c = nk::concat({b, b}, 1);
        Var d = nk::flip(vx, {1});
        Var e = nk::upsample_bilinear2d(vx, 2);
        Var f = nk::avg_pool2d(vx, 2);
        Var t = nk::add(nk::sum_all(a), nk::sum_all(nk::square(c)));
        t = nk::add(t, nk::sum_all(nk::mul(d, d)));
        t = nk::add(t, nk::mean_all(nk::square(e)));
        t = nk::add(t, nk::sum_all(nk::silu(f)));
        return t;
    });
    CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("tensor dump round trip") {
    Rng rng(19);
    Tensor t = rng.uniform_tensor({3, 4, 2}, -5, 5);
    const auto path = std::filesystem::temp_directory_path() / "nk_roundtrip.nkt";
    nk::write_tensor(path.string(), t);
    Tensor back = nk::read_tensor(path.string());
    CHECK(back.shape() == t.shape());
    CHECK(max_abs_diff(back, t) == 0.0);
    std::filesystem::remove(path);
}

TEST_CASE("non-finite op results are rejected") {
    Graph g;
    Var x = g.input(Tensor::scalar(0.0));
    CHECK_THROWS_AS(nk::log_op(x), std::domain_error);
}

TEST_SUITE_END();
