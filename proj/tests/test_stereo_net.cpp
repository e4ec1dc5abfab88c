#include <doctest.h>

#include <cmath>

#include "nk/random.hpp"
#include "stereopose/errors.hpp"
#include "stereopose/gradcheck.hpp"
#include "stereopose/stereo_net.hpp"

using namespace stereopose;
using namespace stereopose::net;
using nk::Graph;
using nk::Rng;
using nk::Tensor;
using nk::Var;

namespace {

TSCAConfig tiny_config() {
    TSCAConfig cfg;
    cfg.channels = 4;
    cfg.d_max = 8;  // with 64x64 inputs the deepest regularizer level keeps 4 voxels
    cfg.gru_iters = 2;
    cfg.motion_channels = 4;
    cfg.lookup_radius = 2;
    cfg.vol_channels = {2, 3, 4};
    return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("stereo_network");

TEST_CASE("context_net produces the 1/4, 1/8, 1/16 pyramid") {
    Rng rng(91);
    TSCAConfig cfg = tiny_config();
    TscaParams params = TscaParams::init(cfg, 1, rng);
    Graph g;
    ParamBinder b(g);
    TscaVars v = bind_params(b, params);

    Tensor img = rng.uniform_tensor({1, 64, 64}, 0, 1);
    auto ctx = context_net(g.input(img), v);
    CHECK(g.val(ctx[0]).shape() == nk::Shape{cfg.channels, 16, 16});
    CHECK(g.val(ctx[1]).shape() == nk::Shape{cfg.channels, 8, 8});
    CHECK(g.val(ctx[2]).shape() == nk::Shape{cfg.channels, 4, 4});
    for (const Var& t : ctx) CHECK(g.val(t).all_finite());

    Tensor odd = rng.uniform_tensor({1, 48, 40}, 0, 1);
    CHECK_THROWS_AS(context_net(g.input(odd), v), DegenerateInputError);
}

TEST_CASE("disabling TA reduces the context net to the plain residual pyramid") {
    Rng rng(92);
    TSCAConfig cfg = tiny_config();
    TscaParams with_ta = TscaParams::init(cfg, 1, rng);
    TscaParams plain = with_ta;
    plain.cfg.use_ta = false;

    Tensor img = rng.uniform_tensor({1, 32, 32}, 0, 1);

    Graph g;
    ParamBinder b(g);
    TscaVars v = bind_params(b, plain);
    auto ctx = context_net(g.input(img), v);

    // Straight-line re-composition: stem, then per scale down + residual block.
    Var x = nk::relu(conv2d_bias(g.input(img), v.ctx_stem, 2, 1));
    for (int i = 0; i < 3; ++i) {
        x = nk::relu(conv2d_bias(x, v.ctx[static_cast<size_t>(i)].down, 2, 1));
        Var r = nk::relu(conv2d_bias_same(x, v.ctx[static_cast<size_t>(i)].res_a));
        x = nk::relu(nk::add(conv2d_bias_same(r, v.ctx[static_cast<size_t>(i)].res_b), x));
        const Tensor& got = g.val(ctx[static_cast<size_t>(i)]);
        const Tensor& want = g.val(x);
        REQUIRE(got.shape() == want.shape());
        for (int64_t j = 0; j < got.size(); ++j) CHECK(got[j] == want[j]);
    }

    // Parameter lists shrink when the switches are off (ablation parity).
    std::vector<std::string> names_on, names_off;
    with_ta.for_each([&](const std::string& n, Tensor&) { names_on.push_back(n); });
    plain.for_each([&](const std::string& n, Tensor&) { names_off.push_back(n); });
    CHECK(names_off.size() < names_on.size());
}

TEST_CASE("correlation volume: zero-disparity and constructed-shift argmax") {
    Rng rng(93);
    const int C = 4, H = 8, W = 16, d_max = 6;
    Tensor fl = rng.normal_tensor({C, H, W});

    {
        Graph g;
        Var vol = correlation_volume(g.input(fl), g.input(fl), d_max);
        const Tensor& v = g.val(vol);
        CHECK(v.shape() == nk::Shape{1, d_max, H, W});
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                int arg = 0;
                for (int d = 1; d < d_max; ++d) {
                    if (v.at({0, d, y, x}) > v.at({0, arg, y, x})) arg = d;
                }
                CHECK(arg == 0);  // cosine similarity peaks at the true shift
                CHECK(v.at({0, 0, y, x}) == doctest::Approx(1.0).epsilon(1e-6));
            }
        }
    }
    {
        const int shift = 3;
        Tensor fr({C, H, W});
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    fr.at({c, y, x}) = x + shift < W ? fl.at({c, y, x + shift}) : rng.normal();
                }
        Graph g;
        const Tensor& v = g.val(correlation_volume(g.input(fl), g.input(fr), d_max));
        for (int y = 0; y < H; ++y) {
            for (int x = shift; x < W - shift; ++x) {  // interior pixels
                int arg = 0;
                for (int d = 1; d < d_max; ++d) {
                    if (v.at({0, d, y, x}) > v.at({0, arg, y, x})) arg = d;
                }
                CHECK(arg == shift);
            }
        }
    }
    {
        Graph g;
        Var narrow = g.input(Tensor({C, H, 4}));
        CHECK_THROWS_AS(correlation_volume(narrow, narrow, 6), DegenerateInputError);
    }
}

TEST_CASE("regularizer keeps volume extents and feeds every parameter") {
    Rng rng(94);
    TSCAConfig cfg = tiny_config();
    for (bool use_seca : {true, false}) {
        cfg.use_seca = use_seca;
        TscaParams params = TscaParams::init(cfg, 1, rng);
        Graph g;
        ParamBinder b(g);
        TscaVars v = bind_params(b, params);
        Tensor vol = rng.normal_tensor({1, 8, 16, 16});
        Var cg = regularize(g.input(vol), v);
        const Tensor& vo = g.val(cg);
        CHECK(vo.extent(1) == 8);
        CHECK(vo.extent(2) == 16);
        CHECK(vo.extent(3) == 16);
        CHECK(vo.all_finite());

        // Random scalar loss reaches every encoder/decoder parameter.
        Rng lr(95);
        Tensor w(vo.shape());
        for (int64_t i = 0; i < w.size(); ++i) w[i] = lr.normal();
        g.backward(nk::sum_all(nk::mul(cg, g.input(w))));
        for (const auto& e : b.entries) {
            if (e.name.rfind("reg.", 0) != 0 || e.name.rfind("reg.head", 0) == 0) continue;
            CHECK_MESSAGE(g.grad(e.var).max_abs() > 0.0, e.name);
        }

        Graph g2;
        ParamBinder b2(g2);
        TscaVars v2 = bind_params(b2, params);
        CHECK_THROWS_AS(regularize(g2.input(Tensor({1, 6, 8, 8})), v2), DegenerateInputError);
        (void)v2;
    }
}

TEST_CASE("soft-argmax disparity") {
    Graph g;
    const int D = 8, H = 3, W = 4;
    {
        Tensor vol({D, H, W}, 0.0);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) vol.at({5, y, x}) = 60.0;  // sharp one-hot
        const Tensor& d = g.val(soft_argmax_disparity(g.input(vol)));
        for (int64_t i = 0; i < d.size(); ++i) CHECK(d[i] == doctest::Approx(5.0).epsilon(1e-9));
    }
    {
        Tensor uniform({D, H, W}, 0.7);
        const Tensor& d = g.val(soft_argmax_disparity(g.input(uniform)));
        for (int64_t i = 0; i < d.size(); ++i) CHECK(d[i] == doctest::Approx((D - 1) / 2.0).epsilon(1e-12));
    }
    {
        Rng rng(96);
        Tensor vol = rng.normal_tensor({D, H, W});
        const Tensor& d = g.val(soft_argmax_disparity(g.input(vol)));
        // Explicit weighted-sum oracle.
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                double mx = -1e300;
                for (int k = 0; k < D; ++k) mx = std::max(mx, vol.at({k, y, x}));
                double z = 0.0, acc = 0.0;
                for (int k = 0; k < D; ++k) z += std::exp(vol.at({k, y, x}) - mx);
                for (int k = 0; k < D; ++k) acc += k * std::exp(vol.at({k, y, x}) - mx) / z;
                CHECK(d.at({y, x}) == doctest::Approx(acc).epsilon(1e-12));
                CHECK(d.at({y, x}) >= 0.0);
                CHECK(d.at({y, x}) <= D - 1.0);
            }
        }
        // Softmax shift invariance: adding a constant leaves the result unchanged.
        Tensor shifted = vol;
        for (int64_t i = 0; i < shifted.size(); ++i) shifted[i] += 11.5;
        const Tensor& d2 = g.val(soft_argmax_disparity(g.input(shifted)));
        for (int64_t i = 0; i < d.size(); ++i) CHECK(d2[i] == doctest::Approx(d[i]).epsilon(1e-12));
    }
}

TEST_CASE("convgru step: bounded hidden, forced-zero update gate, finite iterates") {
    Rng rng(97);
    TSCAConfig cfg = tiny_config();
    TscaParams params = TscaParams::init(cfg, 1, rng);

    auto run_steps = [&](TscaParams& p, int steps) {
        Graph g;
        ParamBinder b(g);
        TscaVars v = bind_params(b, p);
        Tensor img = rng.uniform_tensor({1, 64, 64}, 0, 1);
        auto ctx = context_net(g.input(img), v);
        Tensor vol = rng.normal_tensor({cfg.d_max, 16, 16});
        Var c_head = g.input(vol);
        Tensor disp({16, 16}, 2.0);
        GruState state = init_gru_state(ctx, v);
        std::vector<Tensor> hiddens;
        std::vector<Tensor> deltas;
        for (int k = 0; k < steps; ++k) {
            GruStepOut out = convgru_step(state, ctx, c_head, disp, v);
            for (const Var& h : out.state.hidden) hiddens.push_back(g.val(h));
            deltas.push_back(g.val(out.delta));
            state = out.state;
        }
        return std::make_pair(hiddens, deltas);
    };

    auto [hiddens, deltas] = run_steps(params, 3);
    for (const Tensor& h : hiddens) {
        CHECK(h.all_finite());
        for (int64_t i = 0; i < h.size(); ++i) {
            CHECK(h[i] > -1.0);
            CHECK(h[i] < 1.0);
        }
    }
    for (const Tensor& d : deltas) CHECK(d.all_finite());

    // Forcing the update gate to zero freezes the hidden state.
    TscaParams frozen = params;
    for (auto& gp : frozen.gru) {
        for (int64_t i = 0; i < gp.z.k.size(); ++i) gp.z.k[i] = 0.0;
        for (int64_t i = 0; i < gp.z.b.size(); ++i) gp.z.b[i] = -50.0;  // sigmoid -> ~0
    }
    {
        Graph g;
        ParamBinder b(g);
        TscaVars v = bind_params(b, frozen);
        Tensor img = rng.uniform_tensor({1, 64, 64}, 0, 1);
        auto ctx = context_net(g.input(img), v);
        GruState state = init_gru_state(ctx, v);
        Tensor disp({16, 16}, 1.0);
        GruStepOut out = convgru_step(state, ctx, g.input(rng.normal_tensor({cfg.d_max, 16, 16})), disp, v);
        for (int s = 0; s < 3; ++s) {
            const Tensor& before = g.val(state.hidden[static_cast<size_t>(s)]);
            const Tensor& after = g.val(out.state.hidden[static_cast<size_t>(s)]);
            for (int64_t i = 0; i < before.size(); ++i) {
                CHECK(after[i] == doctest::Approx(before[i]).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("tsca_forward iterate count, bounds, and gradient reachability") {
    Rng rng(98);
    TSCAConfig cfg = tiny_config();
    TscaParams params = TscaParams::init(cfg, 1, rng);
    Tensor left = rng.uniform_tensor({1, 64, 64}, 0, 1);
    Tensor right = rng.uniform_tensor({1, 64, 64}, 0, 1);

    Graph g;
    ParamBinder b(g);
    TscaVars v = bind_params(b, params);
    TscaForward f = tsca_forward_graph(g, left, right, v);
    CHECK(static_cast<int>(f.full_res.size()) == cfg.gru_iters + 1);
    for (const Var& it : f.full_res) {
        const Tensor& d = g.val(it);
        CHECK(d.shape() == nk::Shape{64, 64});
        for (int64_t i = 0; i < d.size(); ++i) {
            CHECK(d[i] >= 0.0);
            CHECK(d[i] <= cfg.full_res_max_disparity());
        }
    }

    Tensor gt({64, 64}, 3.0);
    Tensor valid({64, 64}, 1.0);
    Var loss = sequence_loss_graph(f.full_res, gt, valid, cfg.gamma);
    g.backward(loss);
    for (const auto& e : b.entries) {
        CHECK_MESSAGE(g.grad(e.var).max_abs() > 0.0, e.name);
    }

    CHECK_THROWS_AS(tsca_forward_graph(g, Tensor({1, 24, 24}), Tensor({1, 24, 24}), v), DegenerateInputError);
}

TEST_CASE("sequence loss forms") {
    Rng rng(99);
    Graph g;
    Tensor gt = rng.uniform_tensor({4, 4}, 0, 5);
    Tensor valid({4, 4}, 1.0);
    valid[3] = 0.0;

    // Exact iterates give zero loss.
    std::vector<Var> exact{g.input(gt), g.input(gt)};
    CHECK(g.val(sequence_loss_graph(exact, gt, valid, 0.9))[0] == 0.0);

    // Single iterate with gamma=1 is the masked L1 mean.
    Tensor pred = rng.uniform_tensor({4, 4}, 0, 5);
    double l1 = 0.0, n = 0.0;
    for (int64_t i = 0; i < 16; ++i) {
        if (valid[i] > 0.5) {
            l1 += std::fabs(pred[i] - gt[i]);
            n += 1.0;
        }
    }
    l1 /= n;
    CHECK(g.val(sequence_loss_graph({g.input(pred)}, gt, valid, 1.0))[0] == doctest::Approx(l1).epsilon(1e-14));

    // Three iterates against a hand-summed oracle.
    std::vector<Tensor> preds{rng.uniform_tensor({4, 4}, 0, 5), rng.uniform_tensor({4, 4}, 0, 5),
                              rng.uniform_tensor({4, 4}, 0, 5)};
    const double gamma = 0.8;
    double want = 0.0;
    for (int k = 0; k < 3; ++k) {
        double acc = 0.0;
        for (int64_t i = 0; i < 16; ++i) {
            if (valid[i] > 0.5) acc += std::fabs(preds[static_cast<size_t>(k)][i] - gt[i]);
        }
        want += std::pow(gamma, 2 - k) * acc / n;
    }
    std::vector<Var> vars{g.input(preds[0]), g.input(preds[1]), g.input(preds[2])};
    CHECK(g.val(sequence_loss_graph(vars, gt, valid, gamma))[0] == doctest::Approx(want).epsilon(1e-13));

    CHECK_THROWS_AS(sequence_loss_graph(vars, gt, Tensor({4, 4}, 0.0), 0.9), DegenerateInputError);
    CHECK_THROWS_AS(sequence_loss_graph(vars, gt, valid, 0.0), DegenerateInputError);
}

TEST_CASE("train_toy short run: loss drops and reruns are bit-identical") {
    Rng rng(100);
    TSCAConfig cfg = tiny_config();
    auto data = make_toy_planes(2, 64, 1, 555, 6);

    TscaParams params = TscaParams::init(cfg, 1, rng);
    LrSchedule sched;
    sched.lr = 3e-3;
    TrainLog log = train_toy(data, params, 40, 0, sched);
    REQUIRE(log.loss.size() == 40);
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 8; ++i) {
        head += log.loss[static_cast<size_t>(i)];
        tail += log.loss[log.loss.size() - 1 - static_cast<size_t>(i)];
    }
    CHECK(tail < head);

    Rng rng2(100);
    TscaParams params2 = TscaParams::init(cfg, 1, rng2);
    TrainLog log2 = train_toy(data, params2, 40, 0, sched);
    CHECK(log.loss == log2.loss);  // bit-identical loss curve
}

TEST_CASE("cyclic learning-rate schedule spans the configured range") {
    LrSchedule s;
    s.kind = LrSchedule::Kind::cyclic;
    s.lr_low = 1e-5;
    s.lr_high = 1e-3;
    s.cycles = 3;
    double lo = 1e9, hi = -1e9;
    for (int t = 0; t < 600; ++t) {
        const double lr = s.at(t, 600);
        lo = std::min(lo, lr);
        hi = std::max(hi, lr);
        CHECK(lr >= 1e-5 - 1e-12);
        CHECK(lr <= 1e-3 + 1e-12);
    }
    CHECK(lo == doctest::Approx(1e-5).epsilon(0.05));
    CHECK(hi == doctest::Approx(1e-3).epsilon(0.05));
}

TEST_SUITE_END();
