#include "stereopose/stereo_net.hpp"

#include <cmath>
#include <stdexcept>

#include "stereopose/errors.hpp"

namespace stereopose::net {

using namespace nk;

Conv2dParams Conv2dParams::init(int co, int ci, int kh, int kw, nk::Rng& rng) {
    Conv2dParams p;
    p.k = rng.normal_tensor({co, ci, kh, kw}, 0.0, std::sqrt(2.0 / (ci * kh * kw)));
    p.b = Tensor({co}, 0.0);
    return p;
}

Conv3dParams Conv3dParams::init(int co, int ci_g, int kd, int kh, int kw, nk::Rng& rng) {
    Conv3dParams p;
    p.k = rng.normal_tensor({co, ci_g, kd, kh, kw}, 0.0, std::sqrt(2.0 / (ci_g * kd * kh * kw)));
    p.b = Tensor({co}, 0.0);
    return p;
}

namespace {

constexpr int kTaKernel = 7;  // Triplet Attention branch kernel

int dec_concat_channels(const TSCAConfig& cfg, int level, int groups) {
    // Decoder level concat widths: up(c3)->c2 + skip c2, then -> c1 + c1,
    // then -> 2 + the raw volume groups.
    const auto& c = cfg.vol_channels;
    if (level == 0) return 2 * c[1];
    if (level == 1) return 2 * c[0];
    return 2 + groups;
}

}  // namespace

TscaParams TscaParams::init(const TSCAConfig& cfg, int in_channels, nk::Rng& rng) {
    if (cfg.channels < 2 || cfg.d_max < 1 || cfg.gru_iters < 1) {
        throw DegenerateInputError("tsca: invalid config (channels >= 2, d_max >= 1, iterations >= 1)");
    }
    TscaParams p;
    p.cfg = cfg;
    p.in_channels = in_channels;
    const int C = cfg.channels;

    p.feature[0] = Conv2dParams::init(C, in_channels, 3, 3, rng);
    p.feature[1] = Conv2dParams::init(C, C, 3, 3, rng);
    p.feature[2] = Conv2dParams::init(C, C, 3, 3, rng);
    p.feature[3] = Conv2dParams::init(C, C, 3, 3, rng);

    p.ctx_stem = Conv2dParams::init(C, in_channels, 3, 3, rng);
    for (auto& s : p.ctx) {
        s.down = Conv2dParams::init(C, C, 3, 3, rng);
        s.res.a = Conv2dParams::init(C, C, 3, 3, rng);
        s.res.b = Conv2dParams::init(C, C, 3, 3, rng);
        if (cfg.use_ta) s.ta = attn::TripletAttentionParams::init(kTaKernel, rng);
    }

    const auto& vc = cfg.vol_channels;
    const int g = cfg.corr_groups;
    const int enc_in[3] = {g, vc[0], vc[1]};
    const int enc_out[3] = {vc[0], vc[1], vc[2]};
    for (int i = 0; i < 3; ++i) {
        p.enc[static_cast<size_t>(i)].dw = Conv3dParams::init(enc_in[i], 1, 3, 3, 3, rng);
        p.enc[static_cast<size_t>(i)].pw = Conv3dParams::init(enc_out[i], enc_in[i], 1, 1, 1, rng);
        if (cfg.use_seca) p.enc[static_cast<size_t>(i)].seca = attn::SecaParams::init(enc_out[i], rng);
    }
    const int dec_in[3] = {vc[2], dec_concat_channels(cfg, 0, g), dec_concat_channels(cfg, 1, g)};
    const int dec_out[3] = {vc[1], vc[0], 2};
    for (int i = 0; i < 3; ++i) {
        p.dec[static_cast<size_t>(i)].up_k =
            rng.normal_tensor({dec_in[i], dec_out[i], 2, 2, 2}, 0.0, std::sqrt(2.0 / (dec_in[i] * 8)));
        p.dec[static_cast<size_t>(i)].up_b = Tensor({dec_out[i]}, 0.0);
        if (cfg.use_seca) {
            p.dec[static_cast<size_t>(i)].seca = attn::SecaParams::init(dec_concat_channels(cfg, i, g), rng);
        }
    }
    // The head reads the joint volume concat(C_G, C_corr). Start it sharply on
    // the raw cosine channels so the initial soft-argmax sits near their argmax.
    const int joint_ch = dec_concat_channels(cfg, 2, g) + g;
    p.vol_head = Conv3dParams::init(1, joint_ch, 1, 1, 1, rng);
    for (int64_t i = 0; i < p.vol_head.k.size(); ++i) p.vol_head.k[i] *= 0.1;
    for (int gi = 0; gi < g; ++gi) p.vol_head.k.at({0, joint_ch - g + gi, 0, 0, 0}) = 12.0;

    const int lk = 2 * cfg.lookup_radius + 2;  // lookup taps + disparity encoding
    p.motion = Conv2dParams::init(cfg.motion_channels, lk, 3, 3, rng);
    const int xin = C + cfg.motion_channels;
    for (auto& gp : p.gru) {
        gp.z = Conv2dParams::init(C, C + xin, 3, 3, rng);
        gp.r = Conv2dParams::init(C, C + xin, 3, 3, rng);
        gp.h = Conv2dParams::init(C, C + xin, 3, 3, rng);
    }
    p.head_a = Conv2dParams::init(cfg.motion_channels, 3 * C, 3, 3, rng);
    p.head_b = Conv2dParams::init(1, cfg.motion_channels, 3, 3, rng);
    for (int64_t i = 0; i < p.head_b.k.size(); ++i) p.head_b.k[i] *= 0.1;  // near-zero initial residuals
    return p;
}

void TscaParams::for_each(const ParamVisitor& fn) {
    auto conv = [&](const std::string& name, Conv2dParams& c) {
        fn(name + ".k", c.k);
        fn(name + ".b", c.b);
    };
    auto conv3 = [&](const std::string& name, Conv3dParams& c) {
        fn(name + ".k", c.k);
        fn(name + ".b", c.b);
    };
    for (int i = 0; i < 4; ++i) conv("feature." + std::to_string(i), feature[static_cast<size_t>(i)]);
    conv("ctx.stem", ctx_stem);
    for (int i = 0; i < 3; ++i) {
        auto& s = ctx[static_cast<size_t>(i)];
        const std::string base = "ctx." + std::to_string(i);
        conv(base + ".down", s.down);
        conv(base + ".res_a", s.res.a);
        conv(base + ".res_b", s.res.b);
        if (cfg.use_ta) s.ta.for_each(base + ".ta", fn);
    }
    for (int i = 0; i < 3; ++i) {
        auto& e = enc[static_cast<size_t>(i)];
        const std::string base = "reg.enc" + std::to_string(i);
        conv3(base + ".dw", e.dw);
        conv3(base + ".pw", e.pw);
        if (cfg.use_seca) e.seca.for_each(base + ".seca", fn);
    }
    for (int i = 0; i < 3; ++i) {
        auto& d = dec[static_cast<size_t>(i)];
        const std::string base = "reg.dec" + std::to_string(i);
        fn(base + ".up_k", d.up_k);
        fn(base + ".up_b", d.up_b);
        if (cfg.use_seca) d.seca.for_each(base + ".seca", fn);
    }
    conv3("reg.head", vol_head);
    conv("gru.motion", motion);
    for (int i = 0; i < 3; ++i) {
        auto& gp = gru[static_cast<size_t>(i)];
        const std::string base = "gru." + std::to_string(i);
        conv(base + ".z", gp.z);
        conv(base + ".r", gp.r);
        conv(base + ".h", gp.h);
    }
    conv("head.a", head_a);
    conv("head.b", head_b);
}

TscaVars bind_params(ParamBinder& b, TscaParams& p) {
    TscaVars v;
    v.cfg = p.cfg;
    v.in_channels = p.in_channels;
    auto conv = [&](const std::string& name, Conv2dParams& c) -> ConvVars {
        return {b(name + ".k", c.k), b(name + ".b", c.b)};
    };
    auto conv3 = [&](const std::string& name, Conv3dParams& c) -> ConvVars {
        return {b(name + ".k", c.k), b(name + ".b", c.b)};
    };
    for (int i = 0; i < 4; ++i) v.feature[static_cast<size_t>(i)] = conv("feature." + std::to_string(i), p.feature[static_cast<size_t>(i)]);
    v.ctx_stem = conv("ctx.stem", p.ctx_stem);
    for (int i = 0; i < 3; ++i) {
        const std::string base = "ctx." + std::to_string(i);
        auto& sp = p.ctx[static_cast<size_t>(i)];
        auto& sv = v.ctx[static_cast<size_t>(i)];
        sv.down = conv(base + ".down", sp.down);
        sv.res_a = conv(base + ".res_a", sp.res.a);
        sv.res_b = conv(base + ".res_b", sp.res.b);
        if (p.cfg.use_ta) sv.ta = attn::bind_params(b, sp.ta, base + ".ta");
    }
    for (int i = 0; i < 3; ++i) {
        const std::string base = "reg.enc" + std::to_string(i);
        auto& ep = p.enc[static_cast<size_t>(i)];
        auto& ev = v.enc[static_cast<size_t>(i)];
        ev.dw = conv3(base + ".dw", ep.dw);
        ev.pw = conv3(base + ".pw", ep.pw);
        if (p.cfg.use_seca) ev.seca = attn::bind_params(b, ep.seca, base + ".seca");
    }
    for (int i = 0; i < 3; ++i) {
        const std::string base = "reg.dec" + std::to_string(i);
        auto& dp = p.dec[static_cast<size_t>(i)];
        auto& dv = v.dec[static_cast<size_t>(i)];
        dv.up = {b(base + ".up_k", dp.up_k), b(base + ".up_b", dp.up_b)};
        if (p.cfg.use_seca) dv.seca = attn::bind_params(b, dp.seca, base + ".seca");
    }
    v.vol_head = conv3("reg.head", p.vol_head);
    v.motion = conv("gru.motion", p.motion);
    for (int i = 0; i < 3; ++i) {
        const std::string base = "gru." + std::to_string(i);
        auto& gp = p.gru[static_cast<size_t>(i)];
        auto& gv = v.gru[static_cast<size_t>(i)];
        gv.z = conv(base + ".z", gp.z);
        gv.r = conv(base + ".r", gp.r);
        gv.h = conv(base + ".h", gp.h);
    }
    v.head_a = conv("head.a", p.head_a);
    v.head_b = conv("head.b", p.head_b);
    return v;
}

Var conv2d_bias(Var x, const ConvVars& c, int stride, int padding) {
    Graph& g = *x.graph;
    const int co = g.val(c.k).extent(0);
    return add(conv2d(x, c.k, stride, padding), reshape(c.b, {co, 1, 1}));
}

Var conv2d_bias_same(Var x, const ConvVars& c) {
    const int kh = x.graph->val(c.k).extent(2);
    return conv2d_bias(x, c, 1, kh / 2);
}

namespace {

Var conv3d_bias(Var x, const ConvVars& c, std::array<int, 3> stride, std::array<int, 3> pad, int groups = 1) {
    Graph& g = *x.graph;
    const int co = g.val(c.k).extent(0);
    return add(conv3d(x, c.k, stride, pad, groups), reshape(c.b, {co, 1, 1, 1}));
}

}  // namespace

Var feature_net(Var image, const TscaVars& v) {
    Var x = relu(conv2d_bias(image, v.feature[0], 2, 1));
    x = relu(conv2d_bias(x, v.feature[1], 2, 1));
    x = relu(conv2d_bias_same(x, v.feature[2]));
    return conv2d_bias_same(x, v.feature[3]);
}

std::array<Var, 3> context_net(Var image, const TscaVars& v) {
    Graph& g = *image.graph;
    const Tensor& vi = g.val(image);
    if (vi.extent(1) % 16 != 0 || vi.extent(2) % 16 != 0) {
        throw DegenerateInputError("context_net: image extents must be divisible by 16");
    }
    Var x = relu(conv2d_bias(image, v.ctx_stem, 2, 1));  // 1/2
    std::array<Var, 3> out;
    for (int i = 0; i < 3; ++i) {
        const auto& s = v.ctx[static_cast<size_t>(i)];
        x = relu(conv2d_bias(x, s.down, 2, 1));  // 1/4, 1/8, 1/16
        Var r = relu(conv2d_bias_same(x, s.res_a));
        x = relu(add(conv2d_bias_same(r, s.res_b), x));
        out[static_cast<size_t>(i)] = v.cfg.use_ta ? attn::triplet_attention(x, s.ta) : x;
    }
    return out;
}

Var correlation_volume(Var f_left, Var f_right, int d_max, int groups) {
    Graph& g = *f_left.graph;
    const Tensor& vl = g.val(f_left);
    const Tensor& vr = g.val(f_right);
    if (vl.shape() != vr.shape() || vl.rank() != 3) {
        throw DegenerateInputError("correlation_volume: feature maps must share [C,H,W]");
    }
    const int C = vl.extent(0), H = vl.extent(1), W = vl.extent(2);
    if (d_max > W) throw DegenerateInputError("correlation_volume: d_max exceeds feature width");
    if (groups < 1 || C % groups != 0) throw DegenerateInputError("correlation_volume: bad group count");
    const int cg = C / groups;
    const double eps = 1e-8;

    std::vector<Var> group_vols;
    for (int gi = 0; gi < groups; ++gi) {
        Var lg = groups == 1 ? f_left : slice(f_left, 0, gi * cg, cg);
        Var rg = groups == 1 ? f_right : slice(f_right, 0, gi * cg, cg);
        Var l_sq = sum(square(lg), {0}, true);  // [1,H,W]
        std::vector<Var> per_d;
        for (int d = 0; d < d_max; ++d) {
            // f_right(u - d): shift right features d columns toward +u, zeros outside.
            Var shifted = d == 0 ? rg : pad(slice(rg, 2, 0, W - d), {{0, 0}, {0, 0}, {d, 0}});
            Var num = sum(mul(lg, shifted), {0}, true);
            Var den = sqrt_op(add_scalar(mul(l_sq, sum(square(shifted), {0}, true)), eps));
            per_d.push_back(div(num, den));  // normalized channel dot product
        }
        group_vols.push_back(reshape(concat(per_d, 0), {1, d_max, H, W}));
    }
    return group_vols.size() == 1 ? group_vols[0] : concat(group_vols, 0);
}

namespace {

Var dw_separable_down(Var x, const TscaVars::Enc& e) {
    Graph& g = *x.graph;
    const int ci = g.val(x).extent(0);
    Var dw = conv3d(x, e.dw.k, {2, 2, 2}, {1, 1, 1}, ci);
    dw = add(dw, reshape(e.dw.b, {ci, 1, 1, 1}));
    return relu(conv3d_bias(dw, e.pw, {1, 1, 1}, {0, 0, 0}));
}

Var up_block(Var x, const TscaVars::Dec& d) {
    Graph& g = *x.graph;
    const int co = g.val(d.up.k).extent(1);
    return add(conv_transpose3d_x2(x, d.up.k), reshape(d.up.b, {co, 1, 1, 1}));
}

}  // namespace

Var regularize(Var c_corr, const TscaVars& v) {
    Graph& g = *c_corr.graph;
    const Tensor& vc = g.val(c_corr);
    if (vc.rank() != 4) throw DegenerateInputError("regularize: expected [C,D,H,W] volume");
    if (vc.extent(1) % 8 != 0 || vc.extent(2) % 8 != 0 || vc.extent(3) % 8 != 0) {
        throw DegenerateInputError("regularize: volume extents must be divisible by 8");
    }
    const bool use_seca = v.cfg.use_seca;
    auto block = [&](Var x, const attn::SecaVars& s) { return use_seca ? attn::seca(x, s) : relu(x); };

    Var e1 = block(dw_separable_down(c_corr, v.enc[0]), v.enc[0].seca);
    Var e2 = block(dw_separable_down(e1, v.enc[1]), v.enc[1].seca);
    Var e3 = block(dw_separable_down(e2, v.enc[2]), v.enc[2].seca);

    Var d1 = block(concat({up_block(e3, v.dec[0]), e2}, 0), v.dec[0].seca);
    Var d2 = block(concat({up_block(d1, v.dec[1]), e1}, 0), v.dec[1].seca);
    Var d3 = block(concat({up_block(d2, v.dec[2]), c_corr}, 0), v.dec[2].seca);
    return d3;
}

Var volume_head(Var c_g, Var c_corr, const TscaVars& v) {
    Graph& g = *c_g.graph;
    // Joint geometry encoding volume: regularized C_G fused with the raw
    // all-pairs correlation before the single-channel reduction.
    Var h = conv3d_bias(concat({c_g, c_corr}, 0), v.vol_head, {1, 1, 1}, {0, 0, 0});
    const Tensor& vh = g.val(h);
    return reshape(h, {vh.extent(1), vh.extent(2), vh.extent(3)});
}

Var soft_argmax_disparity(Var c_head) {
    Graph& g = *c_head.graph;
    const Tensor& vc = g.val(c_head);
    if (vc.rank() != 3) throw DegenerateInputError("soft_argmax_disparity: expected [D,H,W]");
    const int D = vc.extent(0);
    Var w = softmax(c_head, 0);
    Tensor dvals({D, 1, 1});
    for (int d = 0; d < D; ++d) dvals[d] = d;
    return sum(mul(w, g.input(dvals)), {0});
}

GruState init_gru_state(const std::array<Var, 3>& context, const TscaVars& v) {
    (void)v;
    GruState s;
    for (int i = 0; i < 3; ++i) s.hidden[static_cast<size_t>(i)] = tanh_op(context[static_cast<size_t>(i)]);
    return s;
}

GruStepOut convgru_step(const GruState& state, const std::array<Var, 3>& context, Var c_head,
                        const Tensor& disp_detached, const TscaVars& v) {
    Graph& g = *c_head.graph;
    const int H = disp_detached.extent(0), W = disp_detached.extent(1);

    Var lk = volume_lookup(c_head, disp_detached, v.cfg.lookup_radius);
    Tensor denc = disp_detached.reshaped({1, H, W});
    for (int64_t i = 0; i < denc.size(); ++i) denc[i] /= v.cfg.d_max;
    Var phi = relu(conv2d_bias_same(concat({lk, g.input(denc)}, 0), v.motion));

    GruStepOut out;
    for (int s = 0; s < 3; ++s) {
        Var x = s == 0 ? concat({context[0], phi}, 0)
                       : concat({context[static_cast<size_t>(s)], avg_pool2d(phi, 1 << s)}, 0);
        Var h = state.hidden[static_cast<size_t>(s)];
        const auto& gp = v.gru[static_cast<size_t>(s)];
        Var hx = concat({h, x}, 0);
        Var z = sigmoid(conv2d_bias_same(hx, gp.z));
        Var r = sigmoid(conv2d_bias_same(hx, gp.r));
        Var cand = tanh_op(conv2d_bias_same(concat({mul(r, h), x}, 0), gp.h));
        // Convex combination keeps the hidden state tanh-bounded.
        out.state.hidden[static_cast<size_t>(s)] = add(mul(add_scalar(neg(z), 1.0), h), mul(z, cand));
    }

    Var fused = concat({out.state.hidden[0], upsample_bilinear2d(out.state.hidden[1], 2),
                        upsample_bilinear2d(out.state.hidden[2], 4)},
                       0);
    Var delta = conv2d_bias_same(relu(conv2d_bias_same(fused, v.head_a)), v.head_b);
    out.delta = reshape(delta, {H, W});
    return out;
}

TscaForward tsca_forward_graph(Graph& g, const Tensor& left, const Tensor& right, const TscaVars& v) {
    if (left.rank() != 3 || right.rank() != 3 || left.shape() != right.shape()) {
        throw DegenerateInputError("tsca_forward: rectified [C,H,W] pair required");
    }
    if (left.extent(1) % 16 != 0 || left.extent(2) % 16 != 0) {
        throw DegenerateInputError("tsca_forward: image extents must be divisible by 16");
    }
    const int f = v.cfg.upsample_factor;
    const double d_hi = v.cfg.d_max - 1.0;

    Var li = g.input(left);
    Var ri = g.input(right);
    Var fl = feature_net(li, v);
    Var fr = feature_net(ri, v);
    auto ctx = context_net(li, v);

    Var vol = correlation_volume(fl, fr, v.cfg.d_max, v.cfg.corr_groups);
    Var c_head = volume_head(regularize(vol, v), vol, v);

    auto to_full = [&](Var d_feat) {
        const Tensor& vd = g.val(d_feat);
        Var up = upsample_bilinear2d(reshape(d_feat, {1, vd.extent(0), vd.extent(1)}), f);
        const Tensor& vu = g.val(up);
        return reshape(mul_scalar(up, static_cast<double>(f)), {vu.extent(1), vu.extent(2)});
    };

    TscaForward out;
    Var d0 = soft_argmax_disparity(c_head);
    out.feature_res.push_back(d0);
    out.full_res.push_back(to_full(d0));

    GruState state = init_gru_state(ctx, v);
    Tensor d_cur = g.val(d0);  // detached between iterations
    for (int k = 0; k < v.cfg.gru_iters; ++k) {
        GruStepOut step = convgru_step(state, ctx, c_head, d_cur, v);
        Var d_next = clamp(add(g.input(d_cur), step.delta), 0.0, d_hi);
        out.feature_res.push_back(d_next);
        out.full_res.push_back(to_full(d_next));
        state = step.state;
        d_cur = g.val(d_next);
    }
    return out;
}

Var sequence_loss_graph(const std::vector<Var>& iterates, const Tensor& gt, const Tensor& valid, double gamma) {
    if (iterates.empty()) throw DegenerateInputError("sequence_loss: no iterates");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw DegenerateInputError("sequence_loss: gamma must lie in (0,1]");
    Graph& g = *iterates[0].graph;
    double count = 0.0;
    for (int64_t i = 0; i < valid.size(); ++i) count += valid[i];
    if (count <= 0.0) throw DegenerateInputError("sequence_loss: empty valid mask");

    Var gt_v = g.input(gt);
    Var mask = g.input(valid);
    Var total{};
    const int last = static_cast<int>(iterates.size()) - 1;
    for (int k = 0; k <= last; ++k) {
        const double w = std::pow(gamma, static_cast<double>(last - k));
        Var l1 = mul_scalar(sum_all(mul(abs_op(sub(iterates[static_cast<size_t>(k)], gt_v)), mask)), w / count);
        total = k == 0 ? l1 : add(total, l1);
    }
    return total;
}

Tensor tsca_infer(TscaParams& params, const Tensor& left, const Tensor& right) {
    Graph g;
    ParamBinder b(g);
    TscaVars v = bind_params(b, params);
    TscaForward f = tsca_forward_graph(g, left, right, v);
    return g.val(f.full_res.back());
}

double masked_epe(const Tensor& disp, const Tensor& gt, const Tensor& valid) {
    double acc = 0.0, n = 0.0;
    for (int64_t i = 0; i < disp.size(); ++i) {
        if (valid[i] > 0.5) {
            acc += std::fabs(disp[i] - gt[i]);
            n += 1.0;
        }
    }
    if (n == 0.0) throw DegenerateInputError("masked_epe: empty valid mask");
    return acc / n;
}

std::vector<StereoSample> make_toy_planes(int count, int size, int in_channels, uint64_t seed, int max_disparity_px) {
    if (size % 16 != 0) throw DegenerateInputError("make_toy_planes: size must be divisible by 16");
    std::vector<StereoSample> out;
    nk::Rng base(seed);
    for (int s = 0; s < count; ++s) {
        nk::Rng rng = base.fork(static_cast<uint64_t>(s));
        const int disp = 2 + rng.uniform_int(std::max(1, max_disparity_px - 1));

        // Smooth value-noise texture with fine detail on top.
        const int coarse = 8;
        Tensor grid({in_channels, coarse, coarse});
        for (int64_t i = 0; i < grid.size(); ++i) grid[i] = rng.uniform(0.05, 0.95);
        Tensor left({in_channels, size, size});
        const double scale = static_cast<double>(coarse) / size;
        for (int c = 0; c < in_channels; ++c) {
            for (int y = 0; y < size; ++y) {
                for (int x = 0; x < size + 0; ++x) {
                    const double gy = std::min((y + 0.5) * scale - 0.5, coarse - 1.001);
                    const double gx = std::min((x + 0.5) * scale - 0.5, coarse - 1.001);
                    const int y0 = std::max(0, static_cast<int>(std::floor(gy)));
                    const int x0 = std::max(0, static_cast<int>(std::floor(gx)));
                    const double fy = std::max(0.0, gy - y0), fx = std::max(0.0, gx - x0);
                    const int y1 = std::min(y0 + 1, coarse - 1), x1 = std::min(x0 + 1, coarse - 1);
                    const double v = (1 - fy) * ((1 - fx) * grid.at({c, y0, x0}) + fx * grid.at({c, y0, x1})) +
                                     fy * ((1 - fx) * grid.at({c, y1, x0}) + fx * grid.at({c, y1, x1}));
                    left.at({c, y, x}) = v;
                }
            }
        }
        nk::Rng fine = base.fork(1000 + static_cast<uint64_t>(s));
        for (int64_t i = 0; i < left.size(); ++i) {
            left[i] = std::min(1.0, std::max(0.0, left[i] + 0.15 * (fine.uniform() - 0.5)));
        }

        StereoSample sample;
        sample.left = left;
        sample.right = Tensor({in_channels, size, size});
        nk::Rng fill = base.fork(2000 + static_cast<uint64_t>(s));
        for (int c = 0; c < in_channels; ++c) {
            for (int y = 0; y < size; ++y) {
                for (int x = 0; x < size; ++x) {
                    sample.right.at({c, y, x}) =
                        x + disp < size ? left.at({c, y, x + disp}) : fill.uniform(0.05, 0.95);
                }
            }
        }
        sample.gt_disp = Tensor({size, size}, static_cast<double>(disp));
        sample.valid = Tensor({size, size}, 0.0);
        for (int y = 0; y < size; ++y) {
            for (int x = disp; x < size; ++x) sample.valid.at({y, x}) = 1.0;
        }
        out.push_back(std::move(sample));
    }
    return out;
}

double LrSchedule::at(int step, int total_steps) const {
    if (kind == Kind::constant) return lr;
    const double pos = total_steps <= 1 ? 0.0 : static_cast<double>(step) / total_steps;
    const double phase = pos * cycles - std::floor(pos * cycles);
    const double tri = 1.0 - std::fabs(2.0 * phase - 1.0);
    return lr_low + (lr_high - lr_low) * tri;
}

double dataset_epe(TscaParams& params, const std::vector<StereoSample>& data) {
    double acc = 0.0, n = 0.0;
    for (const StereoSample& s : data) {
        const Tensor d = tsca_infer(params, s.left, s.right);
        for (int64_t i = 0; i < d.size(); ++i) {
            if (s.valid[i] > 0.5) {
                acc += std::fabs(d[i] - s.gt_disp[i]);
                n += 1.0;
            }
        }
    }
    if (n == 0.0) throw DegenerateInputError("dataset_epe: empty dataset");
    return acc / n;
}

TrainLog train_toy(const std::vector<StereoSample>& data, TscaParams& params, int steps, uint64_t seed,
                   const LrSchedule& schedule, int epe_every) {
    if (data.empty()) throw DegenerateInputError("train_toy: empty dataset");
    (void)seed;  // data order is fixed; kept for interface stability
    TrainLog log;
    nk::Adam opt({.lr = schedule.at(0, steps)});
    if (epe_every > 0) log.epe.emplace_back(0, dataset_epe(params, data));
    for (int step = 0; step < steps; ++step) {
        const StereoSample& s = data[static_cast<size_t>(step) % data.size()];
        Graph g;
        ParamBinder b(g);
        TscaVars v = bind_params(b, params);
        TscaForward f = tsca_forward_graph(g, s.left, s.right, v);
        Var loss = sequence_loss_graph(f.full_res, s.gt_disp, s.valid, params.cfg.gamma);
        log.loss.push_back(g.val(loss)[0]);
        g.backward(loss);

        std::vector<Tensor*> ps;
        std::vector<Tensor> grads;
        grads.reserve(b.entries.size());
        for (auto& e : b.entries) {
            ps.push_back(e.tensor);
            grads.push_back(g.grad(e.var));
        }
        std::vector<const Tensor*> gps;
        for (auto& gr : grads) gps.push_back(&gr);
        opt.set_lr(schedule.at(step, steps));
        opt.step(ps, gps);

        if (epe_every > 0 && ((step + 1) % epe_every == 0 || step + 1 == steps)) {
            log.epe.emplace_back(step + 1, dataset_epe(params, data));
        }
    }
    return log;
}

}  // namespace stereopose::net
