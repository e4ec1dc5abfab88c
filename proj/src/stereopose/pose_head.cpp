#include "stereopose/pose_head.hpp"

#include <cmath>

#include "nk/ops.hpp"
#include "stereopose/errors.hpp"

namespace stereopose::pose {

using namespace nk;

PoseHeadParams PoseHeadParams::init(const PoseHeadConfig& cfg, nk::Rng& rng) {
    PoseHeadParams p;
    p.cfg = cfg;
    const int d = cfg.embed_dim, h = cfg.mlp_hidden;
    auto lin = [&](int in, int out) { return rng.normal_tensor({in, out}, 0.0, std::sqrt(2.0 / in)); };
    p.lift_geo_w = lin(4, d);
    p.lift_geo_b = Tensor({d}, 0.0);
    p.lift_rgb_w = lin(4, d);
    p.lift_rgb_b = Tensor({d}, 0.0);
    p.ecft = attn::EcftParams::init(d, cfg.gffn_hidden, rng);
    p.mlp1_w = lin(2 * d, h);
    p.mlp1_b = Tensor({h}, 0.0);
    p.mlp2_w = lin(h, h);
    p.mlp2_b = Tensor({h}, 0.0);
    p.off_w = lin(h, cfg.keypoints * 3);
    p.off_b = Tensor({cfg.keypoints * 3}, 0.0);
    p.seg_w = lin(h, cfg.classes);
    p.seg_b = Tensor({cfg.classes}, 0.0);
    p.ctr_w = lin(h, 3);
    p.ctr_b = Tensor({3}, 0.0);
    return p;
}

void PoseHeadParams::for_each(const ParamVisitor& fn) {
    fn("head.lift_geo_w", lift_geo_w);
    fn("head.lift_geo_b", lift_geo_b);
    fn("head.lift_rgb_w", lift_rgb_w);
    fn("head.lift_rgb_b", lift_rgb_b);
    ecft.for_each("head.ecft", fn);
    fn("head.mlp1_w", mlp1_w);
    fn("head.mlp1_b", mlp1_b);
    fn("head.mlp2_w", mlp2_w);
    fn("head.mlp2_b", mlp2_b);
    fn("head.off_w", off_w);
    fn("head.off_b", off_b);
    fn("head.seg_w", seg_w);
    fn("head.seg_b", seg_b);
    fn("head.ctr_w", ctr_w);
    fn("head.ctr_b", ctr_b);
}

PoseHeadVars bind_params(ParamBinder& b, PoseHeadParams& p) {
    PoseHeadVars v;
    v.cfg = p.cfg;
    v.lift_geo_w = b("head.lift_geo_w", p.lift_geo_w);
    v.lift_geo_b = b("head.lift_geo_b", p.lift_geo_b);
    v.lift_rgb_w = b("head.lift_rgb_w", p.lift_rgb_w);
    v.lift_rgb_b = b("head.lift_rgb_b", p.lift_rgb_b);
    v.ecft = attn::bind_params(b, p.ecft, "head.ecft");
    v.mlp1_w = b("head.mlp1_w", p.mlp1_w);
    v.mlp1_b = b("head.mlp1_b", p.mlp1_b);
    v.mlp2_w = b("head.mlp2_w", p.mlp2_w);
    v.mlp2_b = b("head.mlp2_b", p.mlp2_b);
    v.off_w = b("head.off_w", p.off_w);
    v.off_b = b("head.off_b", p.off_b);
    v.seg_w = b("head.seg_w", p.seg_w);
    v.seg_b = b("head.seg_b", p.seg_b);
    v.ctr_w = b("head.ctr_w", p.ctr_w);
    v.ctr_b = b("head.ctr_b", p.ctr_b);
    return v;
}

PoseHeadInput make_head_input(const std::vector<Vec3>& points, const std::vector<std::array<double, 3>>& colors) {
    if (points.empty() || points.size() != colors.size()) {
        throw DataMismatchError("make_head_input: point/color count mismatch");
    }
    const int n = static_cast<int>(points.size());
    Vec3 centroid{0, 0, 0};
    for (const Vec3& p : points) centroid = vadd(centroid, p);
    centroid = vscale(centroid, 1.0 / n);
    double scale = 0.0;
    for (const Vec3& p : points) scale = std::max(scale, vnorm(vsub(p, centroid)));
    scale = std::max(scale, 1e-6);

    PoseHeadInput in;
    in.geo = Tensor({n, 4});
    in.rgb = Tensor({n, 4});
    for (int i = 0; i < n; ++i) {
        const Vec3 c = vsub(points[static_cast<size_t>(i)], centroid);
        in.geo.at({i, 0}) = c[0] / scale;
        in.geo.at({i, 1}) = c[1] / scale;
        in.geo.at({i, 2}) = c[2] / scale;
        in.geo.at({i, 3}) = vnorm(c) / scale;
        const auto& col = colors[static_cast<size_t>(i)];
        in.rgb.at({i, 0}) = col[0];
        in.rgb.at({i, 1}) = col[1];
        in.rgb.at({i, 2}) = col[2];
        in.rgb.at({i, 3}) = (col[0] + col[1] + col[2]) / 3.0;
    }
    return in;
}

PoseHeadOutput pose_head_forward(const PoseHeadInput& input, const PoseHeadVars& v, nk::Graph& g) {
    const int n = input.geo.extent(0);
    const int d = v.cfg.embed_dim;
    Var f_p = add(matmul(g.input(input.geo), v.lift_geo_w), reshape(v.lift_geo_b, {1, d}));
    Var f_r = add(matmul(g.input(input.rgb), v.lift_rgb_w), reshape(v.lift_rgb_b, {1, d}));
    auto fused = attn::ecft(f_p, f_r, v.ecft);

    Var x = concat({fused.point_fusion, fused.rgb_fusion}, 1);  // [n, 2d]
    const int h = v.cfg.mlp_hidden;
    x = relu(add(matmul(x, v.mlp1_w), reshape(v.mlp1_b, {1, h})));
    x = relu(add(matmul(x, v.mlp2_w), reshape(v.mlp2_b, {1, h})));

    PoseHeadOutput out;
    Var off = add(matmul(x, v.off_w), reshape(v.off_b, {1, v.cfg.keypoints * 3}));
    out.offsets = reshape(off, {n, v.cfg.keypoints, 3});
    out.confidence = softmax(add(matmul(x, v.seg_w), reshape(v.seg_b, {1, v.cfg.classes})), 1);
    out.center = add(matmul(x, v.ctr_w), reshape(v.ctr_b, {1, 3}));
    return out;
}

HeadSample make_head_sample(const std::vector<Vec3>& points, const std::vector<std::array<double, 3>>& colors,
                            const std::vector<int>& labels, const std::vector<Vec3>& keypoints_camera,
                            const Vec3& center_camera, int classes) {
    if (points.size() != labels.size()) throw DataMismatchError("make_head_sample: label count mismatch");
    const int n = static_cast<int>(points.size());
    const int m = static_cast<int>(keypoints_camera.size());
    HeadSample s;
    s.input = make_head_input(points, colors);
    s.offsets_gt = Tensor({n, m, 3});
    s.center_gt = Tensor({n, 3});
    s.one_hot = Tensor({n, classes}, 0.0);
    s.indicator = Tensor({n}, 1.0);
    s.labels = labels;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) {
            for (int k = 0; k < 3; ++k) {
                s.offsets_gt.at({i, j, k}) =
                    keypoints_camera[static_cast<size_t>(j)][static_cast<size_t>(k)] - points[static_cast<size_t>(i)][static_cast<size_t>(k)];
            }
        }
        for (int k = 0; k < 3; ++k) {
            s.center_gt.at({i, k}) = center_camera[static_cast<size_t>(k)] - points[static_cast<size_t>(i)][static_cast<size_t>(k)];
        }
        const int cls = labels[static_cast<size_t>(i)];
        if (cls < 0 || cls >= classes) throw DataMismatchError("make_head_sample: label out of range");
        s.one_hot.at({i, cls}) = 1.0;
    }
    return s;
}

HeadTrainLog train_pose_head(const std::vector<HeadSample>& data, PoseHeadParams& params, int steps, double lr,
                             double k1, double k2, double k3) {
    if (data.empty()) throw DegenerateInputError("train_pose_head: empty dataset");
    HeadTrainLog log;
    nk::Adam opt({.lr = lr});
    for (int step = 0; step < steps; ++step) {
        const HeadSample& s = data[static_cast<size_t>(step) % data.size()];
        Graph g;
        ParamBinder b(g);
        PoseHeadVars v = bind_params(b, params);
        PoseHeadOutput out = pose_head_forward(s.input, v, g);

        Var l_kp = keypoint_loss_graph(out.offsets, s.offsets_gt, s.indicator);
        Var l_sem = focal_loss_graph(out.confidence, s.one_hot, 0.25, 2.0);
        Var l_ctr = center_loss_graph(out.center, s.center_gt, s.indicator);
        Var loss = add(add(mul_scalar(l_kp, k1), mul_scalar(l_sem, k2)), mul_scalar(l_ctr, k3));

        log.loss.push_back(g.val(loss)[0]);
        log.l_kp.push_back(g.val(l_kp)[0]);
        log.l_sem.push_back(g.val(l_sem)[0]);
        log.l_ctr.push_back(g.val(l_ctr)[0]);
        g.backward(loss);

        std::vector<Tensor*> ps;
        std::vector<Tensor> grads;
        for (auto& e : b.entries) {
            ps.push_back(e.tensor);
            grads.push_back(g.grad(e.var));
        }
        std::vector<const Tensor*> gps;
        for (auto& gr : grads) gps.push_back(&gr);
        opt.step(ps, gps);
    }
    return log;
}

OffsetField predict_offsets(PoseHeadParams& params, const PoseHeadInput& input) {
    Graph g;
    ParamBinder b(g);
    PoseHeadVars v = bind_params(b, params);
    PoseHeadOutput out = pose_head_forward(input, v, g);
    const Tensor& off = g.val(out.offsets);
    OffsetField f(off.extent(0), off.extent(1));
    f.pred.assign(off.data(), off.data() + off.size());
    return f;
}

}  // namespace stereopose::pose
