#pragma once

#include <cstdint>
#include <vector>

#include "nk/adam.hpp"
#include "stereopose/attention.hpp"
#include "stereopose/pose.hpp"

namespace stereopose::pose {

// Desk-scale per-point head over fused ECFT features: predicts keypoint
// offsets, class confidences and center offsets for every point. Exists to
// drive the keypoint/segmentation/center losses end to end.
struct PoseHeadConfig {
    int embed_dim = 16;
    int gffn_hidden = 32;
    int mlp_hidden = 32;
    int classes = 2;
    int keypoints = 8;
};

struct PoseHeadParams {
    PoseHeadConfig cfg;
    nk::Tensor lift_geo_w, lift_geo_b;  // [4,d], [d]
    nk::Tensor lift_rgb_w, lift_rgb_b;  // [4,d], [d]
    attn::EcftParams ecft;
    nk::Tensor mlp1_w, mlp1_b;  // [2d,h]
    nk::Tensor mlp2_w, mlp2_b;  // [h,h]
    nk::Tensor off_w, off_b;    // [h, M*3]
    nk::Tensor seg_w, seg_b;    // [h, classes]
    nk::Tensor ctr_w, ctr_b;    // [h, 3]

    static PoseHeadParams init(const PoseHeadConfig& cfg, nk::Rng& rng);
    void for_each(const ParamVisitor& fn);
};

struct PoseHeadVars {
    PoseHeadConfig cfg;
    nk::Var lift_geo_w, lift_geo_b, lift_rgb_w, lift_rgb_b;
    attn::EcftVars ecft;
    nk::Var mlp1_w, mlp1_b, mlp2_w, mlp2_b;
    nk::Var off_w, off_b, seg_w, seg_b, ctr_w, ctr_b;
};

PoseHeadVars bind_params(ParamBinder& b, PoseHeadParams& p);

struct PoseHeadInput {
    nk::Tensor geo;  // [n,4]: centered xyz / scale, range
    nk::Tensor rgb;  // [n,4]: rgb + luminance
};

// Raw per-point features from camera-frame points and sampled colors.
PoseHeadInput make_head_input(const std::vector<Vec3>& points, const std::vector<std::array<double, 3>>& colors);

struct PoseHeadOutput {
    nk::Var offsets;     // [n, M, 3]
    nk::Var confidence;  // [n, classes], rows sum to 1
    nk::Var center;      // [n, 3]
};

PoseHeadOutput pose_head_forward(const PoseHeadInput& input, const PoseHeadVars& v, nk::Graph& g);

struct HeadSample {
    PoseHeadInput input;
    nk::Tensor offsets_gt;  // [n, M, 3]
    nk::Tensor center_gt;   // [n, 3]
    nk::Tensor one_hot;     // [n, classes]
    nk::Tensor indicator;   // [n]
    std::vector<int> labels;
};

HeadSample make_head_sample(const std::vector<Vec3>& points, const std::vector<std::array<double, 3>>& colors,
                            const std::vector<int>& labels, const std::vector<Vec3>& keypoints_camera,
                            const Vec3& center_camera, int classes);

struct HeadTrainLog {
    std::vector<double> loss;
    std::vector<double> l_kp, l_sem, l_ctr;
};

// One sample per Adam step, Eq.-weighted multi-task objective.
HeadTrainLog train_pose_head(const std::vector<HeadSample>& data, PoseHeadParams& params, int steps, double lr,
                             double k1 = 1.0, double k2 = 1.0, double k3 = 1.0);

// Inference path feeding estimate_pose.
OffsetField predict_offsets(PoseHeadParams& params, const PoseHeadInput& input);

}  // namespace stereopose::pose
