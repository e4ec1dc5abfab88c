#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "nk/adam.hpp"
#include "nk/ops.hpp"
#include "nk/random.hpp"
#include "stereopose/attention.hpp"
#include "stereopose/params.hpp"

namespace stereopose::net {

using nk::Graph;
using nk::Tensor;
using nk::Var;

struct TSCAConfig {
    int channels = 8;        // feature/context width; full-scale setting is 128
    int d_max = 16;          // disparity bins at the 1/4 feature resolution
    int gru_iters = 4;       // full-scale setting is 22 update iterations
    bool use_ta = true;      // Triplet Attention in the context net
    bool use_seca = true;    // SECA blocks in the 3D regularizer
    int hidden_channels = 8;
    int motion_channels = 8;
    int lookup_radius = 3;
    int corr_groups = 1;
    std::array<int, 3> vol_channels{4, 6, 8};  // regularizer encoder widths
    double gamma = 0.9;                        // sequence-loss decay
    int upsample_factor = 4;                   // feature resolution is 1/4

    int full_res_max_disparity() const { return d_max * upsample_factor; }
};

// ---- parameter containers ------------------------------------------------------

struct Conv2dParams {
    Tensor k;  // [Co,Ci,kh,kw]
    Tensor b;  // [Co]
    static Conv2dParams init(int co, int ci, int kh, int kw, nk::Rng& rng);
};

struct Conv3dParams {
    Tensor k;  // [Co,Ci/g,kd,kh,kw]
    Tensor b;  // [Co]
    static Conv3dParams init(int co, int ci_g, int kd, int kh, int kw, nk::Rng& rng);
};

struct ResBlockParams {
    Conv2dParams a, b;
};

struct ContextScaleParams {
    Conv2dParams down;
    ResBlockParams res;
    attn::TripletAttentionParams ta;
};

struct EncBlockParams {
    Conv3dParams dw;  // depthwise, stride 2
    Conv3dParams pw;  // pointwise channel expansion
    attn::SecaParams seca;
};

struct DecBlockParams {
    Tensor up_k;  // transposed conv [Cin,Cout,2,2,2]
    Tensor up_b;  // [Cout]
    attn::SecaParams seca;  // on the concatenated channels
};

struct GruParams {
    Conv2dParams z, r, h;
};

struct TscaParams {
    TSCAConfig cfg;
    int in_channels = 1;

    std::array<Conv2dParams, 4> feature;  // strided feature stack (1/4 output)
    Conv2dParams ctx_stem;
    std::array<ContextScaleParams, 3> ctx;
    std::array<EncBlockParams, 3> enc;
    std::array<DecBlockParams, 3> dec;
    Conv3dParams vol_head;  // 1x1x1, reduces C_G to one channel
    Conv2dParams motion;
    std::array<GruParams, 3> gru;
    Conv2dParams head_a, head_b;  // disparity residual head

    static TscaParams init(const TSCAConfig& cfg, int in_channels, nk::Rng& rng);
    void for_each(const ParamVisitor& fn);
};

// ---- bound forward graph -------------------------------------------------------

struct ConvVars {
    Var k, b;
};

struct TscaVars {
    TSCAConfig cfg;
    int in_channels = 1;
    std::array<ConvVars, 4> feature;
    ConvVars ctx_stem;
    struct CtxScale {
        ConvVars down;
        ConvVars res_a, res_b;
        attn::TripletAttentionVars ta;
    };
    std::array<CtxScale, 3> ctx;
    struct Enc {
        ConvVars dw, pw;
        attn::SecaVars seca;
    };
    std::array<Enc, 3> enc;
    struct Dec {
        ConvVars up;
        attn::SecaVars seca;
    };
    std::array<Dec, 3> dec;
    ConvVars vol_head;
    ConvVars motion;
    struct Gru {
        ConvVars z, r, h;
    };
    std::array<Gru, 3> gru;
    ConvVars head_a, head_b;
};

TscaVars bind_params(ParamBinder& b, TscaParams& p);

Var conv2d_bias(Var x, const ConvVars& c, int stride, int padding);
Var conv2d_bias_same(Var x, const ConvVars& c);

// Strided conv stack; output at 1/4 resolution with cfg.channels channels.
Var feature_net(Var image, const TscaVars& v);

// Multi-scale context features T1 (1/4), T2 (1/8), T3 (1/16); each scale is
// Down -> ResBlock -> Triplet Attention (pass-through when TA is disabled).
std::array<Var, 3> context_net(Var image, const TscaVars& v);

// All-pairs cosine correlation per disparity bin; out-of-range lookups are
// zero. Output [groups, d_max, H', W'].
Var correlation_volume(Var f_left, Var f_right, int d_max, int groups = 1);

// Three-level encoder/decoder with depthwise separable 3D convs and SECA per
// block; output spatial/disparity extents match the input volume.
Var regularize(Var c_corr, const TscaVars& v);

// 1x1x1 head over the joint volume concat(C_G, C_corr): [d_max, H', W'].
Var volume_head(Var c_g, Var c_corr, const TscaVars& v);

// d0(u) = sum_d d * softmax_d C(d, u); values in [0, d_max-1].
Var soft_argmax_disparity(Var c_head);

struct GruState {
    std::array<Var, 3> hidden;  // per scale, tanh-bounded
};

GruState init_gru_state(const std::array<Var, 3>& context, const TscaVars& v);

struct GruStepOut {
    GruState state;
    Var delta;  // [H', W'] disparity residual
};

// One ConvGRU update across the three scales; context features are injected
// at every scale, the residual head reads all hidden states.
GruStepOut convgru_step(const GruState& state, const std::array<Var, 3>& context, Var c_head,
                        const Tensor& disp_detached, const TscaVars& v);

struct TscaForward {
    std::vector<Var> full_res;     // K+1 disparity iterates at input resolution
    std::vector<Var> feature_res;  // matching iterates at 1/4 resolution
};

TscaForward tsca_forward_graph(Graph& g, const Tensor& left, const Tensor& right, const TscaVars& v);

// Exponentially weighted masked L1 over the iterate sequence.
Var sequence_loss_graph(const std::vector<Var>& iterates, const Tensor& gt, const Tensor& valid, double gamma);

// ---- plain-tensor conveniences ------------------------------------------------

Tensor tsca_infer(TscaParams& params, const Tensor& left, const Tensor& right);  // final iterate
double masked_epe(const Tensor& disp, const Tensor& gt, const Tensor& valid);

struct StereoSample {
    Tensor left, right;  // [C,H,W]
    Tensor gt_disp;      // [H,W], full resolution, pixels
    Tensor valid;        // [H,W], 0/1
};

// Fronto-parallel textured planes at integer disparities; the weak-texture
// regression set for overfit experiments.
std::vector<StereoSample> make_toy_planes(int count, int size, int in_channels, uint64_t seed,
                                          int max_disparity_px = 12);

struct LrSchedule {
    enum class Kind { constant, cyclic };
    Kind kind = Kind::constant;
    double lr = 2e-3;
    double lr_low = 1e-5, lr_high = 1e-3;  // triangular cycle bounds
    int cycles = 3;
    double at(int step, int total_steps) const;
};

struct TrainLog {
    std::vector<double> loss;                      // per step
    std::vector<std::pair<int, double>> epe;       // (step, dataset EPE) samples
};

// Cycles through the dataset one sample per Adam step. Deterministic per seed.
TrainLog train_toy(const std::vector<StereoSample>& data, TscaParams& params, int steps, uint64_t seed,
                   const LrSchedule& schedule, int epe_every = 0);

double dataset_epe(TscaParams& params, const std::vector<StereoSample>& data);

}  // namespace stereopose::net
