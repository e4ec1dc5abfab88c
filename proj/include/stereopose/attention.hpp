#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nk/ops.hpp"
#include "nk/random.hpp"
#include "stereopose/params.hpp"

namespace stereopose::attn {

using nk::Graph;
using nk::Tensor;
using nk::Var;

// Stacks [max, mean] along the reduced axis (output extent 2 there).
Var zpool(Var x, int axis);

// ---- Triplet attention -----------------------------------------------------

struct TripletAttentionParams {
    // One 2->1 channel k x k conv per branch; branches gate the (H,W), (C,W)
    // and (C,H) subspaces of a [C,H,W] map.
    Tensor k_hw, k_cw, k_ch;  // [1,2,k,k]
    static TripletAttentionParams init(int k, nk::Rng& rng);
    void for_each(const std::string& prefix, const ParamVisitor& fn);
};

struct TripletAttentionVars {
    Var k_hw, k_cw, k_ch;
};

TripletAttentionVars bind_params(ParamBinder& b, TripletAttentionParams& p, const std::string& prefix);
Var triplet_attention(Var f, const TripletAttentionVars& p);

// ---- ECA / SECA --------------------------------------------------------------

// Adaptive ECA kernel length: nearest odd to log2(C)/2 + 1/2 (ties round up).
int eca_kernel_length(int channels);

struct EcaParams {
    Tensor kernel;  // [k]
    static EcaParams init(int channels, nk::Rng& rng);
    void for_each(const std::string& prefix, const ParamVisitor& fn);
};

struct EcaVars {
    Var kernel;
};

EcaVars bind_params(ParamBinder& b, EcaParams& p, const std::string& prefix);
// Global average pool -> 1-D conv over channels -> sigmoid -> per-channel scale.
Var eca(Var x, const EcaVars& p);

struct SecaParams {
    EcaParams eca;
    Tensor k_q;   // [C,C,3,3,3]
    Tensor k_k;   // [C,C,5,5,5]
    Tensor k_v;   // [C,C,1,1,1]
    Tensor fuse;  // [C,2C,1,1,1]
    static SecaParams init(int channels, nk::Rng& rng);
    void for_each(const std::string& prefix, const ParamVisitor& fn);
};

struct SecaVars {
    EcaVars eca;
    Var k_q, k_k, k_v, fuse;
};

SecaVars bind_params(ParamBinder& b, SecaParams& p, const std::string& prefix);
// x: [C,D,H,W]. Spatial softmax attention (per channel over D*H*W) fused with
// the ECA branch; ReLU inside every conv.
Var seca(Var x, const SecaVars& p);

// ---- ECAA / GFFN / AugSC / ECFT ---------------------------------------------

enum class QueryNorm { l2_row, layer_norm };

struct EcaaParams {
    Tensor w_q, w_k;  // [d,d]
    Tensor l_g;       // [d]
    Tensor t_w;       // [d,d]  shared linear map T, also used inside the GFFN
    Tensor t_b;       // [d]
    bool softmax_pool = true;  // normalize token weights before pooling
    QueryNorm query_norm = QueryNorm::l2_row;
    static EcaaParams init(int d, nk::Rng& rng);
    void for_each(const std::string& prefix, const ParamVisitor& fn);
};

struct EcaaVars {
    Var w_q, w_k, l_g, t_w, t_b;
    bool softmax_pool = true;
    QueryNorm query_norm = QueryNorm::l2_row;
};

EcaaVars bind_params(ParamBinder& b, EcaaParams& p, const std::string& prefix);
// Additive cross-modal attention, linear in the token count n.
// f_src/f_tgt: [n,d]; output [n,d].
Var ecaa(Var f_src, Var f_tgt, const EcaaVars& p);
// The pooled token weights g (post-normalization), for tests.
Var ecaa_token_weights(Var f_tgt, const EcaaVars& p);

struct GffnParams {
    Tensor u, v;  // [2d,h] gating / linear projections
    Tensor w;     // [h,d]
    Tensor ln_gamma, ln_beta;  // [d]
    static GffnParams init(int d, int hidden, nk::Rng& rng);
    void for_each(const std::string& prefix, const ParamVisitor& fn);
};

struct GffnVars {
    Var u, v, w, ln_gamma, ln_beta;
};

GffnVars bind_params(ParamBinder& b, GffnParams& p, const std::string& prefix);
// M = LN(W (SiLU([T(x)||F_res] U) (.) [T(x)||F_res] V)); T is the ECAA map.
Var gffn(Var x_hat, Var f_residual, const GffnVars& p, Var t_w, Var t_b);

struct AugscParams {
    Tensor w;  // [d,d]
    Tensor b;  // [d]
    static AugscParams init(int d, nk::Rng& rng);
    void for_each(const std::string& prefix, const ParamVisitor& fn);
};

struct AugscVars {
    Var w, b;
};

AugscVars bind_params(ParamBinder& b, AugscParams& p, const std::string& prefix);
Var augsc(Var f, const AugscVars& p);  // LN(F W + b)

struct FusionDirections {
    bool rgb_to_point = true;
    bool point_to_rgb = true;
};

struct EcftParams {
    EcaaParams ecaa_point;  // enhances the point branch (RGB -> Point)
    EcaaParams ecaa_rgb;    // enhances the RGB branch (Point -> RGB)
    GffnParams gffn_point, gffn_rgb;
    AugscParams augsc_point, augsc_rgb;
    FusionDirections directions;
    static EcftParams init(int d, int hidden, nk::Rng& rng);
    void for_each(const std::string& prefix, const ParamVisitor& fn);
};

struct EcftVars {
    EcaaVars ecaa_point, ecaa_rgb;
    GffnVars gffn_point, gffn_rgb;
    AugscVars augsc_point, augsc_rgb;
    FusionDirections directions;
};

EcftVars bind_params(ParamBinder& b, EcftParams& p, const std::string& prefix);

struct EcftOutput {
    Var point_fusion;
    Var rgb_fusion;
};

// Bidirectional fusion; a disabled direction passes AugSC(F) + F through.
// Throws when both directions are disabled.
EcftOutput ecft(Var f_point, Var f_rgb, const EcftVars& p);

// ---- Baseline + complexity model ----------------------------------------------

Var vanilla_attention(Var q, Var k, Var v);

// Analytic multiply-add counts of the attention computation itself (projections
// to Q/K/V excluded). The vanilla count carries the two n^2 d terms plus the
// n^2 softmax; the ECAA count is affine in n.
int64_t vanilla_attention_flops(int64_t n, int64_t d);
int64_t ecaa_flops(int64_t n, int64_t d);

// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<std::pair<double, double>>& xy);

}  // namespace stereopose::attn
