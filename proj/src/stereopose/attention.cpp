#include "stereopose/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace stereopose::attn {

using namespace nk;

Var zpool(Var x, int axis) {
    return concat({max_reduce(x, {axis}, true), mean(x, {axis}, true)}, axis);
}

// ---- Triplet attention -----------------------------------------------------

TripletAttentionParams TripletAttentionParams::init(int k, nk::Rng& rng) {
    if (k % 2 == 0) throw std::invalid_argument("triplet attention kernel must be odd");
    TripletAttentionParams p;
    const double s = 1.0 / std::sqrt(2.0 * k * k);
    p.k_hw = rng.normal_tensor({1, 2, k, k}, 0.0, s);
    p.k_cw = rng.normal_tensor({1, 2, k, k}, 0.0, s);
    p.k_ch = rng.normal_tensor({1, 2, k, k}, 0.0, s);
    return p;
}

void TripletAttentionParams::for_each(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".k_hw", k_hw);
    fn(prefix + ".k_cw", k_cw);
    fn(prefix + ".k_ch", k_ch);
}

TripletAttentionVars bind_params(ParamBinder& b, TripletAttentionParams& p, const std::string& prefix) {
    return {b(prefix + ".k_hw", p.k_hw), b(prefix + ".k_cw", p.k_cw), b(prefix + ".k_ch", p.k_ch)};
}

namespace {

// Pool over axis 0 of the (possibly permuted) map, gate the plane, broadcast back.
Var ta_branch(Var x, Var kernel) {
    Var gate = sigmoid(conv2d_same(zpool(x, 0), kernel));  // [1,A,B]
    return mul(x, gate);
}

}  // namespace

Var triplet_attention(Var f, const TripletAttentionVars& p) {
    const Tensor& v = f.graph->val(f);
    if (v.rank() != 3) throw std::invalid_argument("triplet_attention expects [C,H,W]");
    Var y_hw = ta_branch(f, p.k_hw);  // pools C, gates (H,W)
    Var y_cw = permute(ta_branch(permute(f, {1, 0, 2}), p.k_cw), {1, 0, 2});  // pools H, gates (C,W)
    Var y_ch = permute(ta_branch(permute(f, {2, 1, 0}), p.k_ch), {2, 1, 0});  // pools W, gates (C,H)
    return mul_scalar(add(add(y_hw, y_cw), y_ch), 1.0 / 3.0);
}

// ---- ECA / SECA --------------------------------------------------------------

int eca_kernel_length(int channels) {
    if (channels < 1) throw std::invalid_argument("eca_kernel_length: channels must be >= 1");
    const double t = 0.5 * std::log2(static_cast<double>(channels)) + 0.5;
    int k = static_cast<int>(std::lround(t));
    if (k % 2 == 0) ++k;  // ties round up to the next odd length
    return std::max(1, k);
}

EcaParams EcaParams::init(int channels, nk::Rng& rng) {
    EcaParams p;
    const int k = eca_kernel_length(channels);
    p.kernel = rng.normal_tensor({k}, 0.0, 1.0 / std::sqrt(static_cast<double>(k)));
    return p;
}

void EcaParams::for_each(const std::string& prefix, const ParamVisitor& fn) { fn(prefix + ".kernel", kernel); }

EcaVars bind_params(ParamBinder& b, EcaParams& p, const std::string& prefix) { return {b(prefix + ".kernel", p.kernel)}; }

Var eca(Var x, const EcaVars& p) {
    Graph& g = *x.graph;
    const Tensor& vx = g.val(x);
    if (vx.rank() != 4) throw std::invalid_argument("eca expects [C,D,H,W]");
    const int C = vx.extent(0);
    const int klen = g.val(p.kernel).extent(0);
    Var pooled = mean(x, {1, 2, 3});                       // [C]
    Var as_map = reshape(pooled, {1, 1, 1, C});            // channel axis as a 1-D signal
    Var kk = reshape(p.kernel, {1, 1, 1, 1, klen});
    Var conv = conv3d(as_map, kk, {1, 1, 1}, {0, 0, klen / 2});
    Var scale = reshape(sigmoid(conv), {C, 1, 1, 1});
    return mul(x, scale);
}

SecaParams SecaParams::init(int channels, nk::Rng& rng) {
    SecaParams p;
    p.eca = EcaParams::init(channels, rng);
    auto he = [&](Shape s, int fan_in) { return rng.normal_tensor(std::move(s), 0.0, std::sqrt(2.0 / fan_in)); };
    p.k_q = he({channels, channels, 3, 3, 3}, channels * 27);
    p.k_k = he({channels, channels, 5, 5, 5}, channels * 125);
    p.k_v = he({channels, channels, 1, 1, 1}, channels);
    p.fuse = he({channels, 2 * channels, 1, 1, 1}, 2 * channels);
    return p;
}

void SecaParams::for_each(const std::string& prefix, const ParamVisitor& fn) {
    eca.for_each(prefix + ".eca", fn);
    fn(prefix + ".k_q", k_q);
    fn(prefix + ".k_k", k_k);
    fn(prefix + ".k_v", k_v);
    fn(prefix + ".fuse", fuse);
}

SecaVars bind_params(ParamBinder& b, SecaParams& p, const std::string& prefix) {
    SecaVars v;
    v.eca= bind_params(b, p.eca, prefix + ".eca");
    v.k_q = b(prefix + ".k_q", p.k_q);
    v.k_k = b(prefix + ".k_k", p.k_k);
    v.k_v = b(prefix + ".k_v", p.k_v);
    v.fuse = b(prefix + ".fuse", p.fuse);
    return v;
}

Var seca(Var x, const SecaVars& p) {
    Graph& g = *x.graph;
    const Tensor& vx = g.val(x);
    if (vx.rank() != 4) throw std::invalid_argument("seca expects [C,D,H,W]");
    const int C = vx.extent(0), D = vx.extent(1), H = vx.extent(2), W = vx.extent(3);

    Var x_eca = eca(x, p.eca);
    Var x_q = relu(conv3d_same(x, p.k_q));
    Var x_k = relu(conv3d_same(x, p.k_k));
    Var x_v = relu(conv3d_same(x, p.k_v));

    Var u = mul(x_q, x_k);
    // Flatten positions, softmax per channel, reshape back.
    Var weights = reshape(softmax(reshape(u, {C, D * H * W}), 1), {C, D, H, W});
    Var x_attn = mul(weights, x_v);

    Var fused = concat({x_attn, x_eca}, 0);
    return relu(conv3d_same(instance_norm(fused), p.fuse));
}

// ---- ECAA / GFFN / AugSC / ECFT ---------------------------------------------

EcaaParams EcaaParams::init(int d, nk::Rng& rng) {
    EcaaParams p;
    const double s = 1.0 / std::sqrt(static_cast<double>(d));
    p.w_q = rng.normal_tensor({d, d}, 0.0, s);
    p.w_k = rng.normal_tensor({d, d}, 0.0, s);
    p.l_g = rng.normal_tensor({d}, 0.0, 1.0);
    p.t_w = rng.normal_tensor({d, d}, 0.0, s);
    p.t_b = Tensor({d}, 0.0);
    return p;
}

void EcaaParams::for_each(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".w_q", w_q);
    fn(prefix + ".w_k", w_k);
    fn(prefix + ".l_g", l_g);
    fn(prefix + ".t_w", t_w);
    fn(prefix + ".t_b", t_b);
}

EcaaVars bind_params(ParamBinder& b, EcaaParams& p, const std::string& prefix) {
    EcaaVars v;
    v.w_q = b(prefix + ".w_q", p.w_q);
    v.w_k = b(prefix + ".w_k", p.w_k);
    v.l_g = b(prefix + ".l_g", p.l_g);
    v.t_w = b(prefix + ".t_w", p.t_w);
    v.t_b = b(prefix + ".t_b", p.t_b);
    v.softmax_pool = p.softmax_pool;
    v.query_norm = p.query_norm;
    return v;
}

namespace {

Var ecaa_weights_from_query(Var q, const EcaaVars& p) {
    Graph& g = *q.graph;
    const int d = g.val(q).extent(1);
    Var gl = mul_scalar(matmul(q, reshape(p.l_g, {d, 1})), 1.0 / std::sqrt(static_cast<double>(d)));
    return p.softmax_pool ? softmax(gl, 0) : gl;  // [n,1]
}

Var normalized_query(Var q, QueryNorm mode) {
    if (mode == QueryNorm::layer_norm) return layer_norm(q, 1);
    Var sq = sum(square(q), {1}, true);                     // [n,1]
    return div(q, sqrt_op(add_scalar(sq, 1e-12)));          // row-wise L2
}

}  // namespace

Var ecaa_token_weights(Var f_tgt, const EcaaVars& p) {
    return ecaa_weights_from_query(matmul(f_tgt, p.w_q), p);
}

Var ecaa(Var f_src, Var f_tgt, const EcaaVars& p) {
    Graph& g = *f_src.graph;
    const Tensor& vs = g.val(f_src);
    const Tensor& vt = g.val(f_tgt);
    if (vs.rank() != 2 || vt.rank() != 2 || vs.extent(0) != vt.extent(0) || vs.extent(1) != vt.extent(1)) {
        throw std::invalid_argument("ecaa expects paired [n,d] token sequences");
    }
    const int d = vs.extent(1);
    Var q = matmul(f_tgt, p.w_q);
    Var k = matmul(f_src, p.w_k);
    Var gw = ecaa_weights_from_query(q, p);                     // [n,1]
    Var pooled = reshape(matmul(permute(q, {1, 0}), gw), {1, d});  // q_r = sum_i g_i Q_i
    Var modulated = mul(k, pooled);                             // K (.) q, broadcast across rows
    Var transformed = add(matmul(modulated, p.t_w), reshape(p.t_b, {1, d}));
    return add(normalized_query(q, p.query_norm), transformed);
}

GffnParams GffnParams::init(int d, int hidden, nk::Rng& rng) {
    GffnParams p;
    p.u = rng.normal_tensor({2 * d, hidden}, 0.0, 1.0 / std::sqrt(2.0 * d));
    p.v = rng.normal_tensor({2 * d, hidden}, 0.0, 1.0 / std::sqrt(2.0 * d));
    p.w = rng.normal_tensor({hidden, d}, 0.0, 1.0 / std::sqrt(static_cast<double>(hidden)));
    p.ln_gamma = Tensor({d}, 1.0);
    p.ln_beta = Tensor({d}, 0.0);
    return p;
}

void GffnParams::for_each(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".u", u);
    fn(prefix + ".v", v);
    fn(prefix + ".w", w);
    fn(prefix + ".ln_gamma", ln_gamma);
    fn(prefix + ".ln_beta", ln_beta);
}

GffnVars bind_params(ParamBinder& b, GffnParams& p, const std::string& prefix) {
    GffnVars v;
    v.u = b(prefix + ".u", p.u);
    v.v = b(prefix + ".v", p.v);
    v.w = b(prefix + ".w", p.w);
    v.ln_gamma = b(prefix + ".ln_gamma", p.ln_gamma);
    v.ln_beta = b(prefix + ".ln_beta", p.ln_beta);
    return v;
}

Var gffn(Var x_hat, Var f_residual, const GffnVars& p, Var t_w, Var t_b) {
    Graph& g = *x_hat.graph;
    const int d = g.val(x_hat).extent(1);
    Var tx = add(matmul(x_hat, t_w), reshape(t_b, {1, d}));
    Var cat = concat({tx, f_residual}, 1);  // [n,2d]
    Var gate = silu(matmul(cat, p.u));
    Var lin = matmul(cat, p.v);
    Var out = matmul(mul(gate, lin), p.w);
    Var ln = layer_norm(out, 1);
    return add(mul(ln, reshape(p.ln_gamma, {1, d})), reshape(p.ln_beta, {1, d}));
}

AugscParams AugscParams::init(int d, nk::Rng& rng) {
    AugscParams p;
    p.w = rng.normal_tensor({d, d}, 0.0, 1.0 / std::sqrt(static_cast<double>(d)));
    p.b = Tensor({d}, 0.0);
    return p;
}

void AugscParams::for_each(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".w", w);
    fn(prefix + ".b", b);
}

AugscVars bind_params(ParamBinder& b, AugscParams& p, const std::string& prefix) {
    return {b(prefix + ".w", p.w), b(prefix + ".b", p.b)};
}

Var augsc(Var f, const AugscVars& p) {
    Graph& g = *f.graph;
    const int d = g.val(f).extent(1);
    return layer_norm(add(matmul(f, p.w), reshape(p.b, {1, d})), 1);
}

EcftParams EcftParams::init(int d, int hidden, nk::Rng& rng) {
    EcftParams p;
    p.ecaa_point = EcaaParams::init(d, rng);
    p.ecaa_rgb = EcaaParams::init(d, rng);
    p.gffn_point = GffnParams::init(d, hidden, rng);
    p.gffn_rgb = GffnParams::init(d, hidden, rng);
    p.augsc_point = AugscParams::init(d, rng);
    p.augsc_rgb = AugscParams::init(d, rng);
    return p;
}

void EcftParams::for_each(const std::string& prefix, const ParamVisitor& fn) {
    ecaa_point.for_each(prefix + ".ecaa_point", fn);
    ecaa_rgb.for_each(prefix + ".ecaa_rgb", fn);
    gffn_point.for_each(prefix + ".gffn_point", fn);
    gffn_rgb.for_each(prefix + ".gffn_rgb", fn);
    augsc_point.for_each(prefix + ".augsc_point", fn);
    augsc_rgb.for_each(prefix + ".augsc_rgb", fn);
}

EcftVars bind_params(ParamBinder& b, EcftParams& p, const std::string& prefix) {
    EcftVars v;
    v.ecaa_point= bind_params(b, p.ecaa_point, prefix + ".ecaa_point");
    v.ecaa_rgb= bind_params(b, p.ecaa_rgb, prefix + ".ecaa_rgb");
    v.gffn_point= bind_params(b, p.gffn_point, prefix + ".gffn_point");
    v.gffn_rgb= bind_params(b, p.gffn_rgb, prefix + ".gffn_rgb");
    v.augsc_point= bind_params(b, p.augsc_point, prefix + ".augsc_point");
    v.augsc_rgb= bind_params(b, p.augsc_rgb, prefix + ".augsc_rgb");
    v.directions = p.directions;
    return v;
}

EcftOutput ecft(Var f_point, Var f_rgb, const EcftVars& p) {
    if (!p.directions.rgb_to_point && !p.directions.point_to_rgb) {
        throw std::invalid_argument("ecft: both fusion directions disabled");
    }
    EcftOutput out;

    Var point_base = add(augsc(f_point, p.augsc_point), f_point);
    if (p.directions.rgb_to_point) {
        Var x_hat = ecaa(/*src=*/f_rgb, /*tgt=*/f_point, p.ecaa_point);
        Var m_hat = gffn(x_hat, f_point, p.gffn_point, p.ecaa_point.t_w, p.ecaa_point.t_b);
        out.point_fusion = add(point_base, m_hat);
    } else {
        out.point_fusion = point_base;
    }

    Var rgb_base = add(augsc(f_rgb, p.augsc_rgb), f_rgb);
    if (p.directions.point_to_rgb) {
        Var x_hat = ecaa(/*src=*/f_point, /*tgt=*/f_rgb, p.ecaa_rgb);
        Var m_hat = gffn(x_hat, f_rgb, p.gffn_rgb, p.ecaa_rgb.t_w, p.ecaa_rgb.t_b);
        out.rgb_fusion = add(rgb_base, m_hat);
    } else {
        out.rgb_fusion = rgb_base;
    }
    return out;
}

// ---- Baseline + complexity model ----------------------------------------------

Var vanilla_attention(Var q, Var k, Var v) {
    Graph& g = *q.graph;
    const int d = g.val(q).extent(1);
    Var scores = mul_scalar(matmul(q, permute(k, {1, 0})), 1.0 / std::sqrt(static_cast<double>(d)));
    return matmul(softmax(scores, 1), v);
}

int64_t vanilla_attention_flops(int64_t n, int64_t d) {
    if (n < 1 || d < 1) throw std::invalid_argument("flops: n, d must be >= 1");
    // QK^T + attention V multiply-adds, plus exp/sum/div per score entry.
    return 2 * n * n * d + 3 * n * n;
}

int64_t ecaa_flops(int64_t n, int64_t d) {
    if (n < 1 || d < 1) throw std::invalid_argument("flops: n, d must be >= 1");
    const int64_t g_w = n * d + n;       // Q l_g / sqrt(d)
    const int64_t soft = 3 * n;          // softmax over tokens
    const int64_t pool = n * d;          // weighted query pooling
    const int64_t gate = n * d;          // K (.) q
    const int64_t lin = n * d * d + n * d;  // shared map T with bias
    const int64_t norm = 3 * n * d + n;  // row-wise L2 normalization
    const int64_t res = n * d;           // residual add
    return g_w + soft + pool + gate + lin + norm + res;
}

double loglog_slope(const std::vector<std::pair<double, double>>& xy) {
    if (xy.size() < 2) throw std::invalid_argument("loglog_slope needs at least two points");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const auto& [x, y] : xy) {
        const double lx = std::log(x), ly = std::log(y);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    const double n = static_cast<double>(xy.size());
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace stereopose::attn
