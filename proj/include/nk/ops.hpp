#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include "nk/graph.hpp"

namespace nk {

// Elementwise with right-aligned broadcasting (extents equal or 1).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

Var add_scalar(Var a, double s);
Var mul_scalar(Var a, double s);
Var neg(Var a);

Var relu(Var x);
Var sigmoid(Var x);
Var tanh_op(Var x);
Var silu(Var x);
Var exp_op(Var x);
Var log_op(Var x);
Var sqrt_op(Var x);
Var abs_op(Var x);
Var square(Var x);
Var clamp(Var x, double lo, double hi);

Var matmul(Var a, Var b);  // [m,k] x [k,n] -> [m,n]

// Shape manipulation.
Var reshape(Var x, Shape shape);
Var permute(Var x, std::vector<int> perm);
Var concat(const std::vector<Var>& xs, int axis);
Var slice(Var x, int axis, int start, int len);
Var flip(Var x, const std::vector<int>& axes);

// Reductions. Axes may be empty meaning all axes.
Var sum(Var x, std::vector<int> axes, bool keepdims = false);
Var mean(Var x, std::vector<int> axes, bool keepdims = false);
Var max_reduce(Var x, std::vector<int> axes, bool keepdims = false);
Var sum_all(Var x);
Var mean_all(Var x);

Var softmax(Var x, int axis);

inline constexpr double kNormEps = 1e-5;
// Zero mean, unit variance over the given axes (biased variance, eps-regularized).
Var normalize_axes(Var x, std::vector<int> axes, double eps = kNormEps);
Var layer_norm(Var x, int axis, double eps = kNormEps);
Var instance_norm(Var x, double eps = kNormEps);  // per axis-0 slice over the rest

// Linear rearrangement: out[i] = x[map[i]] (map entry -1 reads 0).
Var gather_linear(Var x, std::shared_ptr<const std::vector<int64_t>> map, Shape out_shape);
Var pad(Var x, const std::vector<std::pair<int, int>>& lo_hi);

// x: [C,H,W]
Var upsample_bilinear2d(Var x, int factor);
Var avg_pool2d(Var x, int factor);

// x: [Cin,D,H,W], k: [Cout,Cin/groups,kd,kh,kw]. Cross-correlation semantics.
Var conv3d(Var x, Var k, std::array<int, 3> stride, std::array<int, 3> padding, int groups = 1);
Var conv3d_same(Var x, Var k, int groups = 1);
// x: [C,H,W], k: [Cout,Cin,kh,kw]
Var conv2d(Var x, Var k, int stride, int padding);
Var conv2d_same(Var x, Var k);
// Stride-2 transposed conv, k: [Cin,Cout,2,2,2]; output doubles each spatial extent.
Var conv_transpose3d_x2(Var x, Var k);

// vol: [D,H,W] cost volume, disp: plain [H,W] lookup positions (not differentiated).
// out: [2r+1,H,W], linear interpolation along the disparity axis, clamped.
Var volume_lookup(Var vol, const Tensor& disp, int radius);

}  // namespace nk
