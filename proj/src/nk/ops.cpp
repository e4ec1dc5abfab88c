#include "nk/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nk {

namespace {

Graph& same_graph(Var a, Var b) {
    if (a.graph == nullptr || a.graph != b.graph) throw std::invalid_argument("vars from different graphs");
    return *a.graph;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
    const int r = std::max(ra, rb);
    Shape out(static_cast<size_t>(r), 1);
    for (int i = 0; i < r; ++i) {
        const int ea = i < r - ra ? 1 : a[static_cast<size_t>(i - (r - ra))];
        const int eb = i < r - rb ? 1 : b[static_cast<size_t>(i - (r - rb))];
        if (ea != eb && ea != 1 && eb != 1) {
            throw std::invalid_argument("shapes not broadcastable: " + shape_str(a) + " vs " + shape_str(b));
        }
        out[static_cast<size_t>(i)] = std::max(ea, eb);
    }
    return out;
}

// Strides of `operand` laid out against the broadcast output shape (0 where broadcast).
std::vector<int64_t> bcast_strides(const Shape& out, const Shape& operand) {
    const int r = static_cast<int>(out.size());
    const int ro = static_cast<int>(operand.size());
    const auto os = strides_of(operand);
    std::vector<int64_t> s(static_cast<size_t>(r), 0);
    for (int i = 0; i < ro; ++i) {
        const int oi = r - ro + i;
        s[static_cast<size_t>(oi)] = operand[static_cast<size_t>(i)] == 1 ? 0 : os[static_cast<size_t>(i)];
    }
    return s;
}

// Calls fn(out_linear, a_linear, b_linear) over the broadcast index space.
template <typename Fn>
void for_each_bcast(const Shape& out, const Shape& a, const Shape& b, Fn&& fn) {
    const int64_t n = numel(out);
    const int r = static_cast<int>(out.size());
    if (r == 0) {
        fn(0, 0, 0);
        return;
    }
    const auto sa = bcast_strides(out, a);
    const auto sb = bcast_strides(out, b);
    std::vector<int> idx(static_cast<size_t>(r), 0);
    int64_t ia = 0, ib = 0;
    for (int64_t i = 0; i < n; ++i) {
        fn(i, ia, ib);
        for (int ax = r - 1; ax >= 0; --ax) {
            auto& c = idx[static_cast<size_t>(ax)];
            ++c;
            ia += sa[static_cast<size_t>(ax)];
            ib += sb[static_cast<size_t>(ax)];
            if (c < out[static_cast<size_t>(ax)]) break;
            ia -= sa[static_cast<size_t>(ax)] * c;
            ib -= sb[static_cast<size_t>(ax)] * c;
            c = 0;
        }
    }
}

enum class BinOp { Add, Sub, Mul, Div };

Var binary(BinOp op, const char* name, Var a, Var b) {
    Graph& g = same_graph(a, b);
    const Tensor& va = g.val(a);
    const Tensor& vb = g.val(b);
    const Shape oshape = broadcast_shape(va.shape(), vb.shape());
    Tensor out(oshape);
    for_each_bcast(oshape, va.shape(), vb.shape(), [&](int64_t i, int64_t ia, int64_t ib) {
        const double x = va[ia], y = vb[ib];
        switch (op) {
            case BinOp::Add: out[i] = x + y; break;
            case BinOp::Sub: out[i] = x - y; break;
            case BinOp::Mul: out[i] = x * y; break;
            case BinOp::Div: out[i] = x / y; break;
        }
    });
    const int aid = a.id, bid = b.id;
    return g.make(name, std::move(out), {aid, bid}, [op, aid, bid, oshape](Graph& gg, int self) {
        const Tensor& go = gg.grad_ref(self);
        const Tensor& va2 = gg.val_of(aid);
        const Tensor& vb2 = gg.val_of(bid);
        const bool need_a = gg.node_requires_grad(aid);
        const bool need_b = gg.node_requires_grad(bid);
        Tensor* ga = need_a ? &gg.grad_ref(aid) : nullptr;
        Tensor* gb = need_b ? &gg.grad_ref(bid) : nullptr;
        for_each_bcast(oshape, va2.shape(), vb2.shape(), [&](int64_t i, int64_t ia, int64_t ib) {
            const double d = go[i];
            switch (op) {
                case BinOp::Add:
                    if (ga) (*ga)[ia] += d;
                    if (gb) (*gb)[ib] += d;
                    break;
                case BinOp::Sub:
                    if (ga) (*ga)[ia] += d;
                    if (gb) (*gb)[ib] -= d;
                    break;
                case BinOp::Mul:
                    if (ga) (*ga)[ia] += d * vb2[ib];
                    if (gb) (*gb)[ib] += d * va2[ia];
                    break;
                case BinOp::Div: {
                    const double inv = 1.0 / vb2[ib];
                    if (ga) (*ga)[ia] += d * inv;
                    if (gb) (*gb)[ib] -= d * va2[ia] * inv * inv;
                    break;
                }
            }
        });
    });
}

template <typename FwdFn, typename BwdFn>
Var unary(const char* name, Var x, FwdFn fwd, BwdFn dfdx_from_x_and_y) {
    Graph& g = *x.graph;
    const Tensor& vx = g.val(x);
    Tensor out(vx.shape());
    for (int64_t i = 0; i < vx.size(); ++i) out[i] = fwd(vx[i]);
    const int xid = x.id;
    return g.make(name, std::move(out), {xid}, [xid, dfdx_from_x_and_y](Graph& gg, int self) {
        if (!gg.node_requires_grad(xid)) return;
        const Tensor& go = gg.grad_ref(self);
        const Tensor& y = gg.val_of(self);
        const Tensor& vx2 = gg.val_of(xid);
        Tensor& gx = gg.grad_ref(xid);
        for (int64_t i = 0; i < y.size(); ++i) gx[i] += go[i] * dfdx_from_x_and_y(vx2[i], y[i]);
    });
}

std::vector<int> normalize_axes_list(const Shape& shape, std::vector<int> axes) {
    const int r = static_cast<int>(shape.size());
    if (axes.empty()) {
        axes.resize(static_cast<size_t>(r));
        for (int i = 0; i < r; ++i) axes[static_cast<size_t>(i)] = i;
        return axes;
    }
    for (int& a : axes) {
        if (a < 0) a += r;
        if (a < 0 || a >= r) throw std::invalid_argument("reduction axis out of range for " + shape_str(shape));
    }
    std::sort(axes.begin(), axes.end());
    axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
    return axes;
}

// For reductions/normalization: linear index of the reduced-group cell for each element.
struct GroupIndexer {
    Shape in_shape;
    std::vector<char> reduced;     // per axis
    std::vector<int64_t> in_strides;
    std::vector<int64_t> group_strides;  // stride in group space per input axis (0 if reduced)
    int64_t group_count = 1;
    int64_t group_size = 1;

    GroupIndexer(const Shape& shape, const std::vector<int>& axes) {
        in_shape = shape;
        const int r = static_cast<int>(shape.size());
        reduced.assign(static_cast<size_t>(r), 0);
        for (int a : axes) reduced[static_cast<size_t>(a)] = 1;
        in_strides = strides_of(shape);
        group_strides.assign(static_cast<size_t>(r), 0);
        int64_t gs = 1;
        for (int i = r - 1; i >= 0; --i) {
            if (!reduced[static_cast<size_t>(i)]) {
                group_strides[static_cast<size_t>(i)] = gs;
                gs *= shape[static_cast<size_t>(i)];
            } else {
                group_size *= shape[static_cast<size_t>(i)];
            }
        }
        group_count = gs;
    }

    template <typename Fn>
    void for_each(Fn&& fn) const {  // fn(in_linear, group_linear)
        const int r = static_cast<int>(in_shape.size());
        const int64_t n = numel(in_shape);
        if (r == 0) {
            fn(0, 0);
            return;
        }
        std::vector<int> idx(static_cast<size_t>(r), 0);
        int64_t gi = 0;
        for (int64_t i = 0; i < n; ++i) {
            fn(i, gi);
            for (int ax = r - 1; ax >= 0; --ax) {
                auto& c = idx[static_cast<size_t>(ax)];
                ++c;
                gi += group_strides[static_cast<size_t>(ax)];
                if (c < in_shape[static_cast<size_t>(ax)]) break;
                gi -= group_strides[static_cast<size_t>(ax)] * c;
                c = 0;
            }
        }
    }

    Shape out_shape(bool keepdims) const {
        Shape out;
        for (size_t i = 0; i < in_shape.size(); ++i) {
            if (!reduced[i]) {
                out.push_back(in_shape[i]);
            } else if (keepdims) {
                out.push_back(1);
            }
        }
        return out;
    }
};

Tensor permute_tensor(const Tensor& x, const std::vector<int>& perm) {
    const int r = x.rank();
    if (static_cast<int>(perm.size()) != r) throw std::invalid_argument("permute rank mismatch");
    std::vector<char> seen(static_cast<size_t>(r), 0);
    Shape oshape(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) {
        const int p = perm[static_cast<size_t>(i)];
        if (p < 0 || p >= r || seen[static_cast<size_t>(p)]) throw std::invalid_argument("invalid permutation");
        seen[static_cast<size_t>(p)] = 1;
        oshape[static_cast<size_t>(i)] = x.extent(p);
    }
    Tensor out(oshape);
    if (r == 0) {
        out[0] = x[0];
        return out;
    }
    const auto in_strides = strides_of(x.shape());
    std::vector<int64_t> walk(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) walk[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    std::vector<int> idx(static_cast<size_t>(r), 0);
    int64_t src = 0;
    for (int64_t i = 0; i < out.size(); ++i) {
        out[i] = x[src];
        for (int ax = r - 1; ax >= 0; --ax) {
            auto& c = idx[static_cast<size_t>(ax)];
            ++c;
            src += walk[static_cast<size_t>(ax)];
            if (c < oshape[static_cast<size_t>(ax)]) break;
            src -= walk[static_cast<size_t>(ax)] * c;
            c = 0;
        }
    }
    return out;
}

}  // namespace

Var add(Var a, Var b) { return binary(BinOp::Add, "add", a, b); }
Var sub(Var a, Var b) { return binary(BinOp::Sub, "sub", a, b); }
Var mul(Var a, Var b) { return binary(BinOp::Mul, "mul", a, b); }
Var div(Var a, Var b) { return binary(BinOp::Div, "div", a, b); }

Var add_scalar(Var a, double s) {
    return unary("add_scalar", a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var mul_scalar(Var a, double s) {
    return unary("mul_scalar", a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Var neg(Var a) { return mul_scalar(a, -1.0); }

Var relu(Var x) {
    return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
                 [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var x) {
    return unary("sigmoid", x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
                 [](double, double y) { return y * (1.0 - y); });
}

Var tanh_op(Var x) {
    return unary("tanh", x, [](double v) { return std::tanh(v); },
                 [](double, double y) { return 1.0 - y * y; });
}

Var silu(Var x) {
    return unary("silu", x, [](double v) { return v / (1.0 + std::exp(-v)); },
                 [](double v, double) {
                     const double s = 1.0 / (1.0 + std::exp(-v));
                     return s * (1.0 + v * (1.0 - s));
                 });
}

Var exp_op(Var x) {
    return unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log_op(Var x) {
    return unary("log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var sqrt_op(Var x) {
    return unary("sqrt", x, [](double v) { return std::sqrt(v); },
                 [](double, double y) { return 0.5 / std::max(y, 1e-150); });
}

Var abs_op(Var x) {
    return unary("abs", x, [](double v) { return std::fabs(v); },
                 [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var square(Var x) {
    return unary("square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var clamp(Var x, double lo, double hi) {
    if (!(lo <= hi)) throw std::invalid_argument("clamp bounds out of order");
    return unary("clamp", x, [lo, hi](double v) { return std::min(std::max(v, lo), hi); },
                 [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Var matmul(Var a, Var b) {
    Graph& g = same_graph(a, b);
    const Tensor& va = g.val(a);
    const Tensor& vb = g.val(b);
    if (va.rank() != 2 || vb.rank() != 2 || va.extent(1) != vb.extent(0)) {
        throw std::invalid_argument("matmul shape mismatch: " + shape_str(va.shape()) + " x " + shape_str(vb.shape()));
    }
    const int m = va.extent(0), k = va.extent(1), n = vb.extent(1);
    Tensor out({m, n}, 0.0);
    {
        const double* A = va.data();
        const double* B = vb.data();
        double* C = out.data();
        for (int i = 0; i < m; ++i) {
            for (int p = 0; p < k; ++p) {
                const double aip = A[i * k + p];
                if (aip == 0.0) continue;
                const double* Bp = B + p * n;
                double* Ci = C + i * n;
                for (int j = 0; j < n; ++j) Ci[j] += aip * Bp[j];
            }
        }
    }
    const int aid = a.id, bid = b.id;
    return g.make("matmul", std::move(out), {aid, bid}, [aid, bid, m, k, n](Graph& gg, int self) {
        const double* Gc = gg.grad_ref(self).data();
        const double* A = gg.val_of(aid).data();
        const double* B = gg.val_of(bid).data();
        if (gg.node_requires_grad(aid)) {
            double* Ga = gg.grad_ref(aid).data();
            for (int i = 0; i < m; ++i) {
                for (int p = 0; p < k; ++p) {
                    double acc = 0.0;
                    const double* Gi = Gc + i * n;
                    const double* Bp = B + p * n;
                    for (int j = 0; j < n; ++j) acc += Gi[j] * Bp[j];
                    Ga[i * k + p] += acc;
                }
            }
        }
        if (gg.node_requires_grad(bid)) {
            double* Gb = gg.grad_ref(bid).data();
            for (int i = 0; i < m; ++i) {
                const double* Gi = Gc + i * n;
                for (int p = 0; p < k; ++p) {
                    const double aip = A[i * k + p];
                    if (aip == 0.0) continue;
                    double* Gbp = Gb + p * n;
                    for (int j = 0; j < n; ++j) Gbp[j] += aip * Gi[j];
                }
            }
        }
    });
}

Var reshape(Var x, Shape shape) {
    Graph& g = *x.graph;
    Tensor out = g.val(x).reshaped(std::move(shape));
    const int xid = x.id;
    return g.make("reshape", std::move(out), {xid}, [xid](Graph& gg, int self) {
        if (!gg.node_requires_grad(xid)) return;
        const Tensor& go = gg.grad_ref(self);
        Tensor& gx = gg.grad_ref(xid);
        for (int64_t i = 0; i < go.size(); ++i) gx[i] += go[i];
    });
}

Var permute(Var x, std::vector<int> perm) {
    Graph& g = *x.graph;
    Tensor out = permute_tensor(g.val(x), perm);
    std::vector<int> inv(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) inv[static_cast<size_t>(perm[i])] = static_cast<int>(i);
    const int xid = x.id;
    return g.make("permute", std::move(out), {xid}, [xid, inv](Graph& gg, int self) {
        if (!gg.node_requires_grad(xid)) return;
        Tensor back = permute_tensor(gg.grad_ref(self), inv);
        Tensor& gx = gg.grad_ref(xid);
        for (int64_t i = 0; i < back.size(); ++i) gx[i] += back[i];
    });
}

Var concat(const std::vector<Var>& xs, int axis) {
    if (xs.empty()) throw std::invalid_argument("concat of zero tensors");
    Graph& g = *xs[0].graph;
    const Tensor& first = g.val(xs[0]);
    int r = first.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw std::invalid_argument("concat axis out of range");
    Shape oshape = first.shape();
    int total = 0;
    std::vector<int> extents;
    for (const Var& v : xs) {
        const Tensor& t = g.val(v);
        if (t.rank() != r) throw std::invalid_argument("concat rank mismatch");
        for (int i = 0; i < r; ++i) {
            if (i != axis && t.extent(i) != first.extent(i)) throw std::invalid_argument("concat extent mismatch");
        }
        extents.push_back(t.extent(axis));
        total += t.extent(axis);
    }
    oshape[static_cast<size_t>(axis)] = total;

    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= first.extent(i);
    for (int i = axis + 1; i < r; ++i) inner *= first.extent(i);

    Tensor out(oshape);
    std::vector<int> ids;
    int64_t off = 0;
    for (size_t t = 0; t < xs.size(); ++t) {
        const Tensor& src = g.val(xs[t]);
        const int64_t block = extents[t] * inner;
        for (int64_t o = 0; o < outer; ++o) {
            std::copy_n(src.data() + o * block, block, out.data() + o * total * inner + off);
        }
        off += block;
        ids.push_back(xs[t].id);
    }
    return g.make("concat", std::move(out), ids, [ids, extents, outer, inner, total](Graph& gg, int self) {
        const Tensor& go = gg.grad_ref(self);
        int64_t off2 = 0;
        for (size_t t = 0; t < ids.size(); ++t) {
            const int64_t block = extents[t] * inner;
            if (gg.node_requires_grad(ids[t])) {
                Tensor& gx = gg.grad_ref(ids[t]);
                for (int64_t o = 0; o < outer; ++o) {
                    const double* src = go.data() + o * total * inner + off2;
                    double* dst = gx.data() + o * block;
                    for (int64_t i = 0; i < block; ++i) dst[i] += src[i];
                }
            }
            off2 += block;
        }
    });
}

Var slice(Var x, int axis, int start, int len) {
    Graph& g = *x.graph;
    const Tensor& vx = g.val(x);
    const int r = vx.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw std::invalid_argument("slice axis out of range");
    if (start < 0 || len <= 0 || start + len > vx.extent(axis)) throw std::invalid_argument("slice range out of bounds");
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= vx.extent(i);
    for (int i = axis + 1; i < r; ++i) inner *= vx.extent(i);
    const int e = vx.extent(axis);
    Shape oshape = vx.shape();
    oshape[static_cast<size_t>(axis)] = len;
    Tensor out(oshape);
    for (int64_t o = 0; o < outer; ++o) {
        std::copy_n(vx.data() + (o * e + start) * inner, static_cast<int64_t>(len) * inner,
                    out.data() + o * len * inner);
    }
    const int xid = x.id;
    return g.make("slice", std::move(out), {xid}, [xid, outer, inner, e, start, len](Graph& gg, int self) {
        if (!gg.node_requires_grad(xid)) return;
        const Tensor& go = gg.grad_ref(self);
        Tensor& gx = gg.grad_ref(xid);
        for (int64_t o = 0; o < outer; ++o) {
            const double* src = go.data() + o * len * inner;
            double* dst = gx.data() + (o * e + start) * inner;
            for (int64_t i = 0; i < static_cast<int64_t>(len) * inner; ++i) dst[i] += src[i];
        }
    });
}

Var flip(Var x, const std::vector<int>& axes) {
    Graph& g = *x.graph;
    const Tensor& vx = g.val(x);
    const auto ax = normalize_axes_list(vx.shape(), axes);
    std::vector<char> flipped(static_cast<size_t>(vx.rank()), 0);
    for (int a : ax) flipped[static_cast<size_t>(a)] = 1;
    auto map = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(vx.size()));
    const int r = vx.rank();
    const auto st = strides_of(vx.shape());
    std::vector<int> idx(static_cast<size_t>(r), 0);
    for (int64_t i = 0; i < vx.size(); ++i) {
        int64_t src = 0;
        for (int a = 0; a < r; ++a) {
            const int c = flipped[static_cast<size_t>(a)] ? vx.extent(a) - 1 - idx[static_cast<size_t>(a)]
                                                          : idx[static_cast<size_t>(a)];
            src += c * st[static_cast<size_t>(a)];
        }
        (*map)[static_cast<size_t>(i)] = src;
        for (int a = r - 1; a >= 0; --a) {
            if (++idx[static_cast<size_t>(a)] < vx.extent(a)) break;
            idx[static_cast<size_t>(a)] = 0;
        }
    }
    return gather_linear(x, map, vx.shape());
}

Var sum(Var x, std::vector<int> axes, bool keepdims) {
    Graph& g = *x.graph;
    const Tensor& vx = g.val(x);
    const auto ax = normalize_axes_list(vx.shape(), std::move(axes));
    auto gi = std::make_shared<GroupIndexer>(vx.shape(), ax);
    Tensor out(gi->out_shape(keepdims), 0.0);
    gi->for_each([&](int64_t i, int64_t grp) { out[grp] += vx[i]; });
    const int xid = x.id;
    return g.make("sum", std::move(out), {xid}, [xid, gi](Graph& gg, int self) {
        if (!gg.node_requires_grad(xid)) return;
        const Tensor& go = gg.grad_ref(self);
        Tensor& gx = gg.grad_ref(xid);
        gi->for_each([&](int64_t i, int64_t grp) { gx[i] += go[grp]; });
    });
}

Var mean(Var x, std::vector<int> axes, bool keepdims) {
    Graph& g = *x.graph;
    const Tensor& vx = g.val(x);
    const auto ax = normalize_axes_list(vx.shape(), std::move(axes));
    auto gi = std::make_shared<GroupIndexer>(vx.shape(), ax);
    if (gi->group_size == 0) throw std::invalid_argument("mean over empty axis");
    const double inv = 1.0 / static_cast<double>(gi->group_size);
    Tensor out(gi->out_shape(keepdims), 0.0);
    gi->for_each([&](int64_t i, int64_t grp) { out[grp] += vx[i] * inv; });
    const int xid = x.id;
    return g.make("mean", std::move(out), {xid}, [xid, gi, inv](Graph& gg, int self) {
        if (!gg.node_requires_grad(xid)) return;
        const Tensor& go = gg.grad_ref(self);
        Tensor& gx = gg.grad_ref(xid);
        gi->for_each([&](int64_t i, int64_t grp) { gx[i] += go[grp] * inv; });
    });
}

Var max_reduce(Var x, std::vector<int> axes, bool keepdims) {
    Graph& g = *x.graph;
    const Tensor& vx = g.val(x);
    const auto ax = normalize_axes_list(vx.shape(), std::move(axes));
    auto gi = std::make_shared<GroupIndexer>(vx.shape(), ax);
    Tensor out(gi->out_shape(keepdims), 0.0);
    auto arg = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(gi->group_count), -1);
    gi->for_each([&](int64_t i, int64_t grp) {
        auto& a = (*arg)[static_cast<size_t>(grp)];
        if (a < 0 || vx[i] > out[grp]) {
            a = i;
            out[grp] = vx[i];
        }
    });
    const int xid = x.id;
    return g.make("max", std::move(out), {xid}, [xid, arg](Graph& gg, int self) {
        if (!gg.node_requires_grad(xid)) return;
        const Tensor& go = gg.grad_ref(self);
        Tensor& gx = gg.grad_ref(xid);
        for (int64_t grp = 0; grp < go.size(); ++grp) {
            gx[(*arg)[static_cast<size_t>(grp)]] += go[grp];
        }
    });
}

Var sum_all(Var x) { return sum(x, {}, false); }
Var mean_all(Var x) { return mean(x, {}, false); }

Var softmax(Var x, int axis) {
    Graph& g = *x.graph;
    const Tensor& vx = g.val(x);
    const int r = vx.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw std::invalid_argument("softmax axis out of range");
    const int m = vx.extent(axis);
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= vx.extent(i);
    for (int i = axis + 1; i < r; ++i) inner *= vx.extent(i);
    Tensor out(vx.shape());
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
            const int64_t base = o * m * inner + in;
            double mx = vx[base];
            for (int j = 1; j < m; ++j) mx = std::max(mx, vx[base + j * inner]);
            double z = 0.0;
            for (int j = 0; j < m; ++j) {
                const double e = std::exp(vx[base + j * inner] - mx);
                out[base + j * inner] = e;
                z += e;
            }
            const double invz = 1.0 / z;
            for (int j = 0; j < m; ++j) out[base + j * inner] *= invz;
        }
    }
    const int xid = x.id;
    return g.make("softmax", std::move(out), {xid}, [xid, outer, inner, m](Graph& gg, int self) {
        if (!gg.node_requires_grad(xid)) return;
        const Tensor& go = gg.grad_ref(self);
        const Tensor& y = gg.val_of(self);
        Tensor& gx = gg.grad_ref(xid);
        for (int64_t o = 0; o < outer; ++o) {
            for (int64_t in = 0; in < inner; ++in) {
                const int64_t base = o * m * inner + in;
                double dot = 0.0;
                for (int j = 0; j < m; ++j) dot += go[base + j * inner] * y[base + j * inner];
                for (int j = 0; j < m; ++j) {
                    gx[base + j * inner] += y[base + j * inner] * (go[base + j * inner] - dot);
                }
            }
        }
    });
}

Var normalize_axes(Var x, std::vector<int> axes, double eps) {
    Graph& g = *x.graph;
    const Tensor& vx = g.val(x);
    const auto ax = normalize_axes_list(vx.shape(), std::move(axes));
    auto gi = std::make_shared<GroupIndexer>(vx.shape(), ax);
    const int64_t gc = gi->group_count;
    const double invm = 1.0 / static_cast<double>(gi->group_size);
    std::vector<double> mu(static_cast<size_t>(gc), 0.0);
    std::vector<double> sq(static_cast<size_t>(gc), 0.0);
    gi->for_each([&](int64_t i, int64_t grp) {
        mu[static_cast<size_t>(grp)] += vx[i];
        sq[static_cast<size_t>(grp)] += vx[i] * vx[i];
    });
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(gc));
    for (int64_t grp = 0; grp < gc; ++grp) {
        mu[static_cast<size_t>(grp)] *= invm;
        const double var = sq[static_cast<size_t>(grp)] * invm - mu[static_cast<size_t>(grp)] * mu[static_cast<size_t>(grp)];
        (*inv_std)[static_cast<size_t>(grp)] = 1.0 / std::sqrt(std::max(var, 0.0) + eps);
    }
    Tensor out(vx.shape());
    gi->for_each([&](int64_t i, int64_t grp) {
        out[i] = (vx[i] - mu[static_cast<size_t>(grp)]) * (*inv_std)[static_cast<size_t>(grp)];
    });
    const int xid = x.id;
    return g.make("normalize", std::move(out), {xid}, [xid, gi, inv_std, invm](Graph& gg, int self) {
        if (!gg.node_requires_grad(xid)) return;
        const Tensor& go = gg.grad_ref(self);
        const Tensor& y = gg.val_of(self);
        Tensor& gx = gg.grad_ref(xid);
        const int64_t gc2 = gi->group_count;
        std::vector<double> m1(static_cast<size_t>(gc2), 0.0);
        std::vector<double> m2(static_cast<size_t>(gc2), 0.0);
        gi->for_each([&](int64_t i, int64_t grp) {
            m1[static_cast<size_t>(grp)] += go[i];
            m2[static_cast<size_t>(grp)] += go[i] * y[i];
        });
        for (int64_t grp = 0; grp < gc2; ++grp) {
            m1[static_cast<size_t>(grp)] *= invm;
            m2[static_cast<size_t>(grp)] *= invm;
        }
        gi->for_each([&](int64_t i, int64_t grp) {
            gx[i] += (*inv_std)[static_cast<size_t>(grp)] *
                     (go[i] - m1[static_cast<size_t>(grp)] - y[i] * m2[static_cast<size_t>(grp)]);
        });
    });
}

Var layer_norm(Var x, int axis, double eps) { return normalize_axes(x, {axis}, eps); }

Var instance_norm(Var x, double eps) {
    const Tensor& vx = x.graph->val(x);
    if (vx.rank() < 2) throw std::invalid_argument("instance_norm needs rank >= 2");
    std::vector<int> axes;
    for (int i = 1; i < vx.rank(); ++i) axes.push_back(i);
    return normalize_axes(x, axes, eps);
}

Var gather_linear(Var x, std::shared_ptr<const std::vector<int64_t>> map, Shape out_shape) {
    Graph& g = *x.graph;
    const Tensor& vx = g.val(x);
    if (static_cast<int64_t>(map->size()) != numel(out_shape)) {
        throw std::invalid_argument("gather map size does not match output shape");
    }
    Tensor out(out_shape);
    for (int64_t i = 0; i < out.size(); ++i) {
        const int64_t s = (*map)[static_cast<size_t>(i)];
        out[i] = s >= 0 ? vx[s] : 0.0;
    }
    const int xid = x.id;
    return g.make("gather", std::move(out), {xid}, [xid, map](Graph& gg, int self) {
        if (!gg.node_requires_grad(xid)) return;
        const Tensor& go = gg.grad_ref(self);
        Tensor& gx = gg.grad_ref(xid);
        for (int64_t i = 0; i < go.size(); ++i) {
            const int64_t s = (*map)[static_cast<size_t>(i)];
            if (s >= 0) gx[s] += go[i];
        }
    });
}

Var pad(Var x, const std::vector<std::pair<int, int>>& lo_hi) {
    Graph& g = *x.graph;
    const Tensor& vx = g.val(x);
    const int r = vx.rank();
    if (static_cast<int>(lo_hi.size()) != r) throw std::invalid_argument("pad spec rank mismatch");
    Shape oshape(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) {
        if (lo_hi[static_cast<size_t>(i)].first < 0 || lo_hi[static_cast<size_t>(i)].second < 0) {
            throw std::invalid_argument("negative padding");
        }
        oshape[static_cast<size_t>(i)] =
            vx.extent(i) + lo_hi[static_cast<size_t>(i)].first + lo_hi[static_cast<size_t>(i)].second;
    }
    auto map = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(numel(oshape)));
    const auto st = strides_of(vx.shape());
    std::vector<int> idx(static_cast<size_t>(r), 0);
    for (int64_t i = 0; i < static_cast<int64_t>(map->size()); ++i) {
        int64_t src = 0;
        bool ok = true;
        for (int a = 0; a < r; ++a) {
            const int c = idx[static_cast<size_t>(a)] - lo_hi[static_cast<size_t>(a)].first;
            if (c < 0 || c >= vx.extent(a)) {
                ok = false;
                break;
            }
            src += c * st[static_cast<size_t>(a)];
        }
        (*map)[static_cast<size_t>(i)] = ok ? src : -1;
        for (int a = r - 1; a >= 0; --a) {
            if (++idx[static_cast<size_t>(a)] < oshape[static_cast<size_t>(a)]) break;
            idx[static_cast<size_t>(a)] = 0;
        }
    }
    return gather_linear(x, map, oshape);
}

namespace {

struct BilinearTap {
    int i0, i1;
    double f;  // weight of i1
};

std::vector<BilinearTap> bilinear_taps(int in_extent, int factor) {
    std::vector<BilinearTap> taps(static_cast<size_t>(in_extent * factor));
    for (int o = 0; o < in_extent * factor; ++o) {
        const double s = (o + 0.5) / factor - 0.5;
        int i0 = static_cast<int>(std::floor(s));
        double f = s - i0;
        int i1 = i0 + 1;
        if (i0 < 0) {
            i0 = i1 = 0;
            f = 0.0;
        } else if (i1 > in_extent - 1) {
            i0 = i1 = in_extent - 1;
            f = 0.0;
        }
        taps[static_cast<size_t>(o)] = {i0, i1, f};
    }
    return taps;
}

}  // namespace

Var upsample_bilinear2d(Var x, int factor) {
    Graph& g = *x.graph;
    const Tensor& vx = g.val(x);
    if (vx.rank() != 3) throw std::invalid_argument("upsample_bilinear2d expects [C,H,W]");
    if (factor < 1) throw std::invalid_argument("upsample factor must be >= 1");
    const int C = vx.extent(0), H = vx.extent(1), W = vx.extent(2);
    const int OH = H * factor, OW = W * factor;
    auto rows = std::make_shared<std::vector<BilinearTap>>(bilinear_taps(H, factor));
    auto cols = std::make_shared<std::vector<BilinearTap>>(bilinear_taps(W, factor));
    Tensor out({C, OH, OW});
    for (int c = 0; c < C; ++c) {
        const double* src = vx.data() + static_cast<int64_t>(c) * H * W;
        double* dst = out.data() + static_cast<int64_t>(c) * OH * OW;
        for (int y = 0; y < OH; ++y) {
            const auto& ry = (*rows)[static_cast<size_t>(y)];
            for (int xo = 0; xo < OW; ++xo) {
                const auto& cx = (*cols)[static_cast<size_t>(xo)];
                const double v00 = src[ry.i0 * W + cx.i0], v01 = src[ry.i0 * W + cx.i1];
                const double v10 = src[ry.i1 * W + cx.i0], v11 = src[ry.i1 * W + cx.i1];
                dst[y * OW + xo] = (1 - ry.f) * ((1 - cx.f) * v00 + cx.f * v01) + ry.f * ((1 - cx.f) * v10 + cx.f * v11);
            }
        }
    }
    const int xid = x.id;
    return g.make("upsample_bilinear2d", std::move(out), {xid}, [xid, rows, cols, C, H, W, OH, OW](Graph& gg, int self) {
        if (!gg.node_requires_grad(xid)) return;
        const Tensor& go = gg.grad_ref(self);
        Tensor& gx = gg.grad_ref(xid);
        for (int c = 0; c < C; ++c) {
            double* dst = gx.data() + static_cast<int64_t>(c) * H * W;
            const double* src = go.data() + static_cast<int64_t>(c) * OH * OW;
            for (int y = 0; y < OH; ++y) {
                const auto& ry = (*rows)[static_cast<size_t>(y)];
                for (int xo = 0; xo < OW; ++xo) {
                    const auto& cx = (*cols)[static_cast<size_t>(xo)];
                    const double d = src[y * OW + xo];
                    dst[ry.i0 * W + cx.i0] += (1 - ry.f) * (1 - cx.f) * d;
                    dst[ry.i0 * W + cx.i1] += (1 - ry.f) * cx.f * d;
                    dst[ry.i1 * W + cx.i0] += ry.f * (1 - cx.f) * d;
                    dst[ry.i1 * W + cx.i1] += ry.f * cx.f * d;
                }
            }
        }
    });
}

Var avg_pool2d(Var x, int factor) {
    Graph& g = *x.graph;
    const Tensor& vx = g.val(x);
    if (vx.rank() != 3) throw std::invalid_argument("avg_pool2d expects [C,H,W]");
    const int C = vx.extent(0), H = vx.extent(1), W = vx.extent(2);
    if (factor < 1 || H % factor != 0 || W % factor != 0) {
        throw std::invalid_argument("avg_pool2d factor must divide spatial extents");
    }
    const int OH = H / factor, OW = W / factor;
    const double inv = 1.0 / (factor * factor);
    Tensor out({C, OH, OW}, 0.0);
    for (int c = 0; c < C; ++c) {
        for (int y = 0; y < H; ++y) {
            for (int xo = 0; xo < W; ++xo) {
                out[(static_cast<int64_t>(c) * OH + y / factor) * OW + xo / factor] +=
                    vx[(static_cast<int64_t>(c) * H + y) * W + xo] * inv;
            }
        }
    }
    const int xid = x.id;
    return g.make("avg_pool2d", std::move(out), {xid}, [xid, C, H, W, OH, OW, factor, inv](Graph& gg, int self) {
        if (!gg.node_requires_grad(xid)) return;
        const Tensor& go = gg.grad_ref(self);
        Tensor& gx = gg.grad_ref(xid);
        for (int c = 0; c < C; ++c) {
            for (int y = 0; y < H; ++y) {
                for (int xo = 0; xo < W; ++xo) {
                    gx[(static_cast<int64_t>(c) * H + y) * W + xo] +=
                        go[(static_cast<int64_t>(c) * OH + y / factor) * OW + xo / factor] * inv;
                }
            }
        }
    });
}

Var conv3d(Var x, Var k, std::array<int, 3> stride, std::array<int, 3> padding, int groups) {
    Graph& g = same_graph(x, k);
    const Tensor& vx = g.val(x);
    const Tensor& vk = g.val(k);
    if (vx.rank() != 4 || vk.rank() != 5) throw std::invalid_argument("conv3d expects x[Cin,D,H,W], k[Cout,Cin/g,kd,kh,kw]");
    const int cin = vx.extent(0), D = vx.extent(1), H = vx.extent(2), W = vx.extent(3);
    const int cout = vk.extent(0), ckg = vk.extent(1), kd = vk.extent(2), kh = vk.extent(3), kw = vk.extent(4);
    if (groups < 1 || cin % groups != 0 || cout % groups != 0 || ckg != cin / groups) {
        throw std::invalid_argument("conv3d channel/group mismatch");
    }
    for (int s : stride) {
        if (s < 1) throw std::invalid_argument("conv3d stride must be >= 1");
    }
    const int od = (D + 2 * padding[0] - kd) / stride[0] + 1;
    const int oh = (H + 2 * padding[1] - kh) / stride[1] + 1;
    const int ow = (W + 2 * padding[2] - kw) / stride[2] + 1;
    if (od <= 0 || oh <= 0 || ow <= 0 || D + 2 * padding[0] < kd || H + 2 * padding[1] < kh || W + 2 * padding[2] < kw) {
        throw std::invalid_argument("conv3d output extent not positive");
    }

    // Unfold into [Cin*kd*kh*kw, od*oh*ow]; kernel reshapes to [Cout, Cin/g*kd*kh*kw].
    const int64_t cols = static_cast<int64_t>(od) * oh * ow;
    const int64_t patch = static_cast<int64_t>(kd) * kh * kw;
    auto map = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(cin * patch * cols));
    int64_t w_idx = 0;
    for (int c = 0; c < cin; ++c) {
        for (int zd = 0; zd < kd; ++zd) {
            for (int zh = 0; zh < kh; ++zh) {
                for (int zw = 0; zw < kw; ++zw) {
                    for (int odi = 0; odi < od; ++odi) {
                        const int sd = odi * stride[0] - padding[0] + zd;
                        for (int ohi = 0; ohi < oh; ++ohi) {
                            const int sh = ohi * stride[1] - padding[1] + zh;
                            for (int owi = 0; owi < ow; ++owi) {
                                const int sw = owi * stride[2] - padding[2] + zw;
                                const bool ok = sd >= 0 && sd < D && sh >= 0 && sh < H && sw >= 0 && sw < W;
                                (*map)[static_cast<size_t>(w_idx++)] =
                                    ok ? ((static_cast<int64_t>(c) * D + sd) * H + sh) * W + sw : -1;
                            }
                        }
                    }
                }
            }
        }
    }
    Var unfolded = gather_linear(x, map, {static_cast<int>(cin * patch), static_cast<int>(cols)});
    Var kmat = reshape(k, {cout, static_cast<int>(ckg * patch)});

    std::vector<Var> parts;
    const int cog = cout / groups;
    for (int gi = 0; gi < groups; ++gi) {
        Var ug = groups == 1 ? unfolded
                             : slice(unfolded, 0, gi * ckg * static_cast<int>(patch), ckg * static_cast<int>(patch));
        Var kg = groups == 1 ? kmat : slice(kmat, 0, gi * cog, cog);
        parts.push_back(matmul(kg, ug));
    }
    Var stacked = parts.size() == 1 ? parts[0] : concat(parts, 0);
    return reshape(stacked, {cout, od, oh, ow});
}

Var conv3d_same(Var x, Var k, int groups) {
    const Tensor& vk = x.graph->val(k);
    const int kd = vk.extent(2), kh = vk.extent(3), kw = vk.extent(4);
    if (kd % 2 == 0 || kh % 2 == 0 || kw % 2 == 0) throw std::invalid_argument("'same' conv needs odd kernels");
    return conv3d(x, k, {1, 1, 1}, {kd / 2, kh / 2, kw / 2}, groups);
}

Var conv2d(Var x, Var k, int stride, int padding) {
    Graph& g = same_graph(x, k);
    const Shape xs = g.val(x).shape();
    const Shape ks = g.val(k).shape();
    if (xs.size() != 3 || ks.size() != 4) throw std::invalid_argument("conv2d expects x[C,H,W], k[Cout,Cin,kh,kw]");
    Var x4 = reshape(x, {xs[0], 1, xs[1], xs[2]});
    Var k5 = reshape(k, {ks[0], ks[1], 1, ks[2], ks[3]});
    Var y = conv3d(x4, k5, {1, stride, stride}, {0, padding, padding});
    const Shape ys = g.val(y).shape();
    return reshape(y, {ys[0], ys[2], ys[3]});
}

Var conv2d_same(Var x, Var k) {
    const Tensor& vk = x.graph->val(k);
    if (vk.extent(2) % 2 == 0 || vk.extent(3) % 2 == 0) throw std::invalid_argument("'same' conv needs odd kernels");
    return conv2d(x, k, 1, vk.extent(2) / 2);
}

Var conv_transpose3d_x2(Var x, Var k) {
    Graph& g = same_graph(x, k);
    const Tensor& vx = g.val(x);
    const Tensor& vk = g.val(k);
    if (vx.rank() != 4 || vk.rank() != 5 || vk.extent(2) != 2 || vk.extent(3) != 2 || vk.extent(4) != 2) {
        throw std::invalid_argument("conv_transpose3d_x2 expects x[Cin,D,H,W], k[Cin,Cout,2,2,2]");
    }
    if (vk.extent(0) != vx.extent(0)) throw std::invalid_argument("conv_transpose3d_x2 channel mismatch");
    const int cin = vx.extent(0), D = vx.extent(1), H = vx.extent(2), W = vx.extent(3);
    // Zero-interleave the input (stride-2 dilation plus one-cell border), then run a
    // stride-1 conv with the flipped, channel-swapped kernel.
    const int DD = 2 * D + 1, HH = 2 * H + 1, WW = 2 * W + 1;
    auto map = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(cin) * DD * HH * WW, -1);
    for (int c = 0; c < cin; ++c) {
        for (int d = 0; d < D; ++d) {
            for (int h = 0; h < H; ++h) {
                for (int w = 0; w < W; ++w) {
                    const int64_t dst = ((static_cast<int64_t>(c) * DD + 2 * d + 1) * HH + 2 * h + 1) * WW + 2 * w + 1;
                    (*map)[static_cast<size_t>(dst)] = ((static_cast<int64_t>(c) * D + d) * H + h) * W + w;
                }
            }
        }
    }
    Var dilated = gather_linear(x, map, {cin, DD, HH, WW});
    Var kt = flip(permute(k, {1, 0, 2, 3, 4}), {2, 3, 4});
    return conv3d(dilated, kt, {1, 1, 1}, {0, 0, 0});
}

Var volume_lookup(Var vol, const Tensor& disp, int radius) {
    Graph& g = *vol.graph;
    const Tensor& vv = g.val(vol);
    if (vv.rank() != 3 || disp.rank() != 2) throw std::invalid_argument("volume_lookup expects vol[D,H,W], disp[H,W]");
    const int Db = vv.extent(0), H = vv.extent(1), W = vv.extent(2);
    if (disp.extent(0) != H || disp.extent(1) != W) throw std::invalid_argument("volume_lookup disp shape mismatch");
    if (radius < 0) throw std::invalid_argument("volume_lookup radius must be >= 0");
    const int R = 2 * radius + 1;
    struct Tap {
        int32_t p0, p1;
        double f;
    };
    auto taps = std::make_shared<std::vector<Tap>>(static_cast<size_t>(R) * H * W);
    Tensor out({R, H, W});
    int64_t oi = 0;
    for (int o = 0; o < R; ++o) {
        const double off = o - radius;
        for (int y = 0; y < H; ++y) {
            for (int xo = 0; xo < W; ++xo) {
                double pos = disp[static_cast<int64_t>(y) * W + xo] + off;
                int p0, p1;
                double f;
                if (pos <= 0.0) {
                    p0 = p1 = 0;
                    f = 0.0;
                } else if (pos >= Db - 1) {
                    p0 = p1 = Db - 1;
                    f = 0.0;
                } else {
                    p0 = static_cast<int>(std::floor(pos));
                    p1 = p0 + 1;
                    f = pos - p0;
                }
                (*taps)[static_cast<size_t>(oi)] = {p0, p1, f};
                const int64_t b0 = (static_cast<int64_t>(p0) * H + y) * W + xo;
                const int64_t b1 = (static_cast<int64_t>(p1) * H + y) * W + xo;
                out[oi++] = (1.0 - f) * vv[b0] + f * vv[b1];
            }
        }
    }
    const int vid = vol.id;
    return g.make("volume_lookup", std::move(out), {vid}, [vid, taps, R, H, W](Graph& gg, int self) {
        if (!gg.node_requires_grad(vid)) return;
        const Tensor& go = gg.grad_ref(self);
        Tensor& gv = gg.grad_ref(vid);
        int64_t i = 0;
        for (int o = 0; o < R; ++o) {
            for (int y = 0; y < H; ++y) {
                for (int xo = 0; xo < W; ++xo, ++i) {
                    const auto& t = (*taps)[static_cast<size_t>(i)];
                    gv[(static_cast<int64_t>(t.p0) * H + y) * W + xo] += (1.0 - t.f) * go[i];
                    gv[(static_cast<int64_t>(t.p1) * H + y) * W + xo] += t.f * go[i];
                }
            }
        }
    });
}

}  // namespace nk
