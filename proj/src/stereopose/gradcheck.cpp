#include "stereopose/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace stereopose::gradcheck {

namespace {

double eval_loss(const BuildFn& build) {
    nk::Graph g;
    Binder b(g);
    nk::Var loss = build(g, b);
    return g.val(loss)[0];
}

}  // namespace

Report fd_check(const BuildFn& build, int max_coords_per_tensor, uint64_t coord_seed, double h) {
    nk::Graph g;
    Binder b(g);
    nk::Var loss = build(g, b);
    g.backward(loss);

    std::vector<nk::Tensor> analytic;
    analytic.reserve(b.entries.size());
    for (const auto& e : b.entries) analytic.push_back(g.grad(e.var));

    Report rep;
    nk::Rng rng(nk::splitmix64(coord_seed + 0x5eedULL));
    for (size_t pi = 0; pi < b.entries.size(); ++pi) {
        nk::Tensor& t = *b.entries[pi].tensor;
        std::vector<int64_t> coords(static_cast<size_t>(t.size()));
        std::iota(coords.begin(), coords.end(), 0);
        if (max_coords_per_tensor > 0 && t.size() > max_coords_per_tensor) {
            // Deterministic Fisher-Yates prefix.
            for (int i = 0; i < max_coords_per_tensor; ++i) {
                const int j = i + rng.uniform_int(static_cast<int>(coords.size()) - i);
                std::swap(coords[static_cast<size_t>(i)], coords[static_cast<size_t>(j)]);
            }
            coords.resize(static_cast<size_t>(max_coords_per_tensor));
        }
        for (int64_t c : coords) {
            const double keep = t[c];
            t[c] = keep + h;
            const double fp = eval_loss(build);
            t[c] = keep - h;
            const double fm = eval_loss(build);
            t[c] = keep;
            const double fd = (fp - fm) / (2.0 * h);
            const double a = analytic[pi][c];
            const double rel = std::fabs(a - fd) / std::max({std::fabs(a), std::fabs(fd), 1.0});
            ++rep.coords_checked;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_param = b.entries[pi].name + "[" + std::to_string(c) + "]";
            }
        }
    }
    return rep;
}

}  // namespace stereopose::gradcheck
