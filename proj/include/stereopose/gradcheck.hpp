#pragma once

#include <functional>
#include <string>
#include <vector>

#include "nk/graph.hpp"
#include "nk/random.hpp"
#include "stereopose/params.hpp"

namespace stereopose::gradcheck {

using Binder = ParamBinder;

// Builds a scalar loss from the tensors it binds. Must be a deterministic
// function of the bound tensors (draw any randomness before building).
using BuildFn = std::function<nk::Var(nk::Graph&, Binder&)>;

struct Report {
    double max_rel_err = 0.0;
    std::string worst_param;
    int64_t coords_checked = 0;
};

// Central finite differences, h = 1e-5. max_coords_per_tensor = 0 checks every
// coordinate; otherwise a deterministic random subset per tensor.
Report fd_check(const BuildFn& build, int max_coords_per_tensor = 0, uint64_t coord_seed = 0, double h = 1e-5);

struct Check {
    std::string module;  // numkernel | attention | stereo_network | pose_head
    std::string op;
    double threshold;    // 1e-6 primitives, 1e-4 composites
    std::function<Report(uint64_t seed)> run;
};

const std::vector<Check>& registry();

}  // namespace stereopose::gradcheck
