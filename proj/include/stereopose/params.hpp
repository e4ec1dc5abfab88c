#pragma once

#include <functional>
#include <string>
#include <vector>

#include "nk/graph.hpp"

namespace stereopose {

// Collects (name, tensor, var) triples while a module binds its parameters
// into a graph. Training loops, checkpointing and the gradient checker all
// enumerate parameters through this.
struct ParamBinder {
    nk::Graph* g = nullptr;
    struct Entry {
        std::string name;
        nk::Tensor* tensor;
        nk::Var var;
    };
    std::vector<Entry> entries;

    explicit ParamBinder(nk::Graph& graph) : g(&graph) {}

    nk::Var operator()(const std::string& name, nk::Tensor& t) {
        nk::Var v = g->param(t);
        entries.push_back({name, &t, v});
        return v;
    }
};

using ParamVisitor = std::function<void(const std::string&, nk::Tensor&)>;

}  // namespace stereopose
