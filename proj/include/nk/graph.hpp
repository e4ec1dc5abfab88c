#pragma once

#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "nk/tensor.hpp"

namespace nk {

class Graph;

// Handle to a node on a Graph tape. Cheap to copy.
struct Var {
    Graph* graph = nullptr;
    int id = -1;
    bool valid() const { return graph != nullptr && id >= 0; }
};

// Reverse-mode tape. Nodes are appended in evaluation order, which is a
// topological order by construction; backward() walks it once in reverse.
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, int)>;

    Var input(Tensor value);   // leaf, gradient not tracked
    Var param(Tensor value);   // leaf, gradient tracked
    Var detach(Var v);         // value copied into a fresh non-tracked leaf

    Var make(const char* op, Tensor value, std::vector<int> inputs, BackwardFn backward);

    const Tensor& val(Var v) const { return val_of(check(v)); }
    const Tensor& grad(Var v) const;
    bool requires_grad(Var v) const { return nodes_[static_cast<size_t>(check(v))].requires_grad; }

    // Root must be scalar. Gradients of untouched leaves stay zero.
    void backward(Var root);

    int node_count() const { return static_cast<int>(nodes_.size()); }

    // Node access for op implementations.
    const Tensor& val_of(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    Tensor& grad_ref(int id);
    bool node_requires_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }
    const char* op_name(int id) const { return nodes_[static_cast<size_t>(id)].op; }

private:
    struct Node {
        const char* op;
        Tensor value;
        Tensor grad;
        std::vector<int> inputs;
        BackwardFn backward;
        bool requires_grad = false;
        bool grad_ready = false;
    };

    int check(Var v) const;

    // Deque keeps node references stable while new nodes are appended.
    std::deque<Node> nodes_;
    bool ran_backward_ = false;
};

}  // namespace nk
