#include "nk/graph.hpp"

#include <stdexcept>

namespace nk {

int Graph::check(Var v) const {
    if (v.graph != this || v.id < 0 || v.id >= node_count()) {
        throw std::invalid_argument("Var does not belong to this graph");
    }
    return v.id;
}

Var Graph::input(Tensor value) {
    nodes_.push_back(Node{"input", std::move(value), {}, {}, nullptr, false, false});
    return Var{this, node_count() - 1};
}

Var Graph::param(Tensor value) {
    nodes_.push_back(Node{"param", std::move(value), {}, {}, nullptr, true, false});
    return Var{this, node_count() - 1};
}

Var Graph::detach(Var v) { return input(val(v)); }

Var Graph::make(const char* op, Tensor value, std::vector<int> inputs, BackwardFn backward) {
    if (!value.all_finite()) {
        throw std::domain_error(std::string("non-finite values produced by op '") + op + "'");
    }
    bool req = false;
    for (int i : inputs) {
        if (i < 0 || i >= node_count()) throw std::invalid_argument("op input out of range");
        req = req || nodes_[static_cast<size_t>(i)].requires_grad;
    }
    nodes_.push_back(Node{op, std::move(value), {}, std::move(inputs), std::move(backward), req, false});
    return Var{this, node_count() - 1};
}

Tensor& Graph::grad_ref(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.grad_ready) {
        n.grad = Tensor(n.value.shape(), 0.0);
        n.grad_ready = true;
    }
    return n.grad;
}

const Tensor& Graph::grad(Var v) const {
    const Node& n = nodes_[static_cast<size_t>(check(v))];
    if (!ran_backward_) throw std::logic_error("grad() before backward()");
    if (!n.grad_ready) {
        static thread_local Tensor zero;
        zero = Tensor(n.value.shape(), 0.0);
        return zero;
    }
    return n.grad;
}

void Graph::backward(Var root) {
    const int rid = check(root);
    if (nodes_[static_cast<size_t>(rid)].value.size() != 1) {
        throw std::invalid_argument("backward() root must be a scalar");
    }
    for (Node& n : nodes_) {
        n.grad_ready = false;
        n.grad = Tensor();
    }
    grad_ref(rid)[0] = 1.0;
    for (int id = rid; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.requires_grad || !n.backward || !n.grad_ready) continue;
        n.backward(*this, id);
    }
    ran_backward_ = true;
}

}  // namespace nk
