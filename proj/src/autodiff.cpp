#include "gps/autodiff.hpp"

#include "gps/error.hpp"

namespace gps {

const Tensor& Var::value() const {
    if (graph_ == nullptr) {
        throw StateError("value() on an unbound Var");
    }
    return graph_->value(id_);
}

const Tensor& BackwardContext::output() const { return graph_.value(node_); }

const Tensor& BackwardContext::input(std::size_t k) const { return graph_.value(graph_.nodes_[node_].inputs.at(k)); }

bool BackwardContext::needs_grad(std::size_t k) const { return graph_.needs_grad(graph_.nodes_[node_].inputs.at(k)); }

std::span<double> BackwardContext::input_grad(std::size_t k) {
    const std::size_t id = graph_.nodes_[node_].inputs.at(k);
    if (!graph_.nodes_[id].needs_grad) {
        return {};
    }
    auto& g = graph_.grads_[id];
    if (g.empty()) {
        g.assign(graph_.value(id).numel(), 0.0);
    }
    return g;
}

void Graph::check_live() const {
    if (consumed_) {
        throw StateError("graph already consumed by backward(); run a new forward pass");
    }
}

const Tensor& Graph::value(std::size_t id) const {
    check_live();
    const Node& n = nodes_.at(id);
    return n.leaf ? *n.leaf : n.owned;
}

bool Graph::needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }

Var Graph::constant(Tensor value) {
    check_live();
    Node n;
    n.op = "constant";
    n.owned = std::move(value);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Graph::leaf(Tensor& tensor) {
    Var v = leaf(static_cast<const Tensor&>(tensor));
    Node& n = nodes_[v.id()];
    if (tensor.requires_grad()) {
        n.grad_target = &tensor;
        n.needs_grad = true;
    }
    return v;
}

Var Graph::leaf(const Tensor& tensor) {
    check_live();
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].leaf == &tensor) {
            return Var(this, i);
        }
    }
    Node n;
    n.op = "leaf";
    n.leaf = &tensor;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Graph::record(std::string_view op, std::vector<Var> inputs, Tensor output, BackwardFn backward) {
    check_live();
    Node n;
    n.op = op;
    for (const Var& v : inputs) {
        if (v.graph() != this) {
            throw ContractError(std::string(op) + ": operand belongs to a different graph");
        }
        n.inputs.push_back(v.id());
        n.needs_grad = n.needs_grad || nodes_[v.id()].needs_grad;
    }
    n.owned = std::move(output);
    if (n.needs_grad) {
        n.backward = std::move(backward);
    }
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

void Graph::backward(Var loss) {
    check_live();
    if (loss.graph() != this) {
        throw ContractError("backward: loss belongs to a different graph");
    }
    if (value(loss.id()).numel() != 1) {
        throw ContractError("backward: loss must be a scalar, got shape " + shape_str(value(loss.id()).shape()));
    }
    grads_.assign(nodes_.size(), {});
    if (nodes_[loss.id()].needs_grad) {
        grads_[loss.id()] = {1.0};
    }
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (grads_[id].empty() || !n.backward) {
            continue;
        }
        BackwardContext ctx(*this, id, grads_[id]);
        n.backward(ctx);
    }
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
        Node& n = nodes_[id];
        if (n.grad_target != nullptr) {
            if (grads_[id].empty()) {
                n.grad_target->set_grad(std::vector<double>(n.grad_target->numel(), 0.0));
            } else {
                n.grad_target->set_grad(std::move(grads_[id]));
            }
        }
    }
    nodes_.clear();
    nodes_.shrink_to_fit();
    grads_.clear();
    grads_.shrink_to_fit();
    consumed_ = true;
}

}  // namespace gps
