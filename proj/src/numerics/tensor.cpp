#include "mmpkd/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace mmpkd::nn {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ", ";
        os << s[i];
    }
    if (s.size() == 1) os << ',';
    os << ')';
    return os.str();
}

std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

void check_shape(const Shape& shape) {
    for (auto d : shape) {
        if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
    }
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad, std::string name) {
    auto t = full(std::move(shape), 0.0, requires_grad);
    t.node_->name = std::move(name);
    return t;
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    check_shape(shape);
    auto n = std::make_shared<Node>();
    n->data.assign(shape_numel(shape), value);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad, std::string name) {
    check_shape(shape);
    if (shape_numel(shape) != data.size()) {
        throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_str(shape));
    }
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    n->name = std::move(name);
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from_data({1}, {v}, requires_grad); }

Tensor Tensor::make_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                           BackwardFn backward) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    const bool any = std::any_of(parents.begin(), parents.end(),
                                 [](const Tensor& p) { return p.requires_grad(); });
    if (any && backward) {
        n->requires_grad = true;
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(p.node_);
        n->backward = std::move(backward);
    }
    return Tensor(std::move(n));
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() requires a single-element tensor, got " + shape_str(shape()));
    return node_->data[0];
}

void Tensor::zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }

Tensor Tensor::detach() const { return from_data(shape(), node_->data, false, node_->name); }

void Tensor::backward() const {
    if (numel() != 1) {
        throw ShapeError("backward() requires a scalar loss, got shape " + shape_str(shape()));
    }
    // Iterative post-order DFS yields a topological order (parents first).
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    for (Node* n : order) {
        if (!n->parents.empty()) n->grad.assign(n->data.size(), 0.0);
    }
    node_->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward) n->backward(*n);
    }
}

}  // namespace mmpkd::nn
