#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmpkd::nn {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

// Raised for non-conforming operand shapes; the message names both shapes.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct Node;
using NodePtr = std::shared_ptr<Node>;

// Called once during backward with the finished output node; it must add the
// output's gradient contribution into every parent that requires a gradient.
using BackwardFn = std::function<void(Node& out)>;

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first written
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    BackwardFn backward;
    std::string name;

    std::vector<double>& ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
        return grad;
    }
};

// Dense row-major float64 tensor with reverse-mode gradient tracking.
//
// A Tensor is a shared handle: copies alias the same node. Results of
// operations record their parents only when at least one input requires a
// gradient, so inference graphs are not retained.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false, std::string name = {});
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false,
                            std::string name = {});
    static Tensor scalar(double v, bool requires_grad = false);

    // Builds an operation result. `backward` may be empty for non-differentiable
    // results. Exposed so callers can define additional differentiable ops.
    static Tensor make_result(Shape shape, std::vector<double> data,
                              std::vector<Tensor> parents, BackwardFn backward);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t numel() const { return node_->data.size(); }

    std::span<const double> data() const { return node_->data; }
    // Mutable access to values; intended for leaves (initializers, optimizers).
    std::span<double> mutable_data() { return node_->data; }
    double item() const;
    double at(std::size_t flat) const { return node_->data.at(flat); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }
    bool has_grad() const { return node_->grad.size() == node_->data.size() && !node_->data.empty(); }
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> mutable_grad() { return node_->ensure_grad(); }
    void zero_grad();
    void clear_grad() { node_->grad.clear(); }

    const std::string& name() const { return node_->name; }
    void set_name(std::string n) { node_->name = std::move(n); }

    // Reverse-mode differentiation from a scalar. Leaf gradients accumulate
    // across calls; interior gradients are recomputed each call.
    void backward() const;

    // Same values, no graph.
    Tensor detach() const;

    Node* node() const { return node_.get(); }
    const NodePtr& node_ptr() const { return node_; }

private:
    explicit Tensor(NodePtr n) : node_(std::move(n)) {}
    NodePtr node_;
};

// ---------------------------------------------------------------------------
// Differentiable primitives
// ---------------------------------------------------------------------------

// (m,k) x (k,n) -> (m,n)
Tensor matmul(const Tensor& a, const Tensor& b);
// (b,m,k) x (b,k,n) -> (b,m,n); with transpose_b, rhs is (b,n,k).
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);

// Elementwise; rhs may also be a trailing-suffix shape of lhs (broadcast over
// the leading dimensions), e.g. (B,T,D) + (T,D) or (N,D) * (D).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& z);
// Softmax over the last dimension.
Tensor softmax(const Tensor& x);
// Normalizes over the last dimension, then applies per-feature gamma/beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor transpose(const Tensor& x);  // 2-D
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
// Right-aligned broadcast; input dims must be 1 or equal to the target dim.
Tensor broadcast_to(const Tensor& x, Shape shape);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

inline constexpr double kProbEps = 1e-7;

// Mean binary cross-entropy. `target` may hold soft values in [0,1] and is
// treated as a constant; `p` is clamped to [kProbEps, 1 - kProbEps].
Tensor binary_cross_entropy(const Tensor& p, const Tensor& target);

// Scalar helpers shared with non-graph code paths.
double sigmoid_scalar(double z);
double gelu_scalar(double x);

}  // namespace mmpkd::nn
