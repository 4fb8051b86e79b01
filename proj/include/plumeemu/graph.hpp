#pragma once

#include <cstddef>
#include <vector>

#include "plumeemu/tensor.hpp"

namespace plumeemu {

/// Handle to a node of a Graph.
struct Var {
    std::size_t id = 0;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so parents always
/// precede children and backward() is a single reverse sweep.
///
/// A Graph is single-owner; build one per forward pass.
class Graph {
public:
    /// Leaf node. Gradients are accumulated only for leaves with requires_grad.
    Var leaf(Tensor value, bool requires_grad = false);
    Var parameter(Tensor value) { return leaf(std::move(value), true); }
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    Var conv2d(Var input, Var kernels, Var bias, int stride, int padding);
    Var conv2d_transpose(Var input, Var kernels, Var bias, int stride, int padding, int output_padding = 0);
    Var max_pool2d(Var input, int window);
    Var selu(Var x);
    Var leaky_relu(Var x, double slope);
    Var dense(Var input, Var weights, Var bias);
    Var reshape(Var x, Shape shape);

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var x, double factor);
    Var add_scalar(Var x, double c);
    Var exp(Var x);
    Var square(Var x);
    /// Sum of all entries, shape [1].
    Var sum(Var x);

    const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
    /// Gradient of the last backward() loss with respect to v. Zero-filled if v was unreachable.
    const Tensor& grad(Var v) const;
    std::size_t size() const { return nodes_.size(); }

    /// Populates gradients for every node reachable from `loss`, which must hold one value.
    void backward(Var loss);

private:
    enum class Op {
        Leaf, Conv2d, ConvTranspose, MaxPool, Selu, LeakyRelu, Dense, Reshape,
        Add, Sub, Mul, Scale, AddScalar, Exp, Square, Sum
    };

    static constexpr std::size_t kNone = static_cast<std::size_t>(-1);

    struct Node {
        Op op = Op::Leaf;
        std::size_t a = kNone, b = kNone, c = kNone;
        int stride = 1, padding = 0, output_padding = 0;
        double scalar = 0.0;
        bool requires_grad = false;
        Tensor value;
        Tensor grad;
        std::vector<std::size_t> argmax;
    };

    Var push(Node node);
    void accumulate(std::size_t id, const Tensor& g);
    const Node& node(Var v) const;
    void check_same_shape(Var a, Var b, const char* what) const;

    std::vector<Node> nodes_;
};

}  // namespace plumeemu
