#include "plumeemu/graph.hpp"

#include <cmath>
#include <string>

#include "plumeemu/error.hpp"

namespace plumeemu {

const Graph::Node& Graph::node(Var v) const {
    if (v.id >= nodes_.size()) throw ContractError("graph: unknown node " + std::to_string(v.id));
    return nodes_[v.id];
}

Var Graph::push(Node n) {
    auto wants = [&](std::size_t p) { return p != kNone && nodes_[p].requires_grad; };
    n.requires_grad = wants(n.a) || wants(n.b) || wants(n.c);
    if (!n.value.all_finite()) throw NumericError("graph: non-finite value produced by forward pass");
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

void Graph::check_same_shape(Var a, Var b, const char* what) const {
    if (node(a).value.shape() != node(b).value.shape())
        throw DimensionError(std::string(what) + ": shape " + shape_string(node(a).value.shape()) + " vs " +
                             shape_string(node(b).value.shape()));
}

Var Graph::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.op = Op::Leaf;
    n.requires_grad = requires_grad;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

Var Graph::conv2d(Var input, Var kernels, Var bias, int stride, int padding) {
    Node n;
    n.op = Op::Conv2d;
    n.a = input.id, n.b = kernels.id, n.c = bias.id;
    n.stride = stride, n.padding = padding;
    n.value = ops::conv2d(node(input).value, node(kernels).value, node(bias).value, stride, padding);
    return push(std::move(n));
}

Var Graph::conv2d_transpose(Var input, Var kernels, Var bias, int stride, int padding, int output_padding) {
    Node n;
    n.op = Op::ConvTranspose;
    n.a = input.id, n.b = kernels.id, n.c = bias.id;
    n.stride = stride, n.padding = padding, n.output_padding = output_padding;
    n.value = ops::conv2d_transpose(node(input).value, node(kernels).value, node(bias).value, stride, padding,
                                    output_padding);
    return push(std::move(n));
}

Var Graph::max_pool2d(Var input, int window) {
    Node n;
    n.op = Op::MaxPool;
    n.a = input.id;
    n.value = ops::max_pool2d(node(input).value, window, &n.argmax);
    return push(std::move(n));
}

Var Graph::selu(Var x) {
    Node n;
    n.op = Op::Selu;
    n.a = x.id;
    n.value = ops::selu(node(x).value);
    return push(std::move(n));
}

Var Graph::leaky_relu(Var x, double slope) {
    Node n;
    n.op = Op::LeakyRelu;
    n.a = x.id;
    n.scalar = slope;
    n.value = ops::leaky_relu(node(x).value, slope);
    return push(std::move(n));
}

Var Graph::dense(Var input, Var weights, Var bias) {
    Node n;
    n.op = Op::Dense;
    n.a = input.id, n.b = weights.id, n.c = bias.id;
    n.value = ops::dense(node(input).value, node(weights).value, node(bias).value);
    return push(std::move(n));
}

Var Graph::reshape(Var x, Shape shape) {
    Node n;
    n.op = Op::Reshape;
    n.a = x.id;
    n.value = node(x).value.reshaped(std::move(shape));
    return push(std::move(n));
}

Var Graph::add(Var a, Var b) {
    check_same_shape(a, b, "add");
    Node n;
    n.op = Op::Add;
    n.a = a.id, n.b = b.id;
    n.value = node(a).value;
    n.value += node(b).value;
    return push(std::move(n));
}

Var Graph::sub(Var a, Var b) {
    check_same_shape(a, b, "sub");
    Node n;
    n.op = Op::Sub;
    n.a = a.id, n.b = b.id;
    n.value = node(a).value;
    const Tensor& bv = node(b).value;
    for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] -= bv[i];
    return push(std::move(n));
}

Var Graph::mul(Var a, Var b) {
    check_same_shape(a, b, "mul");
    Node n;
    n.op = Op::Mul;
    n.a = a.id, n.b = b.id;
    n.value = node(a).value;
    const Tensor& bv = node(b).value;
    for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] *= bv[i];
    return push(std::move(n));
}

Var Graph::scale(Var x, double factor) {
    Node n;
    n.op = Op::Scale;
    n.a = x.id;
    n.scalar = factor;
    n.value = node(x).value;
    for (auto& v : n.value.values()) v *= factor;
    return push(std::move(n));
}

Var Graph::add_scalar(Var x, double c) {
    Node n;
    n.op = Op::AddScalar;
    n.a = x.id;
    n.scalar = c;
    n.value = node(x).value;
    for (auto& v : n.value.values()) v += c;
    return push(std::move(n));
}

Var Graph::exp(Var x) {
    Node n;
    n.op = Op::Exp;
    n.a = x.id;
    n.value = node(x).value;
    for (auto& v : n.value.values()) v = std::exp(v);
    return push(std::move(n));
}

Var Graph::square(Var x) {
    Node n;
    n.op = Op::Square;
    n.a = x.id;
    n.value = node(x).value;
    for (auto& v : n.value.values()) v *= v;
    return push(std::move(n));
}

Var Graph::sum(Var x) {
    Node n;
    n.op = Op::Sum;
    n.a = x.id;
    double acc = 0.0;
    for (double v : node(x).value.values()) acc += v;
    n.value = Tensor::scalar(acc);
    return push(std::move(n));
}

const Tensor& Graph::grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.size() == 0) throw ContractError("grad: no backward pass has been run");
    return n.grad;
}

void Graph::accumulate(std::size_t id, const Tensor& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
        n.grad = g.shape() == n.value.shape() ? g : g.reshaped(n.value.shape());
    else
        for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

void Graph::backward(Var loss) {
    if (node(loss).value.size() != 1)
        throw ContractError("backward: loss must be scalar, got shape " + shape_string(node(loss).value.shape()));
    for (auto& n : nodes_) n.grad = Tensor();
    nodes_[loss.id].grad = Tensor(nodes_[loss.id].value.shape(), 1.0);

    for (std::size_t id = loss.id + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (n.grad.size() == 0 || n.op == Op::Leaf || !n.requires_grad) continue;
        const Tensor& g = n.grad;
        switch (n.op) {
            case Op::Leaf:
                break;
            case Op::Conv2d: {
                const Tensor& x = nodes_[n.a].value;
                const Tensor& k = nodes_[n.b].value;
                const auto natural = [&](std::size_t out) {
                    return (static_cast<long>(out) - 1) * n.stride - 2 * n.padding + static_cast<long>(k.dim(2));
                };
                if (nodes_[n.a].requires_grad)
                    accumulate(n.a, ops::conv2d_transpose(g, k, Tensor(), n.stride, n.padding,
                                                          static_cast<int>(static_cast<long>(x.dim(1)) - natural(g.dim(1))),
                                                          static_cast<int>(static_cast<long>(x.dim(2)) - natural(g.dim(2)))));
                if (nodes_[n.b].requires_grad)
                    accumulate(n.b, ops::conv2d_kernel_grad(x, g, k.dim(2), n.stride, n.padding));
                if (nodes_[n.c].requires_grad) {
                    Tensor gb(nodes_[n.c].value.shape(), 0.0);
                    const std::size_t plane = g.dim(1) * g.dim(2);
                    for (std::size_t co = 0; co < g.dim(0); ++co)
                        for (std::size_t i = 0; i < plane; ++i) gb[co] += g[co * plane + i];
                    accumulate(n.c, gb);
                }
                break;
            }
            case Op::ConvTranspose: {
                const Tensor& x = nodes_[n.a].value;
                const Tensor& k = nodes_[n.b].value;
                if (nodes_[n.a].requires_grad) accumulate(n.a, ops::conv2d(g, k, Tensor(), n.stride, n.padding));
                if (nodes_[n.b].requires_grad)
                    accumulate(n.b, ops::conv2d_transpose_kernel_grad(x, g, k.dim(2), n.stride, n.padding));
                if (nodes_[n.c].requires_grad) {
                    Tensor gb(nodes_[n.c].value.shape(), 0.0);
                    const std::size_t plane = g.dim(1) * g.dim(2);
                    for (std::size_t co = 0; co < g.dim(0); ++co)
                        for (std::size_t i = 0; i < plane; ++i) gb[co] += g[co * plane + i];
                    accumulate(n.c, gb);
                }
                break;
            }
            case Op::MaxPool: {
                Tensor gx(nodes_[n.a].value.shape(), 0.0);
                for (std::size_t o = 0; o < g.size(); ++o) gx[n.argmax[o]] += g[o];
                accumulate(n.a, gx);
                break;
            }
            case Op::Selu: {
                const Tensor& x = nodes_[n.a].value;
                Tensor gx = g;
                for (std::size_t i = 0; i < gx.size(); ++i)
                    gx[i] *= x[i] > 0.0 ? ops::kSeluScale : ops::kSeluScale * ops::kSeluAlpha * std::exp(x[i]);
                accumulate(n.a, gx);
                break;
            }
            case Op::LeakyRelu: {
                const Tensor& x = nodes_[n.a].value;
                Tensor gx = g;
                for (std::size_t i = 0; i < gx.size(); ++i)
                    if (x[i] < 0.0) gx[i] *= n.scalar;
                accumulate(n.a, gx);
                break;
            }
            case Op::Dense: {
                const Tensor& x = nodes_[n.a].value;
                const Tensor& wt = nodes_[n.b].value;
                const std::size_t m = wt.dim(0), cols = wt.dim(1);
                Tensor gx(x.shape(), 0.0);
                Tensor gw(wt.shape(), 0.0);
                for (std::size_t i = 0; i < m; ++i) {
                    const double gi = g[i];
                    const double* row = wt.data() + i * cols;
                    double* grow = gw.data() + i * cols;
                    for (std::size_t j = 0; j < cols; ++j) {
                        gx[j] += gi * row[j];
                        grow[j] = gi * x[j];
                    }
                }
                accumulate(n.a, gx);
                accumulate(n.b, gw);
                accumulate(n.c, g);
                break;
            }
            case Op::Reshape:
                accumulate(n.a, g);
                break;
            case Op::Add:
                accumulate(n.a, g);
                accumulate(n.b, g);
                break;
            case Op::Sub: {
                accumulate(n.a, g);
                Tensor gb = g;
                for (auto& v : gb.values()) v = -v;
                accumulate(n.b, gb);
                break;
            }
            case Op::Mul: {
                const Tensor& av = nodes_[n.a].value;
                const Tensor& bv = nodes_[n.b].value;
                Tensor ga = g, gb = g;
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[i] *= bv[i];
                    gb[i] *= av[i];
                }
                accumulate(n.a, ga);
                accumulate(n.b, gb);
                break;
            }
            case Op::Scale: {
                Tensor gx = g;
                for (auto& v : gx.values()) v *= n.scalar;
                accumulate(n.a, gx);
                break;
            }
            case Op::AddScalar:
                accumulate(n.a, g);
                break;
            case Op::Exp: {
                Tensor gx = g;
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= n.value[i];
                accumulate(n.a, gx);
                break;
            }
            case Op::Square: {
                const Tensor& x = nodes_[n.a].value;
                Tensor gx = g;
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= 2.0 * x[i];
                accumulate(n.a, gx);
                break;
            }
            case Op::Sum: {
                accumulate(n.a, Tensor(nodes_[n.a].value.shape(), g[0]));
                break;
            }
        }
    }
    for (auto& n : nodes_)
        if (n.grad.size() == 0) n.grad = Tensor(n.value.shape(), 0.0);
}

}  // namespace plumeemu
