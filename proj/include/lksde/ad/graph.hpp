#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lksde/ad/parameter.hpp"
#include "lksde/ad/tensor.hpp"

namespace lksde::ad {

enum class OpKind {
    leaf,
    matmul,
    add,
    sub,
    mul,
    neg,
    scale,
    shift,
    tanh,
    relu,
    softplus,
    exp,
    log,
    sin,
    cos,
    tan,
    atan,
    square,
    reciprocal,
    sum,
    mean,
    slice,
    concat,
    clamp,
    smooth_l1,
    detach,
};

std::string_view op_name(OpKind kind);

/// One entry on the tape. The op kind selects the vector-Jacobian rule;
/// `axis`, `begin`, `end`, `lo`, `hi` and `constant` carry op attributes.
struct ValueNode {
    OpKind kind = OpKind::leaf;
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> parents;
    Parameter* param = nullptr;
    std::size_t axis = 0;
    std::size_t begin = 0;
    std::size_t end = 0;
    double lo = 0.0;
    double hi = 0.0;
    double constant = 0.0;
};

class Graph;

/// Handle to a node of a graph. Cheap to copy; valid while the graph lives.
class Var {
public:
    Var() = default;
    Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

    Graph* graph() const noexcept { return graph_; }
    std::size_t id() const noexcept { return id_; }
    bool valid() const noexcept { return graph_ != nullptr; }

    const Tensor& value() const;
    const Tensor& grad() const;
    const Shape& shape() const { return value().shape(); }

private:
    Graph* graph_ = nullptr;
    std::size_t id_ = 0;
};

/// Append-only tape. Nodes are created in topological order, so backward is
/// a single reverse sweep. Not thread-safe; use one graph per thread.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Tensor value);
    /// Leaf bound to a persistent parameter. Repeated calls return the same
    /// node, so a parameter used in many places accumulates one gradient.
    Var param(Parameter& p);

    Var apply(OpKind kind, std::span<const Var> inputs);

    Var matmul(Var a, Var b);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var neg(Var a);
    Var scale(Var a, double c);
    Var shift(Var a, double c);
    Var unary(OpKind kind, Var a);
    Var sum(Var a);
    Var mean(Var a);
    Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end);
    Var concat(std::span<const Var> parts, std::size_t axis);
    Var clamp(Var a, double lo, double hi);
    Var detach(Var a);

    /// Reverse sweep from a scalar root. Node gradients are reset first;
    /// parameter gradients accumulate.
    void backward(Var root);

    const ValueNode& node(std::size_t id) const { return nodes_.at(id); }
    std::size_t size() const noexcept { return nodes_.size(); }

private:
    friend class Var;
    Var push(ValueNode n);
    void check_owned(Var v, std::string_view op) const;
    Var binary(OpKind kind, Var a, Var b);
    void propagate(std::size_t id);

    std::vector<ValueNode> nodes_;
    std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

Var matmul(Var a, Var b);
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator-(Var a);
Var operator*(Var a, double c);
Var operator*(double c, Var a);
Var operator+(Var a, double c);
Var operator+(double c, Var a);
Var operator-(Var a, double c);
Var operator/(Var a, double c);

Var tanh(Var a);
Var relu(Var a);
Var softplus(Var a);
Var exp(Var a);
Var log(Var a);
Var sin(Var a);
Var cos(Var a);
Var tan(Var a);
Var atan(Var a);
Var square(Var a);
Var reciprocal(Var a);
Var sum(Var a);
Var mean(Var a);
Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end);
Var concat(std::span<const Var> parts, std::size_t axis);
Var concat(std::initializer_list<Var> parts, std::size_t axis);
Var clamp(Var a, double lo, double hi);
Var smooth_l1(Var a);
Var detach(Var a);

/// Column `c` of a [rows, cols] node.
inline Var column(Var a, std::size_t c) { return slice(a, 1, c, c + 1); }

}  // namespace lksde::ad
