#include "lksde/ad/graph.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace lksde::ad {

namespace {

double softplus_value(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double unary_forward(OpKind kind, double x) {
    switch (kind) {
        case OpKind::tanh: return std::tanh(x);
        case OpKind::relu: return x > 0.0 ? x : 0.0;
        case OpKind::softplus: return softplus_value(x);
        case OpKind::exp: return std::exp(x);
        case OpKind::log: return std::log(x);
        case OpKind::sin: return std::sin(x);
        case OpKind::cos: return std::cos(x);
        case OpKind::tan: return std::tan(x);
        case OpKind::atan: return std::atan(x);
        case OpKind::square: return x * x;
        case OpKind::reciprocal: return 1.0 / x;
        case OpKind::smooth_l1: return std::abs(x) < 1.0 ? 0.5 * x * x : std::abs(x) - 0.5;
        default: throw std::logic_error("not a unary op");
    }
}

// d(out)/d(in) given input x and output y.
double unary_derivative(OpKind kind, double x, double y) {
    switch (kind) {
        case OpKind::tanh: return 1.0 - y * y;
        case OpKind::relu: return x > 0.0 ? 1.0 : 0.0;
        case OpKind::softplus: return sigmoid(x);
        case OpKind::exp: return y;
        case OpKind::log: return 1.0 / x;
        case OpKind::sin: return std::cos(x);
        case OpKind::cos: return -std::sin(x);
        case OpKind::tan: return 1.0 + y * y;
        case OpKind::atan: return 1.0 / (1.0 + x * x);
        case OpKind::square: return 2.0 * x;
        case OpKind::reciprocal: return -y * y;
        case OpKind::smooth_l1: return std::abs(x) < 1.0 ? x : (x > 0.0 ? 1.0 : -1.0);
        default: throw std::logic_error("not a unary op");
    }
}

bool is_unary(OpKind kind) {
    switch (kind) {
        case OpKind::tanh:
        case OpKind::relu:
        case OpKind::softplus:
        case OpKind::exp:
        case OpKind::log:
        case OpKind::sin:
        case OpKind::cos:
        case OpKind::tan:
        case OpKind::atan:
        case OpKind::square:
        case OpKind::reciprocal:
        case OpKind::smooth_l1: return true;
        default: return false;
    }
}

void require_matrix(const Tensor& t, std::string_view op) {
    if (t.rank() != 2) throw ShapeError(std::string(op), "expected a matrix, got " + shape_string(t.shape()));
}

}  // namespace

std::string_view op_name(OpKind kind) {
    switch (kind) {
        case OpKind::leaf: return "leaf";
        case OpKind::matmul: return "matmul";
        case OpKind::add: return "add";
        case OpKind::sub: return "sub";
        case OpKind::mul: return "mul";
        case OpKind::neg: return "neg";
        case OpKind::scale: return "scale";
        case OpKind::shift: return "shift";
        case OpKind::tanh: return "tanh";
        case OpKind::relu: return "relu";
        case OpKind::softplus: return "softplus";
        case OpKind::exp: return "exp";
        case OpKind::log: return "log";
        case OpKind::sin: return "sin";
        case OpKind::cos: return "cos";
        case OpKind::tan: return "tan";
        case OpKind::atan: return "atan";
        case OpKind::square: return "square";
        case OpKind::reciprocal: return "reciprocal";
        case OpKind::sum: return "sum";
        case OpKind::mean: return "mean";
        case OpKind::slice: return "slice";
        case OpKind::concat: return "concat";
        case OpKind::clamp: return "clamp";
        case OpKind::smooth_l1: return "smooth_l1";
        case OpKind::detach: return "detach";
    }
    return "unknown";
}

const Tensor& Var::value() const { return graph_->nodes_.at(id_).value; }

const Tensor& Var::grad() const { return graph_->nodes_.at(id_).grad; }

Var Graph::push(ValueNode n) {
    n.grad = Tensor::zeros_like(n.value);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

void Graph::check_owned(Var v, std::string_view op) const {
    if (v.graph() != this || v.id() >= nodes_.size()) {
        throw std::invalid_argument(std::string(op) + ": operand belongs to a different graph");
    }
}

Var Graph::constant(Tensor value) {
    ValueNode n;
    n.value = std::move(value);
    return push(std::move(n));
}

Var Graph::param(Parameter& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
    ValueNode n;
    n.value = p.value;
    n.param = &p;
    Var v = push(std::move(n));
    param_nodes_.emplace(&p, v.id());
    return v;
}

Var Graph::apply(OpKind kind, std::span<const Var> inputs) {
    auto arity = [&](std::size_t n) {
        if (inputs.size() != n) {
            throw std::invalid_argument(std::string(op_name(kind)) + ": expected " + std::to_string(n) + " inputs");
        }
    };
    switch (kind) {
        case OpKind::matmul: arity(2); return matmul(inputs[0], inputs[1]);
        case OpKind::add: arity(2); return add(inputs[0], inputs[1]);
        case OpKind::sub: arity(2); return sub(inputs[0], inputs[1]);
        case OpKind::mul: arity(2); return mul(inputs[0], inputs[1]);
        case OpKind::neg: arity(1); return neg(inputs[0]);
        case OpKind::sum: arity(1); return sum(inputs[0]);
        case OpKind::mean: arity(1); return mean(inputs[0]);
        case OpKind::detach: arity(1); return detach(inputs[0]);
        case OpKind::concat: return concat(inputs, 1);
        default:
            if (is_unary(kind)) {
                arity(1);
                return unary(kind, inputs[0]);
            }
            throw std::invalid_argument(std::string(op_name(kind)) + ": needs attributes, call it directly");
    }
}

Var Graph::matmul(Var a, Var b) {
    check_owned(a, "matmul");
    check_owned(b, "matmul");
    const Tensor& A = nodes_[a.id()].value;
    const Tensor& B = nodes_[b.id()].value;
    if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows()) throw ShapeError("matmul", A.shape(), B.shape());
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    Tensor out({m, n}, 0.0);
    const double* pa = A.data().data();
    const double* pb = B.data().data();
    double* po = out.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        double* row = po + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = pa[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = pb + p * n;
            for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
        }
    }
    ValueNode node;
    node.kind = OpKind::matmul;
    node.value = std::move(out);
    node.parents = {a.id(), b.id()};
    return push(std::move(node));
}

Var Graph::binary(OpKind kind, Var a, Var b) {
    const auto name = op_name(kind);
    check_owned(a, name);
    check_owned(b, name);
    const Tensor& A = nodes_[a.id()].value;
    const Tensor& B = nodes_[b.id()].value;
    const bool same = A.shape() == B.shape();
    if (!same && !A.is_scalar() && !B.is_scalar()) throw ShapeError(std::string(name), A.shape(), B.shape());
    const Tensor& big = (same || B.is_scalar()) ? A : B;
    Tensor out = Tensor::zeros_like(big);
    const std::size_t n = out.size();
    const std::size_t sa = A.size() == n ? 1 : 0;
    const std::size_t sb = B.size() == n ? 1 : 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = A[i * sa], y = B[i * sb];
        switch (kind) {
            case OpKind::add: out[i] = x + y; break;
            case OpKind::sub: out[i] = x - y; break;
            case OpKind::mul: out[i] = x * y; break;
            default: throw std::logic_error("not a binary op");
        }
    }
    ValueNode node;
    node.kind = kind;
    node.value = std::move(out);
    node.parents = {a.id(), b.id()};
    return push(std::move(node));
}

Var Graph::add(Var a, Var b) { return binary(OpKind::add, a, b); }
Var Graph::sub(Var a, Var b) { return binary(OpKind::sub, a, b); }
Var Graph::mul(Var a, Var b) { return binary(OpKind::mul, a, b); }

Var Graph::neg(Var a) { return scale(a, -1.0); }

Var Graph::scale(Var a, double c) {
    check_owned(a, "scale");
    Tensor out = nodes_[a.id()].value;
    for (auto& v : out.data()) v *= c;
    ValueNode node;
    node.kind = OpKind::scale;
    node.value = std::move(out);
    node.parents = {a.id()};
    node.constant = c;
    return push(std::move(node));
}

Var Graph::shift(Var a, double c) {
    check_owned(a, "shift");
    Tensor out = nodes_[a.id()].value;
    for (auto& v : out.data()) v += c;
    ValueNode node;
    node.kind = OpKind::shift;
    node.value = std::move(out);
    node.parents = {a.id()};
    node.constant = c;
    return push(std::move(node));
}

Var Graph::unary(OpKind kind, Var a) {
    if (!is_unary(kind)) throw std::invalid_argument(std::string(op_name(kind)) + " is not elementwise unary");
    check_owned(a, op_name(kind));
    Tensor out = nodes_[a.id()].value;
    for (auto& v : out.data()) v = unary_forward(kind, v);
    ValueNode node;
    node.kind = kind;
    node.value = std::move(out);
    node.parents = {a.id()};
    return push(std::move(node));
}

Var Graph::sum(Var a) {
    check_owned(a, "sum");
    double s = 0.0;
    for (double v : nodes_[a.id()].value.data()) s += v;
    ValueNode node;
    node.kind = OpKind::sum;
    node.value = Tensor::scalar(s);
    node.parents = {a.id()};
    return push(std::move(node));
}

Var Graph::mean(Var a) {
    check_owned(a, "mean");
    const Tensor& A = nodes_[a.id()].value;
    double s = 0.0;
    for (double v : A.data()) s += v;
    ValueNode node;
    node.kind = OpKind::mean;
    node.value = Tensor::scalar(s / static_cast<double>(A.size()));
    node.parents = {a.id()};
    return push(std::move(node));
}

Var Graph::slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
    check_owned(a, "slice");
    const Tensor& A = nodes_[a.id()].value;
    require_matrix(A, "slice");
    if (axis > 1) throw ShapeError("slice", "axis must be 0 or 1");
    const std::size_t extent = A.shape()[axis];
    if (begin >= end || end > extent) {
        throw ShapeError("slice", "range [" + std::to_string(begin) + "," + std::to_string(end) + ") outside " +
                                      shape_string(A.shape()) + " on axis " + std::to_string(axis));
    }
    const std::size_t rows = A.rows(), cols = A.cols();
    Tensor out;
    if (axis == 0) {
        out = Tensor({end - begin, cols});
        std::copy(A.data().begin() + begin * cols, A.data().begin() + end * cols, out.data().begin());
    } else {
        const std::size_t w = end - begin;
        out = Tensor({rows, w});
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < w; ++c) out.at(r, c) = A.at(r, begin + c);
        }
    }
    ValueNode node;
    node.kind = OpKind::slice;
    node.value = std::move(out);
    node.parents = {a.id()};
    node.axis = axis;
    node.begin = begin;
    node.end = end;
    return push(std::move(node));
}

Var Graph::concat(std::span<const Var> parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat", "no inputs");
    if (axis > 1) throw ShapeError("concat", "axis must be 0 or 1");
    const Tensor& first = nodes_[parts[0].id()].value;
    for (const Var& p : parts) {
        check_owned(p, "concat");
        const Tensor& t = nodes_[p.id()].value;
        require_matrix(t, "concat");
        const std::size_t other = 1 - axis;
        if (t.shape()[other] != first.shape()[other]) throw ShapeError("concat", first.shape(), t.shape());
    }
    ValueNode node;
    node.kind = OpKind::concat;
    node.axis = axis;
    if (axis == 0) {
        std::size_t rows = 0;
        for (const Var& p : parts) rows += nodes_[p.id()].value.rows();
        Tensor out({rows, first.cols()});
        std::size_t offset = 0;
        for (const Var& p : parts) {
            const Tensor& t = nodes_[p.id()].value;
            std::copy(t.data().begin(), t.data().end(), out.data().begin() + offset);
            offset += t.size();
        }
        node.value = std::move(out);
    } else {
        std::size_t cols = 0;
        for (const Var& p : parts) cols += nodes_[p.id()].value.cols();
        const std::size_t rows = first.rows();
        Tensor out({rows, cols});
        std::size_t c0 = 0;
        for (const Var& p : parts) {
            const Tensor& t = nodes_[p.id()].value;
            const std::size_t w = t.cols();
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < w; ++c) out.at(r, c0 + c) = t.at(r, c);
            }
            c0 += w;
        }
        node.value = std::move(out);
    }
    for (const Var& p : parts) node.parents.push_back(p.id());
    return push(std::move(node));
}

Var Graph::clamp(Var a, double lo, double hi) {
    check_owned(a, "clamp");
    if (!(lo < hi)) throw std::invalid_argument("clamp: lo must be below hi");
    Tensor out = nodes_[a.id()].value;
    for (auto& v : out.data()) v = std::min(std::max(v, lo), hi);
    ValueNode node;
    node.kind = OpKind::clamp;
    node.value = std::move(out);
    node.parents = {a.id()};
    node.lo = lo;
    node.hi = hi;
    return push(std::move(node));
}

Var Graph::detach(Var a) {
    check_owned(a, "detach");
    ValueNode node;
    node.kind = OpKind::detach;
    node.value = nodes_[a.id()].value;
    return push(std::move(node));
}

void Graph::backward(Var root) {
    check_owned(root, "backward");
    if (!nodes_[root.id()].value.is_scalar()) {
        throw ShapeError("backward", "root must be scalar, got " + shape_string(nodes_[root.id()].value.shape()));
    }
    for (auto& n : nodes_) n.grad.fill(0.0);
    nodes_[root.id()].grad[0] = 1.0;
    for (std::size_t id = root.id() + 1; id-- > 0;) propagate(id);
    for (auto& n : nodes_) {
        if (!n.param) continue;
        auto dst = n.param->grad.data();
        auto src = n.grad.data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
}

void Graph::propagate(std::size_t id) {
    ValueNode& n = nodes_[id];
    const Tensor& g = n.grad;
    switch (n.kind) {
        case OpKind::leaf:
        case OpKind::detach: return;
        case OpKind::matmul: {
            const Tensor& A = nodes_[n.parents[0]].value;
            const Tensor& B = nodes_[n.parents[1]].value;
            Tensor& gA = nodes_[n.parents[0]].grad;
            Tensor& gB = nodes_[n.parents[1]].grad;
            const std::size_t m = A.rows(), k = A.cols(), cols = B.cols();
            for (std::size_t i = 0; i < m; ++i) {
                const double* grow = g.data().data() + i * cols;
                for (std::size_t p = 0; p < k; ++p) {
                    const double* brow = B.data().data() + p * cols;
                    double acc = 0.0;
                    for (std::size_t j = 0; j < cols; ++j) acc += grow[j] * brow[j];
                    gA[i * k + p] += acc;
                    const double aip = A[i * k + p];
                    if (aip == 0.0) continue;
                    double* gbrow = gB.data().data() + p * cols;
                    for (std::size_t j = 0; j < cols; ++j) gbrow[j] += aip * grow[j];
                }
            }
            return;
        }
        case OpKind::add:
        case OpKind::sub:
        case OpKind::mul: {
            const std::size_t ia = n.parents[0], ib = n.parents[1];
            const std::size_t count = n.value.size();
            const std::size_t sa = nodes_[ia].value.size() == count ? 1 : 0;
            const std::size_t sb = nodes_[ib].value.size() == count ? 1 : 0;
            for (std::size_t i = 0; i < count; ++i) {
                const double gi = g[i];
                if (gi == 0.0) continue;
                double da = gi, db = gi;
                if (n.kind == OpKind::sub) db = -gi;
                if (n.kind == OpKind::mul) {
                    da = gi * nodes_[ib].value[i * sb];
                    db = gi * nodes_[ia].value[i * sa];
                }
                nodes_[ia].grad[i * sa] += da;
                nodes_[ib].grad[i * sb] += db;
            }
            return;
        }
        case OpKind::neg:
        case OpKind::scale: {
            Tensor& ga = nodes_[n.parents[0]].grad;
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += n.constant * g[i];
            return;
        }
        case OpKind::shift: {
            Tensor& ga = nodes_[n.parents[0]].grad;
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            return;
        }
        case OpKind::sum:
        case OpKind::mean: {
            Tensor& ga = nodes_[n.parents[0]].grad;
            const double d = n.kind == OpKind::sum ? g[0] : g[0] / static_cast<double>(ga.size());
            for (auto& v : ga.data()) v += d;
            return;
        }
        case OpKind::slice: {
            Tensor& ga = nodes_[n.parents[0]].grad;
            const std::size_t cols = ga.cols();
            if (n.axis == 0) {
                for (std::size_t i = 0; i < g.size(); ++i) ga[n.begin * cols + i] += g[i];
            } else {
                const std::size_t w = n.end - n.begin;
                for (std::size_t r = 0; r < g.rows(); ++r) {
                    for (std::size_t c = 0; c < w; ++c) ga.at(r, n.begin + c) += g.at(r, c);
                }
            }
            return;
        }
        case OpKind::concat: {
            if (n.axis == 0) {
                std::size_t offset = 0;
                for (std::size_t p : n.parents) {
                    Tensor& gp = nodes_[p].grad;
                    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset + i];
                    offset += gp.size();
                }
            } else {
                std::size_t c0 = 0;
                const std::size_t rows = g.rows();
                for (std::size_t p : n.parents) {
                    Tensor& gp = nodes_[p].grad;
                    const std::size_t w = gp.cols();
                    for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t c = 0; c < w; ++c) gp.at(r, c) += g.at(r, c0 + c);
                    }
                    c0 += w;
                }
            }
            return;
        }
        case OpKind::clamp: {
            const Tensor& x = nodes_[n.parents[0]].value;
            Tensor& ga = nodes_[n.parents[0]].grad;
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (x[i] > n.lo && x[i] < n.hi) ga[i] += g[i];
            }
            return;
        }
        default: {
            const Tensor& x = nodes_[n.parents[0]].value;
            Tensor& ga = nodes_[n.parents[0]].grad;
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (g[i] != 0.0) ga[i] += g[i] * unary_derivative(n.kind, x[i], n.value[i]);
            }
            return;
        }
    }
}

Var matmul(Var a, Var b) { return a.graph()->matmul(a, b); }
Var operator+(Var a, Var b) { return a.graph()->add(a, b); }
Var operator-(Var a, Var b) { return a.graph()->sub(a, b); }
Var operator*(Var a, Var b) { return a.graph()->mul(a, b); }
Var operator-(Var a) { return a.graph()->neg(a); }
Var operator*(Var a, double c) { return a.graph()->scale(a, c); }
Var operator*(double c, Var a) { return a.graph()->scale(a, c); }
Var operator+(Var a, double c) { return a.graph()->shift(a, c); }
Var operator+(double c, Var a) { return a.graph()->shift(a, c); }
Var operator-(Var a, double c) { return a.graph()->shift(a, -c); }
Var operator/(Var a, double c) { return a.graph()->scale(a, 1.0 / c); }

Var tanh(Var a) { return a.graph()->unary(OpKind::tanh, a); }
Var relu(Var a) { return a.graph()->unary(OpKind::relu, a); }
Var softplus(Var a) { return a.graph()->unary(OpKind::softplus, a); }
Var exp(Var a) { return a.graph()->unary(OpKind::exp, a); }
Var log(Var a) { return a.graph()->unary(OpKind::log, a); }
Var sin(Var a) { return a.graph()->unary(OpKind::sin, a); }
Var cos(Var a) { return a.graph()->unary(OpKind::cos, a); }
Var tan(Var a) { return a.graph()->unary(OpKind::tan, a); }
Var atan(Var a) { return a.graph()->unary(OpKind::atan, a); }
Var square(Var a) { return a.graph()->unary(OpKind::square, a); }
Var reciprocal(Var a) { return a.graph()->unary(OpKind::reciprocal, a); }
Var sum(Var a) { return a.graph()->sum(a); }
Var mean(Var a) { return a.graph()->mean(a); }
Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) { return a.graph()->slice(a, axis, begin, end); }
Var concat(std::span<const Var> parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat", "no inputs");
    return parts[0].graph()->concat(parts, axis);
}
Var concat(std::initializer_list<Var> parts, std::size_t axis) {
    return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}
Var clamp(Var a, double lo, double hi) { return a.graph()->clamp(a, lo, hi); }
Var smooth_l1(Var a) { return a.graph()->unary(OpKind::smooth_l1, a); }
Var detach(Var a) { return a.graph()->detach(a); }

}  // namespace lksde::ad
