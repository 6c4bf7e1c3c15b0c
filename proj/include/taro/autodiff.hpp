#ifndef TARO_AUTODIFF_HPP
#define TARO_AUTODIFF_HPP

// Reverse-mode automatic differentiation over dense tensors.
//
// Every derivative rule is written in terms of the same differentiable
// primitives, so a gradient computed with build_graph=true is itself a
// recorded Variable and can be differentiated again (double backward).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "taro/tensor.hpp"

namespace taro::ad {

class Tape;
class Variable;

using BackwardFn = std::function<std::vector<Variable>(const Variable& grad_out)>;

struct Node {
    Tensor value;
    std::uint64_t id = 0;
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    BackwardFn backward;
    // false when the local derivative is computed outside the tape
    bool differentiable_backward = true;
    Tape* tape = nullptr;
};

class Variable {
public:
    Variable() = default;
    explicit Variable(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    bool defined() const { return static_cast<bool>(node_); }
    const Tensor& value() const { return node_->value; }
    const Shape& shape() const { return node_->value.shape; }
    std::size_t size() const { return node_->value.size(); }
    double item() const { return node_->value.item(); }
    bool requires_grad() const { return node_->requires_grad; }
    std::uint64_t id() const { return node_->id; }
    const char* op() const { return node_->op; }
    Tape& tape() const { return *node_->tape; }
    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

/// Creation-ordered record of operations. Node ids are unique per tape and
/// increase with creation order, so descending id is a valid reverse
/// topological order. A tape must outlive every Variable it produced.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Variable leaf(Tensor value, bool requires_grad = true)
    {
        auto n = new_node(std::move(value));
        n->requires_grad = requires_grad;
        return Variable(std::move(n));
    }
    Variable constant(Tensor value) { return leaf(std::move(value), false); }
    Variable scalar(double v) { return constant(Tensor::scalar(v)); }

    bool recording() const { return recording_; }
    std::uint64_t node_count() const { return next_id_; }

    /// Records an operation when recording is on and an input requires grad;
    /// otherwise returns a constant holding `value`.
    Variable record(Tensor value, const char* op, const std::vector<Variable>& inputs, BackwardFn backward,
                    bool differentiable_backward = true)
    {
        auto n = new_node(std::move(value));
        n->op = op;
        const bool any = std::any_of(inputs.begin(), inputs.end(),
                                     [](const Variable& v) { return v.requires_grad(); });
        if (recording_ && any) {
            n->requires_grad = true;
            n->parents.reserve(inputs.size());
            for (const auto& in : inputs) n->parents.push_back(in.node());
            n->backward = std::move(backward);
            n->differentiable_backward = differentiable_backward;
        }
        return Variable(std::move(n));
    }

private:
    friend class RecordingGuard;

    std::shared_ptr<Node> new_node(Tensor value)
    {
        auto n = std::make_shared<Node>();
        n->value = std::move(value);
        n->id = next_id_++;
        n->tape = this;
        return n;
    }

    std::uint64_t next_id_ = 0;
    bool recording_ = true;
};

/// Scoped override of a tape's recording flag.
class RecordingGuard {
public:
    RecordingGuard(Tape& tape, bool recording) : tape_(tape), previous_(tape.recording_)
    {
        tape_.recording_ = recording;
    }
    ~RecordingGuard() { tape_.recording_ = previous_; }
    RecordingGuard(const RecordingGuard&) = delete;
    RecordingGuard& operator=(const RecordingGuard&) = delete;

private:
    Tape& tape_;
    bool previous_;
};

class NoGradGuard : public RecordingGuard {
public:
    explicit NoGradGuard(Tape& tape) : RecordingGuard(tape, false) {}
};

namespace detail {

inline Tape& tape_of(const Variable& a) { return a.tape(); }

inline Tape& tape_of(const Variable& a, const Variable& b)
{
    if (&a.tape() != &b.tape()) throw Error("autodiff: operands belong to different tapes");
    return a.tape();
}

inline void require_same(const Variable& a, const Variable& b, const char* op)
{
    if (a.shape() != b.shape())
        throw Error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// (outer, axis extent, inner) decomposition of a shape around `axis`.
struct AxisSplit {
    std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis)
{
    AxisSplit r;
    for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
    r.extent = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

Variable add(const Variable& a, const Variable& b);
Variable sub(const Variable& a, const Variable& b);
Variable mul(const Variable& a, const Variable& b);
Variable div(const Variable& a, const Variable& b);
Variable neg(const Variable& a);
Variable scale(const Variable& a, double c);
Variable matmul(const Variable& a, const Variable& b);
Variable transpose(const Variable& a);
Variable sum(const Variable& a);
Variable sum(const Variable& a, std::size_t axis);
Variable mean(const Variable& a);
Variable dot(const Variable& a, const Variable& b);
Variable sq_norm(const Variable& a);
Variable exp(const Variable& a);
Variable log(const Variable& a);
Variable tanh(const Variable& a);
Variable softplus(const Variable& a);
Variable sqrt(const Variable& a);
Variable broadcast(const Variable& a, const Shape& shape);
Variable concat(const std::vector<Variable>& parts, std::size_t axis);
Variable slice(const Variable& a, std::size_t axis, std::size_t begin, std::size_t end);
Variable clamp(const Variable& a, double lo, double hi);
Variable stop_gradient(const Variable& a);

inline Variable add(const Variable& a, const Variable& b)
{
    detail::require_same(a, b, "add");
    return detail::tape_of(a, b).record(tensor_ops::add(a.value(), b.value()), "add", {a, b},
                                        [](const Variable& g) { return std::vector<Variable>{g, g}; });
}

inline Variable sub(const Variable& a, const Variable& b)
{
    detail::require_same(a, b, "sub");
    return detail::tape_of(a, b).record(tensor_ops::sub(a.value(), b.value()), "sub", {a, b},
                                        [](const Variable& g) { return std::vector<Variable>{g, neg(g)}; });
}

inline Variable mul(const Variable& a, const Variable& b)
{
    detail::require_same(a, b, "mul");
    return detail::tape_of(a, b).record(tensor_ops::mul(a.value(), b.value()), "mul", {a, b},
                                        [a, b](const Variable& g) {
                                            return std::vector<Variable>{mul(g, b), mul(g, a)};
                                        });
}

inline Variable div(const Variable& a, const Variable& b)
{
    detail::require_same(a, b, "div");
    for (double v : b.value().data)
        if (v == 0.0) throw Error("div: division by zero in operand of shape " + shape_str(b.shape()));
    return detail::tape_of(a, b).record(tensor_ops::zip(a.value(), b.value(), std::divides<>(), "div"), "div",
                                        {a, b}, [a, b](const Variable& g) {
                                            return std::vector<Variable>{div(g, b), neg(div(mul(g, a), mul(b, b)))};
                                        });
}

inline Variable neg(const Variable& a)
{
    return a.tape().record(tensor_ops::scale(a.value(), -1.0), "neg", {a},
                           [](const Variable& g) { return std::vector<Variable>{neg(g)}; });
}

inline Variable scale(const Variable& a, double c)
{
    return a.tape().record(tensor_ops::scale(a.value(), c), "scale", {a},
                           [c](const Variable& g) { return std::vector<Variable>{scale(g, c)}; });
}

inline Variable matmul(const Variable& a, const Variable& b)
{
    if (a.value().rank() != 2 || b.value().rank() != 2 || a.shape()[1] != b.shape()[0])
        throw Error("matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    Tensor out = Tensor::zeros({m, n});
    const auto& A = a.value().data;
    const auto& B = b.value().data;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = A[i * k + p];
            if (aip == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] += aip * B[p * n + j];
        }
    return detail::tape_of(a, b).record(std::move(out), "matmul", {a, b}, [a, b](const Variable& g) {
        return std::vector<Variable>{matmul(g, transpose(b)), matmul(transpose(a), g)};
    });
}

inline Variable transpose(const Variable& a)
{
    if (a.value().rank() != 2) throw Error("transpose: expected rank 2, got " + shape_str(a.shape()));
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    Tensor out = Tensor::zeros({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.data[j * m + i] = a.value().data[i * n + j];
    return a.tape().record(std::move(out), "transpose", {a},
                           [](const Variable& g) { return std::vector<Variable>{transpose(g)}; });
}

inline Variable sum(const Variable& a)
{
    const Shape in_shape = a.shape();
    return a.tape().record(Tensor::scalar(tensor_ops::sum(a.value())), "sum", {a}, [in_shape](const Variable& g) {
        return std::vector<Variable>{broadcast(g, in_shape)};
    });
}

/// Sum along one axis, keeping it with extent 1.
inline Variable sum(const Variable& a, std::size_t axis)
{
    if (axis >= a.value().rank())
        throw Error("sum: axis " + std::to_string(axis) + " out of range for " + shape_str(a.shape()));
    const Shape in_shape = a.shape();
    Shape out_shape = in_shape;
    out_shape[axis] = 1;
    const auto sp = detail::split_axis(in_shape, axis);
    Tensor out = Tensor::zeros(out_shape);
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t e = 0; e < sp.extent; ++e)
            for (std::size_t i = 0; i < sp.inner; ++i)
                out.data[o * sp.inner + i] += a.value().data[(o * sp.extent + e) * sp.inner + i];
    return a.tape().record(std::move(out), "sum_axis", {a}, [in_shape](const Variable& g) {
        return std::vector<Variable>{broadcast(g, in_shape)};
    });
}

inline Variable mean(const Variable& a)
{
    const double inv = 1.0 / static_cast<double>(a.size());
    const Shape in_shape = a.shape();
    return a.tape().record(Tensor::scalar(tensor_ops::sum(a.value()) * inv), "mean", {a},
                           [in_shape, inv](const Variable& g) {
                               return std::vector<Variable>{scale(broadcast(g, in_shape), inv)};
                           });
}

inline Variable dot(const Variable& a, const Variable& b)
{
    detail::require_same(a, b, "dot");
    const Shape s = a.shape();
    return detail::tape_of(a, b).record(Tensor::scalar(tensor_ops::dot(a.value(), b.value())), "dot", {a, b},
                                        [a, b, s](const Variable& g) {
                                            const Variable gb = broadcast(g, s);
                                            return std::vector<Variable>{mul(gb, b), mul(gb, a)};
                                        });
}

inline Variable sq_norm(const Variable& a)
{
    const Shape s = a.shape();
    return a.tape().record(Tensor::scalar(tensor_ops::sq_norm(a.value())), "sq_norm", {a},
                           [a, s](const Variable& g) {
                               return std::vector<Variable>{scale(mul(broadcast(g, s), a), 2.0)};
                           });
}

inline Variable exp(const Variable& a)
{
    return a.tape().record(tensor_ops::map(a.value(), [](double v) { return std::exp(v); }), "exp", {a},
                           [a](const Variable& g) { return std::vector<Variable>{mul(g, exp(a))}; });
}

inline Variable log(const Variable& a)
{
    for (double v : a.value().data)
        if (!(v > 0.0)) throw Error("log: non-positive argument " + std::to_string(v));
    return a.tape().record(tensor_ops::map(a.value(), [](double v) { return std::log(v); }), "log", {a},
                           [a](const Variable& g) { return std::vector<Variable>{div(g, a)}; });
}

inline Variable tanh(const Variable& a)
{
    return a.tape().record(tensor_ops::map(a.value(), [](double v) { return std::tanh(v); }), "tanh", {a},
                           [a](const Variable& g) {
                               const Variable t = tanh(a);
                               return std::vector<Variable>{sub(g, mul(g, mul(t, t)))};
                           });
}

namespace detail {
inline double softplus(double v) { return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); }
} // namespace detail

/// Logistic function built from softplus, exp(-softplus(-x)).
inline Variable sigmoid(const Variable& a) { return exp(neg(softplus(neg(a)))); }

inline Variable softplus(const Variable& a)
{
    return a.tape().record(tensor_ops::map(a.value(), detail::softplus), "softplus", {a},
                           [a](const Variable& g) { return std::vector<Variable>{mul(g, sigmoid(a))}; });
}

inline Variable sqrt(const Variable& a)
{
    for (double v : a.value().data)
        if (v < 0.0) throw Error("sqrt: negative argument " + std::to_string(v));
    return a.tape().record(tensor_ops::map(a.value(), [](double v) { return std::sqrt(v); }), "sqrt", {a},
                           [a](const Variable& g) { return std::vector<Variable>{div(g, scale(sqrt(a), 2.0))}; });
}

/// Broadcast a scalar to any shape, or expand extent-1 axes of an
/// equal-rank tensor.
inline Variable broadcast(const Variable& a, const Shape& shape)
{
    const Shape in = a.shape();
    if (in == shape) return a;
    Tensor out = Tensor::zeros(shape);
    if (a.size() == 1 && in.size() <= shape.size() &&
        std::all_of(in.begin(), in.end(), [](std::size_t d) { return d == 1; })) {
        std::fill(out.data.begin(), out.data.end(), a.value().data[0]);
    } else {
        if (in.size() != shape.size())
            throw Error("broadcast: cannot broadcast " + shape_str(in) + " to " + shape_str(shape));
        for (std::size_t i = 0; i < in.size(); ++i)
            if (in[i] != shape[i] && in[i] != 1)
                throw Error("broadcast: cannot broadcast " + shape_str(in) + " to " + shape_str(shape));
        const std::size_t rank = shape.size();
        std::vector<std::size_t> in_stride(rank, 0);
        std::size_t st = 1;
        for (std::size_t i = rank; i-- > 0;) {
            in_stride[i] = in[i] == 1 ? 0 : st;
            st *= in[i];
        }
        std::vector<std::size_t> idx(rank, 0);
        for (std::size_t flat = 0; flat < out.size(); ++flat) {
            std::size_t src = 0;
            for (std::size_t i = 0; i < rank; ++i) src += idx[i] * in_stride[i];
            out.data[flat] = a.value().data[src];
            for (std::size_t i = rank; i-- > 0;) {
                if (++idx[i] < shape[i]) break;
                idx[i] = 0;
            }
        }
    }
    return a.tape().record(std::move(out), "broadcast", {a}, [in, shape](const Variable& g) {
        Variable r = g;
        if (in.size() != shape.size()) {
            r = sum(r);
            if (!in.empty()) r = broadcast(r, in);
        } else {
            for (std::size_t i = 0; i < in.size(); ++i)
                if (in[i] == 1 && shape[i] != 1) r = sum(r, i);
        }
        return std::vector<Variable>{r};
    });
}

inline Variable concat(const std::vector<Variable>& parts, std::size_t axis)
{
    if (parts.empty()) throw Error("concat: no operands");
    const Shape first = parts.front().shape();
    if (axis >= first.size()) throw Error("concat: axis out of range for " + shape_str(first));
    Shape out_shape = first;
    out_shape[axis] = 0;
    std::vector<std::size_t> extents;
    for (const auto& p : parts) {
        Shape s = p.shape();
        if (s.size() != first.size()) throw Error("concat: rank mismatch " + shape_str(s) + " vs " + shape_str(first));
        for (std::size_t i = 0; i < s.size(); ++i)
            if (i != axis && s[i] != first[i])
                throw Error("concat: shape mismatch " + shape_str(s) + " vs " + shape_str(first));
        extents.push_back(s[axis]);
        out_shape[axis] += s[axis];
        detail::tape_of(parts.front(), p);
    }
    const auto sp = detail::split_axis(out_shape, axis);
    Tensor out = Tensor::zeros(out_shape);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto& src = parts[k].value().data;
        const std::size_t ext = extents[k];
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t e = 0; e < ext; ++e)
                for (std::size_t i = 0; i < sp.inner; ++i)
                    out.data[(o * sp.extent + offset + e) * sp.inner + i] = src[(o * ext + e) * sp.inner + i];
        offset += ext;
    }
    return parts.front().tape().record(std::move(out), "concat", parts, [extents, axis](const Variable& g) {
        std::vector<Variable> grads;
        std::size_t off = 0;
        for (std::size_t ext : extents) {
            grads.push_back(slice(g, axis, off, off + ext));
            off += ext;
        }
        return grads;
    });
}

/// Half-open range [begin, end) along `axis`.
inline Variable slice(const Variable& a, std::size_t axis, std::size_t begin, std::size_t end)
{
    const Shape in = a.shape();
    if (axis >= in.size() || begin >= end || end > in[axis])
        throw Error("slice: invalid range [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                    std::to_string(axis) + " of " + shape_str(in));
    Shape out_shape = in;
    out_shape[axis] = end - begin;
    const auto sp = detail::split_axis(in, axis);
    const std::size_t ext = end - begin;
    Tensor out = Tensor::zeros(out_shape);
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t e = 0; e < ext; ++e)
            for (std::size_t i = 0; i < sp.inner; ++i)
                out.data[(o * ext + e) * sp.inner + i] = a.value().data[(o * sp.extent + begin + e) * sp.inner + i];
    return a.tape().record(std::move(out), "slice", {a}, [in, axis, begin, end](const Variable& g) {
        Tape& tape = g.tape();
        std::vector<Variable> pieces;
        Shape pad = in;
        if (begin > 0) {
            pad[axis] = begin;
            pieces.push_back(tape.constant(Tensor::zeros(pad)));
        }
        pieces.push_back(g);
        if (end < in[axis]) {
            pad[axis] = in[axis] - end;
            pieces.push_back(tape.constant(Tensor::zeros(pad)));
        }
        return std::vector<Variable>{pieces.size() == 1 ? g : concat(pieces, axis)};
    });
}

/// Derivative is 1 on the closed interval [lo, hi] and 0 outside.
inline Variable clamp(const Variable& a, double lo, double hi)
{
    if (lo > hi) throw Error("clamp: lo > hi");
    Tensor mask = tensor_ops::map(a.value(), [lo, hi](double v) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
    return a.tape().record(tensor_ops::map(a.value(), [lo, hi](double v) { return std::clamp(v, lo, hi); }),
                           "clamp", {a}, [mask](const Variable& g) {
                               return std::vector<Variable>{mul(g, g.tape().constant(mask))};
                           });
}

inline Variable stop_gradient(const Variable& a) { return a.tape().constant(a.value()); }

/// Forward value `value`, backward identity to `a`: the surrogate
/// a + sg(value - a) without the rounding of the explicit sum.
inline Variable straight_through(const Variable& a, Tensor value)
{
    if (value.shape != a.shape())
        throw Error("straight_through: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(value.shape));
    return a.tape().record(std::move(value), "straight_through", {a},
                           [](const Variable& g) { return std::vector<Variable>{g}; });
}

/// Elementwise map with a caller-supplied numeric derivative. The local
/// derivative is evaluated outside the tape, so this op cannot be
/// differentiated twice; grad(build_graph=true) through it is an error.
inline Variable elementwise(const Variable& a, const char* name, std::function<double(double)> f,
                            std::function<double(double)> df)
{
    return a.tape().record(
        tensor_ops::map(a.value(), f), name, {a},
        [a, df](const Variable& g) {
            return std::vector<Variable>{mul(g, g.tape().constant(tensor_ops::map(a.value(), df)))};
        },
        false);
}

// Operator sugar.
inline Variable operator+(const Variable& a, const Variable& b) { return add(a, b); }
inline Variable operator-(const Variable& a, const Variable& b) { return sub(a, b); }
inline Variable operator*(const Variable& a, const Variable& b) { return mul(a, b); }
inline Variable operator/(const Variable& a, const Variable& b) { return div(a, b); }
inline Variable operator-(const Variable& a) { return neg(a); }
inline Variable operator*(double c, const Variable& a) { return scale(a, c); }
inline Variable operator*(const Variable& a, double c) { return scale(a, c); }

// ---------------------------------------------------------------------------
// Gradients
// ---------------------------------------------------------------------------

/// d loss / d wrt for each entry of `wrt`. Variables the loss does not
/// depend on receive a zero gradient. With build_graph the returned
/// gradients are recorded on the tape and may be differentiated again.
///
/// Nodes listed in `frozen` are held fixed for this pass only (a partial
/// derivative). Unlike stop_gradient, the returned graph still depends on
/// them, so a later pass differentiates through their full dependence.
inline std::vector<Variable> grad(const Variable& loss, const std::vector<Variable>& wrt, bool build_graph = false,
                                  const std::vector<Variable>& frozen = {})
{
    if (loss.size() != 1) throw Error("grad: loss must be a scalar, got shape " + shape_str(loss.shape()));
    Tape& tape = loss.tape();

    auto zeros_for = [&](const Variable& w) { return tape.constant(Tensor::zeros(w.shape())); };

    std::uint64_t min_id = std::numeric_limits<std::uint64_t>::max();
    std::unordered_set<const Node*> targets;
    for (const auto& w : wrt) {
        if (&w.tape() != &tape) throw Error("grad: wrt variable belongs to a different tape");
        if (w.requires_grad()) {
            targets.insert(w.node().get());
            min_id = std::min(min_id, w.id());
        }
    }
    if (!loss.requires_grad() || targets.empty()) {
        std::vector<Variable> out;
        for (const auto& w : wrt) out.push_back(zeros_for(w));
        return out;
    }

    std::unordered_set<const Node*> held;
    for (const auto& f : frozen)
        if (!targets.count(f.node().get())) held.insert(f.node().get());

    // Ancestors of the loss created no earlier than the oldest target.
    std::vector<Node*> nodes;
    {
        std::unordered_set<Node*> seen;
        std::vector<Node*> stack{loss.node().get()};
        seen.insert(stack.back());
        while (!stack.empty()) {
            Node* n = stack.back();
            stack.pop_back();
            nodes.push_back(n);
            if (held.count(n)) continue;
            for (const auto& p : n->parents) {
                Node* pp = p.get();
                if (pp->requires_grad && pp->id >= min_id && seen.insert(pp).second) stack.push_back(pp);
            }
        }
    }
    std::sort(nodes.begin(), nodes.end(), [](const Node* a, const Node* b) { return a->id < b->id; });

    // Nodes on a path from some target to the loss.
    std::unordered_set<const Node*> live;
    for (const Node* n : nodes) {
        if (targets.count(n)) {
            live.insert(n);
            continue;
        }
        if (held.count(n)) continue;
        for (const auto& p : n->parents)
            if (live.count(p.get())) {
                live.insert(n);
                break;
            }
    }

    std::vector<Variable> out;
    if (!live.count(loss.node().get())) {
        for (const auto& w : wrt) out.push_back(zeros_for(w));
        return out;
    }
    if (build_graph)
        for (const Node* n : nodes)
            if (live.count(n) && !n->parents.empty() && !n->differentiable_backward)
                throw Error(std::string("grad: primitive '") + n->op +
                            "' has no differentiable derivative rule; build_graph is not supported through it");

    RecordingGuard guard(tape, build_graph);
    std::unordered_map<const Node*, Variable> adjoint;
    adjoint.emplace(loss.node().get(), tape.constant(Tensor::ones(loss.shape())));

    for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
        Node* n = *it;
        if (!live.count(n) || n->parents.empty()) continue;
        auto found = adjoint.find(n);
        if (found == adjoint.end()) continue;
        const std::vector<Variable> local = n->backward(found->second);
        for (std::size_t k = 0; k < n->parents.size(); ++k) {
            const Node* p = n->parents[k].get();
            if (!live.count(p) || !local[k].defined()) continue;
            if (local[k].shape() != p->value.shape)
                throw Error(std::string("grad: rule for '") + n->op + "' produced shape " + shape_str(local[k].shape()) +
                            " for operand of shape " + shape_str(p->value.shape));
            auto slot = adjoint.find(p);
            if (slot == adjoint.end())
                adjoint.emplace(p, local[k]);
            else
                slot->second = add(slot->second, local[k]);
        }
    }

    for (const auto& w : wrt) {
        auto found = adjoint.find(w.node().get());
        out.push_back(found == adjoint.end() ? zeros_for(w) : found->second);
    }
    return out;
}

inline Variable grad(const Variable& loss, const Variable& wrt, bool build_graph = false,
                     const std::vector<Variable>& frozen = {})
{
    return grad(loss, std::vector<Variable>{wrt}, build_graph, frozen).front();
}

} // namespace taro::ad

#endif // TARO_AUTODIFF_HPP
