#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "lkmn/common.hpp"

namespace lkmn {

namespace detail {

// One value in the recorded computation graph. Ops allocate a node per
// output; the backward closure reads this node's grad and accumulates into
// the parents' grads. Parents are held strongly, so keeping any tensor handle
// alive keeps the subgraph that produced it alive.
template <typename S>
struct NodeT {
    Shape shape;
    std::vector<S> value;
    std::vector<S> grad; // empty until first accumulation
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<std::shared_ptr<NodeT>> parents;
    std::function<void(NodeT&)> backward_fn;

    std::vector<S>& grad_buf() {
        if (grad.empty()) {
            grad.assign(static_cast<std::size_t>(shape.numel()), S(0));
        }
        return grad;
    }
};

} // namespace detail

/// Dense rank-4 NCHW tensor, the universal value type of the engine.
/// A TensorT is a cheap handle (shared ownership of the underlying node);
/// copying a handle aliases the data. Gradients live in an optional buffer of
/// identical shape and accumulate additively across backward passes until
/// zero_grad() is called.
///
/// S is the element type: float for training/inference, double for the
/// finite-difference shadow mode used by the gradient-check harness.
template <typename S>
class TensorT {
public:
    using Node = detail::NodeT<S>;

    TensorT() = default;

    static TensorT zeros(const Shape& s, bool requires_grad = false) {
        validate_shape(s);
        auto n = std::make_shared<Node>();
        n->shape = s;
        n->value.assign(static_cast<std::size_t>(s.numel()), S(0));
        n->requires_grad = requires_grad;
        return TensorT(std::move(n));
    }

    static TensorT full(const Shape& s, S v, bool requires_grad = false) {
        TensorT t = zeros(s, requires_grad);
        for (auto& x : t.values()) x = v;
        return t;
    }

    static TensorT from_data(const Shape& s, std::vector<S> data, bool requires_grad = false) {
        validate_shape(s);
        if (static_cast<std::int64_t>(data.size()) != s.numel()) {
            throw DimensionError("tensor data length " + std::to_string(data.size()) +
                                 " does not match shape " + to_string(s));
        }
        auto n = std::make_shared<Node>();
        n->shape = s;
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        return TensorT(std::move(n));
    }

    bool defined() const { return node_ != nullptr; }

    const Shape& shape() const { return node_->shape; }
    std::int64_t numel() const { return node_->shape.numel(); }

    std::vector<S>& values() { return node_->value; }
    const std::vector<S>& values() const { return node_->value; }
    S* data() { return node_->value.data(); }
    const S* data() const { return node_->value.data(); }

    S& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
        return node_->value[static_cast<std::size_t>(offset(n, c, h, w))];
    }
    S at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
        return node_->value[static_cast<std::size_t>(offset(n, c, h, w))];
    }

    bool requires_grad() const { return node_->requires_grad; }

    /// Mark a leaf as trainable. Interior graph nodes get this implicitly.
    void set_requires_grad(bool on) {
        if (!node_->is_leaf) {
            throw ContractError("requires_grad can only be toggled on leaf tensors");
        }
        node_->requires_grad = on;
    }

    bool has_grad() const { return !node_->grad.empty(); }

    /// Gradient buffer, allocated (zero-filled) on first access.
    std::vector<S>& grad() { return node_->grad_buf(); }
    const std::vector<S>& grad_view() const { return node_->grad; }

    void zero_grad() {
        if (!node_->grad.empty()) {
            std::fill(node_->grad.begin(), node_->grad.end(), S(0));
        }
    }

    /// Deep copy of values; the copy is a fresh leaf without grad history.
    TensorT clone() const {
        return from_data(shape(), values(), false);
    }

    /// Reverse-mode differentiation from this (scalar) tensor. Populates the
    /// grad buffer of every trainable tensor the value depends on; gradients
    /// add onto whatever is already in those buffers. The tape is released as
    /// it is consumed, so backward can run once per recorded graph.
    void backward() {
        if (!node_) throw ContractError("backward() on an undefined tensor");
        if (node_->shape.numel() != 1) {
            throw ContractError("backward() requires a scalar loss, got shape " +
                                to_string(node_->shape));
        }
        if (!node_->requires_grad) return; // nothing upstream is trainable

        // Depth-first post-order over the requires_grad subgraph: the
        // resulting order lists producers before consumers, so the reverse
        // walk visits every node after all of its consumers.
        std::vector<Node*> order;
        std::unordered_set<Node*> visited;
        struct Frame {
            Node* node;
            std::size_t next;
        };
        std::vector<Frame> stack;
        stack.push_back({node_.get(), 0});
        visited.insert(node_.get());
        while (!stack.empty()) {
            Frame& f = stack.back();
            if (f.next < f.node->parents.size()) {
                Node* p = f.node->parents[f.next++].get();
                if (p->requires_grad && visited.insert(p).second) {
                    stack.push_back({p, 0});
                }
            } else {
                order.push_back(f.node);
                stack.pop_back();
            }
        }

        node_->grad_buf()[0] = S(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* nd = *it;
            if (nd->backward_fn && !nd->grad.empty()) {
                nd->backward_fn(*nd);
            }
            if (!nd->is_leaf) {
                nd->parents.clear();
                nd->backward_fn = nullptr;
                nd->grad = {};
            }
        }
    }

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    explicit TensorT(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    std::int64_t offset(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
        const Shape& s = node_->shape;
        return ((n * s.c + c) * s.h + h) * s.w + w;
    }

    std::shared_ptr<Node> node_;

    template <typename T>
    friend void record(TensorT<T>& out, std::vector<std::shared_ptr<detail::NodeT<T>>> parents,
                       std::function<void(detail::NodeT<T>&)> fn);
};

/// Attach tape metadata to an op output. Called by op implementations after
/// computing the forward value; no-op when recording is disabled or no parent
/// is trainable.
template <typename S>
void record(TensorT<S>& out, std::vector<std::shared_ptr<detail::NodeT<S>>> parents,
            std::function<void(detail::NodeT<S>&)> fn) {
    if (!GradMode::enabled()) return;
    bool any = false;
    for (const auto& p : parents) {
        if (p && p->requires_grad) {
            any = true;
            break;
        }
    }
    if (!any) return;
    auto& n = *out.node_;
    n.requires_grad = true;
    n.is_leaf = false;
    n.parents = std::move(parents);
    n.backward_fn = std::move(fn);
}

using Tensor = TensorT<float>;

} // namespace lkmn
