// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "diffage/tensor.hpp"

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

namespace diffage {

template <typename Scalar>
struct Node {
    Tensor<Scalar> value;
    Tensor<Scalar> grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    Tensor<Scalar>& ensure_grad() {
        if (!has_grad) {
            grad = Tensor<Scalar>::zeros_like(value);
            has_grad = true;
        }
        return grad;
    }
};

/// Handle to a value on the autodiff tape. Copies share the node.
template <typename Scalar>
class Var {
public:
    using NodeType = Node<Scalar>;

    Var() : node_(std::make_shared<NodeType>()) {}
    explicit Var(Tensor<Scalar> value, bool requires_grad = false) : node_(std::make_shared<NodeType>()) {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }

    const Tensor<Scalar>& value() const { return node_->value; }
    Tensor<Scalar>& mutable_value() { return node_->value; }
    const Tensor<Scalar>& grad() const { return node_->grad; }
    Tensor<Scalar>& mutable_grad() { return node_->ensure_grad(); }
    bool has_grad() const { return node_->has_grad; }
    bool requires_grad() const { return node_->requires_grad; }
    const std::array<Index, 4>& shape() const { return node_->value.shape; }
    Scalar item() const { return node_->value.data[0]; }

    void zero_grad() {
        node_->has_grad = false;
        node_->grad = Tensor<Scalar>();
    }

    /// Same value, cut from the tape.
    Var detach() const { return Var(node_->value, false); }

    const std::shared_ptr<NodeType>& node() const { return node_; }

private:
    std::shared_ptr<NodeType> node_;
};

namespace detail {
inline bool& grad_mode_disabled() {
    thread_local bool disabled = false;
    return disabled;
}
}  // namespace detail

/// Disables tape recording on this thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_mode_disabled()) { detail::grad_mode_disabled() = true; }
    ~NoGradGuard() { detail::grad_mode_disabled() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Records an op result. The backward callback reads the result node's grad
/// and accumulates into parent grads through the raw pointers it captured.
template <typename Scalar>
Var<Scalar> make_result(Tensor<Scalar> value, std::initializer_list<Var<Scalar>> parents,
                        std::function<void(Node<Scalar>&)> backward) {
    Var<Scalar> out(std::move(value));
    if (detail::grad_mode_disabled()) return out;
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (!any) return out;
    auto& node = *out.node();
    node.requires_grad = true;
    for (const auto& p : parents) node.parents.push_back(p.node());
    node.backward = std::move(backward);
    return out;
}

/// Reverse sweep from a scalar root.
template <typename Scalar>
void backward(const Var<Scalar>& root) {
    if (root.value().size() != 1) throw std::invalid_argument("backward: root must be a scalar");
    if (!root.requires_grad()) return;

    std::vector<Node<Scalar>*> order;
    std::unordered_set<Node<Scalar>*> seen;
    std::vector<std::pair<Node<Scalar>*, std::size_t>> stack{{root.node().get(), 0}};
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<Scalar>* parent = node->parents[next++].get();
            if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node()->ensure_grad().data.setOnes();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<Scalar>* node = *it;
        if (node->backward && node->has_grad) node->backward(*node);
    }
}

}  // namespace diffage
