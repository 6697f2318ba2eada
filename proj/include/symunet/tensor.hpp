#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>

#include "symunet/common.hpp"

namespace symunet {

// Graph construction toggle. Ops record parents and backward closures only
// while enabled; inference code wraps itself in a NoGradGuard.
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    NoGradGuard() : prev_(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev_; }

private:
    bool prev_;
};

// Dense rank-N tensor participating in a dynamically built reverse-mode
// autodiff graph. Value semantics: a Tensor is a shared handle to one node.
template <typename T>
class Tensor {
public:
    struct Node {
        Shape shape;
        std::vector<T> value;
        std::vector<T> grad;  // allocated lazily during backward
        bool requires_grad = false;
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void(Node&)> backward;

        void ensure_grad() {
            if (grad.empty()) grad.assign(value.size(), T(0));
        }
    };

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return from_data(std::move(shape), {}, requires_grad);
    }

    static Tensor full(Shape shape, T fill, bool requires_grad = false) {
        auto t = zeros(std::move(shape), requires_grad);
        std::fill(t.data().begin(), t.data().end(), fill);
        return t;
    }

    static Tensor from_data(Shape shape, std::vector<T> values, bool requires_grad = false) {
        auto node = std::make_shared<Node>();
        const std::int64_t n = numel(shape);
        check_dims(n >= 0, "negative tensor extent in " + shape_str(shape));
        if (values.empty()) values.assign(static_cast<size_t>(n), T(0));
        check_dims(static_cast<std::int64_t>(values.size()) == n,
                   "data length " + std::to_string(values.size()) + " does not match shape " +
                       shape_str(shape));
        node->shape = std::move(shape);
        node->value = std::move(values);
        node->requires_grad = requires_grad;
        Tensor t;
        t.node_ = std::move(node);
        return t;
    }

    // Result of an op: wires parents and the pull-style backward closure.
    static Tensor make_op(Shape shape, std::vector<T> values, std::vector<Tensor> parents,
                          std::function<void(Node&)> backward) {
        bool needs = false;
        if (grad_mode()) {
            for (const auto& p : parents) needs = needs || p.requires_grad();
        }
        Tensor t = from_data(std::move(shape), std::move(values), needs);
        if (needs) {
            t.node_->parents.reserve(parents.size());
            for (auto& p : parents) t.node_->parents.push_back(p.node_);
            t.node_->backward = std::move(backward);
        }
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    std::int64_t size() const { return static_cast<std::int64_t>(node_->value.size()); }

    std::vector<T>& data() { return node_->value; }
    const std::vector<T>& data() const { return node_->value; }
    std::vector<T>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    bool has_grad() const { return !node_->grad.empty(); }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }

    std::shared_ptr<Node> node() const { return node_; }
    bool same_node(const Tensor& other) const { return node_ == other.node_; }

    Tensor detach() const {
        return from_data(node_->shape, node_->value, false);
    }

    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }

    // Reverse-mode sweep from a scalar. Accumulates into existing grads.
    void backward() {
        check_dims(size() == 1, "backward() requires a scalar, got " + shape_str(shape()));
        std::vector<Node*> order;
        topo_sort(order);
        node_->ensure_grad();
        node_->grad[0] += T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* n = *it;
            if (n->backward) n->backward(*n);
        }
    }

private:
    void topo_sort(std::vector<Node*>& order) const {
        std::unordered_set<Node*> visited;
        // Iterative DFS; graphs are deep enough (per-step training graphs)
        // that recursion would risk stack overflow.
        std::vector<std::pair<Node*, size_t>> stack;
        stack.emplace_back(node_.get(), 0);
        visited.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, idx] = stack.back();
            if (idx < n->parents.size()) {
                Node* p = n->parents[idx++].get();
                if (p->requires_grad && !visited.count(p)) {
                    visited.insert(p);
                    stack.emplace_back(p, 0);
                }
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<Node> node_;
};

template <typename T>
void fill_normal(Tensor<T>& t, Rng& rng, double stddev) {
    for (auto& x : t.data()) x = static_cast<T>(rng.normal() * stddev);
}

template <typename T>
void fill_uniform(Tensor<T>& t, Rng& rng, double lo, double hi) {
    for (auto& x : t.data()) x = static_cast<T>(rng.uniform_range(lo, hi));
}

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) return false;
    return std::memcmp(a.data().data(), b.data().data(), a.data().size() * sizeof(T)) == 0;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    check_dims(a.shape() == b.shape(), "max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
    return m;
}

}  // namespace symunet
