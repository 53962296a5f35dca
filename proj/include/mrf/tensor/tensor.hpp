#pragma once

// Dense N-dimensional tensor with tape-based reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared node. Operations build a fresh
// graph on every call; backward() walks it in reverse topological order and
// accumulates into the `grad` buffer of every node that requires gradients.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mrf/core/error.hpp"

namespace mrf {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

namespace detail {
inline bool& grad_enabled_flag() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

/// Disables graph construction for the lifetime of the guard.
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
    ~NoGradGuard() { detail::grad_enabled_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

template <class T>
struct TensorNode {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until something is accumulated
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    // Reads `self.grad` and accumulates into the parents' gradients.
    std::function<void(TensorNode& self)> backward;

    std::vector<T>& ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), T(0));
        return grad;
    }
};

template <class T>
class Tensor {
public:
    using value_type = T;
    using Node = TensorNode<T>;

    Tensor() = default;

    Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<Node>()) {
        if (shape_numel(shape) != values.size()) {
            throw DataError("tensor: shape " + shape_str(shape) + " does not match " +
                            std::to_string(values.size()) + " values");
        }
        for (auto extent : shape) {
            if (extent == 0) throw DataError("tensor: zero extent in shape " + shape_str(shape));
        }
        node_->shape = std::move(shape);
        node_->data = std::move(values);
    }

    static Tensor zeros(Shape shape) { return full(std::move(shape), T(0)); }
    static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }
    static Tensor full(Shape shape, T value) {
        auto n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, value));
    }
    static Tensor scalar(T value) { return Tensor(Shape{1}, std::vector<T>{value}); }

    /// Wraps an already-filled node (used by operations).
    static Tensor from_node(std::shared_ptr<Node> node) {
        Tensor t;
        t.node_ = std::move(node);
        return t;
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t numel() const { return node_->data.size(); }

    std::span<const T> data() const { return node_->data; }
    /// Mutable view of a leaf's storage (initialisation, optimiser updates).
    std::span<T> mutable_data() {
        if (!node_->parents.empty()) throw DataError("tensor: mutable_data on a non-leaf tensor");
        return node_->data;
    }
    T item() const {
        if (numel() != 1) throw DataError("tensor: item() on tensor of shape " + shape_str(shape()));
        return node_->data[0];
    }
    T operator[](std::size_t i) const { return node_->data[i]; }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool flag) {
        node_->requires_grad = flag;
        return *this;
    }
    bool has_grad() const { return !node_->grad.empty(); }
    /// Gradient buffer; zeros if nothing has been accumulated yet.
    std::span<const T> grad() const { return node_->ensure_grad(); }
    std::span<T> mutable_grad() { return node_->ensure_grad(); }
    void zero_grad() { node_->grad.clear(); }

    /// Copy of the values with no graph history.
    Tensor detach() const { return Tensor(node_->shape, node_->data); }

    Node& node() const { return *node_; }
    const std::shared_ptr<Node>& node_ptr() const { return node_; }

    /// Reverse-mode sweep from this tensor, seeding d(self)/d(self) = 1.
    void backward() const {
        std::vector<Node*> order;
        std::unordered_set<Node*> seen;
        // Iterative post-order DFS; deep networks would overflow a recursive one.
        std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, next] = stack.back();
            if (next < n->parents.size()) {
                Node* p = n->parents[next++].get();
                if (p && p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
        auto& seed = node_->ensure_grad();
        std::fill(seed.begin(), seed.end(), T(1));
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* n = *it;
            if (n->backward && !n->grad.empty()) n->backward(*n);
        }
    }

private:
    std::shared_ptr<Node> node_;
};

/// Builds the output node of an operation. The parents and backward closure
/// are attached only if gradients are enabled and some parent needs them.
template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> data,
                      std::vector<std::shared_ptr<TensorNode<T>>> parents,
                      std::function<void(TensorNode<T>&)> backward) {
    auto node = std::make_shared<TensorNode<T>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    bool any = grad_enabled() &&
               std::any_of(parents.begin(), parents.end(), [](const auto& p) { return p && p->requires_grad; });
    if (any) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backward = std::move(backward);
    }
    return Tensor<T>::from_node(std::move(node));
}

/// A named learnable tensor.
template <class T>
struct Parameter {
    std::string name;
    Tensor<T> tensor;
};

/// Ordered collection of parameters with unique names.
template <class T>
class ParameterSet {
public:
    void add(std::string name, Tensor<T> tensor) {
        for (const auto& p : params_) {
            if (p.name == name) throw ConfigError("duplicate parameter name: " + name);
        }
        tensor.set_requires_grad(true);
        params_.push_back({std::move(name), std::move(tensor)});
    }
    void append(const ParameterSet& other) {
        for (const auto& p : other.params_) add(p.name, p.tensor);
    }
    /// Adds every parameter of `other` under `prefix.`.
    void append(const std::string& prefix, const ParameterSet& other) {
        for (const auto& p : other.params_) add(prefix + "." + p.name, p.tensor);
    }

    std::size_t size() const { return params_.size(); }
    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }
    const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }
    Parameter<T>& operator[](std::size_t i) { return params_[i]; }

    const Parameter<T>* find(const std::string& name) const {
        for (const auto& p : params_) {
            if (p.name == name) return &p;
        }
        return nullptr;
    }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.tensor.numel();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

private:
    std::vector<Parameter<T>> params_;
};

}  // namespace mrf
