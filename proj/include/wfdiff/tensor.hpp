#pragma once

#include <algorithm>
#include <cmath>
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

#include "wfdiff/errors.hpp"
#include "wfdiff/rng.hpp"

namespace wfdiff {

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

inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

template <class T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads self.grad and accumulates into the parents' grads.
    std::function<void(Node&)> backward_fn;

    std::vector<T>& ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T{0});
        return grad;
    }
};

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables graph recording for its lifetime (inference, optimizer updates,
/// finite differences).
class NoGradGuard {
   public:
    NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool previous_;
};

/// Row-major N-d array with an optional gradient accumulator.
///
/// Copies share storage (handle semantics); use clone() for a deep copy.
/// Operations that consume a tensor with requires_grad() record themselves so
/// that backward() can propagate adjoints.
template <class T>
class Tensor {
   public:
    using value_type = T;
    using NodeT = detail::Node<T>;

    Tensor() : node_(std::make_shared<NodeT>()) {}

    Tensor(Shape shape, std::vector<T> data) : node_(std::make_shared<NodeT>()) {
        if (shape_numel(shape) != data.size()) {
            throw DimensionError("tensor data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
        }
        for (auto e : shape) {
            if (e == 0) throw DimensionError("tensor extents must be positive: " + shape_str(shape));
        }
        node_->shape = std::move(shape);
        node_->data = std::move(data);
    }

    static Tensor zeros(Shape shape) { return full(std::move(shape), T{0}); }
    static Tensor ones(Shape shape) { return full(std::move(shape), T{1}); }
    static Tensor full(Shape shape, T value) {
        const auto n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, value));
    }
    static Tensor scalar(T value) { return Tensor(Shape{1}, {value}); }

    /// Construction from untrusted values: NaN and Inf are rejected.
    static Tensor from_external(Shape shape, std::vector<T> data) {
        for (const auto v : data) {
            if (!std::isfinite(v)) throw FormatError("non-finite value in external tensor data");
        }
        return Tensor(std::move(shape), std::move(data));
    }

    static Tensor randn(Shape shape, Rng& rng, T stddev = T{1}) {
        const auto n = shape_numel(shape);
        std::vector<T> d(n);
        for (auto& v : d) v = static_cast<T>(rng.normal()) * stddev;
        return Tensor(std::move(shape), std::move(d));
    }

    static Tensor uniform(Shape shape, Rng& rng, T lo, T hi) {
        const auto n = shape_numel(shape);
        std::vector<T> d(n);
        for (auto& v : d) v = static_cast<T>(rng.uniform(lo, hi));
        return Tensor(std::move(shape), std::move(d));
    }

    const Shape& shape() const { return node_->shape; }
    std::size_t ndim() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t numel() const { return node_->data.size(); }

    std::span<T> data() { return node_->data; }
    std::span<const T> data() const { return node_->data; }
    const std::vector<T>& vec() const { return node_->data; }

    T& operator[](std::size_t i) { return node_->data[i]; }
    const T& operator[](std::size_t i) const { return node_->data[i]; }

    T item() const {
        if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
        return node_->data[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool on = true) {
        node_->requires_grad = on;
        return *this;
    }

    bool has_grad() const { return node_->grad.size() == node_->data.size() && !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> mutable_grad() { return node_->ensure_grad(); }
    void zero_grad() { node_->grad.clear(); }

    /// Deep copy of the values; the copy is a fresh leaf.
    Tensor clone() const { return Tensor(shape(), node_->data); }

    /// Same storage, cut from the graph.
    Tensor detach() const {
        Tensor t;
        t.node_->shape = node_->shape;
        t.node_->data = node_->data;
        return t;
    }

    /// Converts element type, producing a leaf.
    template <class U>
    Tensor<U> cast() const {
        std::vector<U> d(numel());
        std::transform(node_->data.begin(), node_->data.end(), d.begin(),
                       [](T v) { return static_cast<U>(v); });
        return Tensor<U>(shape(), std::move(d));
    }

    bool same_storage(const Tensor& other) const { return node_ == other.node_; }

    const std::shared_ptr<NodeT>& node() const { return node_; }

    /// Builds the result of an op. When grad mode is on and any parent needs a
    /// gradient, the backward closure is recorded.
    static Tensor make_result(Shape shape, std::vector<T> data, std::vector<Tensor> parents,
                              std::function<void(NodeT&)> backward_fn) {
        Tensor out(std::move(shape), std::move(data));
        if (!grad_enabled()) return out;
        bool needs = false;
        for (const auto& p : parents) needs = needs || p.requires_grad();
        if (!needs) return out;
        out.node_->requires_grad = true;
        for (const auto& p : parents) out.node_->parents.push_back(p.node_);
        out.node_->backward_fn = std::move(backward_fn);
        return out;
    }

    bool is_leaf() const { return node_->parents.empty(); }

   private:
    std::shared_ptr<NodeT> node_;
};

/// Reverse-mode sweep from a scalar loss. Populates grad() on every tensor
/// that requires a gradient and contributed to the loss.
template <class T>
void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1) {
        throw GraphError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) {
        throw GraphError("backward() on a tensor detached from any parameter");
    }
    using NodeT = detail::Node<T>;
    std::vector<NodeT*> order;
    std::unordered_set<NodeT*> seen;
    // Iterative post-order DFS; graphs from deep networks overflow recursion.
    std::vector<std::pair<NodeT*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            NodeT* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    NoGradGuard guard;
    loss.node()->ensure_grad()[0] += T{1};
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        NodeT* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

/// Accumulates `g` into the gradient of `parent` if it takes one.
template <class T>
inline void accumulate_grad(detail::Node<T>& parent, std::span<const T> g) {
    if (!parent.requires_grad) return;
    auto& dst = parent.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

template <class T>
bool allclose(const Tensor<T>& a, const Tensor<T>& b, double atol) {
    if (a.shape() != b.shape()) return false;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        if (std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])) > atol) return false;
    }
    return true;
}

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("max_abs_diff shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    }
    return m;
}

}  // namespace wfdiff
