#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "aspvm/common.hpp"

namespace aspvm {

// Reverse-mode autodiff node. Value buffers are immutable after the op that
// creates them; only `grad` is mutated (single-writer accumulation during
// backward). `backward_fn` reads this node's grad and accumulates into the
// parents' grads.
template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;

    std::vector<std::shared_ptr<TensorNode<T>>> parents;
    std::function<void(TensorNode<T>&)> backward_fn;

    int64_t numel() const { return static_cast<int64_t>(data.size()); }

    T* grad_buf() {
        if (grad.empty()) grad.assign(data.size(), T(0));
        return grad.data();
    }
};

namespace detail {
inline bool& grad_mode_flag() {
    thread_local bool flag = true;
    return flag;
}
}  // namespace detail

struct GradMode {
    static bool enabled() { return detail::grad_mode_flag(); }
    static void set(bool on) { detail::grad_mode_flag() = on; }
};

struct NoGradGuard {
    NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set(false); }
    ~NoGradGuard() { GradMode::set(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

template <typename T>
class Tensor {
public:
    using Node = TensorNode<T>;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape) {
        auto n = std::make_shared<Node>();
        n->data.assign(static_cast<size_t>(numel_of(shape)), T(0));
        n->shape = std::move(shape);
        return Tensor(std::move(n));
    }

    static Tensor full(Shape shape, T value) {
        auto n = std::make_shared<Node>();
        n->data.assign(static_cast<size_t>(numel_of(shape)), value);
        n->shape = std::move(shape);
        return Tensor(std::move(n));
    }

    static Tensor from_data(Shape shape, std::vector<T> data) {
        if (static_cast<int64_t>(data.size()) != numel_of(shape)) {
            throw DimensionError("Tensor: data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
        }
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->data = std::move(data);
        return Tensor(std::move(n));
    }

    static Tensor scalar(T value) { return full({1}, value); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    size_t ndim() const { return node_->shape.size(); }
    int64_t numel() const { return node_->numel(); }

    int64_t dim(int i) const {
        const int n = static_cast<int>(ndim());
        if (i < 0) i += n;
        if (i < 0 || i >= n) throw DimensionError("Tensor::dim: axis out of range");
        return node_->shape[static_cast<size_t>(i)];
    }

    T* data() { return node_->data.data(); }
    const T* data() const { return node_->data.data(); }
    std::vector<T>& vec() { return node_->data; }
    const std::vector<T>& vec() const { return node_->data; }

    T item() const {
        if (numel() != 1) {
            throw DimensionError("Tensor::item: tensor has " + std::to_string(numel()) +
                                 " elements, expected 1");
        }
        return node_->data[0];
    }

    bool requires_grad() const { return node_->requires_grad; }

    Tensor& set_requires_grad(bool on = true) {
        node_->requires_grad = on;
        return *this;
    }

    const std::vector<T>& grad() const { return node_->grad; }
    std::vector<T>& grad_ref() { return node_->grad; }

    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }

    // Detached copy of the values (no graph edge).
    Tensor detached() const { return from_data(shape(), node_->data); }

    // Populate grads of everything this scalar depends on. Repeated calls
    // without zero_grad accumulate.
    void backward() const;

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& handle() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// Builds an op result node. Parents and the backward closure are dropped when
// grad is globally disabled or no parent requires grad, so inference builds
// no graph.
template <typename T>
Tensor<T> make_op(Shape shape, std::vector<T> data, std::vector<Tensor<T>> parents,
                  std::function<void(TensorNode<T>&)> backward) {
    auto out = Tensor<T>::from_data(std::move(shape), std::move(data));
    bool need = false;
    if (GradMode::enabled()) {
        for (const auto& p : parents) {
            if (p.requires_grad()) {
                need = true;
                break;
            }
        }
    }
    if (need) {
        out.node()->requires_grad = true;
        auto& ps = out.node()->parents;
        ps.reserve(parents.size());
        for (auto& p : parents) ps.push_back(p.handle());
        out.node()->backward_fn = std::move(backward);
    }
    return out;
}

template <typename T>
void Tensor<T>::backward() const {
    if (numel() != 1) {
        throw DimensionError("backward: loss must be a scalar, got shape " +
                             shape_str(shape()));
    }
    // Iterative post-order DFS; order ends up children-before-parents, so the
    // reverse walk propagates grads root-to-leaves.
    std::vector<Node*> order;
    std::vector<std::pair<Node*, size_t>> stack;
    std::unordered_set<Node*> marked;
    stack.emplace_back(node_.get(), 0);
    marked.insert(node_.get());
    while (!stack.empty()) {
        Node* n = stack.back().first;
        size_t idx = stack.back().second;
        if (idx < n->parents.size()) {
            stack.back().second++;
            Node* p = n->parents[idx].get();
            if (p->backward_fn && !marked.count(p)) {
                marked.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    // Interior grads are scratch for this pass; only leaves (parameters,
    // inputs) accumulate across repeated backward calls.
    for (Node* n : order) {
        if (n->backward_fn && !n->grad.empty()) {
            std::fill(n->grad.begin(), n->grad.end(), T(0));
        }
    }
    node_->grad_buf()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
}

}  // namespace aspvm
