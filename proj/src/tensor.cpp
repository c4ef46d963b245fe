#include "cpcl/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace cpcl {

namespace detail {

std::uint64_t next_seq() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
}

std::vector<float>& ensure_grad(Node& n) {
    if (n.grad.size() != n.data.size()) {
        n.grad.assign(n.data.size(), 0.0f);
    }
    return n.grad;
}

}  // namespace detail

std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor Tensor::wrap(std::shared_ptr<detail::Node> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    return full(std::move(shape), 0.0f, requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, float value, bool requires_grad) {
    auto n = std::make_shared<detail::Node>();
    std::size_t count = shape_numel(shape);
    n->shape = std::move(shape);
    n->data.assign(count, value);
    n->requires_grad = requires_grad;
    return wrap(std::move(n));
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<float> data, bool requires_grad) {
    if (shape_numel(shape) != data.size()) {
        throw ShapeError("from_data: " + std::to_string(data.size()) +
                         " values for shape " + shape_str(shape));
    }
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    return wrap(std::move(n));
}

Tensor Tensor::scalar(float value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

const std::vector<int>& Tensor::shape() const {
    if (!node_) throw ValueError("shape() on undefined tensor");
    return node_->shape;
}

int Tensor::dim(int axis) const {
    const auto& s = shape();
    if (axis < 0 || axis >= static_cast<int>(s.size())) {
        throw ShapeError("dim(" + std::to_string(axis) + ") on shape " + shape_str(s));
    }
    return s[static_cast<std::size_t>(axis)];
}

std::size_t Tensor::numel() const {
    if (!node_) throw ValueError("numel() on undefined tensor");
    return node_->numel();
}

std::span<const float> Tensor::data() const {
    if (!node_) throw ValueError("data() on undefined tensor");
    return {node_->data.data(), node_->data.size()};
}

std::span<float> Tensor::data_mut() {
    if (!node_) throw ValueError("data_mut() on undefined tensor");
    if (node_->backward_fn) {
        throw ValueError("data_mut() on an operation result; only leaves are mutable");
    }
    return {node_->data.data(), node_->data.size()};
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
    if (!node_) throw ValueError("set_requires_grad() on undefined tensor");
    if (node_->backward_fn) {
        throw ValueError("set_requires_grad() on an operation result");
    }
    node_->requires_grad = value;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const float> Tensor::grad() const {
    if (!has_grad()) throw ValueError("grad() on tensor with no gradient");
    return {node_->grad.data(), node_->grad.size()};
}

void Tensor::zero_grad() {
    if (node_) node_->grad.clear();
}

float Tensor::item() const {
    if (numel() != 1) throw ValueError("item() on tensor of " + std::to_string(numel()) + " elements");
    return node_->data[0];
}

float Tensor::at(const std::vector<int>& index) const {
    const auto& s = shape();
    if (index.size() != s.size()) {
        throw ShapeError("at(): " + std::to_string(index.size()) + " indices for shape " + shape_str(s));
    }
    std::size_t flat = 0;
    for (std::size_t k = 0; k < index.size(); ++k) {
        if (index[k] < 0 || index[k] >= s[k]) throw ShapeError("at(): index out of range");
        flat = flat * static_cast<std::size_t>(s[k]) + static_cast<std::size_t>(index[k]);
    }
    return node_->data[flat];
}

Tensor Tensor::detach() const {
    if (!node_) throw ValueError("detach() on undefined tensor");
    auto n = std::make_shared<detail::Node>();
    n->shape = node_->shape;
    n->data = node_->data;
    n->requires_grad = false;
    return wrap(std::move(n));
}

Tensor Tensor::clone() const {
    if (!node_) throw ValueError("clone() on undefined tensor");
    auto n = std::make_shared<detail::Node>();
    n->shape = node_->shape;
    n->data = node_->data;
    n->requires_grad = node_->requires_grad;
    return wrap(std::move(n));
}

void Tensor::backward() const {
    if (!node_) throw ValueError("backward() on undefined tensor");
    if (node_->numel() != 1) {
        throw ValueError("backward() requires a scalar loss, got shape " + shape_str(node_->shape));
    }

    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<detail::Node*> stack{node_.get()};
    seen.insert(node_.get());
    bool any_op = false;
    while (!stack.empty()) {
        detail::Node* n = stack.back();
        stack.pop_back();
        if (n->backward_fn) any_op = true;
        order.push_back(n);
        for (const auto& p : n->parents) {
            if (seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    if (!any_op) throw ValueError("backward() on a graph with no recorded operations");

    // Creation order is execution order; replay strictly in reverse.
    std::sort(order.begin(), order.end(),
              [](const detail::Node* a, const detail::Node* b) { return a->seq > b->seq; });

    // Each sweep starts from a clean slate on operation results; only leaf
    // grads accumulate across calls.
    for (detail::Node* n : order) {
        if (n->backward_fn) n->grad.clear();
    }
    detail::ensure_grad(*node_)[0] += 1.0f;
    for (detail::Node* n : order) {
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

bool all_finite(const Tensor& t) {
    for (float v : t.data()) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

}  // namespace cpcl
