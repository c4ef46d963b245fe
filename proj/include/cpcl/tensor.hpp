#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cpcl/errors.hpp"

namespace cpcl {

namespace detail {

// One node of the recorded computation. Nodes created by differentiable ops
// on tracked inputs carry parents + a backward function and a creation
// sequence number; leaves and detached values carry neither, so they
// contribute no tape entries.
struct Node {
    std::vector<int> shape;
    std::vector<float> data;
    bool requires_grad = false;
    std::vector<float> grad;  // empty until first accumulation
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;
    std::uint64_t seq = 0;

    std::size_t numel() const { return data.size(); }
};

std::uint64_t next_seq();
std::vector<float>& ensure_grad(Node& n);

}  // namespace detail

std::size_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// Dense f32 tensor, row-major with the last axis fastest. Copying a Tensor
// copies a handle to the same node; use clone()/detach() for value copies.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, float value, bool requires_grad = false);
    static Tensor from_data(std::vector<int> shape, std::vector<float> data,
                            bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const;
    int ndim() const { return static_cast<int>(shape().size()); }
    int dim(int axis) const;
    std::size_t numel() const;

    std::span<const float> data() const;
    // Leaf-only mutation; the trainer is the single writer of parameters.
    std::span<float> data_mut();

    bool requires_grad() const;
    void set_requires_grad(bool value);  // leaf only
    bool has_grad() const;
    std::span<const float> grad() const;
    void zero_grad();

    float item() const;  // scalar only
    float at(const std::vector<int>& index) const;

    // Same values, requires_grad = false, no tape entry. Values are copied
    // bit-for-bit.
    Tensor detach() const;
    // Deep copy of a leaf (values only, fresh grad-free buffer).
    Tensor clone() const;

    // Reverse-mode sweep from a scalar loss. Visits each recorded operation
    // exactly once, in reverse execution order.
    void backward() const;

    detail::Node* node() const { return node_.get(); }
    const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }
    static Tensor wrap(std::shared_ptr<detail::Node> node);

private:
    std::shared_ptr<detail::Node> node_;
};

bool all_finite(const Tensor& t);

}  // namespace cpcl
