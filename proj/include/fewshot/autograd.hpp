#pragma once

// Tape-free reverse-mode differentiation over Tensor values.
//
// Each op returns a Var that owns its value and, when gradients are being
// tracked, links to its inputs together with a closure that pushes the
// output gradient back into them. `backward(root)` walks the graph in
// reverse topological order. Graphs are per-thread objects: parameters are
// bound into a graph as fresh leaves, so several episodes can be
// differentiated concurrently against the same parameter values.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "fewshot/tensor.hpp"

namespace fewshot {

/// A named, learnable tensor owned by a model.
struct Parameter {
    std::string name;
    Tensor value;
    bool trainable = true;
};

namespace ag {

struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;
    const Parameter* source = nullptr;
    bool requires_grad = false;

    /// Gradient buffer, zero-initialized on first use.
    Tensor& grad_buffer();
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Tensor& value() const { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    const Shape& shape() const { return node_->value.shape(); }
    int dim(int axis) const { return node_->value.dim(axis); }
    bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
    const std::shared_ptr<Node>& node() const noexcept { return node_; }

private:
    std::shared_ptr<Node> node_;
};

/// Thread-local switch; when off, ops only compute values.
class GradMode {
public:
    static bool enabled() noexcept;
    static void set(bool on) noexcept;
};

class NoGradGuard {
public:
    NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set(false); }
    ~NoGradGuard() { GradMode::set(previous_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

using GradientMap = std::unordered_map<const Parameter*, Tensor>;

Var constant(Tensor value);
Var variable(Tensor value);
/// Leaf bound to a parameter. Tracks gradients iff the parameter is trainable and grad mode is on.
Var bind(const Parameter& p);

/// Seeds d(root)/d(root) = 1 (root must hold one element) and back-propagates.
/// Gradients reaching parameter leaves are added into `grads` when given.
void backward(const Var& root, GradientMap* grads = nullptr);
/// Same, with an explicit seed gradient of the root's shape.
void backward(const Var& root, const Tensor& seed, GradientMap* grads = nullptr);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var relu(const Var& a);
Var sigmoid(const Var& a);

/// (m×k)·(k×n) for rank-2 inputs.
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
/// Softmax along axis 0 of a rank-2 tensor: every column sums to one.
Var softmax_columns(const Var& a);
Var reshape(const Var& a, Shape shape);

/// Concatenation along axis 0; trailing dimensions must agree.
Var concat(std::span<const Var> parts);
Var concat(std::initializer_list<Var> parts);
/// Element-wise mean of equally shaped tensors.
Var mean(std::span<const Var> parts);

/// (d) or (d,1,1) vector repeated over an h×w grid -> (d,h,w).
Var tile_spatial(const Var& v, int height, int width);
/// (C,H,W) -> (C) spatial mean.
Var global_avg_pool(const Var& x);

struct ConvSpec {
    int stride = 1;
    int padding = 0;
    int dilation = 1;
};
/// x (C,H,W), w (O,C,k,k), optional bias (O).
Var conv2d(const Var& x, const Var& w, const Var& bias, ConvSpec spec = {});
/// Per-location channel mixing: w (O,C), bias (O) applied to x (C,H,W).
Var conv1x1(const Var& x, const Var& w, const Var& bias);
/// w (d×E) · v (E) + b (d).
Var linear(const Var& w, const Var& v, const Var& bias);

Var resize_bilinear(const Var& x, int height, int width);
/// Softmax across channels at every pixel of a (C,H,W) tensor.
Var softmax_channels(const Var& x);
Var sum(const Var& a);

/// Mean per-pixel cross-entropy of (K,H,W) logits against integer labels in [0,K).
/// Pixels labelled `ignore_label` contribute nothing; returns 0 when all are ignored.
Var cross_entropy(const Var& logits, std::span<const std::uint8_t> labels, std::uint8_t ignore_label = 255);

}  // namespace ag
}  // namespace fewshot
