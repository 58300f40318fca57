#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace bido {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    std::vector<double>& grad_buffer() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
        return grad;
    }
};

}  // namespace detail

// Dense row-major float64 tensor with define-by-run reverse-mode autodiff.
// Copies share storage; use clone() for a deep copy.
class Tensor {
   public:
    Tensor() = default;
    explicit Tensor(Shape shape, bool requires_grad = false);
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor scalar(double v);
    static Tensor full(Shape shape, double v);

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t size() const { return node_->value.size(); }

    std::span<const double> values() const { return node_->value; }
    // Writes bypass the tape; only meaningful on leaves (parameters, inputs).
    std::span<double> mutable_values() { return node_->value; }
    std::span<const double> grad() const { return node_->grad; }
    bool has_grad() const { return !node_->grad.empty(); }

    double item() const;
    double operator[](std::size_t i) const { return node_->value[i]; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    void zero_grad() { node_->grad.clear(); }

    // Seeds d(self)/d(self) = 1 and accumulates into every reachable leaf.
    // Requires a single-element tensor.
    void backward() const;

    Tensor detach() const;
    Tensor clone() const;

    const std::shared_ptr<detail::Node>& node() const { return node_; }
    static Tensor wrap(std::shared_ptr<detail::Node> node);

   private:
    std::shared_ptr<detail::Node> node_;
};

// While alive, ops on this thread record no graph (inference mode).
class NoGradGuard {
   public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool previous_;
};

bool grad_enabled() noexcept;

// Reverse topological order of the graph behind a root.
class Tape {
   public:
    static Tape record(const Tensor& root);

    std::size_t size() const noexcept { return order_.size(); }
    // Runs every recorded backward step once, root first.
    void run(const Tensor& root);

   private:
    std::vector<std::shared_ptr<detail::Node>> order_;
};

// ---- primitives -----------------------------------------------------------
// All ops throw Error{ShapeMismatch} on incompatible shapes and
// Error{NonFinite} if any forward value is NaN or infinite.

// [..., m, k] x [k, n] (shared right operand) or [..., m, k] x [..., k, n].
Tensor matmul(const Tensor& a, const Tensor& b);
// Swap the two trailing axes.
Tensor transpose(const Tensor& a);

// Elementwise with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor broadcast_to(const Tensor& a, const Shape& shape);

Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

// [..., n] x [..., m] -> [..., n, m]
Tensor outer_product(const Tensor& a, const Tensor& b);

// Along the last axis.
Tensor softmax(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor clamp_min(const Tensor& a, double lo);

Tensor sum(const Tensor& a, std::size_t axis);
Tensor mean(const Tensor& a, std::size_t axis);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

// Euclidean norm along the last axis; the gradient at a zero vector is 0.
Tensor l2norm(const Tensor& a);

// x: [N, H, W, C], w: [KH, KW, C, O], bias: [O] or undefined. No padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride);

Tensor reshape(const Tensor& a, Shape shape);
// Keeps axis 0 and collapses the rest.
Tensor flatten(const Tensor& a);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
// Drop `axis` by picking one index along it.
Tensor select(const Tensor& a, std::size_t axis, std::size_t index);
// Rows of a [R, ...] at the given indices.
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);

// Mean negative log-likelihood of softmax(logits [B, C]) at integer labels.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace bido
